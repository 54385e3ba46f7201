#include "pggcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pggcn/rng.hpp"

namespace pggcn {

namespace {

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return std::string(buf);
}

}  // namespace

LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "step" || s == "step-decay" || s == "step_decay") return LrSchedule::step_decay;
  throw std::invalid_argument("unknown learning-rate schedule '" + s +
                              "' (expected 'constant' or 'step')");
}

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::constant ? "constant" : "step";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  }
  if (batch_size < 2) {
    throw std::invalid_argument("TrainConfig: batch size must be at least 2");
  }
  if (weight_decay < 0.0) {
    throw std::invalid_argument("TrainConfig: weight decay must be non-negative");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
  }
  if (epochs < 1) {
    throw std::invalid_argument("TrainConfig: epochs must be at least 1");
  }
  if (!(decay_factor > 0.0) || decay_factor > 1.0) {
    throw std::invalid_argument("TrainConfig: decay factor must lie in (0, 1]");
  }
  if (!(stop_train_acc > 0.0)) {
    throw std::invalid_argument("TrainConfig: stop threshold must be positive");
  }
  if (workers < 1) {
    throw std::invalid_argument("TrainConfig: worker count must be at least 1");
  }
}

std::vector<int> TrainConfig::effective_milestones() const {
  if (schedule == LrSchedule::constant) return {};
  std::vector<int> ms = milestones;
  if (ms.empty()) {
    ms.push_back((epochs * 6) / 10);
    ms.push_back((epochs * 8) / 10);
  }
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
  ms.erase(std::remove_if(ms.begin(), ms.end(), [&](int m) { return m < 1 || m >= epochs; }),
           ms.end());
  return ms;
}

double TrainConfig::learning_rate_at(int epoch_index) const {
  double lr = learning_rate;
  for (int m : effective_milestones()) {
    if (epoch_index >= m) lr *= decay_factor;
  }
  return lr;
}

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [batch x classes]");
  }
  const std::int64_t b = logits.dim(0);
  const std::int64_t k = logits.dim(1);
  if (b == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw std::invalid_argument("cross_entropy: got " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(b) + " logit rows");
  }

  LossResult result;
  result.dlogits = Tensor::zeros(logits.shape());
  const double* x = logits.data();
  double* g = result.dlogits.data();
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(k) + " classes");
    }
    const double* row = x + i * k;
    double* grow = g + i * k;
    double row_max = row[0];
    for (std::int64_t j = 1; j < k; ++j) row_max = std::max(row_max, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - row_max);
    total += row_max + std::log(denom) - row[label];
    const double inv_denom = 1.0 / denom;
    for (std::int64_t j = 0; j < k; ++j) {
      grow[j] = std::exp(row[j] - row_max) * inv_denom * inv_b;
    }
    grow[label] -= inv_b;
  }
  result.value = total * inv_b;
  return result;
}

Sgd::Sgd(double lr, double wd, double mom) : learning_rate(lr), weight_decay(wd), momentum(mom) {}

void Sgd::step(const ParamRegistry& registry) {
  const bool use_momentum = momentum != 0.0;
  if (use_momentum && velocity_.size() != registry.params.size()) {
    if (!velocity_.empty()) {
      throw std::logic_error("Sgd::step: registry layout changed between steps");
    }
    velocity_.reserve(registry.params.size());
    for (const auto& np : registry.params) {
      velocity_.push_back(Tensor::zeros(np.param->value.shape()));
    }
  }
  for (std::size_t idx = 0; idx < registry.params.size(); ++idx) {
    Param& p = *registry.params[idx].param;
    if (!p.trainable) {
      p.zero_grad();
      continue;
    }
    const std::int64_t n = p.value.size();
    double* v = p.value.data();
    const double* g = p.grad.data();
    const double wd = p.decay ? weight_decay : 0.0;
    if (use_momentum) {
      Tensor& vel_t = velocity_[idx];
      if (!vel_t.same_shape(p.value)) {
        throw std::logic_error("Sgd::step: registry layout changed between steps");
      }
      double* vel = vel_t.data();
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = g[i] + wd * v[i];
        vel[i] = momentum * vel[i] + d;
        v[i] -= learning_rate * vel[i];
      }
    } else {
      for (std::int64_t i = 0; i < n; ++i) {
        v[i] -= learning_rate * (g[i] + wd * v[i]);
      }
    }
    p.zero_grad();
  }
}

ConfusionMatrix::ConfusionMatrix(int classes) : num_classes(classes) {
  if (classes < 1) {
    throw std::invalid_argument("ConfusionMatrix: needs at least one class");
  }
  counts.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(int true_label, int predicted) {
  if (true_label < 0 || true_label >= num_classes || predicted < 0 || predicted >= num_classes) {
    throw std::out_of_range("ConfusionMatrix::add: class index out of range (true " +
                            std::to_string(true_label) + ", predicted " +
                            std::to_string(predicted) + ", classes " +
                            std::to_string(num_classes) + ")");
  }
  ++counts[static_cast<std::size_t>(true_label) * num_classes + predicted];
}

std::int64_t ConfusionMatrix::at(int true_label, int predicted) const {
  if (true_label < 0 || true_label >= num_classes || predicted < 0 || predicted >= num_classes) {
    throw std::out_of_range("ConfusionMatrix::at: class index out of range");
  }
  return counts[static_cast<std::size_t>(true_label) * num_classes + predicted];
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    sum += counts[static_cast<std::size_t>(c) * num_classes + c];
  }
  return sum;
}

double ConfusionMatrix::top1() const {
  const std::int64_t n = total();
  if (n == 0) return 0.0;
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream out;
  for (int r = 0; r < num_classes; ++r) {
    for (int c = 0; c < num_classes; ++c) {
      if (c) out << ',';
      out << counts[static_cast<std::size_t>(r) * num_classes + c];
    }
    out << '\n';
  }
  return out.str();
}

std::string ConfusionMatrix::to_normalized_csv() const {
  std::ostringstream out;
  for (int r = 0; r < num_classes; ++r) {
    std::int64_t row_sum = 0;
    for (int c = 0; c < num_classes; ++c) {
      row_sum += counts[static_cast<std::size_t>(r) * num_classes + c];
    }
    for (int c = 0; c < num_classes; ++c) {
      if (c) out << ',';
      const double v =
          row_sum == 0
              ? 0.0
              : static_cast<double>(counts[static_cast<std::size_t>(r) * num_classes + c]) /
                    static_cast<double>(row_sum);
      out << format_fixed(v, 6);
    }
    out << '\n';
  }
  return out.str();
}

Batch collate(const Dataset& dataset, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("collate: empty index list");
  const auto count = static_cast<std::int64_t>(dataset.samples.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= count) {
      throw std::out_of_range("collate: sample index " + std::to_string(idx) +
                              " out of range for " + std::to_string(count) + " samples");
    }
  }
  const Sample& first = dataset.samples[static_cast<std::size_t>(indices[0])];
  if (first.skeleton.rank() != 4 || first.skeleton.dim(2) != 3) {
    throw std::invalid_argument("collate: samples must hold [T x N x 3 x M] skeletons");
  }
  const std::int64_t t = first.skeleton.dim(0);
  const std::int64_t n = first.skeleton.dim(1);
  const std::int64_t m = first.skeleton.dim(3);
  if (first.pose.rank() != 4 || first.pose.dim(0) != t || first.pose.dim(1) != n ||
      first.pose.dim(2) != 2 || first.pose.dim(3) != m) {
    throw std::invalid_argument("collate: pose shape does not match its skeleton");
  }
  const auto s = static_cast<std::int64_t>(indices.size());

  Batch batch;
  batch.bodies = static_cast<int>(m);
  const int batch_rows = static_cast<int>(s * m);
  batch.skeleton = Tensor::zeros({batch_rows, static_cast<int>(t), static_cast<int>(n), 3});
  batch.pose = Tensor::zeros({batch_rows, static_cast<int>(t), static_cast<int>(n), 2});
  batch.labels.reserve(indices.size());

  const std::int64_t rows = t * n;
  for (std::int64_t si = 0; si < s; ++si) {
    const Sample& sample = dataset.samples[static_cast<std::size_t>(indices[si])];
    if (!sample.skeleton.same_shape(first.skeleton) || !sample.pose.same_shape(first.pose)) {
      throw std::invalid_argument("collate: samples have mixed shapes");
    }
    const double* ssk = sample.skeleton.data();
    const double* sps = sample.pose.data();
    for (std::int64_t mi = 0; mi < m; ++mi) {
      double* dsk = batch.skeleton.data() + (si * m + mi) * rows * 3;
      double* dps = batch.pose.data() + (si * m + mi) * rows * 2;
      for (std::int64_t r = 0; r < rows; ++r) {
        for (int c = 0; c < 3; ++c) dsk[r * 3 + c] = ssk[(r * 3 + c) * m + mi];
        for (int c = 0; c < 2; ++c) dps[r * 2 + c] = sps[(r * 2 + c) * m + mi];
      }
    }
    batch.labels.push_back(sample.label);
  }
  return batch;
}

namespace {

constexpr std::int64_t kEvalChunk = 16;

// Scores samples [lo, hi) of `dataset` in fixed-size chunks and writes the
// predicted class of sample i into predictions[i]. The model must already be
// in inference mode; inference does not touch model state, so several threads
// may run this concurrently over disjoint ranges.
void predict_range(PggcnModel& model, const Dataset& dataset, std::int64_t lo, std::int64_t hi,
                   std::vector<int>& predictions) {
  std::vector<int> chunk;
  for (std::int64_t start = lo; start < hi; start += kEvalChunk) {
    const std::int64_t stop = std::min(hi, start + kEvalChunk);
    chunk.clear();
    for (std::int64_t i = start; i < stop; ++i) chunk.push_back(static_cast<int>(i));
    Batch batch = collate(dataset, chunk);
    Tensor logits = model.forward(batch.skeleton, batch.pose, batch.bodies);
    const std::int64_t k = logits.dim(1);
    for (std::int64_t row = 0; row < stop - start; ++row) {
      const double* lrow = logits.data() + row * k;
      int best = 0;
      for (std::int64_t j = 1; j < k; ++j) {
        if (lrow[j] > lrow[best]) best = static_cast<int>(j);
      }
      predictions[static_cast<std::size_t>(start + row)] = best;
    }
  }
}

}  // namespace

EvalResult evaluate(PggcnModel& model, const Dataset& dataset, int workers) {
  if (dataset.samples.empty()) {
    throw std::invalid_argument("evaluate: dataset is empty (nothing to score)");
  }
  if (model.config().num_classes != dataset.num_classes) {
    throw std::invalid_argument("evaluate: model expects " +
                                std::to_string(model.config().num_classes) +
                                " classes but the dataset declares " +
                                std::to_string(dataset.num_classes));
  }
  if (workers < 1) throw std::invalid_argument("evaluate: worker count must be at least 1");

  const auto count = static_cast<std::int64_t>(dataset.samples.size());
  std::vector<int> predictions(static_cast<std::size_t>(count), -1);
  const bool was_training = model.is_training();
  model.set_training(false);

  const int nthreads = static_cast<int>(std::min<std::int64_t>(workers, count));
  if (nthreads <= 1) {
    try {
      predict_range(model, dataset, 0, count, predictions);
    } catch (...) {
      model.set_training(was_training);
      throw;
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::string> errors(static_cast<std::size_t>(nthreads));
    const std::int64_t per = (count + nthreads - 1) / nthreads;
    for (int w = 0; w < nthreads; ++w) {
      const std::int64_t lo = w * per;
      const std::int64_t hi = std::min(count, lo + per);
      if (lo >= hi) break;
      pool.emplace_back([&model, &dataset, &predictions, &errors, lo, hi, w] {
        try {
          predict_range(model, dataset, lo, hi, predictions);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(w)] = e.what();
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = "unknown error";
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (!err.empty()) {
        model.set_training(was_training);
        throw std::runtime_error("evaluate: worker failed: " + err);
      }
    }
  }
  model.set_training(was_training);

  EvalResult result;
  result.confusion = ConfusionMatrix(dataset.num_classes);
  for (std::int64_t i = 0; i < count; ++i) {
    result.confusion.add(dataset.samples[static_cast<std::size_t>(i)].label,
                         predictions[static_cast<std::size_t>(i)]);
  }
  result.top1 = result.confusion.top1();
  return result;
}

void save_checkpoint(const std::string& path, PggcnModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  ParamRegistry registry = model.registry();
  out << kCheckpointMagic << '\n';
  out << "config-begin\n" << config_to_text(model.config()) << "config-end\n";
  out << "params " << registry.params.size() << '\n';
  for (const auto& np : registry.params) out << np.name << '\n';
  out << "buffers " << registry.buffers.size() << '\n';
  for (const auto& nb : registry.buffers) out << nb.name << '\n';
  out << "end-header\n";
  for (const auto& np : registry.params) write_tensor(out, np.param->value);
  for (const auto& nb : registry.buffers) write_tensor(out, *nb.tensor);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

namespace {

struct CheckpointHeader {
  PggcnConfig config;
  std::vector<std::string> param_names;
  std::vector<std::string> buffer_names;
};

CheckpointHeader read_checkpoint_header(std::istream& in, const std::string& path) {
  std::string line;
  auto next_line = [&](const char* what) -> std::string& {
    if (!std::getline(in, line)) {
      throw std::runtime_error(path + ": truncated checkpoint header (while reading " +
                               std::string(what) + ")");
    }
    return line;
  };

  if (next_line("magic") != kCheckpointMagic) {
    throw std::runtime_error(path + ": not a checkpoint file (bad magic line)");
  }
  if (next_line("config") != "config-begin") {
    throw std::runtime_error(path + ": expected config-begin in checkpoint header");
  }
  std::string config_text;
  while (next_line("config") != "config-end") {
    config_text += line;
    config_text += '\n';
  }

  CheckpointHeader header;
  header.config = config_from_text(config_text);

  auto read_names = [&](const char* section, std::vector<std::string>& names) {
    std::istringstream head(next_line(section));
    std::string word;
    std::size_t n = 0;
    if (!(head >> word >> n) || word != section) {
      throw std::runtime_error(path + ": expected '" + std::string(section) +
                               " <count>' in checkpoint header, got '" + line + "'");
    }
    names.reserve(n);
    for (std::size_t i = 0; i < n; ++i) names.push_back(next_line(section));
  };
  read_names("params", header.param_names);
  read_names("buffers", header.buffer_names);
  if (next_line("end-header") != "end-header") {
    throw std::runtime_error(path + ": expected end-header in checkpoint header");
  }
  return header;
}

}  // namespace

void load_checkpoint(const std::string& path, PggcnModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  const CheckpointHeader header = read_checkpoint_header(in, path);

  // The init seed only affects freshly drawn weights, which the restore
  // overwrites tensor by tensor; it plays no part in compatibility.
  PggcnConfig theirs = header.config;
  PggcnConfig ours = model.config();
  theirs.seed = 0;
  ours.seed = 0;
  if (config_to_text(theirs) != config_to_text(ours)) {
    throw std::runtime_error("load_checkpoint: " + path +
                             " was written for a different model configuration");
  }
  ParamRegistry registry = model.registry();
  if (header.param_names.size() != registry.params.size() ||
      header.buffer_names.size() != registry.buffers.size()) {
    throw std::runtime_error("load_checkpoint: " + path + " holds " +
                             std::to_string(header.param_names.size()) + " params and " +
                             std::to_string(header.buffer_names.size()) +
                             " buffers but the model registers " +
                             std::to_string(registry.params.size()) + " and " +
                             std::to_string(registry.buffers.size()));
  }
  for (std::size_t i = 0; i < registry.params.size(); ++i) {
    if (header.param_names[i] != registry.params[i].name) {
      throw std::runtime_error("load_checkpoint: parameter name mismatch at slot " +
                               std::to_string(i) + " ('" + header.param_names[i] + "' vs '" +
                               registry.params[i].name + "')");
    }
  }
  for (std::size_t i = 0; i < registry.buffers.size(); ++i) {
    if (header.buffer_names[i] != registry.buffers[i].name) {
      throw std::runtime_error("load_checkpoint: buffer name mismatch at slot " +
                               std::to_string(i) + " ('" + header.buffer_names[i] + "' vs '" +
                               registry.buffers[i].name + "')");
    }
  }

  auto read_into = [&](Tensor& dst, const std::string& name) {
    Tensor t = read_tensor(in);
    if (!t.same_shape(dst)) {
      throw std::runtime_error("load_checkpoint: tensor '" + name + "' in " + path +
                               " has an unexpected shape");
    }
    dst = std::move(t);
  };
  for (auto& np : registry.params) read_into(np.param->value, np.name);
  for (auto& nb : registry.buffers) read_into(*nb.tensor, nb.name);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("load_checkpoint: trailing bytes after tensor payloads in " + path);
  }
}

PggcnConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("peek_checkpoint_config: cannot open " + path);
  return read_checkpoint_header(in, path).config;
}

std::string format_epoch_record(const EpochRecord& record) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.4f,%.4f", record.epoch, record.loss,
                record.train_acc, record.eval_acc);
  return std::string(buf);
}

TrainResult train_loop(PggcnModel& model, const Dataset& train_set, const Dataset& eval_set,
                       const TrainConfig& config, const std::string& log_path,
                       const std::string& checkpoint_path) {
  config.validate();
  if (train_set.samples.empty()) {
    throw std::invalid_argument("train_loop: training set is empty");
  }
  if (model.config().num_classes != train_set.num_classes) {
    throw std::invalid_argument("train_loop: model expects " +
                                std::to_string(model.config().num_classes) +
                                " classes but the training set declares " +
                                std::to_string(train_set.num_classes));
  }
  const bool have_eval = !eval_set.samples.empty();
  if (have_eval && eval_set.num_classes != train_set.num_classes) {
    throw std::invalid_argument("train_loop: train and eval sets declare different class counts");
  }

  TrainResult result;
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("train_loop: cannot open log file " + log_path);
    log << "epoch,loss,train_acc,eval_acc\n" << std::flush;
  }

  Sgd optimizer(config.learning_rate, config.weight_decay, config.momentum);
  Rng rng(config.seed);
  std::vector<int> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);

  model.set_training(true);
  double best_eval = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    optimizer.learning_rate = config.learning_rate_at(epoch - 1);
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::int64_t seen = 0;
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < order.size() && !result.aborted;
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
      // Batch statistics need at least two feature-map rows.
      if (static_cast<std::int64_t>(chunk.size()) * train_set.bodies < 2) continue;

      Batch batch = collate(train_set, chunk);
      model.zero_grads();
      Tensor logits = model.forward(batch.skeleton, batch.pose, batch.bodies);
      LossResult loss = cross_entropy(logits, batch.labels);
      if (!std::isfinite(loss.value)) {
        result.aborted = true;
        result.abort_message =
            "train_loop: non-finite loss (" + std::to_string(loss.value) + ") at epoch " +
            std::to_string(epoch) + ", batch starting at shuffled sample " +
            std::to_string(start) + ", learning rate " + format_fixed(optimizer.learning_rate, 6) +
            "; the most recent checkpoint on disk is unaffected";
        break;
      }

      loss_sum += loss.value * static_cast<double>(chunk.size());
      seen += static_cast<std::int64_t>(chunk.size());
      const std::int64_t k = logits.dim(1);
      for (std::size_t row = 0; row < chunk.size(); ++row) {
        const double* lrow = logits.data() + static_cast<std::int64_t>(row) * k;
        int best = 0;
        for (std::int64_t j = 1; j < k; ++j) {
          if (lrow[j] > lrow[best]) best = static_cast<int>(j);
        }
        if (best == batch.labels[row]) ++correct;
      }

      model.backward(loss.dlogits);
      optimizer.step(model.registry());
    }
    if (result.aborted) break;
    if (seen == 0) {
      throw std::runtime_error(
          "train_loop: every mini-batch was dropped; " + std::to_string(train_set.samples.size()) +
          " samples x " + std::to_string(train_set.bodies) +
          " bodies cannot form a batch with at least 2 rows");
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(seen);
    record.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (have_eval) {
      record.eval_acc = evaluate(model, eval_set, config.workers).top1;
      if (record.eval_acc > best_eval) {
        best_eval = record.eval_acc;
        result.best_epoch = epoch;
        if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, model);
      }
    }
    result.history.push_back(record);
    if (log.is_open()) log << format_epoch_record(record) << '\n' << std::flush;

    if (config.stop_train_acc <= 1.0 && record.train_acc >= config.stop_train_acc) {
      result.stopped_early = true;
      break;
    }
  }

  model.set_training(false);
  if (!result.history.empty()) result.final_train_acc = result.history.back().train_acc;
  result.best_eval_acc = best_eval < 0.0 ? 0.0 : best_eval;
  if (!result.aborted && !have_eval && !checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, model);
  }
  return result;
}

}  // namespace pggcn

// Tests for the training module: cross-entropy loss, the SGD optimizer,
// schedules, confusion matrices, batching, evaluation, checkpoints, and the
// epoch loop (including its determinism and failure handling).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"

#include "pggcn/data.hpp"
#include "pggcn/graph.hpp"
#include "pggcn/model.hpp"
#include "pggcn/rng.hpp"
#include "pggcn/train.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace pggcn;
namespace fs = std::filesystem;

namespace {

// Small model that still exercises every component (all three skeleton
// substreams, the shared pose stream, dynamic attention).
PggcnConfig tiny_config(int classes, int joints, int frames, std::uint64_t seed) {
  PggcnConfig c;
  c.num_classes = classes;
  c.num_joints = joints;
  c.max_frames = frames;
  c.embed_channels = 6;
  c.classifier_mid = 6;
  c.classifier_out = 8;
  c.temporal_kernel = 3;
  c.partitions = 3;
  c.attention = AttentionMode::dynamic;
  c.use_pose = true;
  c.seed = seed;
  return c;
}

// Independent loss oracle: plain log-sum-exp per row, mean over the batch.
double ce_oracle(const Tensor& logits, const std::vector<int>& labels) {
  const int b = logits.dim(0);
  const int k = logits.dim(1);
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    double m = logits.at({i, 0});
    for (int j = 1; j < k; ++j) m = std::max(m, logits.at({i, j}));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(logits.at({i, j}) - m);
    total += m + std::log(denom) - logits.at({i, labels[static_cast<std::size_t>(i)]});
  }
  return total / b;
}

Tensor random_logits(int b, int k, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor({b, k}, -2.0, 2.0, rng);
}

// Hand-built two-sample dataset with distinct, formula-addressable values.
Dataset handmade_dataset(int t, int n, int m) {
  Dataset ds;
  ds.num_classes = 2;
  ds.num_joints = n;
  ds.max_frames = t;
  ds.bodies = m;
  for (int s = 0; s < 2; ++s) {
    Sample sample;
    sample.skeleton = Tensor::zeros({t, n, 3, m});
    sample.pose = Tensor::zeros({t, n, 2, m});
    for (int ti = 0; ti < t; ++ti) {
      for (int j = 0; j < n; ++j) {
        for (int mi = 0; mi < m; ++mi) {
          for (int d = 0; d < 3; ++d) {
            sample.skeleton.at({ti, j, d, mi}) = 100.0 * s + 10.0 * ti + j + 0.1 * d + 0.01 * mi;
          }
          for (int d = 0; d < 2; ++d) {
            sample.pose.at({ti, j, d, mi}) = -(100.0 * s + 10.0 * ti + j + 0.1 * d + 0.01 * mi);
          }
        }
      }
    }
    sample.label = s;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

TEST_CASE("training configuration defaults are valid and rejections are specific") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.learning_rate == 0.1);
  CHECK(c.batch_size == 16);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.momentum == 0.0);

  auto broken = [] { return TrainConfig{}; };
  TrainConfig bad;

  bad = broken();
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.weight_decay = -1e-6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.momentum = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.decay_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.decay_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.stop_train_acc = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = broken();
  bad.workers = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("default step milestones land at 60% and 80% of the run") {
  TrainConfig c;
  c.epochs = 200;
  c.schedule = LrSchedule::step_decay;
  CHECK(c.effective_milestones() == std::vector<int>{120, 160});

  c.epochs = 10;
  CHECK(c.effective_milestones() == std::vector<int>{6, 8});

  SUBCASE("a constant schedule has no milestones even when some are listed") {
    c.schedule = LrSchedule::constant;
    c.milestones = {3, 5};
    CHECK(c.effective_milestones().empty());
  }

  SUBCASE("explicit milestones are sorted, deduplicated, and range-filtered") {
    c.epochs = 10;
    c.milestones = {4, 2, 2, 0, 99};
    CHECK(c.effective_milestones() == std::vector<int>{2, 4});
    c.milestones = {5};
    c.epochs = 5;  // milestone == epochs is outside [1, epochs)
    CHECK(c.effective_milestones().empty());
  }
}

TEST_CASE("learning rate decays once each time a milestone is passed") {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.schedule = LrSchedule::step_decay;
  c.milestones = {2, 4};
  c.decay_factor = 0.1;
  c.epochs = 10;

  CHECK(c.learning_rate_at(0) == 1.0);
  CHECK(c.learning_rate_at(1) == 1.0);
  CHECK(c.learning_rate_at(2) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(c.learning_rate_at(3) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(c.learning_rate_at(4) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(c.learning_rate_at(9) == doctest::Approx(0.01).epsilon(1e-12));

  c.schedule = LrSchedule::constant;
  for (int e = 0; e < 10; ++e) CHECK(c.learning_rate_at(e) == 1.0);
}

TEST_CASE("schedule names parse and reject unknowns") {
  CHECK(lr_schedule_from_string("constant") == LrSchedule::constant);
  CHECK(lr_schedule_from_string("step") == LrSchedule::step_decay);
  CHECK(lr_schedule_from_string("step-decay") == LrSchedule::step_decay);
  CHECK(lr_schedule_from_string("step_decay") == LrSchedule::step_decay);
  CHECK_THROWS_AS(lr_schedule_from_string("cosine"), std::invalid_argument);
  CHECK(to_string(LrSchedule::constant) == "constant");
  CHECK(to_string(LrSchedule::step_decay) == "step");
}

// ---------------------------------------------------------------------------
// Cross-entropy

TEST_CASE("uniform logits cost exactly log(K)") {
  const int b = 3;
  const int k = 5;
  Tensor logits({b, k});
  logits = Tensor::full(logits.shape(), 0.7);
  std::vector<int> labels = {0, 4, 2};
  LossResult r = cross_entropy(logits, labels);
  CHECK(std::abs(r.value - std::log(5.0)) <= 1e-12);

  // Gradient of each row is (softmax - onehot)/B = (1/K - onehot)/B.
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < k; ++j) {
      const double expected = (1.0 / k - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0)) / b;
      CHECK(std::abs(r.dlogits.at({i, j}) - expected) <= 1e-12);
    }
  }
}

TEST_CASE("a confidently correct prediction costs almost nothing") {
  Tensor logits({1, 2});
  logits.at({0, 0}) = 0.0;
  logits.at({0, 1}) = 50.0;
  LossResult r = cross_entropy(logits, {1});
  CHECK(r.value >= 0.0);
  CHECK(r.value <= 1e-12);  // log(1 + e^-50)
}

TEST_CASE("loss value matches an independent log-sum-exp oracle") {
  Tensor logits = random_logits(4, 3, 71);
  std::vector<int> labels = {0, 2, 1, 1};
  LossResult r = cross_entropy(logits, labels);
  CHECK(std::abs(r.value - ce_oracle(logits, labels)) <= 1e-12);

  // Each gradient row sums to zero: softmax sums to one, the one-hot too.
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += r.dlogits.at({i, j});
    CHECK(std::abs(s) <= 1e-15);
  }
}

TEST_CASE("cross-entropy is non-negative on random inputs") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Tensor logits = random_logits(5, 4, 100 + trial);
    std::vector<int> labels = {3, 0, 1, 2, 2};
    CHECK(cross_entropy(logits, labels).value >= 0.0);
  }
}

TEST_CASE("analytic loss gradient matches central differences") {
  Tensor logits = random_logits(2, 4, 55);
  const std::vector<int> labels = {2, 0};
  const Tensor analytic = cross_entropy(logits, labels).dlogits;
  const double eps = 1e-6;

  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double saved = logits.at({i, j});
      logits.at({i, j}) = saved + eps;
      const double up = cross_entropy(logits, labels).value;
      logits.at({i, j}) = saved - eps;
      const double down = cross_entropy(logits, labels).value;
      logits.at({i, j}) = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic.at({i, j});
      const double denom = std::max({1e-9, std::abs(fd), std::abs(a)});
      CHECK(std::abs(fd - a) / denom <= 1e-6);
    }
  }
}

TEST_CASE("cross-entropy rejects malformed inputs") {
  Tensor flat({4});
  CHECK_THROWS_AS(cross_entropy(flat, {0}), std::invalid_argument);

  Tensor logits({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0}), std::invalid_argument);         // label count
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), std::invalid_argument);      // out of range
  CHECK_THROWS_AS(cross_entropy(logits, {0, -1}), std::invalid_argument);     // negative
}

// ---------------------------------------------------------------------------
// SGD

TEST_CASE("a zero learning rate leaves parameters untouched and clears gradients") {
  Param p(Tensor({2}, {1.5, -2.0}));
  p.grad.at({0}) = 3.0;
  p.grad.at({1}) = -1.0;
  ParamRegistry reg;
  reg.add("p", p);

  Sgd opt(0.0, 0.5, 0.0);
  opt.step(reg);
  CHECK(p.value.at({0}) == 1.5);
  CHECK(p.value.at({1}) == -2.0);
  CHECK(p.grad.at({0}) == 0.0);
  CHECK(p.grad.at({1}) == 0.0);
}

TEST_CASE("one step on f(p)=p^2 from p=1 at lr 0.1 lands on 0.8") {
  Param p(Tensor({1}, {1.0}));
  p.grad.at({0}) = 2.0;  // df/dp = 2p
  ParamRegistry reg;
  reg.add("p", p);
  Sgd opt(0.1, 0.0, 0.0);
  opt.step(reg);
  CHECK(p.value.at({0}) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("weight decay alone multiplies a weight by (1 - lr*wd)") {
  Param p(Tensor({1}, {1.0}));
  ParamRegistry reg;
  reg.add("p", p);
  Sgd opt(0.1, 0.5, 0.0);
  opt.step(reg);  // gradient is zero
  CHECK(p.value.at({0}) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));

  SUBCASE("a decay-exempt parameter is bitwise unchanged") {
    Param q(Tensor({1}, {1.0}), /*trainable=*/true, /*decay=*/false);
    ParamRegistry reg2;
    reg2.add("q", q);
    Sgd opt2(0.1, 0.5, 0.0);
    opt2.step(reg2);
    CHECK(q.value.at({0}) == 1.0);
  }
}

TEST_CASE("non-trainable parameters are skipped but their gradients still clear") {
  Param p(Tensor({2}, {4.0, 5.0}), /*trainable=*/false);
  p.grad.at({0}) = 9.0;
  ParamRegistry reg;
  reg.add("p", p);
  Sgd opt(0.1, 0.1, 0.9);
  opt.step(reg);
  CHECK(p.value.at({0}) == 4.0);
  CHECK(p.value.at({1}) == 5.0);
  CHECK(p.grad.at({0}) == 0.0);
}

TEST_CASE("classical momentum accumulates velocity across steps") {
  // v <- mu*v + g ; p <- p - lr*v with mu=0.9, lr=0.1, g=2 each step:
  // step 1: v=2,   p = 1 - 0.2  = 0.8
  // step 2: v=3.8, p = 0.8-0.38 = 0.42
  Param p(Tensor({1}, {1.0}));
  ParamRegistry reg;
  reg.add("p", p);
  Sgd opt(0.1, 0.0, 0.9);

  p.grad.at({0}) = 2.0;
  opt.step(reg);
  CHECK(p.value.at({0}) == doctest::Approx(0.8).epsilon(1e-12));

  p.grad.at({0}) = 2.0;
  opt.step(reg);
  CHECK(p.value.at({0}) == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("a momentum optimizer rejects a changed registry layout") {
  Param a(Tensor({2}, {1.0, 2.0}));
  ParamRegistry one;
  one.add("a", a);
  Sgd opt(0.1, 0.0, 0.9);
  a.grad = Tensor::full(a.grad.shape(), 1.0);
  opt.step(one);

  SUBCASE("different parameter count") {
    Param b(Tensor({2}, {0.0, 0.0}));
    ParamRegistry two;
    two.add("a", a);
    two.add("b", b);
    CHECK_THROWS_AS(opt.step(two), std::logic_error);
  }

  SUBCASE("same count, different shape") {
    Param c(Tensor({3}, {0.0, 0.0, 0.0}));
    ParamRegistry other;
    other.add("c", c);
    CHECK_THROWS_AS(opt.step(other), std::logic_error);
  }
}

TEST_CASE("weight decay exemptions cover normalization, biases, and attention masks") {
  PggcnModel model(tiny_config(2, 7, 8, 3), SkeletonGraph::chain(7));
  ParamRegistry reg = model.registry();
  REQUIRE(!reg.params.empty());

  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };

  int decayed = 0;
  int exempt = 0;
  for (const auto& np : reg.params) {
    const bool exempt_name = ends_with(np.name, ".bias") || ends_with(np.name, ".gamma") ||
                             ends_with(np.name, ".beta") || ends_with(np.name, ".m") ||
                             ends_with(np.name, ".m_prime");
    CHECK(np.param->decay == !exempt_name);
    (exempt_name ? exempt : decayed)++;
  }
  CHECK(decayed > 0);   // graph-conv weights, temporal kernels, fc weight
  CHECK(exempt > 0);
}

TEST_CASE("one optimizer step at a small rate strictly lowers the loss on a frozen batch") {
  Dataset ds = generate_synthetic(2, 2, 7, 8, 77);
  PggcnModel model(tiny_config(2, 7, 8, 11), SkeletonGraph::chain(7));
  Batch batch = collate(ds, {0, 1, 2, 3});

  model.set_training(true);
  model.zero_grads();
  Tensor logits = model.forward(batch.skeleton, batch.pose, batch.bodies);
  LossResult before = cross_entropy(logits, batch.labels);
  model.backward(before.dlogits);

  Sgd opt(1e-4, 1e-4, 0.0);
  opt.step(model.registry());

  Tensor logits_after = model.forward(batch.skeleton, batch.pose, batch.bodies);
  LossResult after = cross_entropy(logits_after, batch.labels);
  CHECK(after.value < before.value);
}

// ---------------------------------------------------------------------------
// Confusion matrix

TEST_CASE("confusion matrix counts, trace, and accuracy agree with hand tallies") {
  CHECK_THROWS_AS(ConfusionMatrix(0), std::invalid_argument);

  ConfusionMatrix cm(3);
  CHECK(cm.top1() == 0.0);  // empty matrix scores zero, not NaN

  cm.add(0, 0);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1);
  cm.add(2, 0);

  CHECK(cm.at(0, 0) == 2);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(2, 0) == 1);
  CHECK(cm.at(2, 2) == 0);
  CHECK(cm.total() == 5);
  CHECK(cm.trace() == 3);
  CHECK(cm.top1() == doctest::Approx(0.6).epsilon(1e-15));

  CHECK_THROWS_AS(cm.add(-1, 0), std::out_of_range);
  CHECK_THROWS_AS(cm.add(0, 3), std::out_of_range);
  CHECK_THROWS_AS(cm.at(3, 0), std::out_of_range);

  SUBCASE("raw CSV is exact integer rows") {
    CHECK(cm.to_csv() == "2,1,0\n0,1,0\n1,0,0\n");
  }

  SUBCASE("normalized CSV divides by row sums and zero rows stay zero") {
    CHECK(cm.to_normalized_csv() ==
          "0.666667,0.333333,0.000000\n"
          "0.000000,1.000000,0.000000\n"
          "1.000000,0.000000,0.000000\n");

    ConfusionMatrix single(2);
    single.add(0, 0);
    CHECK(single.to_normalized_csv() ==
          "1.000000,0.000000\n"
          "0.000000,0.000000\n");
  }
}

// ---------------------------------------------------------------------------
// Collate

TEST_CASE("collate lays out bodies as consecutive rows per sample") {
  Dataset ds = handmade_dataset(2, 3, 2);
  Batch batch = collate(ds, {0, 1});

  CHECK(batch.bodies == 2);
  REQUIRE(batch.skeleton.rank() == 4);
  CHECK(batch.skeleton.dim(0) == 4);  // 2 samples x 2 bodies
  CHECK(batch.skeleton.dim(1) == 2);
  CHECK(batch.skeleton.dim(2) == 3);
  CHECK(batch.skeleton.dim(3) == 3);
  CHECK(batch.pose.dim(3) == 2);
  CHECK(batch.labels == std::vector<int>{0, 1});

  for (int s = 0; s < 2; ++s) {
    const Sample& sample = ds.samples[static_cast<std::size_t>(s)];
    for (int m = 0; m < 2; ++m) {
      for (int t = 0; t < 2; ++t) {
        for (int j = 0; j < 3; ++j) {
          for (int d = 0; d < 3; ++d) {
            CHECK(batch.skeleton.at({s * 2 + m, t, j, d}) == sample.skeleton.at({t, j, d, m}));
          }
          for (int d = 0; d < 2; ++d) {
            CHECK(batch.pose.at({s * 2 + m, t, j, d}) == sample.pose.at({t, j, d, m}));
          }
        }
      }
    }
  }

  SUBCASE("repeated and reordered indices are honored") {
    Batch again = collate(ds, {1, 1});
    CHECK(again.labels == std::vector<int>{1, 1});
    CHECK(again.skeleton.at({0, 0, 0, 0}) == ds.samples[1].skeleton.at({0, 0, 0, 0}));
    CHECK(again.skeleton.at({2, 0, 0, 0}) == ds.samples[1].skeleton.at({0, 0, 0, 0}));
  }
}

TEST_CASE("collate rejects malformed requests and mixed sample shapes") {
  Dataset ds = handmade_dataset(2, 3, 2);
  CHECK_THROWS_AS(collate(ds, {}), std::invalid_argument);
  CHECK_THROWS_AS(collate(ds, {0, 2}), std::out_of_range);
  CHECK_THROWS_AS(collate(ds, {-1}), std::out_of_range);

  SUBCASE("mixed shapes") {
    Dataset mixed = handmade_dataset(2, 3, 2);
    Dataset longer = handmade_dataset(3, 3, 2);
    mixed.samples.push_back(longer.samples[0]);
    CHECK_THROWS_AS(collate(mixed, {0, 2}), std::invalid_argument);
  }

  SUBCASE("pose that does not match its skeleton") {
    Dataset bad = handmade_dataset(2, 3, 2);
    bad.samples[0].pose = Tensor::zeros({2, 3, 3, 2});  // 3 channels, not 2
    CHECK_THROWS_AS(collate(bad, {0}), std::invalid_argument);
  }

  SUBCASE("skeleton of the wrong rank") {
    Dataset bad = handmade_dataset(2, 3, 2);
    bad.samples[0].skeleton = Tensor::zeros({2, 3, 3});
    CHECK_THROWS_AS(collate(bad, {0}), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------
// Evaluate

TEST_CASE("evaluation rejects empty datasets, class mismatches, and bad worker counts") {
  PggcnModel model(tiny_config(3, 7, 8, 2), SkeletonGraph::chain(7));
  Dataset empty;
  empty.num_classes = 3;
  CHECK_THROWS_WITH_AS(evaluate(model, empty, 1),
                       doctest::Contains("dataset is empty"), std::invalid_argument);

  Dataset ds = generate_synthetic(2, 2, 7, 8, 5);
  CHECK_THROWS_AS(evaluate(model, ds, 1), std::invalid_argument);  // 3-class model, 2-class data

  Dataset ok = generate_synthetic(3, 2, 7, 8, 5);
  CHECK_THROWS_AS(evaluate(model, ok, 0), std::invalid_argument);
}

TEST_CASE("multi-threaded evaluation scores exactly like single-threaded") {
  Dataset ds = generate_synthetic(3, 7, 7, 8, 123);
  PggcnModel model(tiny_config(3, 7, 8, 2), SkeletonGraph::chain(7));

  EvalResult one = evaluate(model, ds, 1);
  EvalResult three = evaluate(model, ds, 3);
  EvalResult many = evaluate(model, ds, 64);  // more workers than samples

  CHECK(one.top1 == three.top1);
  CHECK(one.top1 == many.top1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      CHECK(one.confusion.at(r, c) == three.confusion.at(r, c));
      CHECK(one.confusion.at(r, c) == many.confusion.at(r, c));
    }
  }

  CHECK(one.confusion.total() == 21);
  CHECK(one.top1 == static_cast<double>(one.confusion.trace()) /
                        static_cast<double>(one.confusion.total()));
}

TEST_CASE("evaluation restores the training flag and does not touch weights") {
  Dataset ds = generate_synthetic(2, 3, 7, 8, 9);
  PggcnModel model(tiny_config(2, 7, 8, 4), SkeletonGraph::chain(7));

  ParamRegistry reg = model.registry();
  std::vector<Tensor> before_params;
  std::vector<Tensor> before_buffers;
  for (const auto& np : reg.params) before_params.push_back(np.param->value);
  for (const auto& nb : reg.buffers) before_buffers.push_back(*nb.tensor);

  model.set_training(true);
  evaluate(model, ds, 2);
  CHECK(model.is_training());
  model.set_training(false);
  evaluate(model, ds, 1);
  CHECK(!model.is_training());

  ParamRegistry after = model.registry();
  for (std::size_t i = 0; i < after.params.size(); ++i) {
    CHECK(oracle::bitwise_equal(after.params[i].param->value, before_params[i]));
  }
  for (std::size_t i = 0; i < after.buffers.size(); ++i) {
    CHECK(oracle::bitwise_equal(*after.buffers[i].tensor, before_buffers[i]));
  }
}

TEST_CASE("a model scored against its own predictions yields an identity confusion") {
  Dataset ds = generate_synthetic(3, 4, 7, 8, 31);
  PggcnModel model(tiny_config(3, 7, 8, 6), SkeletonGraph::chain(7));

  // Relabel every sample with the class the model itself predicts; the model
  // is then a perfect predictor for the relabeled set.
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Batch single = collate(ds, {static_cast<int>(i)});
    ds.samples[i].label = model.predict(single.skeleton, single.pose, single.bodies);
  }

  EvalResult r = evaluate(model, ds, 1);
  CHECK(r.top1 == 1.0);
  CHECK(r.confusion.trace() == r.confusion.total());
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (a != b) CHECK(r.confusion.at(a, b) == 0);
    }
  }
}

TEST_CASE("a constant predictor fills a single confusion column") {
  Dataset ds = generate_synthetic(3, 7, 7, 8, 17);
  PggcnModel model(tiny_config(3, 7, 8, 8), SkeletonGraph::chain(7));

  // Zeroing the classifier head makes every logit row identical (all zeros);
  // argmax then always picks class 0.
  model.fc_weight().value = Tensor::zeros(model.fc_weight().value.shape());
  model.fc_bias().value = Tensor::zeros(model.fc_bias().value.shape());

  EvalResult r = evaluate(model, ds, 1);
  CHECK(r.top1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  for (int c = 0; c < 3; ++c) {
    CHECK(r.confusion.at(c, 0) == 7);  // balanced classes, 7 samples each
    for (int p = 1; p < 3; ++p) CHECK(r.confusion.at(c, p) == 0);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST_CASE("checkpoints restore every parameter and buffer bitwise") {
  testutil::TempDir dir("ckpt_roundtrip");
  const std::string path = dir.file("model.ckpt");

  PggcnConfig cfg = tiny_config(2, 7, 8, 21);
  PggcnModel source(cfg, SkeletonGraph::chain(7));

  // Move the normalization buffers off their initial values first so the
  // round-trip covers buffers with real content.
  Dataset ds = generate_synthetic(2, 2, 7, 8, 3);
  Batch batch = collate(ds, {0, 1, 2, 3});
  source.set_training(true);
  source.zero_grads();
  Tensor logits = source.forward(batch.skeleton, batch.pose, batch.bodies);
  source.backward(cross_entropy(logits, batch.labels).dlogits);
  Sgd(0.05, 1e-4, 0.0).step(source.registry());
  source.set_training(false);

  save_checkpoint(path, source);

  PggcnConfig cfg2 = cfg;
  cfg2.seed = 99;  // different init, same architecture
  PggcnModel restored(cfg2, SkeletonGraph::chain(7));
  load_checkpoint(path, restored);

  ParamRegistry a = source.registry();
  ParamRegistry b = restored.registry();
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].name == b.params[i].name);
    CHECK(oracle::bitwise_equal(a.params[i].param->value, b.params[i].param->value));
  }
  REQUIRE(a.buffers.size() == b.buffers.size());
  for (std::size_t i = 0; i < a.buffers.size(); ++i) {
    CHECK(oracle::bitwise_equal(*a.buffers[i].tensor, *b.buffers[i].tensor));
  }

  restored.set_training(false);
  Tensor out_a = source.forward(batch.skeleton, batch.pose, batch.bodies);
  Tensor out_b = restored.forward(batch.skeleton, batch.pose, batch.bodies);
  CHECK(oracle::bitwise_equal(out_a, out_b));

  SUBCASE("the stored configuration can be inspected without a model") {
    CHECK(config_to_text(peek_checkpoint_config(path)) == config_to_text(cfg));
  }
}

TEST_CASE("checkpoint loading fails loudly on every corruption mode") {
  testutil::TempDir dir("ckpt_errors");
  const std::string path = dir.file("model.ckpt");
  PggcnConfig cfg = tiny_config(2, 7, 8, 21);
  PggcnModel model(cfg, SkeletonGraph::chain(7));
  save_checkpoint(path, model);

  SUBCASE("missing file") {
    PggcnModel m(cfg, SkeletonGraph::chain(7));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("absent.ckpt"), m),
                         doctest::Contains("cannot open"), std::runtime_error);
    CHECK_THROWS_AS(peek_checkpoint_config(dir.file("absent.ckpt")), std::runtime_error);
  }

  SUBCASE("not a checkpoint at all") {
    testutil::write_text_file(dir.file("junk.ckpt"), "hello world\nnot a checkpoint\n");
    PggcnModel m(cfg, SkeletonGraph::chain(7));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("junk.ckpt"), m),
                         doctest::Contains("bad magic"), std::runtime_error);
  }

  SUBCASE("configuration mismatch") {
    PggcnConfig other = cfg;
    other.embed_channels = 12;
    PggcnModel m(other, SkeletonGraph::chain(7));
    CHECK_THROWS_WITH_AS(load_checkpoint(path, m),
                         doctest::Contains("different model configuration"), std::runtime_error);
  }

  SUBCASE("truncated payload") {
    const std::string full = testutil::read_file(path);
    const std::string cut = full.substr(0, full.size() * 3 / 5);
    std::ofstream out(dir.file("cut.ckpt"), std::ios::binary | std::ios::trunc);
    out.write(cut.data(), static_cast<std::streamsize>(cut.size()));
    out.close();
    PggcnModel m(cfg, SkeletonGraph::chain(7));
    CHECK_THROWS_AS(load_checkpoint(dir.file("cut.ckpt"), m), std::runtime_error);
  }

  SUBCASE("trailing garbage after the payload") {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.write("XYZ", 3);
    out.close();
    PggcnModel m(cfg, SkeletonGraph::chain(7));
    CHECK_THROWS_WITH_AS(load_checkpoint(path, m),
                         doctest::Contains("trailing bytes"), std::runtime_error);
  }

  SUBCASE("unwritable save path") {
    CHECK_THROWS_WITH_AS(save_checkpoint("/nonexistent-dir-for-tests/x.ckpt", model),
                         doctest::Contains("cannot open"), std::runtime_error);
  }
}

// ---------------------------------------------------------------------------
// Epoch records

TEST_CASE("epoch records format as a fixed-width CSV row") {
  EpochRecord r;
  r.epoch = 7;
  r.loss = 1.2345678;
  r.train_acc = 0.5;
  r.eval_acc = 0.25;
  CHECK(format_epoch_record(r) == "7,1.234568,0.5000,0.2500");
}

// ---------------------------------------------------------------------------
// Train loop

namespace {

struct LoopFixtures {
  Dataset train;
  Dataset eval;
  PggcnConfig model_config;
  TrainConfig train_config;
};

LoopFixtures make_loop_fixtures() {
  LoopFixtures f;
  f.train = generate_synthetic(2, 6, 7, 8, 211);
  f.eval = generate_synthetic(2, 3, 7, 8, 212);
  f.model_config = tiny_config(2, 7, 8, 13);
  f.train_config.learning_rate = 0.1;
  f.train_config.batch_size = 4;
  f.train_config.weight_decay = 1e-4;
  f.train_config.momentum = 0.0;
  f.train_config.epochs = 4;
  f.train_config.schedule = LrSchedule::constant;
  f.train_config.seed = 1;
  f.train_config.workers = 1;
  return f;
}

}  // namespace

TEST_CASE("the epoch loop logs, checkpoints the best model, and reports history") {
  testutil::TempDir dir("train_loop");
  LoopFixtures f = make_loop_fixtures();
  PggcnModel model(f.model_config, SkeletonGraph::chain(7));

  const std::string log_path = dir.file("log.csv");
  const std::string ckpt_path = dir.file("model.ckpt");
  TrainResult result = train_loop(model, f.train, f.eval, f.train_config, log_path, ckpt_path);

  CHECK(!result.aborted);
  CHECK(!result.stopped_early);
  REQUIRE(result.history.size() == 4);
  for (int e = 0; e < 4; ++e) {
    CHECK(result.history[static_cast<std::size_t>(e)].epoch == e + 1);
    CHECK(std::isfinite(result.history[static_cast<std::size_t>(e)].loss));
  }
  CHECK(result.final_train_acc == result.history.back().train_acc);

  // Learning must actually happen on this easy, tiny corpus.
  CHECK(result.history.back().loss < result.history.front().loss);

  // Best-eval bookkeeping: the reported best is the max over epochs and the
  // first epoch attaining it.
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& rec : result.history) {
    if (rec.eval_acc > best) {
      best = rec.eval_acc;
      best_epoch = rec.epoch;
    }
  }
  CHECK(result.best_eval_acc == best);
  CHECK(result.best_epoch == best_epoch);

  // The log mirrors the history exactly.
  std::vector<std::string> lines = read_lines(log_path);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "epoch,loss,train_acc,eval_acc");
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    CHECK(lines[i + 1] == format_epoch_record(result.history[i]));
  }

  // The checkpoint on disk is the best-eval snapshot: reloading it and
  // rescoring the eval set reproduces the reported best accuracy exactly.
  REQUIRE(fs::exists(ckpt_path));
  PggcnModel reloaded(f.model_config, SkeletonGraph::chain(7));
  load_checkpoint(ckpt_path, reloaded);
  CHECK(evaluate(reloaded, f.eval, 1).top1 == result.best_eval_acc);

  // The loop hands the model back in inference mode.
  CHECK(!model.is_training());
}

TEST_CASE("identical seeds reproduce training byte for byte") {
  testutil::TempDir dir("train_determinism");
  LoopFixtures f = make_loop_fixtures();
  f.train_config.epochs = 3;

  auto run = [&](const std::string& tag) {
    PggcnModel model(f.model_config, SkeletonGraph::chain(7));
    Dataset train = generate_synthetic(2, 6, 7, 8, 211);
    Dataset eval = generate_synthetic(2, 3, 7, 8, 212);
    return train_loop(model, train, eval, f.train_config, dir.file(tag + ".csv"),
                      dir.file(tag + ".ckpt"));
  };

  TrainResult a = run("a");
  TrainResult b = run("b");

  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].train_acc == b.history[i].train_acc);
    CHECK(a.history[i].eval_acc == b.history[i].eval_acc);
  }
  CHECK(testutil::files_byte_equal(dir.file("a.csv"), dir.file("b.csv")));
  CHECK(testutil::files_byte_equal(dir.file("a.ckpt"), dir.file("b.ckpt")));
}

TEST_CASE("training stops early once the accuracy threshold is reached") {
  testutil::TempDir dir("train_earlystop");
  LoopFixtures f = make_loop_fixtures();
  f.train_config.epochs = 50;
  f.train_config.stop_train_acc = 0.5;

  PggcnModel model(f.model_config, SkeletonGraph::chain(7));
  TrainResult result = train_loop(model, f.train, f.eval, f.train_config, "", "");

  CHECK(result.stopped_early);
  CHECK(!result.aborted);
  REQUIRE(!result.history.empty());
  CHECK(result.history.size() < 50);
  CHECK(result.history.back().train_acc >= 0.5);
  // No files are written when both the log and checkpoint paths are empty.
  CHECK(fs::is_empty(dir.path()));
}

TEST_CASE("a runaway learning rate aborts with diagnostics and preserves the checkpoint") {
  testutil::TempDir dir("train_abort");
  LoopFixtures f = make_loop_fixtures();
  f.train_config.learning_rate = 1e154;  // guarantees overflow within a few steps
  f.train_config.epochs = 6;

  const std::string ckpt_path = dir.file("model.ckpt");
  testutil::write_text_file(ckpt_path, "sentinel: pre-existing checkpoint bytes");

  // No eval set: checkpoints are only written after a complete run, so an
  // abort must leave whatever was on disk untouched.
  PggcnModel model(f.model_config, SkeletonGraph::chain(7));
  Dataset no_eval;
  TrainResult result = train_loop(model, f.train, no_eval, f.train_config,
                                  dir.file("log.csv"), ckpt_path);

  CHECK(result.aborted);
  CHECK(!result.stopped_early);
  CHECK(result.abort_message.find("non-finite loss") != std::string::npos);
  CHECK(result.abort_message.find("learning rate") != std::string::npos);
  CHECK(result.abort_message.find("checkpoint") != std::string::npos);

  CHECK(testutil::read_file(ckpt_path) == "sentinel: pre-existing checkpoint bytes");

  // The log exists and starts with the header even though the run aborted.
  std::vector<std::string> lines = read_lines(dir.file("log.csv"));
  REQUIRE(!lines.empty());
  CHECK(lines[0] == "epoch,loss,train_acc,eval_acc");
}

TEST_CASE("training without an eval set still checkpoints the final model") {
  testutil::TempDir dir("train_noeval");
  LoopFixtures f = make_loop_fixtures();
  f.train_config.epochs = 2;

  PggcnModel model(f.model_config, SkeletonGraph::chain(7));
  Dataset no_eval;
  TrainResult result = train_loop(model, f.train, no_eval, f.train_config, "",
                                  dir.file("final.ckpt"));

  CHECK(!result.aborted);
  CHECK(result.best_eval_acc == 0.0);
  for (const auto& rec : result.history) CHECK(rec.eval_acc == 0.0);
  REQUIRE(fs::exists(dir.file("final.ckpt")));

  // The stored model is the final state reached by training.
  PggcnModel reloaded(f.model_config, SkeletonGraph::chain(7));
  load_checkpoint(dir.file("final.ckpt"), reloaded);
  ParamRegistry a = model.registry();
  ParamRegistry b = reloaded.registry();
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(oracle::bitwise_equal(a.params[i].param->value, b.params[i].param->value));
  }
}

TEST_CASE("the epoch loop rejects inconsistent inputs up front") {
  LoopFixtures f = make_loop_fixtures();
  PggcnModel model(f.model_config, SkeletonGraph::chain(7));

  SUBCASE("empty training set") {
    Dataset none;
    CHECK_THROWS_AS(train_loop(model, none, f.eval, f.train_config, "", ""),
                    std::invalid_argument);
  }

  SUBCASE("model and training set disagree on classes") {
    Dataset three = generate_synthetic(3, 2, 7, 8, 4);
    CHECK_THROWS_AS(train_loop(model, three, f.eval, f.train_config, "", ""),
                    std::invalid_argument);
  }

  SUBCASE("train and eval sets disagree on classes") {
    Dataset eval3 = generate_synthetic(3, 2, 7, 8, 4);
    CHECK_THROWS_AS(train_loop(model, f.train, eval3, f.train_config, "", ""),
                    std::invalid_argument);
  }

  SUBCASE("invalid optimizer settings are caught before any work") {
    TrainConfig bad = f.train_config;
    bad.batch_size = 1;
    CHECK_THROWS_AS(train_loop(model, f.train, f.eval, bad, "", ""), std::invalid_argument);
  }

  SUBCASE("unopenable log path") {
    CHECK_THROWS_WITH_AS(train_loop(model, f.train, f.eval, f.train_config,
                                    "/nonexistent-dir-for-tests/log.csv", ""),
                         doctest::Contains("cannot open"), std::runtime_error);
  }

  SUBCASE("a dataset that cannot form a two-row batch") {
    Dataset lone = generate_synthetic(2, 1, 7, 8, 4);
    lone.samples.resize(1);  // one sample, one body: every chunk has 1 row
    CHECK_THROWS_WITH_AS(train_loop(model, lone, f.eval, f.train_config, "", ""),
                         doctest::Contains("mini-batch"), std::runtime_error);
  }
}

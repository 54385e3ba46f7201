#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pggcn/blocks.hpp"
#include "pggcn/data.hpp"
#include "pggcn/model.hpp"
#include "pggcn/tensor.hpp"

namespace pggcn {

enum class LrSchedule { constant, step_decay };

LrSchedule lr_schedule_from_string(const std::string& s);
std::string to_string(LrSchedule schedule);

/// Optimisation settings. Defaults follow the reference recipe: plain SGD at
/// learning rate 0.1, mini-batches of 16 samples, weight decay 1e-4, and a
/// step schedule that multiplies the rate by 0.1 after 60% and 80% of the
/// epochs have completed.
struct TrainConfig {
  double learning_rate = 0.1;
  int batch_size = 16;  // samples per mini-batch; minimum 2 rows reach the net
  double weight_decay = 1e-4;
  double momentum = 0.0;  // classical momentum; 0 keeps plain SGD
  int epochs = 200;
  LrSchedule schedule = LrSchedule::step_decay;
  std::vector<int> milestones;  // 1-based epoch counts after which the rate
                                // decays; empty selects 60%/80% of `epochs`
  double decay_factor = 0.1;
  std::uint64_t seed = 1;
  double stop_train_acc = 2.0;  // stop once train accuracy reaches this; >1 disables
  int workers = 1;              // evaluation threads

  void validate() const;
  std::vector<int> effective_milestones() const;
  /// Learning rate used for the 0-based epoch index under the schedule.
  double learning_rate_at(int epoch_index) const;
};

/// Mean negative log-likelihood of the labelled rows of `logits` [B x K],
/// evaluated through log-sum-exp so large logits stay finite. `dlogits`
/// carries the batch-averaged analytic gradient (softmax minus one-hot).
struct LossResult {
  double value = 0.0;
  Tensor dlogits;
};

LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// SGD with optional classical momentum. step() applies
///   p <- p - lr * (grad + weight_decay * p)
/// to every trainable parameter (decay only where the parameter opted in),
/// then zeroes the gradients. Momentum buffers are kept per registry slot,
/// so the same registry order must be presented on every call.
class Sgd {
 public:
  Sgd(double learning_rate, double weight_decay, double momentum = 0.0);

  void step(const ParamRegistry& registry);

  double learning_rate;
  double weight_decay;
  double momentum;

 private:
  std::vector<Tensor> velocity_;
};

/// Row-major [K x K] integer counts, rows indexed by true class and columns
/// by predicted class. trace()/total() reproduces top-1 accuracy exactly.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  void add(int true_label, int predicted);
  std::int64_t at(int true_label, int predicted) const;
  std::int64_t total() const;
  std::int64_t trace() const;
  double top1() const;

  std::string to_csv() const;             // raw integer counts
  std::string to_normalized_csv() const;  // rows divided by their own total
};

/// Stacks samples into network-ready tensors. Each sample contributes
/// `bodies` consecutive rows (sample s, body m lands at row s*M + m), so the
/// outputs are skeleton [S*M x T x N x 3] and pose [S*M x T x N x 2].
struct Batch {
  Tensor skeleton;
  Tensor pose;
  std::vector<int> labels;  // one per sample, not per row
  int bodies = 1;
};

Batch collate(const Dataset& dataset, const std::vector<int>& indices);

struct EvalResult {
  double top1 = 0.0;
  ConfusionMatrix confusion;
};

/// Runs the model over every sample in inference mode and tallies the
/// confusion matrix; top1 is computed as trace/total so the identity holds
/// exactly. `workers` > 1 splits the dataset across threads (inference shares
/// the model read-only); results are merged in dataset order, so the outcome
/// is identical for any worker count. Empty datasets are a configuration
/// error.
EvalResult evaluate(PggcnModel& model, const Dataset& dataset, int workers = 1);

/// Checkpoints are a text header (magic line, the model configuration, the
/// parameter and buffer names in registry order) followed by the raw tensor
/// payloads in that same order. Loading requires the model configuration and
/// registry to match the file exactly.
inline constexpr const char* kCheckpointMagic = "PGGCN-CHECKPOINT-1";

void save_checkpoint(const std::string& path, PggcnModel& model);
void load_checkpoint(const std::string& path, PggcnModel& model);
PggcnConfig peek_checkpoint_config(const std::string& path);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
};

/// CSV row "epoch,loss,train_acc,eval_acc" with fixed formatting so repeated
/// runs produce byte-identical logs.
std::string format_epoch_record(const EpochRecord& record);

struct TrainResult {
  std::vector<EpochRecord> history;
  double final_train_acc = 0.0;
  double best_eval_acc = 0.0;
  int best_epoch = 0;  // 1-based; 0 when no evaluation improved
  bool aborted = false;
  std::string abort_message;
  bool stopped_early = false;
};

/// Full training loop: per-epoch reshuffle (seeded, deterministic), forward/
/// backward/update over mini-batches, optional per-epoch evaluation, CSV
/// logging, and best-eval checkpointing. Chunks whose row count would fall
/// below 2 are dropped (batch statistics need at least two rows). A non-finite
/// loss aborts the run with a diagnostic; the last saved checkpoint is left
/// untouched. Empty `log_path` or `checkpoint_path` disables that output.
/// When `eval_set` is empty the eval column logs 0 and the final parameters
/// are checkpointed instead of the best-eval ones.
TrainResult train_loop(PggcnModel& model, const Dataset& train_set, const Dataset& eval_set,
                       const TrainConfig& config, const std::string& log_path,
                       const std::string& checkpoint_path);

}  // namespace pggcn

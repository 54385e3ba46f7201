#include <memory>
#include <string>
#include <vector>

#include "pggcn/attention.hpp"
#include "pggcn/blocks.hpp"
#include "pggcn/gradcheck.hpp"
#include "pggcn/graph.hpp"
#include "pggcn/model.hpp"
#include "pggcn/rng.hpp"
#include "pggcn/train.hpp"

namespace pggcn {

namespace {

constexpr double kEpsilon = 1e-5;
constexpr double kTolerance = 1e-4;

// Scalarizes a layer output: loss = sum(out (*) weight). Backpropagating the
// weight tensor itself then yields the analytic parameter/input gradients.
double weighted_sum(const Tensor& t, const Tensor& weight) {
  double total = 0.0;
  const double* a = t.data();
  const double* b = weight.data();
  for (std::int64_t i = 0; i < t.size(); ++i) total += a[i] * b[i];
  return total;
}

GradCheckReport merge_reports(GradCheckReport acc, const GradCheckReport& next) {
  if (next.max_relative_error > acc.max_relative_error) {
    acc.max_relative_error = next.max_relative_error;
    acc.worst_index = next.worst_index;
  }
  acc.pass = acc.pass && next.pass;
  acc.aborted = acc.aborted || next.aborted;
  if (!next.message.empty() && acc.message.empty()) acc.message = next.message;
  return acc;
}

void check_graph_conv(std::vector<SuiteEntry>& entries, Rng& rng) {
  const SkeletonGraph graph = SkeletonGraph::chain(5);
  auto adjacency = std::make_shared<AdjacencyStack>(normalize_adjacency(graph));
  GraphConvLayer layer(adjacency, 4, 6, rng);
  layer.set_training(true);

  Param input(uniform_tensor({2, 3, 5, 4}, -1.0, 1.0, rng));
  const Tensor projection = uniform_tensor({2, 3, 5, 6}, -1.0, 1.0, rng);
  auto loss = [&]() { return weighted_sum(layer.forward(input.value), projection); };

  layer.forward(input.value);
  for (auto& w : layer.weights) w.zero_grad();
  layer.bias.zero_grad();
  input.grad = layer.backward(projection);

  for (std::size_t k = 0; k < layer.weights.size(); ++k) {
    entries.push_back({"graph-conv/weight-" + std::to_string(k),
                       finite_difference_check(loss, layer.weights[k], kEpsilon, kTolerance)});
  }
  entries.push_back(
      {"graph-conv/bias", finite_difference_check(loss, layer.bias, kEpsilon, kTolerance)});
  entries.push_back(
      {"graph-conv/input", finite_difference_check(loss, input, kEpsilon, kTolerance)});
}

void check_temporal_conv(std::vector<SuiteEntry>& entries, Rng& rng) {
  TemporalConvLayer layer(4, 3, 2, rng);  // stride 2 exercises the subsampled path
  layer.set_training(true);

  Param input(uniform_tensor({2, 7, 5, 4}, -1.0, 1.0, rng));
  const Tensor projection = uniform_tensor({2, 4, 5, 4}, -1.0, 1.0, rng);
  auto loss = [&]() { return weighted_sum(layer.forward(input.value), projection); };

  layer.forward(input.value);
  layer.kernel.zero_grad();
  input.grad = layer.backward(projection);

  entries.push_back(
      {"temporal-conv/kernel", finite_difference_check(loss, layer.kernel, kEpsilon, kTolerance)});
  entries.push_back(
      {"temporal-conv/input", finite_difference_check(loss, input, kEpsilon, kTolerance)});
}

void check_batch_norm(std::vector<SuiteEntry>& entries, Rng& rng) {
  BatchNormLayer layer(4);
  layer.set_training(true);
  // Move gamma/beta off their identity initialisation so the check is not
  // blind to scale/shift mistakes.
  layer.gamma.value = uniform_tensor({4}, 0.5, 1.5, rng);
  layer.beta.value = uniform_tensor({4}, -0.5, 0.5, rng);

  Param input(uniform_tensor({2, 3, 5, 4}, -1.0, 1.0, rng));
  const Tensor projection = uniform_tensor({2, 3, 5, 4}, -1.0, 1.0, rng);
  auto loss = [&]() { return weighted_sum(layer.forward(input.value), projection); };

  layer.forward(input.value);
  layer.gamma.zero_grad();
  layer.beta.zero_grad();
  input.grad = layer.backward(projection);

  entries.push_back(
      {"batch-norm/gamma", finite_difference_check(loss, layer.gamma, kEpsilon, kTolerance)});
  entries.push_back(
      {"batch-norm/beta", finite_difference_check(loss, layer.beta, kEpsilon, kTolerance)});
  entries.push_back(
      {"batch-norm/input", finite_difference_check(loss, input, kEpsilon, kTolerance)});
}

void check_attention(std::vector<SuiteEntry>& entries, Rng& rng) {
  PgamModule module(5, AttentionMode::dynamic);
  module.set_training(true);
  // Perturb the gating masks away from their ones/zeros initialisation so the
  // product rule through both masks is genuinely exercised.
  module.state.m.value = uniform_tensor({5, 5}, 0.5, 1.5, rng);
  module.state.m_prime.value = uniform_tensor({5, 5}, -0.5, 0.5, rng);

  Param skeleton_features(uniform_tensor({2, 4, 5, 6}, -1.0, 1.0, rng));
  Param pose_features(uniform_tensor({2, 4, 5, 6}, -1.0, 1.0, rng));
  const Tensor projection = uniform_tensor({2, 4, 5, 6}, -1.0, 1.0, rng);
  auto loss = [&]() {
    return weighted_sum(module.forward(skeleton_features.value, pose_features.value), projection);
  };

  module.forward(skeleton_features.value, pose_features.value);
  module.state.m.zero_grad();
  module.state.m_prime.zero_grad();
  PgamGrads grads = module.backward(projection);
  skeleton_features.grad = grads.d_fs;
  pose_features.grad = grads.d_fp;

  entries.push_back(
      {"attention/mask", finite_difference_check(loss, module.state.m, kEpsilon, kTolerance)});
  entries.push_back({"attention/residual-mask",
                     finite_difference_check(loss, module.state.m_prime, kEpsilon, kTolerance)});
  entries.push_back({"attention/skeleton-input",
                     finite_difference_check(loss, skeleton_features, kEpsilon, kTolerance)});
  entries.push_back({"attention/pose-input",
                     finite_difference_check(loss, pose_features, kEpsilon, kTolerance)});
}

void check_cross_entropy(std::vector<SuiteEntry>& entries, Rng& rng) {
  Param logits(uniform_tensor({4, 3}, -2.0, 2.0, rng));
  const std::vector<int> labels = {0, 2, 1, 0};
  auto loss = [&]() { return cross_entropy(logits.value, labels).value; };

  logits.grad = cross_entropy(logits.value, labels).dlogits;
  entries.push_back(
      {"cross-entropy/logits", finite_difference_check(loss, logits, kEpsilon, kTolerance)});
}

void check_end_to_end(std::vector<SuiteEntry>& entries, Rng& rng) {
  PggcnConfig config;
  config.num_classes = 3;
  config.num_joints = 5;
  config.max_frames = 8;
  config.embed_channels = 8;
  config.classifier_mid = 8;
  config.classifier_out = 8;
  config.temporal_kernel = 3;
  config.partitions = 3;
  config.attention = AttentionMode::dynamic;
  config.use_pose = true;
  config.substreams = {Substream::joint, Substream::velocity, Substream::bone};
  config.seed = rng.next_u64();

  const SkeletonGraph graph = SkeletonGraph::chain(config.num_joints);
  PggcnModel model(config, graph);
  model.set_training(true);

  const Tensor skeleton = uniform_tensor({2, 8, 5, 3}, -1.0, 1.0, rng);
  const Tensor pose = uniform_tensor({2, 8, 5, 2}, -1.0, 1.0, rng);
  const std::vector<int> labels = {0, 2};
  auto loss = [&]() {
    return cross_entropy(model.forward(skeleton, pose, 1), labels).value;
  };

  model.zero_grads();
  Tensor logits = model.forward(skeleton, pose, 1);
  model.backward(cross_entropy(logits, labels).dlogits);

  // One merged verdict over every registered parameter of the full network.
  GradCheckReport combined;
  combined.pass = true;
  ParamRegistry registry = model.registry();
  for (auto& np : registry.params) {
    GradCheckReport report = finite_difference_check(loss, *np.param, kEpsilon, kTolerance);
    if (!report.pass && combined.message.empty()) {
      combined.message = "worst parameter: " + np.name;
    }
    combined = merge_reports(combined, report);
  }
  entries.push_back({"model/end-to-end", combined});
}

}  // namespace

std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteEntry> entries;
  check_graph_conv(entries, rng);
  check_temporal_conv(entries, rng);
  check_batch_norm(entries, rng);
  check_attention(entries, rng);
  check_cross_entropy(entries, rng);
  check_end_to_end(entries, rng);
  return entries;
}

}  // namespace pggcn

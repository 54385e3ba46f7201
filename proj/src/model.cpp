#include "pggcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "pggcn/ops.hpp"

namespace pggcn {

Substream substream_from_string(const std::string& s) {
  if (s == "joint") return Substream::joint;
  if (s == "velocity") return Substream::velocity;
  if (s == "bone") return Substream::bone;
  throw std::invalid_argument("unknown substream '" + s +
                              "' (expected joint, velocity or bone)");
}

std::string to_string(Substream s) {
  switch (s) {
    case Substream::joint: return "joint";
    case Substream::velocity: return "velocity";
    case Substream::bone: return "bone";
  }
  throw std::logic_error("to_string: invalid substream");
}

int substream_channels_of(Substream s) {
  return s == Substream::joint ? 3 : 6;
}

void PggcnConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (num_joints < 2) throw std::invalid_argument("config: num_joints must be >= 2");
  if (max_frames < 2) throw std::invalid_argument("config: max_frames must be >= 2");
  if (embed_channels < 1 || classifier_mid < 1 || classifier_out < 1) {
    throw std::invalid_argument("config: channel widths must be positive");
  }
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
    throw std::invalid_argument("config: temporal kernel must be odd and >= 1");
  }
  if (partitions != 1 && partitions != 3) {
    throw std::invalid_argument("config: partitions must be 1 or 3");
  }
  if (!use_pose && substreams.empty()) {
    throw std::invalid_argument("config: need at least one stream (no substreams and no pose)");
  }
  std::set<Substream> seen(substreams.begin(), substreams.end());
  if (seen.size() != substreams.size()) {
    throw std::invalid_argument("config: duplicate substream");
  }
}

std::string config_to_text(const PggcnConfig& c) {
  std::ostringstream out;
  out << "num_classes = " << c.num_classes << "\n";
  out << "num_joints = " << c.num_joints << "\n";
  out << "max_frames = " << c.max_frames << "\n";
  out << "embed_channels = " << c.embed_channels << "\n";
  out << "classifier_mid = " << c.classifier_mid << "\n";
  out << "classifier_out = " << c.classifier_out << "\n";
  out << "temporal_kernel = " << c.temporal_kernel << "\n";
  out << "partitions = " << c.partitions << "\n";
  out << "attention = " << to_string(c.attention) << "\n";
  out << "use_pose = " << (c.use_pose ? "true" : "false") << "\n";
  out << "substreams = ";
  for (size_t i = 0; i < c.substreams.size(); ++i) {
    if (i) out << ",";
    out << to_string(c.substreams[i]);
  }
  out << "\n";
  out << "seed = " << c.seed << "\n";
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

PggcnConfig config_from_text(const std::string& text) {
  PggcnConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected 'key = value', got '" + trim(line) + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "num_classes") c.num_classes = std::stoi(value);
    else if (key == "num_joints") c.num_joints = std::stoi(value);
    else if (key == "max_frames") c.max_frames = std::stoi(value);
    else if (key == "embed_channels") c.embed_channels = std::stoi(value);
    else if (key == "classifier_mid") c.classifier_mid = std::stoi(value);
    else if (key == "classifier_out") c.classifier_out = std::stoi(value);
    else if (key == "temporal_kernel") c.temporal_kernel = std::stoi(value);
    else if (key == "partitions") c.partitions = std::stoi(value);
    else if (key == "attention") c.attention = attention_mode_from_string(value);
    else if (key == "use_pose") c.use_pose = parse_bool(value, key);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "substreams") {
      c.substreams.clear();
      std::istringstream vs(value);
      std::string item;
      while (std::getline(vs, item, ',')) {
        item = trim(item);
        if (!item.empty()) c.substreams.push_back(substream_from_string(item));
      }
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Sub-stream preprocessing

Tensor substream_encode(const Tensor& skeleton, Substream kind,
                        const std::vector<int>& parents) {
  int batch = 1, t = 0, n = 0, c = 0;
  if (skeleton.rank() == 4) {
    batch = skeleton.dim(0);
    t = skeleton.dim(1);
    n = skeleton.dim(2);
    c = skeleton.dim(3);
  } else if (skeleton.rank() == 3) {
    t = skeleton.dim(0);
    n = skeleton.dim(1);
    c = skeleton.dim(2);
  } else {
    throw_dim_error("substream_encode: expected [B,T,N,3] or [T,N,3], got " +
                    shape_string(skeleton.shape()));
  }
  if (c != 3) {
    throw_dim_error("substream_encode: skeleton needs 3 coordinate channels, got " +
                    std::to_string(c));
  }
  if (kind == Substream::bone && static_cast<int>(parents.size()) != n) {
    throw_dim_error("substream_encode: parent table covers " +
                    std::to_string(parents.size()) + " joints, input has " + std::to_string(n));
  }

  if (kind == Substream::joint) return skeleton;

  std::vector<int> out_shape = skeleton.shape();
  out_shape.back() = 6;
  Tensor out = Tensor::zeros(out_shape);
  const std::int64_t frame = static_cast<std::int64_t>(n) * 3;
  const std::int64_t frame_out = static_cast<std::int64_t>(n) * 6;

  for (int b = 0; b < batch; ++b) {
    const double* xb = skeleton.data() + static_cast<std::int64_t>(b) * t * frame;
    double* ob = out.data() + static_cast<std::int64_t>(b) * t * frame_out;
    if (kind == Substream::velocity) {
      for (int ti = 0; ti < t; ++ti) {
        const double* x0 = xb + ti * frame;
        const double* x1 = ti + 1 < t ? xb + (ti + 1) * frame : nullptr;
        const double* x2 = ti + 2 < t ? xb + (ti + 2) * frame : nullptr;
        double* o = ob + ti * frame_out;
        for (int j = 0; j < n; ++j) {
          for (int d = 0; d < 3; ++d) {
            o[j * 6 + d] = x1 ? x1[j * 3 + d] - x0[j * 3 + d] : 0.0;
            o[j * 6 + 3 + d] = x2 ? x2[j * 3 + d] - x0[j * 3 + d] : 0.0;
          }
        }
      }
    } else {  // bone
      for (int ti = 0; ti < t; ++ti) {
        const double* x0 = xb + ti * frame;
        double* o = ob + ti * frame_out;
        for (int j = 0; j < n; ++j) {
          const int pj = parents[static_cast<size_t>(j)];
          double bone[3];
          double norm_sq = 0.0;
          for (int d = 0; d < 3; ++d) {
            bone[d] = x0[j * 3 + d] - x0[pj * 3 + d];
            norm_sq += bone[d] * bone[d];
          }
          const double inv = 1.0 / (std::sqrt(norm_sq) + 1e-8);
          for (int d = 0; d < 3; ++d) {
            o[j * 6 + d] = bone[d];
            o[j * 6 + 3 + d] = bone[d] * inv;
          }
        }
      }
    }
  }
  return out;
}

SubstreamSet preprocess_substreams(const Tensor& skeleton, const SkeletonGraph& g) {
  if (skeleton.rank() != 3) {
    throw_dim_error("preprocess_substreams: expected [T,N,3], got " +
                    shape_string(skeleton.shape()));
  }
  if (skeleton.dim(1) != g.num_joints) {
    throw_dim_error("preprocess_substreams: input has " + std::to_string(skeleton.dim(1)) +
                    " joints, graph has " + std::to_string(g.num_joints));
  }
  const auto parents = g.parents_from_center();
  SubstreamSet set;
  set.joint = substream_encode(skeleton, Substream::joint, parents);
  set.velocity = substream_encode(skeleton, Substream::velocity, parents);
  set.bone = substream_encode(skeleton, Substream::bone, parents);
  return set;
}

// ---------------------------------------------------------------------------
// EmbeddingTower

EmbeddingTower::EmbeddingTower(std::shared_ptr<const AdjacencyStack> adjacency, int c_in,
                               int c_embed, int kernel_t, Rng& rng)
    : stgcn(adjacency, c_in, c_embed, kernel_t, /*stride=*/1, rng),
      g1(adjacency, c_embed, c_embed, rng),
      g2(adjacency, c_embed, c_embed, rng) {}

Tensor EmbeddingTower::forward(const Tensor& x) { return g2.forward(g1.forward(stgcn.forward(x))); }

Tensor EmbeddingTower::backward(const Tensor& dy) {
  return stgcn.backward(g1.backward(g2.backward(dy)));
}

void EmbeddingTower::set_training(bool on) {
  stgcn.set_training(on);
  g1.set_training(on);
  g2.set_training(on);
}

void EmbeddingTower::register_params(ParamRegistry& reg, const std::string& prefix) {
  stgcn.register_params(reg, prefix + ".stgcn");
  g1.register_params(reg, prefix + ".g1");
  g2.register_params(reg, prefix + ".g2");
}

// ---------------------------------------------------------------------------
// PggcnModel

PggcnModel::StreamUnit::StreamUnit(Substream kind_arg,
                                   std::shared_ptr<const AdjacencyStack> adjacency,
                                   const PggcnConfig& config,
                                   std::shared_ptr<const AdjacencyStack> identity_adj,
                                   Rng& rng)
    : kind(kind_arg),
      input_bn(substream_channels_of(kind_arg)),
      tower(adjacency, substream_channels_of(kind_arg), config.embed_channels,
            config.temporal_kernel, rng) {
  if (!config.use_pose) return;
  if (config.attention == AttentionMode::none) {
    pose_mix = std::make_unique<GraphConvLayer>(std::move(identity_adj),
                                                2 * config.embed_channels,
                                                config.embed_channels, rng);
  } else {
    pgam = std::make_unique<PgamModule>(config.num_joints, config.attention);
  }
}

PggcnModel::PggcnModel(PggcnConfig config, const SkeletonGraph& graph)
    : config_(std::move(config)), graph_(graph) {
  config_.validate();
  if (graph_.num_joints != config_.num_joints) {
    throw std::invalid_argument("model: graph has " + std::to_string(graph_.num_joints) +
                                " joints, config expects " + std::to_string(config_.num_joints));
  }
  graph_.partitions = config_.partitions;
  parents_ = graph_.parents_from_center();
  adjacency_ = std::make_shared<const AdjacencyStack>(normalize_adjacency(graph_));
  if (config_.use_pose && config_.attention == AttentionMode::none &&
      !config_.substreams.empty()) {
    identity_adj_ = std::make_shared<const AdjacencyStack>(identity_stack(config_.num_joints));
  }

  Rng rng(config_.seed);
  for (Substream kind : config_.substreams) {
    streams_.push_back(
        std::make_unique<StreamUnit>(kind, adjacency_, config_, identity_adj_, rng));
  }
  if (config_.use_pose) {
    pose_bn_ = std::make_unique<BatchNormLayer>(2);
    pose_tower_ = std::make_unique<EmbeddingTower>(adjacency_, 2, config_.embed_channels,
                                                   config_.temporal_kernel, rng);
  }
  const int merged_c = streams_.empty()
                           ? config_.embed_channels
                           : static_cast<int>(streams_.size()) * config_.embed_channels;
  cls1_ = std::make_unique<GCNBlock>(adjacency_, merged_c, config_.classifier_mid, rng);
  cls2_ = std::make_unique<GCNBlock>(adjacency_, config_.classifier_mid, config_.classifier_out,
                                     rng);
  fc_weight_ = Param(he_uniform({config_.classifier_out, config_.num_classes},
                                config_.classifier_out, rng));
  fc_bias_ = Param(Tensor::zeros({config_.num_classes}), true, /*decay=*/false);
}

namespace {

void check_model_input(const Tensor& x, int channels, int joints, const char* name) {
  if (x.rank() != 4 || x.dim(3) != channels) {
    throw_dim_error(std::string("model forward: ") + name + " must be [B,T,N," +
                    std::to_string(channels) + "], got " + shape_string(x.shape()));
  }
  if (x.dim(2) != joints) {
    throw_dim_error(std::string("model forward: ") + name + " has " + std::to_string(x.dim(2)) +
                    " joints, model expects " + std::to_string(joints));
  }
}

}  // namespace

Tensor PggcnModel::forward(const Tensor& skeleton, const Tensor& pose, int bodies_per_sample) {
  if (bodies_per_sample < 1) {
    throw std::invalid_argument("model forward: bodies_per_sample must be >= 1");
  }
  const bool use_skel = !streams_.empty();
  const bool use_pose = config_.use_pose;
  if (use_skel) check_model_input(skeleton, 3, config_.num_joints, "skeleton");
  if (use_pose) check_model_input(pose, 2, config_.num_joints, "pose");
  const Tensor& lead = use_skel ? skeleton : pose;
  const int batch = lead.dim(0);
  const int frames = lead.dim(1);
  if (use_skel && use_pose && (pose.dim(0) != batch || pose.dim(1) != frames)) {
    throw_dim_error("model forward: skeleton " + shape_string(skeleton.shape()) +
                    " and pose " + shape_string(pose.shape()) + " disagree on batch/frames");
  }
  if (batch % bodies_per_sample != 0) {
    throw std::invalid_argument("model forward: batch " + std::to_string(batch) +
                                " not divisible by bodies_per_sample " +
                                std::to_string(bodies_per_sample));
  }
  const int samples = batch / bodies_per_sample;

  Tensor h_pose;
  if (use_pose) h_pose = pose_tower_->forward(pose_bn_->forward(pose));

  std::vector<Tensor> fused;
  fused.reserve(streams_.size());
  for (auto& unit : streams_) {
    Tensor h = unit->tower.forward(
        unit->input_bn.forward(substream_encode(skeleton, unit->kind, parents_)));
    if (unit->pgam) {
      fused.push_back(disable_fusion ? std::move(h) : unit->pgam->forward(h, h_pose));
    } else if (unit->pose_mix) {
      Tensor pose_part = disable_fusion ? Tensor::zeros(h_pose.shape()) : h_pose;
      fused.push_back(unit->pose_mix->forward(concat_last({h, pose_part})));
    } else {
      fused.push_back(std::move(h));
    }
  }

  Tensor merged = use_skel ? (fused.size() == 1 ? std::move(fused[0]) : concat_last(fused))
                           : std::move(h_pose);

  Tensor features = cls2_->forward(cls1_->forward(merged));
  const int c_out = config_.classifier_out;
  const double inv_tn = 1.0 / (static_cast<double>(frames) * config_.num_joints);
  Tensor pooled = Tensor::zeros({batch, c_out});
  {
    const double* fp = features.data();
    for (int b = 0; b < batch; ++b) {
      double* pb = pooled.data() + static_cast<std::int64_t>(b) * c_out;
      const std::int64_t cells = static_cast<std::int64_t>(frames) * config_.num_joints;
      for (std::int64_t cell = 0; cell < cells; ++cell, fp += c_out) {
        for (int c = 0; c < c_out; ++c) pb[c] += fp[c];
      }
      for (int c = 0; c < c_out; ++c) pb[c] *= inv_tn;
    }
  }
  Tensor pooled_avg = Tensor::zeros({samples, c_out});
  {
    const double inv_m = 1.0 / bodies_per_sample;
    for (int s = 0; s < samples; ++s) {
      double* ps = pooled_avg.data() + static_cast<std::int64_t>(s) * c_out;
      for (int m = 0; m < bodies_per_sample; ++m) {
        const double* pb =
            pooled.data() + (static_cast<std::int64_t>(s) * bodies_per_sample + m) * c_out;
        for (int c = 0; c < c_out; ++c) ps[c] += pb[c];
      }
      for (int c = 0; c < c_out; ++c) ps[c] *= inv_m;
    }
  }

  Tensor logits({samples, config_.num_classes});
  logits.as_matrix().noalias() = pooled_avg.as_matrix() * fc_weight_.value.as_matrix();
  logits.as_matrix().rowwise() +=
      ConstVectorMap(fc_bias_.value.data(), config_.num_classes).transpose();

  if (training_) {
    cached_pooled_ = std::move(pooled_avg);
    cached_bodies_ = bodies_per_sample;
    cached_samples_ = samples;
    cached_frames_ = frames;
    cached_pose_used_ = use_pose;
    merge_sizes_.assign(use_skel ? streams_.size() : 1, config_.embed_channels);
    has_cache_ = true;
  }
  return logits;
}

void PggcnModel::backward(const Tensor& dlogits) {
  if (!has_cache_) {
    throw std::logic_error("model backward: no cached forward (training mode required)");
  }
  if (dlogits.rank() != 2 || dlogits.dim(0) != cached_samples_ ||
      dlogits.dim(1) != config_.num_classes) {
    throw_dim_error("model backward: upstream must be [" + std::to_string(cached_samples_) +
                    "," + std::to_string(config_.num_classes) + "], got " +
                    shape_string(dlogits.shape()));
  }
  const int samples = cached_samples_;
  const int bodies = cached_bodies_;
  const int batch = samples * bodies;
  const int frames = cached_frames_;
  const int joints = config_.num_joints;
  const int c_out = config_.classifier_out;

  fc_weight_.grad.as_matrix().noalias() +=
      cached_pooled_.as_matrix().transpose() * dlogits.as_matrix();
  fc_bias_.grad.as_vector() += dlogits.as_matrix().colwise().sum().transpose();

  Tensor dpooled_avg({samples, c_out});
  dpooled_avg.as_matrix().noalias() = dlogits.as_matrix() * fc_weight_.value.as_matrix().transpose();

  // undo body averaging and global average pooling in one broadcast
  const double inv_m = 1.0 / bodies;
  const double inv_tn = 1.0 / (static_cast<double>(frames) * joints);
  Tensor dfeatures({batch, frames, joints, c_out});
  {
    double* dp = dfeatures.data();
    for (int b = 0; b < batch; ++b) {
      const double* src = dpooled_avg.data() + static_cast<std::int64_t>(b / bodies) * c_out;
      const std::int64_t cells = static_cast<std::int64_t>(frames) * joints;
      for (std::int64_t cell = 0; cell < cells; ++cell, dp += c_out) {
        for (int c = 0; c < c_out; ++c) dp[c] = src[c] * inv_m * inv_tn;
      }
    }
  }

  Tensor dmerged = cls1_->backward(cls2_->backward(dfeatures));

  const bool use_skel = !streams_.empty();
  Tensor dh_pose;
  bool pose_grad_live = false;
  if (config_.use_pose) {
    dh_pose = Tensor::zeros({batch, frames, joints, config_.embed_channels});
  }

  if (!use_skel) {
    dh_pose = std::move(dmerged);
    pose_grad_live = true;
  } else {
    std::vector<Tensor> parts =
        streams_.size() == 1 ? std::vector<Tensor>{std::move(dmerged)}
                             : split_last(dmerged, merge_sizes_);
    for (size_t i = 0; i < streams_.size(); ++i) {
      auto& unit = *streams_[i];
      Tensor dh;
      if (unit.pgam && !disable_fusion) {
        PgamGrads grads = unit.pgam->backward(parts[i]);
        dh = std::move(grads.d_fs);
        dh_pose.as_vector() += grads.d_fp.as_vector();
        pose_grad_live = true;
      } else if (unit.pose_mix) {
        Tensor dcat = unit.pose_mix->backward(parts[i]);
        std::vector<Tensor> halves =
            split_last(dcat, {config_.embed_channels, config_.embed_channels});
        dh = std::move(halves[0]);
        if (!disable_fusion) {
          dh_pose.as_vector() += halves[1].as_vector();
          pose_grad_live = true;
        }
      } else {
        dh = std::move(parts[i]);
      }
      unit.input_bn.backward(unit.tower.backward(dh));  // input gradient unused
    }
  }

  if (config_.use_pose && pose_grad_live) {
    pose_bn_->backward(pose_tower_->backward(dh_pose));
  }
}

int PggcnModel::predict(const Tensor& skeleton, const Tensor& pose, int bodies_per_sample) {
  const bool was_training = training_;
  set_training(false);
  Tensor logits = forward(skeleton, pose, bodies_per_sample);
  set_training(was_training);
  if (logits.dim(0) != 1) {
    throw std::logic_error("model predict: expected a single sample, got " +
                           std::to_string(logits.dim(0)));
  }
  return argmax(logits.reshaped({config_.num_classes}));
}

void PggcnModel::set_training(bool on) {
  training_ = on;
  for (auto& unit : streams_) {
    unit->input_bn.set_training(on);
    unit->tower.set_training(on);
    if (unit->pgam) unit->pgam->set_training(on);
    if (unit->pose_mix) unit->pose_mix->set_training(on);
  }
  if (pose_bn_) pose_bn_->set_training(on);
  if (pose_tower_) pose_tower_->set_training(on);
  cls1_->set_training(on);
  cls2_->set_training(on);
}

ParamRegistry PggcnModel::registry() {
  ParamRegistry reg;
  for (auto& unit : streams_) {
    const std::string prefix = "stream." + to_string(unit->kind);
    unit->input_bn.register_params(reg, prefix + ".bn");
    unit->tower.register_params(reg, prefix + ".tower");
    if (unit->pgam) unit->pgam->register_params(reg, prefix + ".pgam");
    if (unit->pose_mix) unit->pose_mix->register_params(reg, prefix + ".pose_mix");
  }
  if (pose_bn_) pose_bn_->register_params(reg, "pose.bn");
  if (pose_tower_) pose_tower_->register_params(reg, "pose.tower");
  cls1_->register_params(reg, "classifier.g1");
  cls2_->register_params(reg, "classifier.g2");
  reg.add("fc.weight", fc_weight_);
  reg.add("fc.bias", fc_bias_);
  return reg;
}

void PggcnModel::zero_grads() {
  ParamRegistry reg = registry();
  for (auto& entry : reg.params) entry.param->zero_grad();
}

}  // namespace pggcn

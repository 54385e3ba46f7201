#include "pggcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <Eigen/Geometry>

#include "pggcn/rng.hpp"

namespace pggcn {

namespace {

std::string basename_no_ext(const std::string& path) {
  const std::filesystem::path p(path);
  return p.stem().string();
}

int parse_meta_field(const std::string& name, size_t offset, char tag) {
  if (name[offset] != tag) {
    throw std::invalid_argument("filename metadata: expected '" + std::string(1, tag) +
                                "' at position " + std::to_string(offset) + " of '" + name + "'");
  }
  int value = 0;
  for (size_t i = offset + 1; i < offset + 4; ++i) {
    if (name[i] < '0' || name[i] > '9') {
      throw std::invalid_argument("filename metadata: non-digit in '" + name + "'");
    }
    value = value * 10 + (name[i] - '0');
  }
  return value;
}

}  // namespace

ClipMeta parse_filename_meta(const std::string& path) {
  const std::string name = basename_no_ext(path);
  if (name.size() != 20) {
    throw std::invalid_argument("filename metadata: '" + name +
                                "' does not match SsssCcccPpppRrrrAaaa");
  }
  ClipMeta meta;
  meta.setup = parse_meta_field(name, 0, 'S');
  meta.camera = parse_meta_field(name, 4, 'C');
  meta.performer = parse_meta_field(name, 8, 'P');
  meta.replication = parse_meta_field(name, 12, 'R');
  meta.action = parse_meta_field(name, 16, 'A');
  if (meta.action < 1 || meta.action > 120) {
    throw std::invalid_argument("filename metadata: action " + std::to_string(meta.action) +
                                " outside [1, 120] in '" + name + "'");
  }
  return meta;
}

// ---------------------------------------------------------------------------
// NTU text format

namespace {

class LineReader {
 public:
  LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw std::runtime_error("cannot open " + path);
  }

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) {
      fail(std::string("unexpected end of file, wanted ") + what);
    }
    ++line_no_;
    return line;
  }

  int next_int(const char* what) {
    std::istringstream ls(next(what));
    long long v = 0;
    if (!(ls >> v)) fail(std::string("expected integer ") + what);
    return static_cast<int>(v);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error(path_ + ":" + std::to_string(line_no_ + 1) + ": " + msg);
  }

  int line_no() const { return line_no_; }

 private:
  std::string path_;
  std::ifstream in_;
  int line_no_ = 0;
};

}  // namespace

RawClip parse_skeleton_file(const std::string& path) {
  RawClip clip;
  clip.meta = parse_filename_meta(path);
  LineReader reader(path);

  const int frame_count = reader.next_int("frame count");
  if (frame_count < 0) reader.fail("negative frame count");
  clip.frames.reserve(static_cast<size_t>(frame_count));
  int joints_seen = -1;
  for (int f = 0; f < frame_count; ++f) {
    const int body_count = reader.next_int("body count");
    if (body_count < 0) reader.fail("negative body count");
    RawFrame frame;
    frame.bodies.reserve(static_cast<size_t>(body_count));
    for (int b = 0; b < body_count; ++b) {
      BodyFrame body;
      {
        std::istringstream header(reader.next("body header"));
        if (!(header >> body.body_id)) reader.fail("expected body id");
      }
      const int joint_count = reader.next_int("joint count");
      if (joint_count < 1) reader.fail("joint count must be positive");
      if (joints_seen >= 0 && joint_count != joints_seen) {
        reader.fail("joint count " + std::to_string(joint_count) +
                    " differs from earlier bodies (" + std::to_string(joints_seen) + ")");
      }
      joints_seen = joint_count;
      body.joints.resize(static_cast<size_t>(joint_count));
      for (int j = 0; j < joint_count; ++j) {
        std::istringstream js(reader.next("joint line"));
        double field[7];
        for (int k = 0; k < 7; ++k) {
          if (!(js >> field[k])) {
            reader.fail("joint line needs at least 7 numeric fields");
          }
        }
        // x, y, z are fields 0..2; colorX, colorY are fields 5 and 6
        body.joints[static_cast<size_t>(j)] = {field[0], field[1], field[2], field[5], field[6]};
      }
      frame.bodies.push_back(std::move(body));
    }
    clip.frames.push_back(std::move(frame));
  }
  if (joints_seen > 0) clip.num_joints = joints_seen;
  return clip;
}

void write_skeleton_file(const std::string& path, const RawClip& clip) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(17);
  out << clip.frames.size() << "\n";
  for (const RawFrame& frame : clip.frames) {
    out << frame.bodies.size() << "\n";
    for (const BodyFrame& body : frame.bodies) {
      out << body.body_id << " 0 0 0 0 0 0 0 0 0\n";
      out << body.joints.size() << "\n";
      for (const auto& j : body.joints) {
        out << j[0] << " " << j[1] << " " << j[2] << " 0 0 " << j[3] << " " << j[4]
            << " 0 0 0 0 0\n";
      }
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Padding and body selection

Sample pad_and_select(const RawClip& clip, int max_frames, int bodies, double image_width,
                      double image_height) {
  if (clip.frames.empty()) throw std::runtime_error("pad_and_select: clip has zero frames");
  if (max_frames < 1 || bodies < 1) {
    throw std::invalid_argument("pad_and_select: max_frames and bodies must be positive");
  }
  const int n = clip.num_joints;

  // group appearances per tracked body id, keeping first-appearance order
  struct Track {
    std::uint64_t id;
    std::vector<std::pair<int, const BodyFrame*>> hits;
    double energy = 0.0;
  };
  std::vector<Track> tracks;
  for (size_t f = 0; f < clip.frames.size(); ++f) {
    for (const BodyFrame& body : clip.frames[f].bodies) {
      auto it = std::find_if(tracks.begin(), tracks.end(),
                             [&](const Track& t) { return t.id == body.body_id; });
      if (it == tracks.end()) {
        tracks.push_back({body.body_id, {}, 0.0});
        it = tracks.end() - 1;
      }
      it->hits.emplace_back(static_cast<int>(f), &body);
    }
  }
  for (Track& track : tracks) {
    for (size_t h = 1; h < track.hits.size(); ++h) {
      const auto& prev = track.hits[h - 1].second->joints;
      const auto& cur = track.hits[h].second->joints;
      const size_t joints = std::min(prev.size(), cur.size());
      for (size_t j = 0; j < joints; ++j) {
        const double dx = cur[j][0] - prev[j][0];
        const double dy = cur[j][1] - prev[j][1];
        const double dz = cur[j][2] - prev[j][2];
        track.energy += std::sqrt(dx * dx + dy * dy + dz * dz);
      }
    }
  }
  std::stable_sort(tracks.begin(), tracks.end(),
                   [](const Track& a, const Track& b) { return a.energy > b.energy; });
  const int kept = std::min<int>(bodies, static_cast<int>(tracks.size()));

  Sample sample;
  sample.skeleton = Tensor::zeros({max_frames, n, 3, bodies});
  sample.pose = Tensor::zeros({max_frames, n, 2, bodies});
  sample.label = clip.meta.action - 1;
  const double inv_half_w = 2.0 / image_width;
  const double inv_half_h = 2.0 / image_height;
  for (int m = 0; m < kept; ++m) {
    for (const auto& [frame_idx, body] : tracks[static_cast<size_t>(m)].hits) {
      if (frame_idx >= max_frames) continue;  // head-aligned truncation
      const int joints = std::min<int>(n, static_cast<int>(body->joints.size()));
      for (int j = 0; j < joints; ++j) {
        const auto& joint = body->joints[static_cast<size_t>(j)];
        for (int d = 0; d < 3; ++d) {
          sample.skeleton[((static_cast<std::int64_t>(frame_idx) * n + j) * 3 + d) * bodies + m] =
              joint[static_cast<size_t>(d)];
        }
        sample.pose[((static_cast<std::int64_t>(frame_idx) * n + j) * 2 + 0) * bodies + m] =
            joint[3] * inv_half_w - 1.0;
        sample.pose[((static_cast<std::int64_t>(frame_idx) * n + j) * 2 + 1) * bodies + m] =
            joint[4] * inv_half_h - 1.0;
      }
    }
  }
  return sample;
}

// ---------------------------------------------------------------------------
// View alignment

namespace {

constexpr int kHipJoint = 0;
constexpr int kSpineJoint = 1;
constexpr int kLeftShoulderJoint = 4;
constexpr int kRightShoulderJoint = 8;

Eigen::Vector3d read_joint(const Tensor& sk, int t, int j, int m, int n, int bodies) {
  const std::int64_t base = ((static_cast<std::int64_t>(t) * n + j) * 3) * bodies + m;
  return {sk[base], sk[base + bodies], sk[base + 2 * bodies]};
}

bool slice_nonzero(const Tensor& sk, int t, int m, int n, int bodies) {
  const std::int64_t frame_base = static_cast<std::int64_t>(t) * n * 3 * bodies;
  for (int j = 0; j < n; ++j) {
    for (int d = 0; d < 3; ++d) {
      if (sk[frame_base + (static_cast<std::int64_t>(j) * 3 + d) * bodies + m] != 0.0) return true;
    }
  }
  return false;
}

}  // namespace

bool view_align(Sample& sample) {
  Tensor& sk = sample.skeleton;
  if (sk.rank() != 4 || sk.dim(2) != 3) {
    throw_dim_error("view_align: skeleton must be [T,N,3,M], got " + shape_string(sk.shape()));
  }
  const int frames = sk.dim(0);
  const int n = sk.dim(1);
  const int bodies = sk.dim(3);
  if (n <= kRightShoulderJoint) {
    throw std::invalid_argument("view_align: needs the 25-joint body layout (got " +
                                std::to_string(n) + " joints)");
  }

  int t0 = -1;
  for (int t = 0; t < frames; ++t) {
    if (slice_nonzero(sk, t, 0, n, bodies)) {
      t0 = t;
      break;
    }
  }
  if (t0 < 0) {
    sample.align_ok = false;
    return false;
  }

  const Eigen::Vector3d hip = read_joint(sk, t0, kHipJoint, 0, n, bodies);
  const Eigen::Vector3d spine = read_joint(sk, t0, kSpineJoint, 0, n, bodies);
  Eigen::Vector3d v = spine - hip;
  const double v_norm = v.norm();
  if (v_norm < 1e-8) {
    sample.align_ok = false;
    return false;
  }
  v /= v_norm;

  // Rodrigues rotation taking the spine direction onto +z.
  const Eigen::Vector3d z_axis(0.0, 0.0, 1.0);
  Eigen::Matrix3d r1 = Eigen::Matrix3d::Identity();
  {
    const Eigen::Vector3d axis = v.cross(z_axis);
    const double sin_a = axis.norm();
    const double cos_a = v.dot(z_axis);
    if (sin_a < 1e-12) {
      if (cos_a < 0.0) {
        r1.diagonal() << 1.0, -1.0, -1.0;  // 180 degrees about x
      }
    } else {
      const Eigen::Vector3d u = axis / sin_a;
      Eigen::Matrix3d k;
      k << 0.0, -u.z(), u.y(), u.z(), 0.0, -u.x(), -u.y(), u.x(), 0.0;
      r1 += sin_a * k + (1.0 - cos_a) * k * k;
    }
  }

  // Rotation about z putting the shoulder line into the xz-plane, x >= 0.
  Eigen::Matrix3d rz = Eigen::Matrix3d::Identity();
  {
    const Eigen::Vector3d shoulders =
        r1 * (read_joint(sk, t0, kLeftShoulderJoint, 0, n, bodies) -
              read_joint(sk, t0, kRightShoulderJoint, 0, n, bodies));
    const double radius = std::hypot(shoulders.x(), shoulders.y());
    if (radius >= 1e-12) {
      const double cos_t = shoulders.x() / radius;
      const double sin_t = shoulders.y() / radius;
      rz << cos_t, sin_t, 0.0, -sin_t, cos_t, 0.0, 0.0, 0.0, 1.0;
    }
  }

  const Eigen::Matrix3d rot = rz * r1;
  for (int t = 0; t < frames; ++t) {
    for (int m = 0; m < bodies; ++m) {
      if (!slice_nonzero(sk, t, m, n, bodies)) continue;  // keep padding exactly zero
      for (int j = 0; j < n; ++j) {
        const Eigen::Vector3d p = rot * (read_joint(sk, t, j, m, n, bodies) - hip);
        const std::int64_t base = ((static_cast<std::int64_t>(t) * n + j) * 3) * bodies + m;
        sk[base] = p.x();
        sk[base + bodies] = p.y();
        sk[base + 2 * bodies] = p.z();
      }
    }
  }
  sample.align_ok = true;
  return true;
}

// ---------------------------------------------------------------------------
// Benchmark splits

Benchmark benchmark_from_string(const std::string& s) {
  if (s == "xsub") return Benchmark::xsub;
  if (s == "xview") return Benchmark::xview;
  if (s == "xsub120") return Benchmark::xsub120;
  if (s == "xsetup120") return Benchmark::xsetup120;
  throw std::invalid_argument("unknown benchmark '" + s +
                              "' (expected xsub, xview, xsub120 or xsetup120)");
}

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::xsub: return "xsub";
    case Benchmark::xview: return "xview";
    case Benchmark::xsub120: return "xsub120";
    case Benchmark::xsetup120: return "xsetup120";
  }
  throw std::logic_error("to_string: invalid benchmark");
}

int SplitManifest::id_of(const ClipMeta& meta) const {
  switch (id_kind) {
    case IdKind::performer: return meta.performer;
    case IdKind::camera: return meta.camera;
    case IdKind::setup: return meta.setup;
  }
  throw std::logic_error("id_of: invalid id kind");
}

bool SplitManifest::in_train(const ClipMeta& meta) const {
  return std::binary_search(train_ids.begin(), train_ids.end(), id_of(meta));
}

bool SplitManifest::in_test(const ClipMeta& meta) const {
  return std::binary_search(test_ids.begin(), test_ids.end(), id_of(meta));
}

SplitManifest make_split(const std::vector<ClipMeta>& files, Benchmark benchmark,
                         const SplitConfig& config) {
  SplitManifest manifest;
  manifest.benchmark = benchmark;
  switch (benchmark) {
    case Benchmark::xsub:
    case Benchmark::xsub120: manifest.id_kind = IdKind::performer; break;
    case Benchmark::xview: manifest.id_kind = IdKind::camera; break;
    case Benchmark::xsetup120: manifest.id_kind = IdKind::setup; break;
  }

  std::vector<int> present;
  for (const ClipMeta& meta : files) present.push_back(manifest.id_of(meta));
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());

  if (benchmark == Benchmark::xsub || benchmark == Benchmark::xsub120) {
    if (config.xsub_train_ids.empty()) {
      throw std::invalid_argument("make_split: X-Sub benchmarks need a training performer list");
    }
    manifest.train_ids = config.xsub_train_ids;
  } else if (benchmark == Benchmark::xview) {
    manifest.train_ids = {2, 3};
  } else {  // xsetup120 parity
    for (int id : present) {
      const bool even = id % 2 == 0;
      if (even == config.setup_even_train) manifest.train_ids.push_back(id);
    }
  }
  std::sort(manifest.train_ids.begin(), manifest.train_ids.end());
  manifest.train_ids.erase(std::unique(manifest.train_ids.begin(), manifest.train_ids.end()),
                           manifest.train_ids.end());
  for (int id : present) {
    if (!std::binary_search(manifest.train_ids.begin(), manifest.train_ids.end(), id)) {
      manifest.test_ids.push_back(id);
    }
  }
  return manifest;
}

std::vector<int> load_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_id_list: cannot open " + path);
  std::vector<int> ids;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int v = 0;
    while (ls >> v) ids.push_back(v);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset generate_synthetic(int num_classes, int per_class, int num_joints, int frames,
                           std::uint64_t seed, double skeleton_noise, double pose_noise) {
  if (num_classes < 1 || per_class < 1 || num_joints < 2 || frames < 2) {
    throw std::invalid_argument("generate_synthetic: parameters must be positive");
  }
  if (2 + 2 * (num_classes - 1) >= num_joints) {
    throw std::invalid_argument("generate_synthetic: need at least " +
                                std::to_string(2 + 2 * (num_classes - 1) + 1) +
                                " joints for " + std::to_string(num_classes) + " classes");
  }
  constexpr double kPi = 3.14159265358979323846;
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.num_joints = num_joints;
  ds.max_frames = frames;
  ds.bodies = 1;

  std::vector<double> clean(static_cast<size_t>(frames) * num_joints * 3);
  for (int c = 0; c < num_classes; ++c) {
    const int hot = 2 + 2 * c;
    const double freq = static_cast<double>(c + 2);  // integer cycles per clip
    for (int i = 0; i < per_class; ++i) {
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      const double amp = 0.35 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
      for (int t = 0; t < frames; ++t) {
        const double theta = 2.0 * kPi * freq * t / frames + phase;
        for (int j = 0; j < num_joints; ++j) {
          double x = 0.0, y = 0.0;
          const double z = 0.3 * j;
          double weight = 0.0;
          if (j == hot) weight = 1.0;
          else if (j == hot - 1 || j == hot + 1) weight = 0.5;
          if (weight != 0.0) {
            x = weight * amp * std::sin(theta);
            y = weight * 0.6 * amp * std::cos(theta);
          }
          double* cell = clean.data() + (static_cast<size_t>(t) * num_joints + j) * 3;
          cell[0] = x;
          cell[1] = y;
          cell[2] = z;
        }
      }
      Sample sample;
      sample.skeleton = Tensor({frames, num_joints, 3, 1});
      sample.pose = Tensor({frames, num_joints, 2, 1});
      sample.label = c;
      for (int t = 0; t < frames; ++t) {
        for (int j = 0; j < num_joints; ++j) {
          const double* cell = clean.data() + (static_cast<size_t>(t) * num_joints + j) * 3;
          for (int d = 0; d < 3; ++d) {
            sample.skeleton[(static_cast<std::int64_t>(t) * num_joints + j) * 3 + d] =
                cell[d] + skeleton_noise * rng.normal();
          }
          for (int d = 0; d < 2; ++d) {
            sample.pose[(static_cast<std::int64_t>(t) * num_joints + j) * 2 + d] =
                cell[d] + pose_noise * rng.normal();
          }
        }
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset cache

namespace {

constexpr const char* kCacheMagic = "pggcn-cache-1";

std::string sample_file_name(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "samples/%06zu.bin", index);
  return buf;
}

int manifest_int(const std::string& line, const std::string& key, const std::string& path) {
  const std::string prefix = key + " = ";
  if (line.rfind(prefix, 0) != 0) {
    throw std::runtime_error(path + ": manifest expected '" + key + " = ...', got '" + line + "'");
  }
  return std::stoi(line.substr(prefix.size()));
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "samples");
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  manifest << kCacheMagic << "\n";
  manifest << "count = " << dataset.samples.size() << "\n";
  manifest << "num_classes = " << dataset.num_classes << "\n";
  manifest << "num_joints = " << dataset.num_joints << "\n";
  manifest << "max_frames = " << dataset.max_frames << "\n";
  manifest << "bodies = " << dataset.bodies << "\n";
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const std::string rel = sample_file_name(i);
    manifest << rel << " " << dataset.samples[i].label << "\n";
    std::ofstream bin(fs::path(dir) / rel, std::ios::binary);
    if (!bin) throw std::runtime_error("save_dataset: cannot write " + rel);
    write_tensor(bin, dataset.samples[i].skeleton);
    write_tensor(bin, dataset.samples[i].pose);
    if (!bin) throw std::runtime_error("save_dataset: write failed for " + rel);
  }
  if (!manifest) throw std::runtime_error("save_dataset: manifest write failed");
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("load_dataset: cannot open " + manifest_path);
  std::string line;
  if (!std::getline(manifest, line) || line != kCacheMagic) {
    throw std::runtime_error(manifest_path + ": bad cache magic");
  }
  Dataset ds;
  auto next_line = [&](const char* what) {
    if (!std::getline(manifest, line)) {
      throw std::runtime_error(manifest_path + ": truncated manifest, wanted " +
                               std::string(what));
    }
    return line;
  };
  const int count = manifest_int(next_line("count"), "count", manifest_path);
  ds.num_classes = manifest_int(next_line("num_classes"), "num_classes", manifest_path);
  ds.num_joints = manifest_int(next_line("num_joints"), "num_joints", manifest_path);
  ds.max_frames = manifest_int(next_line("max_frames"), "max_frames", manifest_path);
  ds.bodies = manifest_int(next_line("bodies"), "bodies", manifest_path);
  if (count < 0) throw std::runtime_error(manifest_path + ": negative sample count");
  ds.samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::istringstream ls(next_line("sample entry"));
    std::string rel;
    int label = 0;
    if (!(ls >> rel >> label)) {
      throw std::runtime_error(manifest_path + ": malformed sample entry '" + line + "'");
    }
    std::ifstream bin(fs::path(dir) / rel, std::ios::binary);
    if (!bin) throw std::runtime_error("load_dataset: cannot open sample " + rel);
    Sample sample;
    sample.skeleton = read_tensor(bin);
    sample.pose = read_tensor(bin);
    sample.label = label;
    if (sample.skeleton.rank() != 4 || sample.skeleton.dim(0) != ds.max_frames ||
        sample.skeleton.dim(1) != ds.num_joints || sample.skeleton.dim(3) != ds.bodies) {
      throw std::runtime_error("load_dataset: sample " + rel + " has shape " +
                               shape_string(sample.skeleton.shape()) +
                               ", inconsistent with manifest");
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// NTU directory ingestion

std::vector<std::string> list_skeleton_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw std::runtime_error("list_skeleton_files: not a directory: " + dir);
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".skeleton") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

Dataset load_ntu_directory(const std::string& dir, const SplitManifest& split, bool train_part,
                           const NtuLoadOptions& options) {
  Dataset ds;
  ds.num_classes = options.num_classes;
  ds.max_frames = options.max_frames;
  ds.bodies = options.bodies;
  ds.num_joints = -1;
  for (const std::string& path : list_skeleton_files(dir)) {
    const ClipMeta meta = parse_filename_meta(path);
    if (train_part ? !split.in_train(meta) : !split.in_test(meta)) continue;
    const RawClip clip = parse_skeleton_file(path);
    Sample sample = pad_and_select(clip, options.max_frames, options.bodies);
    if (sample.label < 0 || sample.label >= options.num_classes) {
      throw std::runtime_error(path + ": action label " + std::to_string(sample.label + 1) +
                               " outside the configured " + std::to_string(options.num_classes) +
                               " classes");
    }
    if (options.align) view_align(sample);
    if (ds.num_joints < 0) {
      ds.num_joints = clip.num_joints;
    } else if (ds.num_joints != clip.num_joints) {
      throw std::runtime_error(path + ": joint count " + std::to_string(clip.num_joints) +
                               " differs from earlier files (" + std::to_string(ds.num_joints) +
                               ")");
    }
    ds.samples.push_back(std::move(sample));
  }
  if (ds.num_joints < 0) ds.num_joints = 25;
  return ds;
}

}  // namespace pggcn

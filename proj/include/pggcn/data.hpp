#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pggcn/tensor.hpp"

namespace pggcn {

/// Clip identity decoded from the SsssCcccPpppRrrrAaaa filename pattern.
/// `action` stays 1-based as encoded; Sample labels are 0-based.
struct ClipMeta {
  int setup = 0;
  int camera = 0;
  int performer = 0;
  int replication = 0;
  int action = 0;
};

/// Decodes the basename of `path` (extension ignored). Malformed names throw.
ClipMeta parse_filename_meta(const std::string& path);

/// One tracked body in one frame: capture id plus 25 joints of
/// {x, y, z camera-space; colorX, colorY image-space}.
struct BodyFrame {
  std::uint64_t body_id = 0;
  std::vector<std::array<double, 5>> joints;
};

struct RawFrame {
  std::vector<BodyFrame> bodies;
};

struct RawClip {
  std::vector<RawFrame> frames;
  ClipMeta meta;
  int num_joints = 25;
};

/// Parses the NTU-style text layout (frame count; per-frame body count; a
/// 10-field body header; joint count; 12-field joint lines). Keeps the body
/// id, the 3-D coordinates and the color-space coordinates; other fields are
/// read and discarded. Errors carry the offending line number.
RawClip parse_skeleton_file(const std::string& path);

/// Emits the same text layout with zeros in the discarded fields, so files
/// produced here round-trip losslessly through parse_skeleton_file.
void write_skeleton_file(const std::string& path, const RawClip& clip);

/// Fixed-size training example. Frames beyond the source clip and absent body
/// slots are exactly zero.
struct Sample {
  Tensor skeleton;  // [T x N x 3 x M]
  Tensor pose;      // [T x N x 2 x M]
  int label = 0;    // 0-based class index
  bool align_ok = true;
};

/// Truncates/zero-pads to max_frames, keeps the `bodies` highest-motion
/// bodies (motion = summed frame-to-frame joint displacement), zero-fills
/// missing body slots, and normalizes color coordinates to [-1, 1] by the
/// image dimensions. Zero-frame clips are a data error.
Sample pad_and_select(const RawClip& clip, int max_frames = 200, int bodies = 2,
                      double image_width = 1920.0, double image_height = 1080.0);

/// One rigid transform per clip, estimated from the first non-zero frame of
/// body 1: hip-center to the origin, hip-to-spine along +z, shoulder line in
/// the xz-plane. Applied to every non-zero (frame, body) slice of the 3-D
/// skeleton; the image-space pose is untouched. Returns false (and flags the
/// sample) when the spine is degenerate, leaving the data unchanged.
bool view_align(Sample& sample);

enum class Benchmark { xsub, xview, xsub120, xsetup120 };
Benchmark benchmark_from_string(const std::string& s);
std::string to_string(Benchmark b);

enum class IdKind { performer, camera, setup };

struct SplitManifest {
  Benchmark benchmark = Benchmark::xsub;
  IdKind id_kind = IdKind::performer;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  int id_of(const ClipMeta& meta) const;
  bool in_train(const ClipMeta& meta) const;
  bool in_test(const ClipMeta& meta) const;
};

struct SplitConfig {
  std::vector<int> xsub_train_ids;  // required for the two X-Sub benchmarks
  bool setup_even_train = true;     // X-Setup120 parity rule
};

/// Deterministic, disjoint partition: X-Sub benchmarks train on the
/// configured performer ids; X-View trains on cameras {2,3}; X-Setup120
/// splits the setups present in `files` by parity. Ids present in the file
/// list but not in the training set form the test side.
SplitManifest make_split(const std::vector<ClipMeta>& files, Benchmark benchmark,
                         const SplitConfig& config);

/// Whitespace/comma-separated integers; '#' starts a comment.
std::vector<int> load_id_list(const std::string& path);

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  int num_joints = 25;
  int max_frames = 200;
  int bodies = 2;
};

/// Desk-scale stand-in corpus on a chain skeleton: class c makes joint 2+2c
/// oscillate in x/y with an integer per-clip cycle count (so per-joint time
/// means are class-independent), random phase and slight amplitude jitter;
/// immediate chain neighbours move at half amplitude. The 2-D pose is the
/// xy-projection of the clean skeleton; Gaussian noise is added to skeleton
/// and pose independently. One body, balanced labels, fully seeded.
Dataset generate_synthetic(int num_classes, int per_class, int num_joints, int frames,
                           std::uint64_t seed, double skeleton_noise = 0.01,
                           double pose_noise = 0.02);

/// Directory cache: `manifest.txt` (format tag, dims, one `path label` line
/// per sample) plus per-sample binary files holding the skeleton and pose
/// tensors back-to-back.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

struct NtuLoadOptions {
  int max_frames = 200;
  int bodies = 2;
  bool align = true;
  int num_classes = 60;
};

/// All *.skeleton files directly inside `dir`, sorted by filename.
std::vector<std::string> list_skeleton_files(const std::string& dir);

/// Parses, filters by the split (train or test side), pads, selects bodies
/// and optionally view-aligns every matching file in `dir`.
Dataset load_ntu_directory(const std::string& dir, const SplitManifest& split, bool train_part,
                           const NtuLoadOptions& options);

}  // namespace pggcn

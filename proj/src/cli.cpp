#include "pggcn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "pggcn/attention.hpp"
#include "pggcn/data.hpp"
#include "pggcn/gradcheck.hpp"
#include "pggcn/graph.hpp"
#include "pggcn/model.hpp"
#include "pggcn/train.hpp"

namespace pggcn {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Canonical cross-subject training performers for the 60- and 120-class
// capture corpora; --split-ids swaps in a custom list.
const std::vector<int> kXsubTrain60 = {1,  2,  4,  5,  8,  9,  13, 14, 15, 16,
                                       17, 18, 19, 25, 27, 28, 31, 34, 35, 38};
const std::vector<int> kXsubTrain120 = {
    1,  2,  4,  5,  8,  9,  13, 14, 15, 16, 17, 18,  19,  25,  27, 28, 31, 34,
    35, 38, 45, 46, 47, 49, 50, 52, 53, 54, 55, 56,  57,  58,  59, 70, 74, 78,
    80, 81, 82, 83, 84, 85, 86, 89, 91, 92, 93, 94,  95,  97,  98, 100, 103};

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return std::string(buf);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

struct CliOptions {
  std::string workdir = ".";
  std::string config_path;

  // dataset sources
  std::string data_dir;
  std::string cache_dir;
  std::string eval_cache_dir;
  std::string synthetic;
  std::string benchmark = "xsub";
  std::string split_ids;
  int num_classes = 0;  // 0 derives it from the source
  int joints = 11;
  int frames = 32;
  int max_frames = 200;
  int bodies = 2;
  bool no_align = false;
  double skeleton_noise = 0.01;
  double pose_noise = 0.02;
  double eval_fraction = 0.25;
  std::string graph_file;

  // model
  std::string streams = "both";
  std::string attention = "dynamic";
  std::string substreams = "joint,velocity,bone";
  int embed_channels = 64;
  int classifier_mid = 128;
  int classifier_out = 256;
  int temporal_kernel = 9;
  int partitions = 3;

  // optimisation
  double lr = 0.1;
  int batch_size = 16;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  int epochs = 200;
  std::string schedule = "step";
  double stop_train_acc = 2.0;
  std::uint64_t seed = 1;
  int workers = 1;

  // outputs
  std::string checkpoint = "model.ckpt";
  std::string log_file = "train_log.csv";
  std::string out_file;
  bool normalized = false;

  std::vector<std::string> files;  // parse-check positionals
};

struct CliApp {
  CliOptions opt;
  CLI::App app{"Pose-guided graph network for skeleton action recognition", "pggcn"};
  CLI::App* train = nullptr;
  CLI::App* eval_cmd = nullptr;
  CLI::App* gradcheck = nullptr;
  CLI::App* synth = nullptr;
  CLI::App* parse_check = nullptr;
  CLI::App* confusion = nullptr;

  CliApp() {
    app.require_subcommand(1);
    app.add_option("--workdir", opt.workdir,
                   "Directory every relative path is resolved against")
        ->capture_default_str();
    app.add_option("--config", opt.config_path,
                   "key = value file supplying defaults for flags not given on the command line");

    train = app.add_subcommand("train", "Train a model and write logs plus a checkpoint");
    eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    gradcheck = app.add_subcommand("gradcheck",
                                   "Compare analytic gradients against finite differences");
    synth = app.add_subcommand("synth", "Generate a synthetic dataset cache");
    parse_check = app.add_subcommand("parse-check", "Parse skeleton files and report problems");
    confusion = app.add_subcommand("confusion", "Emit the confusion matrix for a checkpoint");
    for (CLI::App* sub : {train, eval_cmd, gradcheck, synth, parse_check, confusion}) {
      sub->fallthrough();
    }

    add_dataset_options(train, /*with_eval_cache=*/true);
    add_model_options(train);
    add_optim_options(train);
    train->add_option("--checkpoint", opt.checkpoint, "Checkpoint output path")
        ->capture_default_str();
    train->add_option("--log", opt.log_file, "Per-epoch CSV log path ('' disables)")
        ->capture_default_str();
    train->add_option("--workers", opt.workers, "Evaluation threads")->capture_default_str();

    add_dataset_options(eval_cmd, /*with_eval_cache=*/false);
    eval_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint to score")->required();
    eval_cmd->add_option("--seed", opt.seed, "Seed selecting the held-out synthetic split")
        ->capture_default_str();
    eval_cmd->add_option("--workers", opt.workers, "Evaluation threads")->capture_default_str();
    eval_cmd->add_option("--out", opt.out_file, "Also write the confusion matrix CSV here");

    gradcheck->add_option("--seed", opt.seed, "Seed for the probe tensors")
        ->capture_default_str();

    synth->add_option("--synthetic", opt.synthetic,
                      "CLASSESxPER_CLASS to generate, e.g. 4x50")
        ->required();
    synth->add_option("--cache-dir", opt.cache_dir, "Output dataset directory")->required();
    synth->add_option("--joints", opt.joints, "Chain skeleton length")->capture_default_str();
    synth->add_option("--frames", opt.frames, "Frames per clip")->capture_default_str();
    synth->add_option("--seed", opt.seed, "Generator seed")->capture_default_str();
    synth->add_option("--skeleton-noise", opt.skeleton_noise, "3-D coordinate noise level")
        ->capture_default_str();
    synth->add_option("--pose-noise", opt.pose_noise, "2-D pose noise level")
        ->capture_default_str();

    parse_check->add_option("files", opt.files, "Skeleton files to check");
    parse_check->add_option("--data-dir", opt.data_dir,
                            "Directory whose .skeleton files are all checked");

    add_dataset_options(confusion, /*with_eval_cache=*/false);
    confusion->add_option("--checkpoint", opt.checkpoint, "Checkpoint to score")->required();
    confusion->add_option("--seed", opt.seed, "Seed selecting the held-out synthetic split")
        ->capture_default_str();
    confusion->add_option("--workers", opt.workers, "Evaluation threads")->capture_default_str();
    confusion->add_option("--out", opt.out_file, "Write the matrix here instead of stdout");
    confusion->add_flag("--normalized", opt.normalized, "Divide each row by its own total");
  }

 private:
  void add_dataset_options(CLI::App* cmd, bool with_eval_cache) {
    cmd->add_option("--data-dir", opt.data_dir, "Directory of raw .skeleton files");
    cmd->add_option("--cache-dir", opt.cache_dir, "Preprocessed dataset cache directory");
    if (with_eval_cache) {
      cmd->add_option("--eval-cache-dir", opt.eval_cache_dir,
                      "Cache directory holding the evaluation split");
    }
    cmd->add_option("--synthetic", opt.synthetic,
                    "Generate data on the fly, CLASSESxPER_CLASS (e.g. 4x50)");
    cmd->add_option("--benchmark", opt.benchmark, "Raw-data split rule")
        ->check(CLI::IsMember({"xsub", "xview", "xsub120", "xsetup120"}))
        ->capture_default_str();
    cmd->add_option("--split-ids", opt.split_ids,
                    "Id list file replacing the built-in cross-subject training ids");
    cmd->add_option("--num-classes", opt.num_classes,
                    "Class count override (0 derives it from the source)")
        ->capture_default_str();
    cmd->add_option("--joints", opt.joints, "Synthetic chain skeleton length")
        ->capture_default_str();
    cmd->add_option("--frames", opt.frames, "Synthetic frames per clip")->capture_default_str();
    cmd->add_option("--max-frames", opt.max_frames, "Raw clips are padded/truncated to this")
        ->capture_default_str();
    cmd->add_option("--bodies", opt.bodies, "Body slots kept per raw clip")
        ->capture_default_str();
    cmd->add_flag("--no-align", opt.no_align, "Skip view alignment of raw clips");
    cmd->add_option("--skeleton-noise", opt.skeleton_noise, "Synthetic 3-D noise level")
        ->capture_default_str();
    cmd->add_option("--pose-noise", opt.pose_noise, "Synthetic 2-D pose noise level")
        ->capture_default_str();
    cmd->add_option("--eval-fraction", opt.eval_fraction,
                    "Held-out fraction generated for synthetic training runs")
        ->capture_default_str();
    cmd->add_option("--graph", opt.graph_file,
                    "Skeleton graph file (default: 25 joints use the built-in capture-rig "
                    "graph, anything else a chain)");
  }

  void add_model_options(CLI::App* cmd) {
    cmd->add_option("--streams", opt.streams, "Input branches to build")
        ->check(CLI::IsMember({"pose", "skeleton", "both"}))
        ->capture_default_str();
    cmd->add_option("--attention", opt.attention, "Pose-guided attention variant")
        ->check(CLI::IsMember({"none", "vanilla", "dynamic"}))
        ->capture_default_str();
    cmd->add_option("--substreams", opt.substreams,
                    "Comma list drawn from joint, velocity, bone")
        ->capture_default_str();
    cmd->add_option("--embed-channels", opt.embed_channels, "Embedding width")
        ->capture_default_str();
    cmd->add_option("--classifier-mid", opt.classifier_mid, "First classifier width")
        ->capture_default_str();
    cmd->add_option("--classifier-out", opt.classifier_out, "Second classifier width")
        ->capture_default_str();
    cmd->add_option("--temporal-kernel", opt.temporal_kernel, "Temporal kernel size (odd)")
        ->capture_default_str();
    cmd->add_option("--partitions", opt.partitions, "Adjacency partitions (1 or 3)")
        ->capture_default_str();
  }

  void add_optim_options(CLI::App* cmd) {
    cmd->add_option("--epochs", opt.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lr", opt.lr, "Learning rate")->capture_default_str();
    cmd->add_option("--batch-size", opt.batch_size, "Samples per mini-batch")
        ->capture_default_str();
    cmd->add_option("--weight-decay", opt.weight_decay, "L2 penalty on weight tensors")
        ->capture_default_str();
    cmd->add_option("--momentum", opt.momentum, "Classical momentum (0 = plain SGD)")
        ->capture_default_str();
    cmd->add_option("--schedule", opt.schedule, "Learning-rate schedule")
        ->check(CLI::IsMember({"constant", "step"}))
        ->capture_default_str();
    cmd->add_option("--stop-train-acc", opt.stop_train_acc,
                    "Stop once train accuracy reaches this (values > 1 disable)")
        ->capture_default_str();
    cmd->add_option("--seed", opt.seed, "Master seed (init, shuffling, synthetic data)")
        ->capture_default_str();
  }
};

constexpr int kKeepGoing = -1;

int parse_into(CliApp& cli, const std::vector<std::string>& args) {
  std::vector<const char*> ptrs;
  ptrs.reserve(args.size() + 1);
  ptrs.push_back("pggcn");
  for (const auto& a : args) ptrs.push_back(a.c_str());
  try {
    cli.app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.app.exit(e);
    return 2;
  }
  return kKeepGoing;
}

std::pair<int, int> parse_synthetic_spec(const std::string& spec) {
  const auto x = spec.find('x');
  bool ok = x != std::string::npos && x > 0 && x + 1 < spec.size();
  int classes = 0;
  int per_class = 0;
  if (ok) {
    try {
      std::size_t used = 0;
      classes = std::stoi(spec.substr(0, x), &used);
      ok = used == x;
      per_class = std::stoi(spec.substr(x + 1), &used);
      ok = ok && used == spec.size() - x - 1;
    } catch (const std::exception&) {
      ok = false;
    }
  }
  if (!ok || classes < 2 || per_class < 1) {
    throw UsageError("--synthetic expects CLASSESxPER_CLASS with at least 2 classes, e.g. 4x50; "
                     "got '" + spec + "'");
  }
  return {classes, per_class};
}

std::vector<Substream> parse_substream_list(const std::string& text) {
  std::vector<Substream> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    token = trim(token);
    if (token.empty()) throw UsageError("--substreams contains an empty entry");
    try {
      out.push_back(substream_from_string(token));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("--substreams must name at least one branch");
  return out;
}

int default_classes(Benchmark b) {
  return (b == Benchmark::xsub120 || b == Benchmark::xsetup120) ? 120 : 60;
}

SkeletonGraph choose_graph(const CliOptions& o, int num_joints) {
  if (!o.graph_file.empty()) {
    SkeletonGraph g = load_graph_file(o.graph_file);
    if (g.num_joints != num_joints) {
      throw std::runtime_error("graph file " + o.graph_file + " declares " +
                               std::to_string(g.num_joints) + " joints but the data has " +
                               std::to_string(num_joints));
    }
    return g;
  }
  return num_joints == 25 ? SkeletonGraph::ntu25() : SkeletonGraph::chain(num_joints);
}

void require_one_source(const CliOptions& o) {
  const int sources = static_cast<int>(!o.data_dir.empty()) +
                      static_cast<int>(!o.cache_dir.empty()) +
                      static_cast<int>(!o.synthetic.empty());
  if (sources != 1) {
    throw UsageError("exactly one of --data-dir, --cache-dir or --synthetic must be given");
  }
}

SplitManifest split_for(const CliOptions& o, const std::vector<std::string>& files) {
  std::vector<ClipMeta> metas;
  metas.reserve(files.size());
  for (const auto& f : files) metas.push_back(parse_filename_meta(f));
  const Benchmark bm = benchmark_from_string(o.benchmark);
  SplitConfig sc;
  if (!o.split_ids.empty()) {
    sc.xsub_train_ids = load_id_list(o.split_ids);
  } else if (bm == Benchmark::xsub) {
    sc.xsub_train_ids = kXsubTrain60;
  } else if (bm == Benchmark::xsub120) {
    sc.xsub_train_ids = kXsubTrain120;
  }
  return make_split(metas, bm, sc);
}

NtuLoadOptions ntu_options(const CliOptions& o) {
  NtuLoadOptions lo;
  lo.max_frames = o.max_frames;
  lo.bodies = o.bodies;
  lo.align = !o.no_align;
  lo.num_classes =
      o.num_classes > 0 ? o.num_classes : default_classes(benchmark_from_string(o.benchmark));
  return lo;
}

// Training data plus (possibly empty) held-out data from whichever source the
// flags selected.
std::pair<Dataset, Dataset> load_train_data(const CliOptions& o) {
  require_one_source(o);
  if (!o.synthetic.empty()) {
    const auto [classes, per_class] = parse_synthetic_spec(o.synthetic);
    Dataset train = generate_synthetic(classes, per_class, o.joints, o.frames, o.seed,
                                       o.skeleton_noise, o.pose_noise);
    Dataset eval;
    eval.num_classes = classes;
    if (o.eval_fraction > 0.0) {
      const int eval_per =
          std::max(1, static_cast<int>(std::lround(per_class * o.eval_fraction)));
      eval = generate_synthetic(classes, eval_per, o.joints, o.frames, o.seed + 1,
                                o.skeleton_noise, o.pose_noise);
    }
    return {std::move(train), std::move(eval)};
  }
  if (!o.cache_dir.empty()) {
    Dataset train = load_dataset(o.cache_dir);
    Dataset eval;
    eval.num_classes = train.num_classes;
    if (!o.eval_cache_dir.empty()) eval = load_dataset(o.eval_cache_dir);
    return {std::move(train), std::move(eval)};
  }
  const auto files = list_skeleton_files(o.data_dir);
  if (files.empty()) throw std::runtime_error("no .skeleton files in " + o.data_dir);
  const SplitManifest split = split_for(o, files);
  const NtuLoadOptions lo = ntu_options(o);
  return {load_ntu_directory(o.data_dir, split, true, lo),
          load_ntu_directory(o.data_dir, split, false, lo)};
}

// Held-out data for eval/confusion: the synthetic split derived from seed+1,
// the cache as given, or the test side of the raw-data split.
Dataset load_eval_data(const CliOptions& o) {
  require_one_source(o);
  if (!o.synthetic.empty()) {
    const auto [classes, per_class] = parse_synthetic_spec(o.synthetic);
    const int eval_per =
        std::max(1, static_cast<int>(std::lround(per_class * std::max(o.eval_fraction, 0.0))));
    return generate_synthetic(classes, eval_per, o.joints, o.frames, o.seed + 1,
                              o.skeleton_noise, o.pose_noise);
  }
  if (!o.cache_dir.empty()) return load_dataset(o.cache_dir);
  const auto files = list_skeleton_files(o.data_dir);
  if (files.empty()) throw std::runtime_error("no .skeleton files in " + o.data_dir);
  return load_ntu_directory(o.data_dir, split_for(o, files), false, ntu_options(o));
}

PggcnConfig model_config_from(const CliOptions& o, const Dataset& data) {
  PggcnConfig mc;
  mc.num_classes = data.num_classes;
  mc.num_joints = data.num_joints;
  mc.max_frames = data.max_frames;
  mc.embed_channels = o.embed_channels;
  mc.classifier_mid = o.classifier_mid;
  mc.classifier_out = o.classifier_out;
  mc.temporal_kernel = o.temporal_kernel;
  mc.partitions = o.partitions;
  mc.attention = attention_mode_from_string(o.attention);
  mc.seed = o.seed;
  if (o.streams == "pose") {
    mc.use_pose = true;
    mc.substreams.clear();
  } else {
    mc.use_pose = o.streams == "both";
    mc.substreams = parse_substream_list(o.substreams);
  }
  try {
    mc.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return mc;
}

TrainConfig train_config_from(const CliOptions& o) {
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch_size;
  tc.weight_decay = o.weight_decay;
  tc.momentum = o.momentum;
  tc.epochs = o.epochs;
  tc.schedule = lr_schedule_from_string(o.schedule);
  tc.seed = o.seed;
  tc.stop_train_acc = o.stop_train_acc;
  tc.workers = o.workers;
  try {
    tc.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  return tc;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

int cmd_train(const CliOptions& o) {
  auto [train_ds, eval_ds] = load_train_data(o);
  const PggcnConfig mc = model_config_from(o, train_ds);
  const SkeletonGraph graph = choose_graph(o, train_ds.num_joints);
  PggcnModel model(mc, graph);
  const TrainConfig tc = train_config_from(o);

  const TrainResult result = train_loop(model, train_ds, eval_ds, tc, o.log_file, o.checkpoint);

  std::cout << "epoch,loss,train_acc,eval_acc\n";
  for (const auto& rec : result.history) std::cout << format_epoch_record(rec) << "\n";
  if (result.aborted) {
    std::cerr << result.abort_message << "\n";
    return 1;
  }
  if (result.stopped_early) {
    std::cout << "early-stop at epoch " << result.history.back().epoch << "\n";
  }
  std::cout << "final-train-acc " << fmt(result.final_train_acc, 4) << "\n";
  if (!eval_ds.samples.empty()) {
    std::cout << "best-eval-acc " << fmt(result.best_eval_acc, 4) << " at epoch "
              << result.best_epoch << "\n";
  }
  if (!o.checkpoint.empty()) std::cout << "checkpoint " << o.checkpoint << "\n";
  if (!o.log_file.empty()) std::cout << "log " << o.log_file << "\n";
  return 0;
}

int cmd_eval(const CliOptions& o) {
  const PggcnConfig mc = peek_checkpoint_config(o.checkpoint);
  const Dataset data = load_eval_data(o);
  PggcnModel model(mc, choose_graph(o, mc.num_joints));
  load_checkpoint(o.checkpoint, model);

  const EvalResult result = evaluate(model, data, o.workers);
  std::cout << "top1 " << fmt(result.top1, 4) << " (" << result.confusion.trace() << "/"
            << result.confusion.total() << ")\n";
  if (!o.out_file.empty()) {
    write_text_file(o.out_file, result.confusion.to_csv());
    std::cout << "confusion " << o.out_file << "\n";
  }
  return 0;
}

int cmd_confusion(const CliOptions& o) {
  const PggcnConfig mc = peek_checkpoint_config(o.checkpoint);
  const Dataset data = load_eval_data(o);
  PggcnModel model(mc, choose_graph(o, mc.num_joints));
  load_checkpoint(o.checkpoint, model);

  const EvalResult result = evaluate(model, data, o.workers);
  const std::string csv =
      o.normalized ? result.confusion.to_normalized_csv() : result.confusion.to_csv();
  if (o.out_file.empty()) {
    std::cout << csv;
  } else {
    write_text_file(o.out_file, csv);
    std::cout << "wrote " << result.confusion.num_classes << "-class confusion matrix to "
              << o.out_file << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CliOptions& o) {
  const auto entries = run_gradient_suite(o.seed);
  for (const auto& e : entries) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-28s %s  max-rel-err %.3e", e.name.c_str(),
                  e.report.pass ? "PASS" : "FAIL", e.report.max_relative_error);
    std::cout << buf << "\n";
    if (!e.report.message.empty()) std::cout << "  " << e.report.message << "\n";
  }
  const bool ok = suite_passed(entries);
  std::cout << "gradient suite: " << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

int cmd_synth(const CliOptions& o) {
  const auto [classes, per_class] = parse_synthetic_spec(o.synthetic);
  const Dataset data = generate_synthetic(classes, per_class, o.joints, o.frames, o.seed,
                                          o.skeleton_noise, o.pose_noise);
  save_dataset(o.cache_dir, data);
  std::cout << "wrote " << data.samples.size() << " samples (" << classes << " classes, "
            << o.joints << " joints, " << o.frames << " frames) to " << o.cache_dir << "\n";
  return 0;
}

int cmd_parse_check(const CliOptions& o) {
  std::vector<std::string> files = o.files;
  if (!o.data_dir.empty()) {
    const auto listed = list_skeleton_files(o.data_dir);
    files.insert(files.end(), listed.begin(), listed.end());
  }
  if (files.empty()) {
    throw UsageError("parse-check needs skeleton files as arguments or --data-dir");
  }
  int failures = 0;
  for (const auto& f : files) {
    try {
      const RawClip clip = parse_skeleton_file(f);
      std::size_t max_bodies = 0;
      for (const auto& frame : clip.frames) max_bodies = std::max(max_bodies, frame.bodies.size());
      std::cout << "OK " << f << " frames=" << clip.frames.size() << " max-bodies=" << max_bodies
                << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "FAIL " << f << ": " << e.what() << "\n";
    }
  }
  if (failures > 0) {
    std::cout << failures << " of " << files.size() << " files failed\n";
    return 1;
  }
  std::cout << "all " << files.size() << " files parsed\n";
  return 0;
}

void resolve_all_paths(CliOptions& o) {
  o.data_dir = resolve_path(o.workdir, o.data_dir);
  o.cache_dir = resolve_path(o.workdir, o.cache_dir);
  o.eval_cache_dir = resolve_path(o.workdir, o.eval_cache_dir);
  o.split_ids = resolve_path(o.workdir, o.split_ids);
  o.graph_file = resolve_path(o.workdir, o.graph_file);
  o.checkpoint = resolve_path(o.workdir, o.checkpoint);
  o.log_file = resolve_path(o.workdir, o.log_file);
  o.out_file = resolve_path(o.workdir, o.out_file);
  for (auto& f : o.files) f = resolve_path(o.workdir, f);
}

int dispatch(CliApp& cli) {
  resolve_all_paths(cli.opt);
  if (cli.train->parsed()) return cmd_train(cli.opt);
  if (cli.eval_cmd->parsed()) return cmd_eval(cli.opt);
  if (cli.gradcheck->parsed()) return cmd_gradcheck(cli.opt);
  if (cli.synth->parsed()) return cmd_synth(cli.opt);
  if (cli.parse_check->parsed()) return cmd_parse_check(cli.opt);
  if (cli.confusion->parsed()) return cmd_confusion(cli.opt);
  std::cerr << cli.app.help();
  return 2;
}

int run_cli_inner(const std::vector<std::string>& args) {
  // First pass discovers which flags the command line itself sets, so a
  // config file can fill in only the rest (defaults < file < flags).
  CliApp pass1;
  int code = parse_into(pass1, args);
  if (code != kKeepGoing) return code;

  std::vector<std::string> merged = args;
  if (!pass1.opt.config_path.empty()) {
    const std::string cfg_path = resolve_path(pass1.opt.workdir, pass1.opt.config_path);
    std::vector<std::pair<std::string, std::string>> pairs;
    try {
      pairs = parse_config_file(cfg_path);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }

    CLI::App* active = nullptr;
    const auto parsed_subs = pass1.app.get_subcommands();
    if (!parsed_subs.empty()) active = parsed_subs.front();

    std::set<std::string> known;
    auto collect = [&known](const CLI::App* a) {
      for (const CLI::Option* op : a->get_options()) {
        for (const std::string& nm : op->get_lnames()) known.insert(nm);
      }
    };
    collect(&pass1.app);
    for (const CLI::App* sub : pass1.app.get_subcommands([](const CLI::App*) { return true; })) {
      collect(sub);
    }

    for (const auto& [key, value] : pairs) {
      if (key == "workdir" || key == "config") {
        throw UsageError("config files may not set --" + key);
      }
      CLI::Option* target = nullptr;
      if (active != nullptr) target = active->get_option_no_throw("--" + key);
      if (target == nullptr) target = pass1.app.get_option_no_throw("--" + key);
      if (target == nullptr) {
        if (known.count(key) == 0) {
          throw UsageError("unknown config key '" + key + "' in " + cfg_path);
        }
        continue;  // valid flag, but for a different command
      }
      if (target->count() > 0) continue;  // the command line wins
      merged.push_back("--" + key + "=" + value);
    }
  }

  CliApp pass2;
  code = parse_into(pass2, merged);
  if (code != kKeepGoing) return code;
  return dispatch(pass2);
}

}  // namespace

std::string resolve_path(const std::string& workdir, const std::string& path) {
  if (path.empty()) return path;
  const std::filesystem::path p(path);
  if (p.is_absolute() || workdir.empty()) return path;
  return (std::filesystem::path(workdir) / p).string();
}

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": empty key");
    }
    pairs.emplace_back(key, value);
  }
  return pairs;
}

int run_cli(const std::vector<std::string>& args) {
  try {
    return run_cli_inner(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(argc > 0 ? static_cast<std::size_t>(argc - 1) : 0);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace pggcn

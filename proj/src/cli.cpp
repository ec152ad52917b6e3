#include "axcrf/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "axcrf/errors.hpp"
#include "axcrf/metrics.hpp"
#include "axcrf/pointcloud.hpp"
#include "axcrf/training.hpp"

namespace axcrf {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputOptions {
  std::string path;
  std::vector<std::size_t> features{3, 4};
  int label_col = -1;
  bool skip_header = false;
};

void add_input(CLI::App* cmd, InputOptions& in, const std::string& flag, const std::string& what,
               int default_label) {
  in.label_col = default_label;
  cmd->add_option(flag, in.path, what)->required()->check(CLI::ExistingFile);
  cmd->add_option("--features", in.features, "feature column indices (0-based)")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--label-col", in.label_col, "label column index, -1 for none")->capture_default_str();
  cmd->add_flag("--skip-header", in.skip_header, "skip the first line of the point file");
}

PointCloud load(const InputOptions& in, int classes) {
  ColumnMap map;
  map.features = in.features;
  if (in.label_col >= 0) map.label = static_cast<std::size_t>(in.label_col);
  return load_pointcloud(in.path, map, classes, in.skip_header);
}

TrainConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  try {
    return TrainConfig::from_json(j);
  } catch (const std::invalid_argument& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

struct Common {
  std::string config_path;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
  std::optional<int> classes;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON configuration file (unknown keys are rejected)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--threads", c.threads, "worker threads; 1 gives bit-exact runs")->capture_default_str();
  cmd->add_option("--seed", c.seed, "overrides the configured seed");
  cmd->add_option("--classes", c.classes, "number of classes (overrides the config)");
}

TrainConfig resolve(const Common& c) {
  TrainConfig config = load_config(c.config_path);
  config.threads = c.threads;
  if (c.seed) config.seed = *c.seed;
  if (c.classes) config.model.num_classes = *c.classes;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return config;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  return f;
}

void log_config(std::ostream* log, std::ostream& fallback, const TrainConfig& config) {
  (log ? *log : fallback) << json{{"resolved_config", config.to_json()}}.dump() << '\n';
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Atrous XCRF point cloud labeling"};
  app.name("axcrf");
  app.require_subcommand(1, 1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic cloud");
  std::string s_preset = "strata", s_out;
  std::size_t s_points = 20000;
  int s_classes = 4;
  double s_noise = 0.15;
  std::uint64_t s_seed = 1;
  SyntheticLayout s_layout;
  synth->add_option("--preset", s_preset, "strata | clusters")->capture_default_str();
  synth->add_option("--points", s_points, "number of points")->capture_default_str();
  synth->add_option("--classes", s_classes, "number of classes")->capture_default_str();
  synth->add_option("--noise", s_noise, "feature noise standard deviation")->capture_default_str();
  synth->add_option("--seed", s_seed, "random seed")->capture_default_str();
  synth->add_option("--density", s_layout.density, "points per square meter")->capture_default_str();
  synth->add_option("--aspect", s_layout.aspect, "x extent / y extent")->capture_default_str();
  synth->add_option("--out", s_out, "output point file (x y z hag intensity label)")->required();

  // slice
  auto* slice = app.add_subcommand("slice", "cut a cloud into overlapping square blocks");
  InputOptions sl_in;
  SliceOptions sl_opts;
  std::string sl_out;
  int sl_classes = 0;
  add_input(slice, sl_in, "--input", "point file", -1);
  slice->add_option("--block", sl_opts.side, "block side in meters")->capture_default_str();
  slice->add_option("--shift", sl_opts.shift, "offset of the second grid in meters")->capture_default_str();
  slice->add_option("--min-points", sl_opts.min_points, "drop blocks with fewer points")->capture_default_str();
  slice->add_option("--classes", sl_classes, "number of classes when a label column is read");
  slice->add_option("--out", sl_out, "output directory for blocks.json")->required();

  // train
  auto* train = app.add_subcommand("train", "step 1: train the unary model with tile split validation");
  Common t_common;
  InputOptions t_in;
  std::string t_out, t_log;
  add_common(train, t_common);
  add_input(train, t_in, "--input", "labeled point file", 5);
  train->add_option("--out", t_out, "checkpoint path")->required();
  train->add_option("--log", t_log, "JSON-lines training log");

  // labels
  auto* labels = app.add_subcommand("labels", "generate artificial labels for an unlabeled cloud");
  InputOptions l_in;
  std::string l_model, l_out;
  std::size_t l_threads = 1;
  labels->add_option("--model", l_model, "step-1 checkpoint")->required()->check(CLI::ExistingFile);
  add_input(labels, l_in, "--input", "unlabeled point file", -1);
  labels->add_option("--out", l_out, "label file, one label per point")->required();
  labels->add_option("--threads", l_threads, "worker threads")->capture_default_str();

  // refine
  auto* refine = app.add_subcommand("refine", "step 2: attach A-XCRF and retrain with artificial labels");
  Common r_common;
  InputOptions r_in, r_unl;
  std::string r_model, r_labels, r_out, r_log;
  refine->add_option("--model", r_model, "step-1 checkpoint")->required()->check(CLI::ExistingFile);
  add_common(refine, r_common);
  add_input(refine, r_in, "--input", "labeled point file (split as in train)", 5);
  refine->add_option("--unlabeled", r_unl.path, "unlabeled point file")->required()->check(CLI::ExistingFile);
  refine->add_option("--labels", r_labels, "artificial label file from `labels`")
      ->required()
      ->check(CLI::ExistingFile);
  refine->add_option("--out", r_out, "checkpoint path")->required();
  refine->add_option("--log", r_log, "JSON-lines training log");

  // predict
  auto* pred = app.add_subcommand("predict", "label every point of a cloud");
  InputOptions p_in;
  std::string p_model, p_out;
  bool p_no_xcrf = false;
  std::size_t p_threads = 1;
  pred->add_option("--model", p_model, "checkpoint")->required()->check(CLI::ExistingFile);
  add_input(pred, p_in, "--input", "point file", -1);
  pred->add_option("--out", p_out, "label file, one label per input point")->required();
  pred->add_flag("--no-xcrf", p_no_xcrf, "use unary predictions even if the checkpoint has A-XCRF");
  pred->add_option("--threads", p_threads, "worker threads")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "confusion matrix, per-class scores, average F1 and OA");
  InputOptions e_truth;
  std::string e_pred, e_json;
  int e_classes = 0;
  std::vector<std::string> e_names;
  ev->add_option("--pred", e_pred, "predicted label file")->required()->check(CLI::ExistingFile);
  add_input(ev, e_truth, "--truth", "labeled point file", 5);
  ev->add_option("--classes", e_classes, "number of classes")->required();
  ev->add_option("--names", e_names, "class names")->delimiter(',');
  ev->add_option("--json", e_json, "also write the report as JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      write_pointcloud(s_out, generate_synthetic(s_preset, s_points, s_classes, s_noise, s_seed, s_layout));
      out << "wrote " << s_points << " points to " << s_out << '\n';
    } else if (slice->parsed()) {
      if (sl_in.label_col >= 0 && sl_classes < 1) throw UsageError("--classes is required with --label-col");
      const PointCloud cloud = load(sl_in, sl_classes);
      const auto blocks = slice_blocks(cloud, sl_opts);
      fs::create_directories(sl_out);
      json manifest{{"input", sl_in.path},
                    {"side", sl_opts.side},
                    {"shift", sl_opts.shift},
                    {"min_points", sl_opts.min_points},
                    {"blocks", json::array()}};
      for (const Block& b : blocks) {
        manifest["blocks"].push_back(
            {{"origin", {b.origin_x, b.origin_y}}, {"side", b.side}, {"members", b.members}});
      }
      open_out((fs::path(sl_out) / "blocks.json").string()) << manifest.dump() << '\n';
      out << "wrote " << blocks.size() << " blocks to " << (fs::path(sl_out) / "blocks.json").string() << '\n';
    } else if (train->parsed()) {
      TrainConfig config = resolve(t_common);
      const PointCloud cloud = load(t_in, config.num_classes());
      config.model.feature_dim = cloud.feature_dim();
      std::unique_ptr<std::ofstream> log;
      if (!t_log.empty()) log = std::make_unique<std::ofstream>(open_out(t_log));
      log_config(log.get(), err, config);
      const PreparedData data = prepare_data(cloud, config);
      TrainHooks hooks;
      hooks.log = log.get();
      const ModelCheckpoint ckpt = train_step1(data.train, data.validation, config, data.normalizer, hooks);
      save_checkpoint(ckpt, t_out);
      out << "best validation OA " << ckpt.best_validation_oa << ", checkpoint " << t_out << '\n';
    } else if (labels->parsed()) {
      ModelCheckpoint ckpt = load_checkpoint(l_model);
      ckpt.config.threads = l_threads;
      const BlockSet set = prediction_set(load(l_in, ckpt.config.num_classes()), ckpt);
      const ArtificialLabelSet a = generate_artificial_labels(ckpt, set);
      write_labels(l_out, a.labels);
      out << "labels hash " << std::hex << a.hash() << std::dec << ", uncovered " << a.uncovered << '\n';
    } else if (refine->parsed()) {
      const ModelCheckpoint step1 = load_checkpoint(r_model);
      TrainConfig config = step1.config;
      if (!r_common.config_path.empty()) config = load_config(r_common.config_path);
      config.model = step1.config.model;
      config.threads = r_common.threads;
      if (r_common.seed) config.seed = *r_common.seed;
      ModelCheckpoint base = step1;
      base.config = config;
      const PointCloud cloud = load(r_in, config.num_classes());
      r_unl.features = r_in.features;
      r_unl.skip_header = r_in.skip_header;
      const PointCloud unlabeled_cloud = load(r_unl, config.num_classes());
      std::unique_ptr<std::ofstream> log;
      if (!r_log.empty()) log = std::make_unique<std::ofstream>(open_out(r_log));
      log_config(log.get(), err, config);

      const PreparedData data = prepare_data(cloud, config);
      const BlockSet unlabeled = prediction_set(unlabeled_cloud, base);
      ArtificialLabelSet artificial;
      artificial.labels = read_labels(r_labels);
      artificial.checkpoint_id = step1.fingerprint();
      for (int v : artificial.labels) {
        if (v < -1 || v >= config.num_classes()) throw DataError("artificial label out of range");
      }
      const ModelCheckpoint prepared = prepare_step2(base, data.validation);
      TrainHooks hooks;
      hooks.log = log.get();
      const ModelCheckpoint ckpt = train_step2(prepared, data.train, unlabeled, artificial, data.validation, hooks);
      save_checkpoint(ckpt, r_out);
      out << "best validation OA " << ckpt.best_validation_oa << ", checkpoint " << r_out << '\n';
    } else if (pred->parsed()) {
      const ModelCheckpoint ckpt = load_checkpoint(p_model);
      const BlockSet set = prediction_set(load(p_in, ckpt.config.num_classes()), ckpt);
      const bool xcrf = ckpt.xcrf.has_value() && !p_no_xcrf;
      write_labels(p_out, predict_points(ckpt, set, xcrf, ckpt.config.seed, p_threads));
      out << "wrote " << set.cloud.size() << " labels to " << p_out << '\n';
    } else if (ev->parsed()) {
      const PointCloud truth = load(e_truth, e_classes);
      if (!truth.has_labels()) throw UsageError("--truth needs a label column");
      const auto p = read_labels(e_pred);
      const EvalReport report = scores(confusion_matrix(p, truth.labels, e_classes), e_names);
      out << report.to_text();
      if (!e_json.empty()) open_out(e_json) << report.to_json().dump(2) << '\n';
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace axcrf

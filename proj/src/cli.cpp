#include "mmfusion/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <ostream>

#include "mmfusion/checkpoint.hpp"
#include "mmfusion/error.hpp"
#include "mmfusion/gradcheck.hpp"

namespace mmfusion {

const std::set<std::string>& training_config_keys() {
  static const std::set<std::string> keys = {
      "fusion.kind",      "fusion.k",        "fusion.o",         "fusion.dropout",
      "agg.kind",         "agg.clusters",    "agg.dbof_dim",     "agg.frames",
      "moe.mixtures",     "moe.l2",          "train.batch_size", "train.max_steps",
      "train.eval_every", "train.seed",      "train.learning_rate"};
  return keys;
}

const std::set<std::string>& synthetic_spec_keys() {
  static const std::set<std::string> keys = {
      "synth.videos",     "synth.val_count",  "synth.classes", "synth.visual_dim",
      "synth.audio_dim",  "synth.rank",       "synth.noise",   "synth.min_frames",
      "synth.max_frames", "synth.threshold",  "synth.seed"};
  return keys;
}

SyntheticSpec synthetic_spec_from_config(const KeyValueConfig& cfg) {
  cfg.require_known(synthetic_spec_keys());
  SyntheticSpec s;
  s.video_count = cfg.get_uint("synth.videos", s.video_count);
  s.classes = cfg.get_uint("synth.classes", s.classes);
  s.visual_dim = cfg.get_uint("synth.visual_dim", s.visual_dim);
  s.audio_dim = cfg.get_uint("synth.audio_dim", s.audio_dim);
  s.rank = cfg.get_uint("synth.rank", s.rank);
  s.noise = cfg.get_double("synth.noise", s.noise);
  s.min_frames = cfg.get_uint("synth.min_frames", s.min_frames);
  s.max_frames = cfg.get_uint("synth.max_frames", s.max_frames);
  s.threshold = cfg.get_double("synth.threshold", s.threshold);
  s.seed = cfg.get_uint("synth.seed", s.seed);
  s.validate();
  return s;
}

std::vector<CompareRow> run_comparison(const KeyValueConfig& cfg, const Dataset& train_set,
                                       const Dataset& val_set) {
  cfg.require_known(training_config_keys());
  const TrainConfig tc = TrainConfig::from_config(cfg);
  const auto& h = train_set.header;
  std::vector<CompareRow> rows;
  for (auto kind : {FusionKind::kAudioOnly, FusionKind::kVideoOnly, FusionKind::kConcat,
                    FusionKind::kFcConcat, FusionKind::kMfb}) {
    KeyValueConfig variant = cfg;
    variant.set("fusion.kind", to_string(kind));
    const ModelSpec spec = ModelSpec::from_config(variant, h.visual_dim, h.audio_dim, h.classes);
    TrainResult r = train(tc, spec, train_set.records, val_set.records);
    rows.push_back({kind, evaluate(r.model, val_set.records), std::move(r.log)});
  }
  return rows;
}

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void check_same_dims(const DatasetHeader& a, const DatasetHeader& b) {
  if (a.visual_dim != b.visual_dim || a.audio_dim != b.audio_dim || a.classes != b.classes) {
    throw ShapeError("training and validation datasets have different dimensions");
  }
}

void write_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& row : log) f << format_log_row(row) << '\n';
}

int cmd_gen(const std::string& spec_path, const std::string& out_path,
            const std::string& train_out, const std::string& val_out, std::ostream&) {
  KeyValueConfig cfg;
  if (!spec_path.empty()) {
    if (!std::filesystem::exists(spec_path)) throw ConfigError("spec file not found: " + spec_path);
    cfg = KeyValueConfig::load(spec_path);
  }
  const SyntheticSpec spec = synthetic_spec_from_config(cfg);
  if (out_path.empty() && (train_out.empty() || val_out.empty())) {
    throw ConfigError("gen needs --out, or both --train-out and --val-out");
  }
  const Dataset ds = generate_synthetic(spec);
  if (!out_path.empty()) write_dataset(out_path, ds);
  if (!train_out.empty() && !val_out.empty()) {
    const std::size_t val_count = cfg.get_uint("synth.val_count", kDefaultValidationCount);
    auto [head, tail] = split_tail(ds, val_count);
    write_dataset(train_out, head);
    write_dataset(val_out, tail);
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& val_path, const std::string& out_path, std::string log_path,
              std::ostream& out) {
  const KeyValueConfig cfg = KeyValueConfig::load(config_path);
  cfg.require_known(training_config_keys());
  const TrainConfig tc = TrainConfig::from_config(cfg);
  const Dataset train_set = read_dataset(data_path);
  const Dataset val_set = read_dataset(val_path);
  check_same_dims(train_set.header, val_set.header);
  const auto& h = train_set.header;
  const ModelSpec spec = ModelSpec::from_config(cfg, h.visual_dim, h.audio_dim, h.classes);
  TrainResult r = train(tc, spec, train_set.records, val_set.records,
                        [&out](const TrainLogRow& row) { out << format_log_row(row) << '\n'; });
  if (log_path.empty()) log_path = out_path + ".log";
  write_log(log_path, r.log);
  save_checkpoint(out_path, r.model);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::ostream& out) {
  const VideoModel model = load_checkpoint(ckpt_path);
  const Dataset ds = read_dataset(data_path);
  const ModelSpec& s = model.spec();
  const auto& h = ds.header;
  if (s.visual_dim != h.visual_dim || s.audio_dim != h.audio_dim || s.classes != h.classes) {
    throw ShapeError("checkpoint expects C=" + std::to_string(s.visual_dim) +
                     " M=" + std::to_string(s.audio_dim) + " classes=" + std::to_string(s.classes) +
                     " but dataset has C=" + std::to_string(h.visual_dim) +
                     " M=" + std::to_string(h.audio_dim) + " classes=" + std::to_string(h.classes));
  }
  const EvalResult e = evaluate(model, ds.records);
  char buf[96];
  std::snprintf(buf, sizeof buf, "gap=%.6f loss=%.6f", e.gap, e.loss);
  out << buf << '\n';
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(options)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s\tmax_rel_err=%.3e\tseeds=%zu\t%s", r.op.c_str(),
                  r.max_rel_error, r.seeds, r.passed ? "PASS" : "FAIL");
    out << buf << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int cmd_compare(const std::string& config_path, const std::string& data_path,
                const std::string& val_path, const std::string& log_dir, std::ostream& out) {
  const KeyValueConfig cfg = KeyValueConfig::load(config_path);
  const Dataset train_set = read_dataset(data_path);
  const Dataset val_set = read_dataset(val_path);
  check_same_dims(train_set.header, val_set.header);
  const auto rows = run_comparison(cfg, train_set, val_set);
  const std::string agg = cfg.get_string("agg.kind", "avg");
  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);
  for (const auto& row : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s\t%s\t%.6f", agg.c_str(), to_string(row.fusion).c_str(),
                  row.result.gap);
    out << buf << '\n';
    if (!log_dir.empty()) {
      write_log(std::filesystem::path(log_dir) / (agg + "_" + to_string(row.fusion) + ".tsv"),
                row.log);
    }
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-modal factorized bilinear fusion for video classification"};
  app.name("mmfusion");
  app.require_subcommand(1);

  std::string spec_path, out_path, train_out, val_out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Synthetic spec file (key = value)");
  gen->add_option("--out", out_path, "Output dataset (.mmfv)");
  gen->add_option("--train-out", train_out, "Training split output");
  gen->add_option("--val-out", val_out, "Validation split output (last synth.val_count videos)");

  std::string config_path, data_path, val_path, ckpt_path, log_path, log_dir;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", config_path, "Config file")->required();
  trn->add_option("--data", data_path, "Training dataset")->required();
  trn->add_option("--val", val_path, "Validation dataset")->required();
  trn->add_option("--out", ckpt_path, "Checkpoint output")->required();
  trn->add_option("--log", log_path, "Training log output (default <out>.log)");

  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  evl->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  evl->add_option("--data", data_path, "Dataset")->required();

  GradcheckOptions gc;
  auto* grd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  grd->add_option("--seed", gc.seed, "Base seed");
  grd->add_option("--seeds", gc.seeds, "Random instances per operator");
  grd->add_option("--perturb", gc.perturb)->group("");

  auto* cmp = app.add_subcommand("compare", "Compare fusion variants");
  cmp->add_option("--config", config_path, "Config file")->required();
  cmp->add_option("--data", data_path, "Training dataset")->required();
  cmp->add_option("--val", val_path, "Validation dataset")->required();
  cmp->add_option("--log-dir", log_dir, "Directory for per-variant training logs");

  std::vector<std::string> storage;
  storage.emplace_back("mmfusion");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen(spec_path, out_path, train_out, val_out, out);
    if (*trn) return cmd_train(config_path, data_path, val_path, ckpt_path, log_path, out);
    if (*evl) return cmd_eval(ckpt_path, data_path, out);
    if (*grd) return cmd_gradcheck(gc, out);
    if (*cmp) return cmd_compare(config_path, data_path, val_path, log_dir, out);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mmfusion

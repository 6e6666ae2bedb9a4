#include "cli.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "agnet/checkpoint.hpp"
#include "agnet/config.hpp"
#include "agnet/error.hpp"

namespace agnet::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 5> kCommands = {"synth", "train", "extract", "eval", "gradcheck"};
constexpr double kGradCheckTolerance = 1e-3;

struct Invocation {
  std::string command;
  std::optional<fs::path> config_path;
  std::optional<fs::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

// Returns the exit code when parsing ends the run early.
std::optional<int> parse_flags(std::span<const std::string> args, Invocation& inv, std::ostream& out,
                               std::ostream& err) {
  CLI::App app{"agnet " + inv.command, "agnet"};
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "Config file of `key = value` lines");
  app.add_option("--out", out_dir, "Run directory (created; must be empty)");
  auto* seed_opt = app.add_option("--seed", seed, "Overrides the `seed` key");
  app.add_option("--set", inv.overrides, "Config override key=value (repeatable)")->allow_extra_args(false);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "agnet " << inv.command << ": " << e.what() << "\n\n" << usage();
    return kExitUsage;
  }
  if (!config_path.empty()) inv.config_path = config_path;
  if (!out_dir.empty()) inv.out_dir = out_dir;
  if (seed_opt->count() > 0) inv.seed = seed;
  return std::nullopt;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path make_run_dir(const Invocation& inv) {
  if (inv.out_dir) {
    if (fs::exists(*inv.out_dir) && !fs::is_empty(*inv.out_dir)) {
      throw IoError("output directory " + inv.out_dir->string() + " is not empty");
    }
    fs::create_directories(*inv.out_dir);
    return *inv.out_dir;
  }
  const char* env = std::getenv("AGNET_OUT");
  const fs::path root = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
  const std::string base = inv.command + "-" + timestamp();
  fs::path dir = root / base;
  for (int n = 1; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
  fs::create_directories(dir);
  return dir;
}

const std::string& require_key(const Config& config, const std::string& key) {
  const std::string& value = config.get(key);
  if (value.empty()) throw ConfigError("config key '" + key + "' must be set for this command");
  return value;
}

struct LoadedData {
  Dataset dataset;
  std::vector<Tensor<float>> images;
};

LoadedData load_data(const Config& config) {
  const fs::path manifest = require_key(config, "data.manifest");
  const std::string& root = config.get("data.image_root");
  LoadedData data{load_manifest(manifest), {}};
  const std::vector<Image> images =
      load_images(data.dataset, root.empty() ? manifest.parent_path() : fs::path(root));
  data.images.reserve(images.size());
  for (const Image& image : images) data.images.push_back(to_tensor(image));
  return data;
}

void require_input_side(const ModelConfig& model, std::span<const Tensor<float>> images) {
  for (const auto& image : images) {
    if (image.dim(1) != model.input_side() || image.dim(2) != model.input_side()) {
      throw ConfigError("images are " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)) +
                        " but the model expects " + std::to_string(model.input_side()) + "x" +
                        std::to_string(model.input_side()) +
                        " (model.spatial_size * 2^len(model.backbone_channels))");
    }
  }
}

int cmd_synth(const Config& config, const fs::path& run_dir, std::ostream& out) {
  const SyntheticData data = generate_synthetic(synthetic_spec_from(config));
  write_synthetic(run_dir, data);
  out << "wrote " << data.dataset.size() << " images to " << (run_dir / "manifest.csv").string() << '\n';
  const double fraction = config.get_double("synth.train_fraction");
  if (fraction > 0.0) {
    const auto [train, test] = split_train_test(data.dataset, fraction, config.get_u64("seed"));
    write_manifest(run_dir / "train.csv", train.records);
    write_manifest(run_dir / "test.csv", test.records);
    out << "split: " << train.size() << " train / " << test.size() << " test images\n";
  }
  return kExitOk;
}

int cmd_train(const Config& config, const fs::path& run_dir, std::ostream& out) {
  LoadedData loaded = load_data(config);
  const TrainingSet data = TrainingSet::build(std::move(loaded.dataset), std::move(loaded.images));
  const ModelConfig model_config = model_config_for(data, model_config_from(config));
  require_input_side(model_config, data.images);
  const TrainConfig train_config = train_config_from(config);
  Model model = build_model(model_config);

  FitOptions options;
  options.checkpoint_dir = run_dir / "checkpoints";
  options.log_path = run_dir / "train_log.csv";
  if (const std::string& resume = config.get("train.resume"); !resume.empty()) options.resume_from = resume;
  const int steps = train_config.steps_per_epoch(data.dataset.size());
  options.on_step = [&](const TrainLogEntry& e) {
    if ((e.step + 1) % steps != 0) return;
    out << "epoch " << e.epoch + 1 << "/" << train_config.total_epochs << "  lr " << e.lr << "  loss "
        << e.loss_total << '\n';
  };
  const FitResult result = fit(model, data, train_config, options);
  out << "trained " << result.epochs_completed << " epochs; checkpoints in "
      << options.checkpoint_dir.string() << '\n';
  return kExitOk;
}

int cmd_extract(const Config& config, const fs::path& run_dir, std::ostream& out) {
  const LoadedData data = load_data(config);
  const std::string& checkpoint = config.get("extract.checkpoint");
  Model model = [&] {
    if (!checkpoint.empty()) return restore_model(read_checkpoint(checkpoint));
    // Untrained reference model with the dataset's label spaces.
    ModelConfig mc = model_config_from(config);
    mc.num_identities = static_cast<int>(data.dataset.identities().size());
    mc.num_colors = data.dataset.num_colors;
    mc.num_types = data.dataset.num_types;
    return build_model(mc);
  }();
  require_input_side(model.config(), data.images);
  const FeatureSet features = extract_features(model, data.images, data.dataset.records,
                                               fusion_config_from(config),
                                               parse_feature_mode(config.get("extract.feature")));
  const fs::path path = run_dir / "features.agnf";
  write_features(path, features);
  out << "wrote " << features.size() << " x " << features.dim << " features to " << path.string() << '\n';
  return kExitOk;
}

int cmd_eval(const Config& config, const fs::path& run_dir, std::ostream& out) {
  const FeatureSet features = read_features(require_key(config, "eval.features"));
  const EvalOptions options = eval_options_from(config);
  EvalReport report;
  if (const std::string& query_path = config.get("eval.query_features"); !query_path.empty()) {
    report = evaluate(read_features(query_path), features, options);
  } else if (options.protocol == Protocol::kVehicleId) {
    const ProtocolSplit split =
        vehicleid_protocol(features.meta, config.get_int("eval.gallery_size"), options.seed);
    report = evaluate(features.select(split.query_rows), features.select(split.gallery_rows), options);
  } else {
    report = evaluate(features, features, options);
  }
  write_report_text(run_dir / "report.txt", report);
  write_report_csv(run_dir / "report.csv", report);
  out << std::fixed << std::setprecision(4) << "protocol " << report.protocol << "  queries "
      << report.num_queries << "  gallery " << report.num_gallery << '\n'
      << "mAP " << report.map << "  rank-1 " << report.rank(1) << "  rank-5 " << report.rank(5) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Config& config, const fs::path& run_dir, std::ostream& out) {
  const std::vector<GradCheckResult> results = run_gradchecks(gradcheck_options_from(config));
  std::ofstream file(run_dir / "gradcheck.txt");
  bool ok = true;
  for (const auto& r : results) {
    std::ostringstream line;
    line << std::left << std::setw(28) << r.op << " instances " << std::setw(4) << r.instances
         << " max_rel_err " << std::scientific << std::setprecision(3) << r.max_relative_error;
    if (r.skipped_kinks > 0) line << " (skipped " << r.skipped_kinks << " relu kinks)";
    const bool pass = r.max_relative_error < kGradCheckTolerance;
    line << (pass ? "  ok" : "  FAIL");
    ok = ok && pass;
    out << line.str() << '\n';
    file << line.str() << '\n';
  }
  return ok ? kExitOk : kExitFailure;
}

int dispatch(const Invocation& inv, std::ostream& out) {
  Config config = load_config(inv.config_path, inv.overrides);
  if (inv.seed) config.set("seed", std::to_string(*inv.seed));
  const fs::path run_dir = make_run_dir(inv);
  {
    std::ofstream echo(run_dir / kResolvedConfigFile);
    echo << "# agnet " << inv.command << '\n' << config.to_text();
    if (!echo) throw IoError("cannot write " + (run_dir / kResolvedConfigFile).string());
  }
  out << "run directory: " << run_dir.string() << '\n';
  if (inv.command == "synth") return cmd_synth(config, run_dir, out);
  if (inv.command == "train") return cmd_train(config, run_dir, out);
  if (inv.command == "extract") return cmd_extract(config, run_dir, out);
  if (inv.command == "eval") return cmd_eval(config, run_dir, out);
  return cmd_gradcheck(config, run_dir, out);
}

}  // namespace

std::string usage() {
  return "usage: agnet <command> [--config PATH] [--out DIR] [--seed N] [--set key=value]...\n"
         "\n"
         "commands:\n"
         "  synth      render a synthetic vehicle dataset (images/ + manifest.csv)\n"
         "  train      train on data.manifest; writes checkpoints/ and train_log.csv\n"
         "  extract    write retrieval features for data.manifest\n"
         "  eval       score eval.features (mAP, CMC) under eval.protocol\n"
         "  gradcheck  compare analytic and finite-difference gradients\n"
         "\n"
         "Outputs go to --out DIR, or a fresh directory under $AGNET_OUT (default ./runs).\n";
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << usage();
    return kExitUsage;
  }
  if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    out << usage();
    return kExitOk;
  }
  const bool known = std::find(kCommands.begin(), kCommands.end(), args[0]) != kCommands.end();
  if (!known) {
    err << "agnet: unknown command '" << args[0] << "'\n\n" << usage();
    return kExitUsage;
  }
  Invocation inv;
  inv.command = args[0];
  if (const auto early = parse_flags(args.subspan(1), inv, out, err)) return *early;
  try {
    return dispatch(inv, out);
  } catch (const ConfigError& e) {
    err << "agnet " << inv.command << ": config error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "agnet " << inv.command << ": " << e.what() << '\n';
  }
  return kExitFailure;
}

}  // namespace agnet::cli

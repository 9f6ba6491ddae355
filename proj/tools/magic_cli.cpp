#include "magic/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace magic;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir = "run";

  // reconstruct / evaluate / export_graph
  std::string checkpoint;
  std::string sinogram;
  std::string input;
  std::string pred;
  std::string ref;
  std::string image;
};

class Run {
 public:
  Run(const std::string& command, const Options& opt, int argc, char** argv) : command_(command), opt_(opt) {
    std::vector<std::string> overrides = opt.overrides;
    if (opt.seed) overrides.push_back("seed=" + std::to_string(*opt.seed));
    if (opt.threads) overrides.push_back("threads=" + std::to_string(*opt.threads));
    if (opt.config_path.empty()) {
      loaded_ = config_from_table(ConfigTable{}, overrides);
    } else {
      loaded_ = load_config(opt.config_path, overrides);
    }
    set_num_threads(cfg().threads);

    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) throw IoError("cannot create run directory " + opt.out_dir + ": " + ec.message());
    log_.open(path("run.log"));
    if (!log_) throw IoError("cannot write " + path("run.log"));

    std::ofstream conf(path("config.toml"));
    conf << cfg().to_toml();
    if (!conf) throw IoError("cannot write " + path("config.toml"));
    std::ofstream cmd(path("command.txt"));
    for (int i = 0; i < argc; ++i) cmd << (i ? " " : "") << argv[i];
    cmd << "\n";

    log("command " + command);
    log("config " + (opt.config_path.empty() ? std::string("<preset ") + cfg().preset + ">" : opt.config_path));
    const auto echo = parse_toml(cfg().to_toml());
    for (const auto& key : loaded_.defaults_applied)
      if (echo.has(key)) log("default " + key + " = " + echo.at(key).to_toml());
  }

  const ExperimentConfig& cfg() const { return loaded_.config; }
  ExperimentConfig& mutable_cfg() { return loaded_.config; }
  std::string path(const std::string& name) const { return (fs::path(opt_.out_dir) / name).string(); }

  void log(const std::string& line) {
    std::cout << line << std::endl;
    log_ << line << std::endl;
  }

 private:
  std::string command_;
  Options opt_;
  LoadedConfig loaded_;
  std::ofstream log_;
};

std::string tier_dir(const std::string& tier) {
  std::string s = "dose_";
  for (char c : tier)
    if (c != '%') s += c;
  return s;
}

void log_summary(Run& run, const std::vector<MetricRow>& rows) {
  for (const auto& s : summarize(rows)) {
    std::ostringstream os;
    os.precision(6);
    os << "summary " << s.method << " psnr " << s.psnr_mean << " +- " << s.psnr_sd << " ssim " << s.ssim_mean
       << " +- " << s.ssim_sd << " n " << s.count;
    run.log(os.str());
  }
}

int cmd_simulate(Run& run) {
  const auto& cfg = run.cfg();
  Projector proj(cfg.geometry);
  const fs::path root = run.path("");
  Dataset manifest;
  bool first = true;
  for (const auto& tier : cfg.dose_tiers) {
    DoseModel dose = tier == cfg.dose ? cfg.dose_model : DoseModel::preset(tier, cfg.dose_model.seed);
    if (tier != cfg.dose) dose.electronic_variance = cfg.dose_model.electronic_variance;
    const auto data = simulate_data(cfg, proj, dose);
    const fs::path dir = root / tier_dir(tier);
    fs::create_directories(dir);
    for (const auto& it : data.items) {
      if (first) {
        save_image(it.truth, (root / (it.id + "_truth.raw")).string(), cfg.geometry.pixel_size);
        save_png(it.truth, (root / (it.id + "_truth.png")).string(), cfg.window, cfg.hu);
        save_sinogram(it.clean, (root / (it.id + "_clean.raw")).string());
        DatasetItem d;
        d.id = it.id;
        d.path = it.id + "_truth.raw";
        d.train = it.train;
        d.labeled = it.labeled;
        manifest.items.push_back(d);
      }
      save_sinogram(it.noisy, (dir / (it.id + "_noisy.raw")).string(), tier);
      save_image(it.fbp, (dir / (it.id + "_fbp.raw")).string(), cfg.geometry.pixel_size, tier);
      save_png(it.fbp, (dir / (it.id + "_fbp.png")).string(), cfg.window, cfg.hu);
    }
    run.log("tier " + tier + " I0 " + std::to_string(dose.incident_photons) + " items " +
            std::to_string(data.items.size()));
    first = false;
  }
  write_manifest(manifest, run.path("manifest.json"));
  return 0;
}

int cmd_train(Run& run) {
  auto& cfg = run.mutable_cfg();
  cfg.training.divergence_checkpoint = run.path("diverged.bin");
  Projector proj(cfg.geometry);
  const auto data = simulate_data(cfg, proj);
  int labeled = 0, training = 0;
  for (const auto& it : data.items) {
    training += it.train;
    labeled += it.train && it.labeled;
  }
  run.log("train items " + std::to_string(training) + " labeled " + std::to_string(labeled) + " test " +
          std::to_string(data.items.size() - training));

  std::vector<LossRecord> curve;
  const std::string curve_path = run.path("loss_curve.csv");
  const auto model = train_model(cfg, data, [&](const LossRecord& r) {
    curve.push_back(r);
    write_loss_curve_csv(curve, curve_path);
    std::ostringstream os;
    os.precision(8);
    os << "epoch " << r.epoch << " step " << r.step << " mse " << r.mse_term << " proj " << r.proj_term << " total "
       << r.total;
    run.log(os.str());
  });
  write_loss_curve_csv(model.result.curve, curve_path);
  model.net.save(run.path("model.bin"));
  write_checkpoint_sidecar(run.path("model.json"), cfg, model.result);
  run.log("checkpoint " + run.path("model.bin") + " steps " + std::to_string(model.result.steps));

  const std::string method = cfg.network.use_graph ? "magic" : "learn";
  const auto rows = evaluate_test_set(cfg, data, &model.net, method, run.path("images"));
  write_metrics_csv(rows, run.path("metrics.csv"));
  log_summary(run, rows);

  const auto tests = data.test_items();
  if (cfg.network.use_graph && !tests.empty()) {
    const auto graph = stage_graph(tests.front()->fbp.values, model.net.layout(), cfg.network.neighbors);
    write_graph_csv(graph, run.path("graph_edges.csv"), run.path("graph_degrees.csv"));
  }
  return 0;
}

int cmd_reconstruct(Run& run, const Options& opt) {
  if (opt.checkpoint.empty()) throw ConfigError("reconstruct needs --checkpoint");
  if (opt.sinogram.empty()) throw ConfigError("reconstruct needs --sinogram");
  const auto net = MagicNetwork::load(opt.checkpoint);
  const auto sino = load_sinogram(opt.sinogram);
  if (!sino.matches(net.geometry()))
    throw InputError("sinogram is " + std::to_string(sino.views()) + "x" + std::to_string(sino.detectors()) +
                     " but the checkpoint geometry expects " + std::to_string(net.geometry().n_views) + "x" +
                     std::to_string(net.geometry().n_detectors));
  const ImageGrid x0 =
      opt.input.empty() ? fbp_reconstruct(sino, net.geometry(), run.cfg().fbp_filter) : load_image(opt.input);
  const auto out = reconstruct(net, sino, x0);
  save_image(out, run.path("reconstruction.raw"), net.geometry().pixel_size);
  save_png(out, run.path("reconstruction.png"), run.cfg().window, run.cfg().hu);
  run.log("wrote " + run.path("reconstruction.raw"));
  return 0;
}

int cmd_evaluate(Run& run, const Options& opt) {
  const auto& cfg = run.cfg();
  if (!opt.pred.empty() || !opt.ref.empty()) {
    if (opt.pred.empty() || opt.ref.empty()) throw ConfigError("evaluate needs both --pred and --ref");
    const auto pred = load_image(opt.pred);
    const auto ref = load_image(opt.ref);
    if (pred.rows() != ref.rows() || pred.cols() != ref.cols()) throw InputError("--pred and --ref differ in size");
    const auto row = measure(fs::path(opt.pred).stem().string(), "pred", pred, ref, cfg);
    write_metrics_csv({row}, run.path("metrics.csv"));
    ImageGrid diff(Matrix((pred.values - ref.values).cwiseAbs()));
    if (cfg.hu) diff.values *= cfg.hu->slope;
    save_png(diff, run.path("difference.png"), cfg.diff_window);
    log_summary(run, {row});
    return 0;
  }
  if (opt.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint or --pred/--ref");
  const auto net = MagicNetwork::load(opt.checkpoint);
  Projector proj(cfg.geometry);
  const auto data = simulate_data(cfg, proj);
  const std::string method = net.config().use_graph ? "magic" : "learn";
  const auto rows = evaluate_test_set(cfg, data, &net, method, run.path("images"));
  write_metrics_csv(rows, run.path("metrics.csv"));
  log_summary(run, rows);
  return 0;
}

int cmd_sweep(Run& run) {
  const auto rows = run_sweep(run.cfg(), [&](const std::string& line) { run.log(line); });
  write_sweep_csv(rows, run.cfg().sweep_parameter, run.path("sweep.csv"));
  return 0;
}

int cmd_export_graph(Run& run, const Options& opt) {
  const auto& cfg = run.cfg();
  ImageGrid img;
  if (!opt.image.empty()) {
    img = load_image(opt.image);
  } else {
    Projector proj(cfg.geometry);
    const auto data = simulate_data(cfg, proj);
    img = data.items.front().fbp;
  }
  const auto& n = cfg.network;
  const auto layout = PatchLayout::make(img.rows(), img.cols(), n.patch_rows, n.patch_cols, n.step_rows, n.step_cols);
  const auto graph = stage_graph(img.values, layout, n.neighbors);
  write_graph_csv(graph, run.path("graph_edges.csv"), run.path("graph_degrees.csv"));
  run.log("nodes " + std::to_string(layout.nodes()));
  return 0;
}

void print_error(const std::string& kind, int code, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-dose CT reconstruction with unrolled graph networks"};
  app.require_subcommand(1, 1);
  Options opt;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "TOML configuration file");
    sub->add_option("--set", opt.overrides, "override, table.key=value (repeatable)");
    sub->add_option("--seed", opt.seed, "master seed");
    sub->add_option("--out-dir", opt.out_dir, "run directory")->capture_default_str();
    sub->add_option("--threads", opt.threads, "worker threads");
  };
  auto* simulate = app.add_subcommand("simulate", "phantoms to clean and noisy sinograms and FBP per dose tier");
  auto* train = app.add_subcommand("train", "train a network and evaluate it on the test split");
  auto* recon = app.add_subcommand("reconstruct", "checkpoint + sinogram to image");
  auto* evaluate = app.add_subcommand("evaluate", "metrics CSV and difference images");
  auto* sweep = app.add_subcommand("sweep", "train and evaluate over a parameter grid");
  auto* validate = app.add_subcommand("validate_config", "check a configuration and print applied defaults");
  auto* graph = app.add_subcommand("export_graph", "patch graph edge list and degree histogram");
  for (auto* s : {simulate, train, recon, evaluate, sweep, validate, graph}) common(s);
  recon->add_option("--checkpoint", opt.checkpoint, "trained model");
  recon->add_option("--sinogram", opt.sinogram, "measured sinogram (.raw)");
  recon->add_option("--input", opt.input, "initial image (.raw); FBP when omitted");
  evaluate->add_option("--checkpoint", opt.checkpoint, "trained model");
  evaluate->add_option("--pred", opt.pred, "prediction (.raw)");
  evaluate->add_option("--ref", opt.ref, "reference (.raw)");
  graph->add_option("--image", opt.image, "image (.raw); first simulated FBP when omitted");

  if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
    print_error("usage", 2, std::string("unknown command '") + argv[1] + "'");
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    print_error("usage", 2, msg);
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    Run run(name, opt, argc, argv);
    if (sub == validate) {
      run.log("configuration ok");
      return 0;
    }
    if (sub == simulate) return cmd_simulate(run);
    if (sub == train) return cmd_train(run);
    if (sub == recon) return cmd_reconstruct(run, opt);
    if (sub == evaluate) return cmd_evaluate(run, opt);
    if (sub == sweep) return cmd_sweep(run);
    if (sub == graph) return cmd_export_graph(run, opt);
  } catch (const ConfigError& e) {
    print_error("config", 2, e.what());
    return 2;
  } catch (const IoError& e) {
    print_error("io", 4, e.what());
    return 4;
  } catch (const DivergenceError& e) {
    print_error("divergence", 3, e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("runtime", 3, e.what());
    return 3;
  }
  return 0;
}

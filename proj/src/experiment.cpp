#include "magic/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace magic {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream * 0x100000001B3ull + index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t { kPhantomStream = 1, kNoiseStream = 2, kSplitStream = 3, kInitStream = 4 };

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace

std::vector<Sample> SimulatedData::train_samples() const {
  std::vector<Sample> out;
  for (const auto& it : items) {
    if (!it.train) continue;
    Sample s;
    s.id = it.id;
    s.sinogram = it.noisy;
    s.input = it.fbp;
    if (it.labeled) s.label = it.truth;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const SimulatedItem*> SimulatedData::test_items() const {
  std::vector<const SimulatedItem*> out;
  for (const auto& it : items)
    if (!it.train) out.push_back(&it);
  return out;
}

std::vector<DatasetItem> ground_truth(const ExperimentConfig& cfg) {
  const auto& g = cfg.geometry;
  std::vector<DatasetItem> items;
  if (!cfg.image_dir.empty()) {
    items = load_image_directory(cfg.image_dir);
    if (items.empty()) throw InputError("no .raw images in " + cfg.image_dir);
    for (auto& it : items) {
      if (!it.image.matches(g))
        throw InputError(it.path + " is " + std::to_string(it.image.rows()) + "x" + std::to_string(it.image.cols()) +
                         " but the geometry expects " + std::to_string(g.image_rows) + "x" +
                         std::to_string(g.image_cols));
      it.image.values *= cfg.mu_scale;
    }
    return items;
  }
  const int total = cfg.n_train + cfg.n_test;
  for (int i = 0; i < total; ++i) {
    DatasetItem it;
    std::ostringstream id;
    id << "img" << std::setw(4) << std::setfill('0') << i;
    it.id = id.str();
    it.image = make_phantom(cfg.phantom, g.image_rows, g.image_cols, derive_seed(cfg.seed, kPhantomStream, i));
    it.image.values *= cfg.mu_scale;
    items.push_back(std::move(it));
  }
  return items;
}

SimulatedData simulate_data(const ExperimentConfig& cfg, const Projector& proj, const DoseModel& dose) {
  auto truth = ground_truth(cfg);
  const double train_fraction = static_cast<double>(cfg.n_train) / (cfg.n_train + cfg.n_test);
  Dataset ds = split_dataset(std::move(truth), train_fraction, cfg.labeled_fraction,
                             derive_seed(cfg.seed, kSplitStream, 0));
  // Keep a stable id order so outputs do not depend on the shuffle.
  std::sort(ds.items.begin(), ds.items.end(), [](const DatasetItem& a, const DatasetItem& b) { return a.id < b.id; });

  SimulatedData out;
  out.items.resize(ds.items.size());
  parallel_for(0, static_cast<int>(ds.items.size()), [&](int i) {
    const auto& src = ds.items[i];
    auto& it = out.items[i];
    it.id = src.id;
    it.truth = src.image;
    it.train = src.train;
    it.labeled = src.labeled;
    it.clean = proj.forward(it.truth);
    DoseModel m = dose;
    m.seed = derive_seed(dose.seed, kNoiseStream, i);
    it.noisy = simulate_lowdose(it.clean, m);
    it.fbp = fbp_reconstruct(it.noisy, proj.geometry(), cfg.fbp_filter);
  });
  return out;
}

MetricRow measure(const std::string& id, const std::string& method, const ImageGrid& pred, const ImageGrid& ref,
                  const ExperimentConfig& cfg) {
  MetricRow r;
  r.id = id;
  r.method = method;
  const double range = dynamic_range(ref);
  const double peak = cfg.psnr_peak > 0.0 ? cfg.psnr_peak : (range > 0.0 ? range : 1.0);
  r.psnr = psnr(pred, ref, peak);
  SsimOptions opts;
  opts.dynamic_range = cfg.psnr_peak > 0.0 ? cfg.psnr_peak : 0.0;
  r.ssim = ssim(pred, ref, opts);
  for (const auto& roi : cfg.rois) r.rois.push_back(roi_stats(pred, roi));
  return r;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  const std::size_t nroi = rows.empty() ? 0 : rows.front().rois.size();
  os << "id,method,psnr,ssim";
  for (std::size_t k = 0; k < nroi; ++k) os << ",roi" << k << "_mean,roi" << k << "_sd";
  os << "\n";
  for (const auto& r : rows) {
    os << r.id << ',' << r.method << ',';
    if (r.psnr)
      os << *r.psnr;
    else
      os << "inf";
    os << ',' << r.ssim;
    for (const auto& s : r.rois) os << ',' << s.mean << ',' << s.sd;
    os << "\n";
  }
  return os.str();
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << metrics_csv(rows);
  if (!os) throw IoError("failed writing " + path);
}

std::vector<MethodSummary> summarize(const std::vector<MetricRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  const auto mean_sd = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
  };
  std::vector<MethodSummary> out;
  for (const auto& m : order) {
    std::vector<double> p, s;
    for (const auto* r : groups[m]) {
      if (r->psnr) p.push_back(*r->psnr);
      s.push_back(r->ssim);
    }
    MethodSummary sum;
    sum.method = m;
    sum.count = static_cast<int>(groups[m].size());
    mean_sd(p, sum.psnr_mean, sum.psnr_sd);
    mean_sd(s, sum.ssim_mean, sum.ssim_sd);
    out.push_back(sum);
  }
  return out;
}

TrainedModel train_model(const ExperimentConfig& cfg, const SimulatedData& data,
                         const std::function<void(const LossRecord&)>& on_epoch) {
  TrainedModel m{MagicNetwork::initialized(cfg.network, cfg.geometry, derive_seed(cfg.seed, kInitStream, 0)), {}};
  const auto samples = data.train_samples();
  TrainConfig tc = cfg.training;
  tc.seed = cfg.seed;
  m.result = train(m.net, samples, tc, on_epoch);
  return m;
}

ImageGrid reconstruct(const MagicNetwork& net, const Sinogram& sino, const ImageGrid& fbp_input) {
  return forward_pass(net, fbp_input, sino).output;
}

std::vector<MetricRow> evaluate_test_set(const ExperimentConfig& cfg, const SimulatedData& data,
                                         const MagicNetwork* net, const std::string& method,
                                         const std::string& out_dir) {
  const auto tests = data.test_items();
  std::vector<ImageGrid> outputs(tests.size());
  if (net) {
    parallel_for(0, static_cast<int>(tests.size()),
                 [&](int i) { outputs[i] = reconstruct(*net, tests[i]->noisy, tests[i]->fbp); });
  }
  if (!out_dir.empty()) ensure_dir(out_dir);
  const auto write = [&](const std::string& name, const ImageGrid& img, const DisplayWindow& w) {
    save_image(img, (fs::path(out_dir) / (name + ".raw")).string(), cfg.geometry.pixel_size, cfg.dose);
    save_png(img, (fs::path(out_dir) / (name + ".png")).string(), w, cfg.hu);
  };
  const auto abs_diff = [&](const ImageGrid& a, const ImageGrid& b) {
    ImageGrid d(Matrix((a.values - b.values).cwiseAbs()));
    // Differences are displayed without the HU offset.
    if (cfg.hu) d.values *= cfg.hu->slope;
    return d;
  };
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const auto* it = tests[i];
    rows.push_back(measure(it->id, "fbp", it->fbp, it->truth, cfg));
    if (net) rows.push_back(measure(it->id, method, outputs[i], it->truth, cfg));
    if (!out_dir.empty()) {
      write(it->id + "_truth", it->truth, cfg.window);
      write(it->id + "_fbp", it->fbp, cfg.window);
      const ImageGrid dfbp = abs_diff(it->fbp, it->truth);
      save_png(dfbp, (fs::path(out_dir) / (it->id + "_fbp_diff.png")).string(), cfg.diff_window);
      if (net) {
        write(it->id + "_" + method, outputs[i], cfg.window);
        const ImageGrid dnet = abs_diff(outputs[i], it->truth);
        save_png(dnet, (fs::path(out_dir) / (it->id + "_" + method + "_diff.png")).string(), cfg.diff_window);
      }
    }
  }
  return rows;
}

void write_checkpoint_sidecar(const std::string& path, const ExperimentConfig& cfg, const TrainResult& result) {
  nlohmann::json j;
  j["format"] = "MAGICNET";
  j["version"] = 1;
  j["seed"] = cfg.seed;
  j["blocks"] = cfg.network.blocks;
  j["coarse_blocks"] = cfg.network.coarse_blocks;
  j["use_graph"] = cfg.network.use_graph;
  j["loss"] = to_string(cfg.training.loss);
  j["labeled_fraction"] = cfg.labeled_fraction;
  j["dose"] = cfg.dose;
  j["incident_photons"] = cfg.dose_model.incident_photons;
  j["steps"] = result.steps;
  j["epochs_completed"] = result.curve.size();
  j["initial_loss"] = result.initial_loss;
  j["final_loss"] = result.final_loss;
  j["config"] = cfg.to_toml();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << j.dump(2) << "\n";
}

void write_graph_csv(const SparseGraph& graph, const std::string& edges_path, const std::string& histogram_path) {
  std::ofstream es(edges_path);
  if (!es) throw IoError("cannot write " + edges_path);
  es << "i,j,weight\n" << std::setprecision(10);
  std::map<int, int> hist;
  for (int i = 0; i < graph.weights.outerSize(); ++i) {
    int deg = 0;
    for (SparseMatrix::InnerIterator it(graph.weights, i); it; ++it) {
      if (it.value() == 0.0) continue;
      ++deg;
      if (i < it.col()) es << i << ',' << it.col() << ',' << it.value() << "\n";
    }
    ++hist[deg];
  }
  std::ofstream hs(histogram_path);
  if (!hs) throw IoError("cannot write " + histogram_path);
  hs << "degree,count\n";
  for (const auto& [d, c] : hist) hs << d << ',' << c << "\n";
  if (!es || !hs) throw IoError("failed writing graph export");
}

ExperimentConfig with_sweep_value(const ExperimentConfig& cfg, const std::string& parameter, double value) {
  ExperimentConfig c = cfg;
  const int iv = static_cast<int>(std::lround(value));
  if (parameter == "patch") {
    c.network.patch_rows = c.network.patch_cols = iv;
    c.network.step_rows = std::min(c.network.step_rows, iv);
    c.network.step_cols = std::min(c.network.step_cols, iv);
  } else if (parameter == "blocks") {
    // N_t sweeps keep the coarse/fine split at one half.
    c.network.blocks = iv;
    c.network.coarse_blocks = std::max(1, iv / 2);
  } else if (parameter == "coarse_blocks") {
    c.network.coarse_blocks = iv;
  } else if (parameter == "graph_width") {
    c.network.graph_width = iv;
  } else if (parameter == "channels") {
    c.network.channels = iv;
  } else if (parameter == "neighbors") {
    c.network.neighbors = iv;
  } else if (parameter == "labeled_fraction") {
    c.labeled_fraction = value;
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter + "'");
  }
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& log) {
  std::vector<ExperimentConfig> configs;
  for (double v : cfg.sweep_values) configs.push_back(with_sweep_value(cfg, cfg.sweep_parameter, v));
  Projector proj(cfg.geometry);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const auto data = simulate_data(c, proj);
    auto model = train_model(c, data);
    const std::string method = c.network.use_graph ? "magic" : "learn";
    const auto summary = summarize(evaluate_test_set(c, data, &model.net, method));
    SweepRow row;
    row.value = cfg.sweep_values[i];
    for (const auto& s : summary)
      if (s.method == method) row.summary = s;
    rows.push_back(row);
    if (log)
      log(cfg.sweep_parameter + "=" + format_number(row.value) + " psnr=" + format_number(row.summary.psnr_mean) +
          " ssim=" + format_number(row.summary.ssim_mean) + " steps=" + std::to_string(model.result.steps));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& parameter, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << std::setprecision(10) << parameter << ",psnr,psnr_sd,ssim,ssim_sd\n";
  for (const auto& r : rows)
    os << r.value << ',' << r.summary.psnr_mean << ',' << r.summary.psnr_sd << ',' << r.summary.ssim_mean << ','
       << r.summary.ssim_sd << "\n";
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace magic

// One PASS/FAIL line per criterion. Usage: acceptance [criterion ...]
#include "oracles.hpp"

#include "magic/experiment.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

using namespace magic;

namespace {

// Tolerances.
constexpr double kAdjointTol = 1e-6;
constexpr double kAdjointSeconds = 60.0;
constexpr double kDiscTol = 0.01;
constexpr double kFbpGainDb = 3.0;
constexpr double kFirstOrderTol = 1e-12;
constexpr double kChebyshevTol = 1e-9;
constexpr double kEigenSlack = 1e-9;
constexpr double kPatchTol = 1e-12;
constexpr double kGradientTol = 1e-5;
constexpr double kGradientSeconds = 300.0;
constexpr double kNoiseSigmas = 3.0;
constexpr double kMagicOverFbpDb = 4.0;
constexpr double kMagicVsLearnDb = 0.1;
constexpr int kMaxSteps = 2000;
constexpr double kExperimentSeconds = 45.0 * 60.0;
constexpr double kSemiGapDb = 2.0;

// Desk experiment budget.
constexpr int kChannels = 16;
constexpr int kEpochs = 100;
constexpr double kLearningRate = 1e-4;
constexpr std::uint64_t kSeed = 2024;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Outcome adjoint() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int size : {64, 128}) {
    const auto g = ScanGeometry::desk(size, 180);
    Projector p(g);
    std::mt19937_64 rng(1000 + size);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix x = oracle::random_matrix(size, size, rng);
      const Matrix y = oracle::random_matrix(g.n_views, g.n_detectors, rng);
      Matrix ax, aty;
      p.forward(x, ax);
      p.back(y, aty);
      const double lhs = (ax.array() * y.array()).sum();
      const double rhs = (x.array() * aty.array()).sum();
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kAdjointTol && secs < kAdjointSeconds,
          "max rel err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome disc_projection() {
  const auto g = ScanGeometry::desk(128, 36);
  const double radius = 0.4 * g.image_cols * g.pixel_size;
  const Matrix img = oracle::disc(g, radius);
  Projector p(g);
  Matrix s;
  p.forward(img, s);
  double worst = 0.0;
  // Both detectors straddling the centre see the central ray.
  const int centre = g.n_detectors / 2;
  for (int v = 0; v < g.n_views; ++v)
    for (int det : {centre - 1, centre}) {
      const double ref = oracle::detector_value(img, g, v, det);
      worst = std::max(worst, std::abs(s(v, det) - ref) / ref);
    }
  return {worst <= kDiscTol, "max rel err " + fmt(worst)};
}

Outcome fbp_views() {
  const int size = 128;
  const ImageGrid truth = make_phantom(PhantomKind::SheppLogan, size, size);
  std::vector<double> values;
  for (int views : {90, 180, 360}) {
    const auto g = ScanGeometry::desk(size, views);
    Projector p(g);
    const auto rec = fbp_reconstruct(p.forward(truth), g, FbpFilter::Ramp);
    values.push_back(psnr(rec, truth).value());
  }
  const bool ok = values[0] < values[1] && values[1] < values[2] && values[2] >= values[0] + kFbpGainDb;
  return {ok, "PSNR " + fmt(values[0]) + " / " + fmt(values[1]) + " / " + fmt(values[2]) + " dB"};
}

SparseMatrix path_laplacian(int n) {
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i + 1 < n; ++i) {
    t.emplace_back(i, i + 1, 1.0);
    t.emplace_back(i + 1, i, 1.0);
  }
  SparseMatrix w(n, n);
  w.setFromTriplets(t.begin(), t.end());
  return normalized_laplacian(SparseGraph::from_weights(w));
}

Outcome graph_suite() {
  double first_order = 0.0, cheb = 0.0, eig_lo = 0.0, eig_hi = 0.0;
  for (int t = 0; t < 10; ++t) {
    const int n = 16 + 5 * t;  // up to 61 nodes
    std::mt19937_64 rng(300 + t);
    const auto g = build_graph(oracle::random_matrix(n, 5, rng), 4);
    const SparseMatrix lap = normalized_laplacian(g);

    // theta (I + D^-1/2 W D^-1/2) a against the order-1 filter (theta, -theta).
    const Matrix w(g.weights);
    const Vector is = g.degrees.cwiseSqrt().cwiseInverse();
    const Matrix a_hat = Matrix::Identity(n, n) + is.asDiagonal() * w * is.asDiagonal();
    const Vector a = oracle::random_matrix(n, 1, rng).col(0);
    const double theta = 0.5 + t;
    const Vector lhs = chebyshev_conv(a, lap, ChebyshevFilter{{theta, -theta}, 2.0});
    first_order = std::max(first_order, (lhs - theta * a_hat * a).cwiseAbs().maxCoeff() / std::max(1.0, theta));

    Vector lambda;
    Matrix u;
    symmetric_eigen(Matrix(lap), lambda, u);
    eig_lo = std::min(eig_lo, lambda.minCoeff());
    eig_hi = std::max(eig_hi, lambda.maxCoeff());

    // Polynomial filters against U g(Lambda) U^T.
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int order : {2, 5}) {
      ChebyshevFilter f;
      for (int k = 0; k <= order; ++k) f.coefficients.push_back(coef(rng));
      Vector gd(n);
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k <= order; ++k) s += f.coefficients[k] * chebyshev_polynomial(k, lambda(i) - 1.0);
        gd(i) = s;
      }
      cheb = std::max(cheb, (chebyshev_conv(a, lap, f) - spectral_conv_exact(a, Matrix(lap), gd)).cwiseAbs().maxCoeff());
    }
  }

  bool local = true;
  const int n = 25, centre = 12;
  const SparseMatrix lap = path_laplacian(n);
  for (int order = 0; order <= 8; ++order) {
    ChebyshevFilter f;
    for (int k = 0; k <= order; ++k) f.coefficients.push_back(1.0 + 0.25 * k);
    Vector impulse = Vector::Zero(n);
    impulse(centre) = 1.0;
    const Vector out = chebyshev_conv(impulse, lap, f);
    for (int i = 0; i < n; ++i)
      if (std::abs(i - centre) > order && out(i) != 0.0) local = false;
    if (order > 0 && out(centre + order) == 0.0) local = false;
  }

  const bool ok = first_order <= kFirstOrderTol && cheb <= kChebyshevTol && eig_lo >= -kEigenSlack &&
                  eig_hi <= 2.0 + kEigenSlack && local;
  return {ok, "first-order " + fmt(first_order) + ", chebyshev " + fmt(cheb) + ", eigenvalues [" + fmt(eig_lo) +
                  ", " + fmt(eig_hi, 12) + "], locality " + (local ? "exact" : "broken")};
}

Outcome patch_round_trip() {
  std::mt19937_64 rng(55);
  const Matrix img = oracle::random_matrix(45, 38, rng);
  double worst = 0.0;
  int layouts = 0;
  for (int patch = 4; patch <= 10; ++patch)
    for (int step = 1; step <= patch; ++step) {
      const auto layout = PatchLayout::make(45, 38, patch, patch, step, step);
      worst = std::max(worst, (assemble_patches(extract_patches(img, layout), layout) - img).cwiseAbs().maxCoeff());
      ++layouts;
    }
  return {worst <= kPatchTol, std::to_string(layouts) + " layouts, max abs err " + fmt(worst)};
}

// Relative error of the analytic gradient against central differences, per
// parameter tensor of every block.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto g = ScanGeometry::desk(16, 12);
  std::mt19937_64 rng(77);
  const ImageGrid x0(oracle::random_matrix(16, 16, rng, 0.0, 0.05));
  Projector proj(g);
  const Sinogram y = proj.forward(ImageGrid(oracle::random_matrix(16, 16, rng, 0.0, 0.05)));
  const Matrix weight = oracle::random_matrix(16, 16, rng);

  double worst = 0.0;
  int groups = 0;
  for (int blocks : {1, 2}) {
    for (bool graph : {true, false}) {
      NetworkConfig c;
      c.blocks = c.coarse_blocks = blocks;  // one stage: the graph depends only on x0
      c.channels = 4;
      c.patch_rows = c.patch_cols = 4;
      c.step_rows = c.step_cols = 2;
      c.neighbors = 4;
      c.graph_width = 6;
      c.use_graph = graph;
      c.zero_graph_output = false;
      c.activation = Activation::Relu;
      auto net = MagicNetwork::initialized(c, g, 90 + blocks);
      const auto objective = [&]() { return (forward_pass(net, x0, y).output.values.array() * weight.array()).sum(); };
      const auto fwd = forward_pass(net, x0, y);
      const Vector analytic = net.flatten_gradients(backward_pass(net, fwd.tape, ImageGrid(weight)));
      const Vector base = net.flatten();

      // Group boundaries follow the flatten order: alpha, w1, w2, w3, theta1, theta2.
      std::vector<std::size_t> sizes;
      for (int t = 0; t < net.size(); ++t) {
        const auto& b = net.block(t);
        sizes.push_back(1);
        for (const Matrix* m : {&b.spatial.w1, &b.spatial.w2, &b.spatial.w3, &b.graph.theta1, &b.graph.theta2})
          if (m->size() > 0) sizes.push_back(static_cast<std::size_t>(m->size()));
      }
      std::size_t offset = 0;
      for (std::size_t len : sizes) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = offset; i < offset + len; ++i) {
          const double h = 1e-6 * std::max(1.0, std::abs(base(i)));
          Vector v = base;
          v(i) += h;
          net.assign(v);
          const double fp = objective();
          v(i) = base(i) - h;
          net.assign(v);
          const double fm = objective();
          const double fd = (fp - fm) / (2.0 * h);
          num += (fd - analytic(i)) * (fd - analytic(i));
          den += fd * fd;
        }
        net.assign(base);
        worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
        offset += len;
        ++groups;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kGradientTol && secs < kGradientSeconds,
          std::to_string(groups) + " groups, worst rel err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome baseline_containment() {
  const auto g = ScanGeometry::desk(32, 30);
  Projector proj(g);
  NetworkConfig c;
  c.blocks = c.coarse_blocks = 1;
  c.channels = 6;
  auto net = MagicNetwork::initialized(c, g, 5);
  net.mutable_block(0).graph.theta2.setZero();
  const auto& layout = net.layout();
  int identical = 0;
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const ImageGrid x(oracle::random_matrix(32, 32, rng, 0.0, 0.05));
    const Sinogram y(oracle::random_matrix(g.n_views, g.n_detectors, rng, 0.0, 2.0));
    const auto graph = stage_graph(x.values, layout, c.neighbors);
    const auto a = magic_block(x, y, proj, graph, layout, net.block(0), c.activation);
    const auto b = learn_block(x, y, proj, net.block(0), c.activation);
    if (std::memcmp(a.values.data(), b.values.data(), sizeof(double) * a.values.size()) == 0) ++identical;
  }
  return {identical == 50, std::to_string(identical) + "/50 bitwise identical"};
}

Outcome noise_mean() {
  const int levels = 8, samples = 20000;
  Matrix clean(levels, samples);
  for (int l = 0; l < levels; ++l) clean.row(l).setConstant(0.5 * l);
  bool ok = true;
  double worst = 0.0;
  for (double i0 : {1e5, 1e6}) {
    DoseModel m;
    m.incident_photons = i0;
    m.electronic_variance = 10.0;
    m.seed = static_cast<std::uint64_t>(i0) + 7;
    const Sinogram noisy = simulate_lowdose(Sinogram(clean), m);
    for (int l = 0; l < levels; ++l) {
      const Eigen::ArrayXd counts = i0 * (-noisy.values.row(l).transpose().array()).exp();
      const double mean = counts.mean();
      const double sd = std::sqrt((counts - mean).square().sum() / (samples - 1));
      const double z = std::abs(mean - i0 * std::exp(-0.5 * l)) / (sd / std::sqrt(double(samples)));
      worst = std::max(worst, z);
      if (z > kNoiseSigmas) ok = false;
    }
  }
  return {ok, "worst deviation " + fmt(worst, 3) + " standard errors over 16 levels"};
}

// Shared desk experiment for criteria 9 to 11.
ExperimentConfig desk_config() {
  ExperimentConfig cfg = preset_config("desk");
  cfg.seed = kSeed;
  cfg.n_train = 20;
  cfg.n_test = 5;
  cfg.phantom = PhantomKind::RandomEllipses;
  cfg.geometry = ScanGeometry::desk(64, 180);
  cfg.dose = "10%";
  cfg.dose_model = DoseModel::preset("10%", kSeed);
  cfg.network.blocks = 6;
  cfg.network.coarse_blocks = 3;
  cfg.network.channels = kChannels;
  cfg.training.epochs = kEpochs;
  cfg.training.max_steps = kMaxSteps;
  cfg.training.learning_rate = kLearningRate;
  cfg.training.seed = kSeed;
  cfg.validate();
  return cfg;
}

struct ExperimentRun {
  std::vector<MetricRow> rows;
  std::string csv;
  double magic = 0.0, learn = 0.0, fbp = 0.0;
  long long steps = 0;
  double seconds = 0.0;
};

double mean_psnr(const std::vector<MetricRow>& rows, const std::string& method) {
  for (const auto& s : summarize(rows))
    if (s.method == method) return s.psnr_mean;
  return std::nan("");
}

TrainedModel train_logged(const ExperimentConfig& cfg, const SimulatedData& data, const std::string& tag) {
  return train_model(cfg, data, [&](const LossRecord& r) {
    if (r.epoch % 10 == 0)
      std::cerr << "  [" << tag << "] epoch " << r.epoch << " step " << r.step << " loss " << r.total << "\n";
  });
}

ExperimentRun ordering_experiment() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg = desk_config();
  Projector proj(cfg.geometry);
  const auto data = simulate_data(cfg, proj);
  const auto magic = train_logged(cfg, data, "magic");
  ExperimentConfig learn_cfg = cfg;
  learn_cfg.network.use_graph = false;
  const auto learn = train_logged(learn_cfg, data, "learn");

  ExperimentRun run;
  run.rows = evaluate_test_set(cfg, data, &magic.net, "magic");
  for (const auto& r : evaluate_test_set(learn_cfg, data, &learn.net, "learn"))
    if (r.method == "learn") run.rows.push_back(r);
  run.csv = metrics_csv(run.rows);
  run.magic = mean_psnr(run.rows, "magic");
  run.learn = mean_psnr(run.rows, "learn");
  run.fbp = mean_psnr(run.rows, "fbp");
  run.steps = std::max(magic.result.steps, learn.result.steps);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome ordering(const ExperimentRun& run) {
  const bool ok = run.magic >= run.fbp + kMagicOverFbpDb && run.magic >= run.learn - kMagicVsLearnDb &&
                  run.steps <= kMaxSteps && run.seconds <= kExperimentSeconds;
  return {ok, "PSNR magic " + fmt(run.magic, 5) + ", learn " + fmt(run.learn, 5) + ", fbp " + fmt(run.fbp, 5) +
                  " dB; " + std::to_string(run.steps) + " steps, " + fmt(run.seconds / 60.0, 3) + " min"};
}

Outcome semi_supervised(const ExperimentRun& supervised) {
  ExperimentConfig cfg = desk_config();
  cfg.labeled_fraction = 0.1;
  cfg.training.loss = LossMode::SemiSupervised;
  Projector proj(cfg.geometry);
  const auto data = simulate_data(cfg, proj);
  const auto semi = train_logged(cfg, data, "semi");
  const double psnr_semi = mean_psnr(evaluate_test_set(cfg, data, &semi.net, "magic"), "magic");
  const bool close = psnr_semi >= supervised.magic - kSemiGapDb;

  // Full labels: both modes must take bitwise identical steps.
  ExperimentConfig full = desk_config();
  full.training.max_steps = 40;
  const auto full_data = simulate_data(full, proj);
  const auto mse_model = train_model(full, full_data);
  full.training.loss = LossMode::SemiSupervised;
  const auto semi_model = train_model(full, full_data);
  const Vector a = mse_model.net.flatten(), b = semi_model.net.flatten();
  const bool bitwise = a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;

  return {close && bitwise, "10% labels " + fmt(psnr_semi, 5) + " dB vs supervised " + fmt(supervised.magic, 5) +
                                " dB; full-label semi vs mse " + (bitwise ? "bitwise equal" : "differ")};
}

Outcome determinism(const ExperimentRun& first) {
  const auto second = ordering_experiment();
  const bool same = first.csv == second.csv;
  return {same, same ? "metrics CSVs identical (" + std::to_string(first.csv.size()) + " bytes)"
                     : "metrics CSVs differ"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  int failures = 0;
  const auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };
  const auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "adjoint", adjoint);
  guarded(2, "disc projection", disc_projection);
  guarded(3, "fbp view count", fbp_views);
  guarded(4, "graph spectral suite", graph_suite);
  guarded(5, "patch round trip", patch_round_trip);
  guarded(6, "gradient check", gradient_check);
  guarded(7, "baseline containment", baseline_containment);
  guarded(8, "noise model mean", noise_mean);

  if (want(9) || want(10) || want(11)) {
    std::optional<ExperimentRun> run;
    try {
      run = ordering_experiment();
    } catch (const std::exception& e) {
      for (int id : {9, 10, 11})
        if (want(id)) report(id, "desk experiment", {false, std::string("exception: ") + e.what()});
    }
    if (run) {
      guarded(9, "desk ordering", [&] { return ordering(*run); });
      guarded(10, "semi-supervised", [&] { return semi_supervised(*run); });
      guarded(11, "determinism", [&] { return determinism(*run); });
    }
  }
  return failures == 0 ? 0 : 1;
}

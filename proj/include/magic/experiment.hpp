#pragma once

#include "magic/config.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace magic {

// splitmix64 of (seed, stream, index); used to give every item its own
// phantom and noise generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

struct SimulatedItem {
  std::string id;
  ImageGrid truth;  // attenuation, 1/mm
  Sinogram clean;
  Sinogram noisy;
  ImageGrid fbp;
  bool train = true;
  bool labeled = false;
};

struct SimulatedData {
  std::vector<SimulatedItem> items;

  std::vector<Sample> train_samples() const;  // labels only on labeled items
  std::vector<const SimulatedItem*> test_items() const;
};

// Ground-truth images from phantoms or config.image_dir, scaled by mu_scale.
std::vector<DatasetItem> ground_truth(const ExperimentConfig& cfg);

// Ground truth, seeded split, noise at `dose` and FBP for every item.
SimulatedData simulate_data(const ExperimentConfig& cfg, const Projector& proj, const DoseModel& dose);
inline SimulatedData simulate_data(const ExperimentConfig& cfg, const Projector& proj) {
  return simulate_data(cfg, proj, cfg.dose_model);
}

struct MetricRow {
  std::string id;
  std::string method;
  std::optional<double> psnr;  // nullopt: identical images
  double ssim = 0.0;
  std::vector<RoiStats> rois;
};

MetricRow measure(const std::string& id, const std::string& method, const ImageGrid& pred, const ImageGrid& ref,
                  const ExperimentConfig& cfg);

// id,method,psnr,ssim,roi<k>_mean,roi<k>_sd ... PSNR of identical images is
// written as "inf".
void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);
std::string metrics_csv(const std::vector<MetricRow>& rows);

struct MethodSummary {
  std::string method;
  double psnr_mean = 0.0;
  double psnr_sd = 0.0;
  double ssim_mean = 0.0;
  double ssim_sd = 0.0;
  int count = 0;
};

// Per-method mean and sample SD; identical-image PSNRs are skipped.
std::vector<MethodSummary> summarize(const std::vector<MetricRow>& rows);

struct TrainedModel {
  MagicNetwork net;
  TrainResult result;
};

// Seeds the network from cfg.seed and trains on the simulated train split.
TrainedModel train_model(const ExperimentConfig& cfg, const SimulatedData& data,
                         const std::function<void(const LossRecord&)>& on_epoch = {});

// Network output for one measured sinogram with its FBP input.
ImageGrid reconstruct(const MagicNetwork& net, const Sinogram& sino, const ImageGrid& fbp_input);

// Metric rows for FBP and the network on every test item. When out_dir is
// non-empty, reconstructions and |pred - ref| images are written there as
// raw arrays and windowed PNGs.
std::vector<MetricRow> evaluate_test_set(const ExperimentConfig& cfg, const SimulatedData& data,
                                         const MagicNetwork* net, const std::string& method,
                                         const std::string& out_dir = "");

// JSON sidecar next to a checkpoint.
void write_checkpoint_sidecar(const std::string& path, const ExperimentConfig& cfg, const TrainResult& result);

// Graph of the patch nodes of img: "i,j,weight" edges (i < j) and a
// "degree,count" histogram of neighbour counts.
void write_graph_csv(const SparseGraph& graph, const std::string& edges_path, const std::string& histogram_path);

// Config with one sweep parameter set to value.
ExperimentConfig with_sweep_value(const ExperimentConfig& cfg, const std::string& parameter, double value);

struct SweepRow {
  double value = 0.0;
  MethodSummary summary;
};

// Trains and evaluates once per value of cfg.sweep_values.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& log = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& parameter, const std::string& path);

}  // namespace magic

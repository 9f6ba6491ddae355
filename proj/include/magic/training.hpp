#pragma once

#include "magic/unrolled.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace magic {

// One training or test item: measured sinogram, FBP input, optional label.
struct Sample {
  std::string id;
  Sinogram sinogram;
  ImageGrid input;
  std::optional<ImageGrid> label;
};

// Labeled (S1) and unlabeled (S2) members of a batch, as indices into samples.
struct Batch {
  std::vector<const Sample*> samples;
  std::vector<int> labeled;
  std::vector<int> unlabeled;

  // Splits samples by whether they carry a label.
  static Batch from(std::vector<const Sample*> samples);
  void validate() const;
};

// (1/N) sum ||pred_i - label_i||^2
double mse_loss(const std::vector<ImageGrid>& pred, const std::vector<ImageGrid>& labels);
// (1/N) sum ||A pred_i - y_i||^2
double projection_loss(const std::vector<ImageGrid>& pred, const std::vector<Sinogram>& sinos, const Projector& proj);
inline double projection_loss(const std::vector<ImageGrid>& pred, const std::vector<Sinogram>& sinos,
                              const ScanGeometry& geom) {
  return projection_loss(pred, sinos, Projector(geom));
}

struct LossTerms {
  double mse = 0.0;   // labeled average, 0 when S1 is empty
  double proj = 0.0;  // unlabeled average (weighted), 0 when S2 is empty
  bool has_mse = false;
  bool has_proj = false;
  double total() const { return mse + proj; }
};

// Labeled-average MSE plus proj_weight times the unlabeled-average projection
// loss. When grads is given it receives d(total)/d(pred_i) per sample.
LossTerms semi_loss(const Batch& batch, const std::vector<ImageGrid>& preds, const Projector& proj,
                    double proj_weight = 1.0, std::vector<ImageGrid>* grads = nullptr);

enum class LossMode { Supervised, SemiSupervised };

LossMode parse_loss_mode(const std::string& name);
std::string to_string(LossMode m);

struct TrainConfig {
  int epochs = 100;
  int max_steps = 0;  // 0 = no cap
  int batch_size = 1;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 10.0;  // global norm; <= 0 disables
  LossMode loss = LossMode::Supervised;
  double proj_weight = 1.0;
  std::uint64_t seed = 0;
  std::string divergence_checkpoint;  // written before aborting on NaN/Inf

  std::vector<std::string> violations() const;
};

// Adaptive-moment optimiser over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps);
  void step(Vector& params, const Vector& grad);
  long long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  long long t_ = 0;
};

struct LossRecord {
  int epoch = 0;
  long long step = 0;
  double mse_term = 0.0;
  double proj_term = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> curve;  // one row per epoch
  long long steps = 0;
  double initial_loss = 0.0;      // loss of the first batch before any update
  double final_loss = 0.0;        // loss of the last batch before its update
};

// Supervised mode trains on the labeled samples only with the MSE loss;
// semi-supervised mode uses every sample with semi_loss. Sample order comes
// from a generator seeded with config.seed.
TrainResult train(MagicNetwork& net, const std::vector<Sample>& dataset, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_epoch = {});

void write_loss_curve_csv(const std::vector<LossRecord>& curve, const std::string& path);

}  // namespace magic

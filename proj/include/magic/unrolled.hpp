#pragma once

#include "magic/geometry.hpp"
#include "magic/graphconv.hpp"
#include "magic/patchgraph.hpp"
#include "magic/spatialconv.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace magic {

// Learnable parameters of one unrolled iteration.
struct BlockParams {
  double alpha = 0.0;  // gradient step
  SpatialKernels spatial;
  GraphKernels graph;  // empty when the graph path is disabled
};

struct NetworkConfig {
  int blocks = 6;
  int coarse_blocks = 3;
  int channels = 48;
  int patch_rows = 6;
  int patch_cols = 6;
  int step_rows = 2;
  int step_cols = 2;
  int neighbors = 8;
  int graph_width = 64;
  bool use_graph = true;  // false gives the LEARN network
  // Start Theta2 at zero so the graph branch contributes nothing until trained.
  bool zero_graph_output = true;
  Activation activation = Activation::Relu;

  std::vector<std::string> violations(const ScanGeometry& geom) const;
  void validate(const ScanGeometry& geom) const;

  // 50 blocks split 25 + 25, 6x6 patches with step 2, k = 8, F = 64.
  static NetworkConfig clinical();
  static NetworkConfig desk();
};

class MagicNetwork {
 public:
  // All parameters zero.
  MagicNetwork(NetworkConfig cfg, const ScanGeometry& geom);
  // alpha = 1 / ||A^T A||, kernels uniform in +-1/sqrt(fan_in).
  static MagicNetwork initialized(NetworkConfig cfg, const ScanGeometry& geom, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  const ScanGeometry& geometry() const { return projector_->geometry(); }
  const Projector& projector() const { return *projector_; }
  const PatchLayout& layout() const { return layout_; }

  int size() const { return static_cast<int>(blocks_.size()); }
  const BlockParams& block(int t) const { return blocks_.at(t); }
  BlockParams& mutable_block(int t);
  const std::vector<BlockParams>& blocks() const { return blocks_; }

  // Power-iteration estimate of ||A^T A||.
  double normal_norm() const { return normal_norm_; }
  // The optimiser sees alpha * alpha_scale, with alpha_scale the power of two
  // nearest normal_norm, so the step lives on the same scale as the kernels
  // and the flatten/assign round trip is exact.
  double alpha_scale() const { return alpha_scale_; }

  std::size_t parameter_count() const;
  Vector flatten() const;
  void assign(const Vector& params);
  Vector flatten_gradients(const std::vector<BlockParams>& grads) const;

  // Bumped on every parameter mutation; tapes record it.
  std::uint64_t version() const { return version_; }

  void save(const std::string& path) const;
  static MagicNetwork load(const std::string& path);

 private:
  NetworkConfig cfg_;
  std::shared_ptr<const Projector> projector_;
  PatchLayout layout_;
  std::vector<BlockParams> blocks_;
  double normal_norm_ = 1.0;
  double alpha_scale_ = 1.0;
  std::uint64_t version_ = 0;
};

// Intermediates of one block needed by the backward pass.
struct BlockTape {
  Matrix input;
  Matrix fidelity_grad;  // A^T (A x - y)
  PhiTape phi;
  Matrix propagated;  // P X
  Matrix hidden_pre;  // P X Theta1
  int stage = 0;      // 0 coarse, 1 fine
};

struct Tape {
  std::vector<BlockTape> blocks;
  std::vector<SparseGraph> graphs;  // one per stage actually used
  int graph_builds = 0;
  std::uint64_t network_version = 0;
  const MagicNetwork* network = nullptr;
};

// x - alpha A^T (A x - y) + Phi(x).
ImageGrid learn_block(const ImageGrid& x, const Sinogram& y, const Projector& proj, const BlockParams& p,
                      Activation act = Activation::Relu, BlockTape* tape = nullptr);
inline ImageGrid learn_block(const ImageGrid& x, const Sinogram& y, const ScanGeometry& geom, const BlockParams& p,
                             Activation act = Activation::Relu) {
  return learn_block(x, y, Projector(geom), p, act);
}

// learn_block(x) + assemble(Psi(extract(x))).
ImageGrid magic_block(const ImageGrid& x, const Sinogram& y, const Projector& proj, const SparseGraph& graph,
                      const PatchLayout& layout, const BlockParams& p, Activation act = Activation::Relu,
                      BlockTape* tape = nullptr);

// Graph of the patch nodes of `img`.
SparseGraph stage_graph(const Matrix& img, const PatchLayout& layout, int k);

struct ForwardResult {
  ImageGrid output;
  Tape tape;
};

// Blocks 1..N_c use a graph built from x0; the graph is rebuilt once from
// the iterate after block N_c and used for the remaining blocks.
ForwardResult forward_pass(const MagicNetwork& net, const ImageGrid& x0, const Sinogram& y);

// Parameter gradients of <loss_grad, output>. Graphs are constants.
std::vector<BlockParams> backward_pass(const MagicNetwork& net, const Tape& tape, const ImageGrid& loss_grad);

// Gradients shaped like the network's blocks, all zero.
std::vector<BlockParams> zero_gradients(const MagicNetwork& net);

}  // namespace magic

#include "magic/unrolled.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace magic {

std::vector<std::string> NetworkConfig::violations(const ScanGeometry& geom) const {
  std::vector<std::string> out;
  if (blocks < 1) out.push_back("network.blocks must be >= 1");
  if (coarse_blocks < 1 || coarse_blocks > blocks)
    out.push_back("network.coarse_blocks must satisfy 1 <= coarse_blocks <= blocks");
  if (channels < 1) out.push_back("network.channels must be >= 1");
  if (patch_rows < 1 || patch_cols < 1) out.push_back("network.patch must be >= 1");
  if (patch_rows > geom.image_rows || patch_cols > geom.image_cols)
    out.push_back("network.patch must not exceed the image size");
  if (step_rows < 1 || step_cols < 1 || step_rows > patch_rows || step_cols > patch_cols)
    out.push_back("network.step must satisfy 1 <= step <= patch so that patches overlap");
  if (graph_width < 1) out.push_back("network.graph_width must be >= 1");
  if (neighbors < 1) out.push_back("network.neighbors must be >= 1");
  if (out.empty() && use_graph) {
    const auto nodes = anchor_positions(geom.image_rows, patch_rows, step_rows).size() *
                       anchor_positions(geom.image_cols, patch_cols, step_cols).size();
    if (static_cast<std::size_t>(neighbors) >= nodes)
      out.push_back("network.neighbors must be smaller than the patch node count (" + std::to_string(nodes) + ")");
  }
  return out;
}

void NetworkConfig::validate(const ScanGeometry& geom) const {
  const auto v = violations(geom);
  if (v.empty()) return;
  std::string msg = v.front();
  for (std::size_t i = 1; i < v.size(); ++i) msg += "; " + v[i];
  throw ConfigError(msg);
}

NetworkConfig NetworkConfig::clinical() {
  NetworkConfig c;
  c.blocks = 50;
  c.coarse_blocks = 25;
  return c;
}

NetworkConfig NetworkConfig::desk() { return NetworkConfig{}; }

MagicNetwork::MagicNetwork(NetworkConfig cfg, const ScanGeometry& geom) : cfg_(cfg) {
  cfg_.validate(geom);
  projector_ = std::make_shared<const Projector>(geom);
  layout_ = PatchLayout::make(geom.image_rows, geom.image_cols, cfg_.patch_rows, cfg_.patch_cols, cfg_.step_rows,
                              cfg_.step_cols);
  normal_norm_ = projector_->normal_operator_norm();
  if (!(normal_norm_ > 0.0)) throw ConfigError("geometry: system operator is zero");
  alpha_scale_ = std::exp2(std::round(std::log2(normal_norm_)));
  const int d = layout_.features();
  blocks_.resize(cfg_.blocks);
  for (auto& b : blocks_) {
    b.spatial = SpatialKernels::zeros(cfg_.channels);
    if (cfg_.use_graph) {
      b.graph.theta1 = Matrix::Zero(d, cfg_.graph_width);
      b.graph.theta2 = Matrix::Zero(cfg_.graph_width, d);
    }
  }
}

MagicNetwork MagicNetwork::initialized(NetworkConfig cfg, const ScanGeometry& geom, std::uint64_t seed) {
  MagicNetwork net(cfg, geom);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, int fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  const int c = net.cfg_.channels;
  for (auto& b : net.blocks_) {
    b.alpha = 1.0 / net.normal_norm_;
    fill(b.spatial.w1, kKernelTaps);
    fill(b.spatial.w2, c * kKernelTaps);
    fill(b.spatial.w3, c * kKernelTaps);
  }
  // Graph kernels come last so MAGIC and LEARN share their spatial draws.
  if (net.cfg_.use_graph) {
    for (auto& b : net.blocks_) {
      fill(b.graph.theta1, net.layout_.features());
      if (net.cfg_.zero_graph_output)
        b.graph.theta2.setZero();
      else
        fill(b.graph.theta2, net.cfg_.graph_width);
    }
  }
  return net;
}

BlockParams& MagicNetwork::mutable_block(int t) {
  ++version_;
  return blocks_.at(t);
}

namespace {

template <class Fn>
void for_each_tensor(BlockParams& b, Fn&& fn) {
  fn(b.spatial.w1);
  fn(b.spatial.w2);
  fn(b.spatial.w3);
  fn(b.graph.theta1);
  fn(b.graph.theta2);
}

template <class Fn>
void for_each_tensor(const BlockParams& b, Fn&& fn) {
  fn(b.spatial.w1);
  fn(b.spatial.w2);
  fn(b.spatial.w3);
  fn(b.graph.theta1);
  fn(b.graph.theta2);
}

}  // namespace

std::size_t MagicNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    n += 1;
    for_each_tensor(b, [&](const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  }
  return n;
}

Vector MagicNetwork::flatten() const {
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (const auto& b : blocks_) {
    out[at++] = b.alpha * alpha_scale_;
    for_each_tensor(b, [&](const Matrix& m) {
      std::memcpy(out.data() + at, m.data(), sizeof(double) * m.size());
      at += m.size();
    });
  }
  return out;
}

void MagicNetwork::assign(const Vector& params) {
  if (static_cast<std::size_t>(params.size()) != parameter_count())
    throw InputError("assign: expected " + std::to_string(parameter_count()) + " parameters, got " +
                     std::to_string(params.size()));
  ++version_;
  Eigen::Index at = 0;
  for (auto& b : blocks_) {
    b.alpha = params[at++] / alpha_scale_;
    for_each_tensor(b, [&](Matrix& m) {
      std::memcpy(m.data(), params.data() + at, sizeof(double) * m.size());
      at += m.size();
    });
  }
}

Vector MagicNetwork::flatten_gradients(const std::vector<BlockParams>& grads) const {
  if (grads.size() != blocks_.size()) throw InputError("flatten_gradients: block count mismatch");
  Vector out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    out[at++] = grads[t].alpha / alpha_scale_;
    for_each_tensor(grads[t], [&](const Matrix& m) {
      std::memcpy(out.data() + at, m.data(), sizeof(double) * m.size());
      at += m.size();
    });
  }
  if (at != out.size()) throw InputError("flatten_gradients: tensor shapes do not match the network");
  return out;
}

// Checkpoint container, little-endian:
//   "MAGICNET" u32 version
//   i32 x 12 config (blocks, coarse, channels, patch r/c, step r/c, k, F, use_graph, activation, reserved)
//   geometry: f64 source, f64 detector, i32 n_det, f64 pitch, i32 views, f64 span, i32 rows, i32 cols, f64 pixel
//   f64 normal_norm
//   per block: f64 alpha, then 5 tensors as (u32 rows, u32 cols, f64 data row-major)
namespace {

constexpr char kMagic[8] = {'M', 'A', 'G', 'I', 'C', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError("checkpoint " + path + " is truncated", static_cast<std::size_t>(is.gcount()));
  return v;
}

}  // namespace

void MagicNetwork::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  const std::int32_t cfg[12] = {cfg_.blocks,    cfg_.coarse_blocks, cfg_.channels,    cfg_.patch_rows,
                                cfg_.patch_cols, cfg_.step_rows,    cfg_.step_cols,   cfg_.neighbors,
                                cfg_.graph_width, cfg_.use_graph ? 1 : 0,
                                cfg_.activation == Activation::Relu ? 0 : 1, 0};
  for (auto v : cfg) put(os, v);
  const auto& g = geometry();
  put(os, g.source_to_center);
  put(os, g.detector_to_center);
  put<std::int32_t>(os, g.n_detectors);
  put(os, g.detector_pitch);
  put<std::int32_t>(os, g.n_views);
  put(os, g.angular_span);
  put<std::int32_t>(os, g.image_rows);
  put<std::int32_t>(os, g.image_cols);
  put(os, g.pixel_size);
  put(os, normal_norm_);
  for (const auto& b : blocks_) {
    put(os, b.alpha);
    for_each_tensor(b, [&](const Matrix& m) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
      os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    });
  }
  if (!os) throw IoError("failed writing checkpoint " + path);
}

MagicNetwork MagicNetwork::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError(path + " is not a checkpoint", 0);
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  std::int32_t c[12];
  for (auto& v : c) v = get<std::int32_t>(is, path);
  NetworkConfig cfg;
  cfg.blocks = c[0];
  cfg.coarse_blocks = c[1];
  cfg.channels = c[2];
  cfg.patch_rows = c[3];
  cfg.patch_cols = c[4];
  cfg.step_rows = c[5];
  cfg.step_cols = c[6];
  cfg.neighbors = c[7];
  cfg.graph_width = c[8];
  cfg.use_graph = c[9] != 0;
  cfg.activation = c[10] == 0 ? Activation::Relu : Activation::Identity;
  ScanGeometry g;
  g.source_to_center = get<double>(is, path);
  g.detector_to_center = get<double>(is, path);
  g.n_detectors = get<std::int32_t>(is, path);
  g.detector_pitch = get<double>(is, path);
  g.n_views = get<std::int32_t>(is, path);
  g.angular_span = get<double>(is, path);
  g.image_rows = get<std::int32_t>(is, path);
  g.image_cols = get<std::int32_t>(is, path);
  g.pixel_size = get<double>(is, path);
  const double stored_norm = get<double>(is, path);
  MagicNetwork net(cfg, g);
  net.normal_norm_ = stored_norm;
  net.alpha_scale_ = std::exp2(std::round(std::log2(stored_norm)));
  for (auto& b : net.blocks_) {
    b.alpha = get<double>(is, path);
    for_each_tensor(b, [&](Matrix& m) {
      const auto offset = static_cast<std::size_t>(is.tellg());
      const auto rows = get<std::uint32_t>(is, path);
      const auto cols = get<std::uint32_t>(is, path);
      if (rows != m.rows() || cols != m.cols())
        throw ParseError("checkpoint tensor shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " does not match the configuration",
                         offset);
      is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
      if (!is) throw ParseError("checkpoint " + path + " is truncated", offset);
    });
  }
  return net;
}

ImageGrid learn_block(const ImageGrid& x, const Sinogram& y, const Projector& proj, const BlockParams& p,
                      Activation act, BlockTape* tape) {
  const auto& g = proj.geometry();
  if (!x.matches(g) || !y.matches(g)) throw InputError("learn_block: image or sinogram does not match geometry");
  Matrix residual, fidelity;
  proj.forward(x.values, residual);
  residual -= y.values;
  proj.back(residual, fidelity);
  PhiTape* phi_tape = tape ? &tape->phi : nullptr;
  const Matrix phi = cnn_module_phi(x.values, p.spatial, act, phi_tape);
  ImageGrid out(Matrix(x.values - p.alpha * fidelity + phi));
  if (tape) {
    tape->input = x.values;
    tape->fidelity_grad = std::move(fidelity);
  }
  return out;
}

ImageGrid magic_block(const ImageGrid& x, const Sinogram& y, const Projector& proj, const SparseGraph& graph,
                      const PatchLayout& layout, const BlockParams& p, Activation act, BlockTape* tape) {
  if (graph.nodes() != layout.nodes())
    throw ConfigError("magic_block: graph has " + std::to_string(graph.nodes()) + " nodes but the patch layout has " +
                      std::to_string(layout.nodes()));
  if (p.graph.theta1.rows() != layout.features() || p.graph.theta2.cols() != layout.features())
    throw ConfigError("magic_block: graph kernels do not match the patch size");
  ImageGrid out = learn_block(x, y, proj, p, act, tape);
  const Matrix nodes = extract_patches(x.values, layout);
  Matrix propagated = graph.propagation * nodes;
  Matrix hidden_pre = propagated * p.graph.theta1;
  const Matrix psi = graph.propagation * Matrix(activate(act, hidden_pre) * p.graph.theta2);
  out.values += assemble_patches(psi, layout);
  if (tape) {
    tape->propagated = std::move(propagated);
    tape->hidden_pre = std::move(hidden_pre);
  }
  return out;
}

SparseGraph stage_graph(const Matrix& img, const PatchLayout& layout, int k) {
  return build_graph(extract_patches(img, layout), k);
}

ForwardResult forward_pass(const MagicNetwork& net, const ImageGrid& x0, const Sinogram& y) {
  const auto& cfg = net.config();
  if (cfg.coarse_blocks < 1 || cfg.coarse_blocks > cfg.blocks)
    throw ConfigError("forward_pass: coarse block count out of range");
  ForwardResult res;
  Tape& tape = res.tape;
  tape.network = &net;
  tape.network_version = net.version();
  tape.blocks.resize(net.size());
  ImageGrid x = x0;
  for (int t = 0; t < net.size(); ++t) {
    const int stage = t < cfg.coarse_blocks ? 0 : 1;
    BlockTape& bt = tape.blocks[t];
    bt.stage = stage;
    if (!cfg.use_graph) {
      x = learn_block(x, y, net.projector(), net.block(t), cfg.activation, &bt);
      continue;
    }
    if (static_cast<int>(tape.graphs.size()) == stage) {
      tape.graphs.push_back(stage_graph(x.values, net.layout(), cfg.neighbors));
      ++tape.graph_builds;
    }
    x = magic_block(x, y, net.projector(), tape.graphs[stage], net.layout(), net.block(t), cfg.activation, &bt);
  }
  res.output = std::move(x);
  return res;
}

std::vector<BlockParams> zero_gradients(const MagicNetwork& net) {
  std::vector<BlockParams> grads(net.blocks());
  for (auto& g : grads) {
    g.alpha = 0.0;
    for_each_tensor(g, [](Matrix& m) { m.setZero(); });
  }
  return grads;
}

std::vector<BlockParams> backward_pass(const MagicNetwork& net, const Tape& tape, const ImageGrid& loss_grad) {
  if (tape.network != &net || tape.network_version != net.version() ||
      static_cast<int>(tape.blocks.size()) != net.size())
    throw InternalError("backward_pass: tape does not belong to the current network parameters");
  const auto& g = net.geometry();
  if (!loss_grad.matches(g)) throw InputError("backward_pass: loss gradient does not match geometry");
  const auto act = net.config().activation;
  const Projector& proj = net.projector();
  const PatchLayout& layout = net.layout();
  auto grads = zero_gradients(net);
  Matrix grad = loss_grad.values;
  Matrix tmp_sino, normal;
  for (int t = net.size() - 1; t >= 0; --t) {
    const BlockTape& bt = tape.blocks[t];
    const BlockParams& p = net.block(t);
    BlockParams& gp = grads[t];
    gp.alpha = -(grad.array() * bt.fidelity_grad.array()).sum();

    Matrix next = grad;
    proj.forward(grad, tmp_sino);
    proj.back(tmp_sino, normal);
    next -= p.alpha * normal;
    next += cnn_module_phi_backward(bt.input, bt.phi, p.spatial, act, grad, gp.spatial);

    if (net.config().use_graph) {
      const SparseMatrix& prop = tape.graphs.at(bt.stage).propagation;
      const Matrix d_psi = assemble_patches_adjoint(grad, layout);
      const Matrix q = prop * d_psi;
      const Matrix hidden = activate(act, bt.hidden_pre);
      gp.graph.theta2 = hidden.transpose() * q;
      const Matrix d_hidden_pre = activate_backward(act, bt.hidden_pre, Matrix(q * p.graph.theta2.transpose()));
      gp.graph.theta1 = bt.propagated.transpose() * d_hidden_pre;
      const Matrix d_nodes = prop * Matrix(d_hidden_pre * p.graph.theta1.transpose());
      next += extract_patches_adjoint(d_nodes, layout);
    }
    grad = std::move(next);
  }
  return grads;
}

}  // namespace magic

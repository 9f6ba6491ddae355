#include "doctest.h"
#include "oracles.hpp"

#include "magic/unrolled.hpp"

#include <cstdio>
#include <filesystem>
#include <random>

using namespace magic;

namespace {

ScanGeometry small_geometry() { return ScanGeometry::desk(16, 20); }

NetworkConfig small_config(int blocks, int coarse, bool graph = true, Activation act = Activation::Identity) {
  NetworkConfig c;
  c.blocks = blocks;
  c.coarse_blocks = coarse;
  c.channels = 3;
  c.patch_rows = c.patch_cols = 4;
  c.step_rows = c.step_cols = 2;
  c.neighbors = 3;
  c.graph_width = 5;
  c.use_graph = graph;
  c.zero_graph_output = false;
  c.activation = act;
  return c;
}

struct Problem {
  ImageGrid x0;
  Sinogram y;
  ImageGrid weight;
};

Problem make_problem(const ScanGeometry& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Problem p;
  p.x0 = ImageGrid(oracle::random_matrix(g.image_rows, g.image_cols, rng, 0.0, 0.05));
  const Matrix truth = oracle::random_matrix(g.image_rows, g.image_cols, rng, 0.0, 0.05);
  Projector proj(g);
  Matrix y;
  proj.forward(truth, y);
  p.y = Sinogram(y);
  p.weight = ImageGrid(oracle::random_matrix(g.image_rows, g.image_cols, rng));
  return p;
}

double objective(const MagicNetwork& net, const Problem& p) {
  return (forward_pass(net, p.x0, p.y).output.values.array() * p.weight.values.array()).sum();
}

// Relative error between the analytic gradient and central differences over
// a subset of flattened coordinates.
double gradient_error(MagicNetwork& net, const Problem& p, int stride, int first = 0) {
  const auto fwd = forward_pass(net, p.x0, p.y);
  const Vector analytic = net.flatten_gradients(backward_pass(net, fwd.tape, p.weight));
  const Vector base = net.flatten();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = first; i < base.size(); i += stride) {
    const double h = 1e-6 * std::max(1.0, std::abs(base(i)));
    Vector v = base;
    v(i) += h;
    net.assign(v);
    const double fp = objective(net, p);
    v(i) = base(i) - h;
    net.assign(v);
    const double fm = objective(net, p);
    const double fd = (fp - fm) / (2 * h);
    num += (fd - analytic(i)) * (fd - analytic(i));
    den += fd * fd;
  }
  net.assign(base);
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST_CASE("configuration checks collect every violation") {
  const auto g = small_geometry();
  NetworkConfig c = small_config(3, 5);
  c.channels = 0;
  c.step_rows = 7;
  CHECK(c.violations(g).size() == 3);
  CHECK_THROWS_AS(MagicNetwork(c, g), ConfigError);
  NetworkConfig k = small_config(2, 1);
  k.neighbors = 49;
  CHECK_FALSE(k.violations(g).empty());
  CHECK(NetworkConfig::clinical().blocks == 50);
  CHECK(NetworkConfig::clinical().coarse_blocks == 25);
}

TEST_CASE("learn block follows its update rule") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 1);
  Projector proj(g);
  std::mt19937_64 rng(2);
  BlockParams b;
  b.alpha = 0.003;
  b.spatial = {oracle::random_matrix(3, 9, rng), oracle::random_matrix(3, 27, rng), oracle::random_matrix(1, 27, rng)};
  Matrix ax, grad;
  proj.forward(p.x0.values, ax);
  proj.back(Matrix(ax - p.y.values), grad);
  const Matrix expected = p.x0.values - b.alpha * grad + cnn_module_phi(p.x0.values, b.spatial);
  const auto out = learn_block(p.x0, p.y, proj, b);
  CHECK((out.values - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((learn_block(p.x0, p.y, g, b).values - out.values).cwiseAbs().maxCoeff() == 0.0);

  BlockParams zero;
  zero.spatial = SpatialKernels::zeros(3);
  CHECK(learn_block(p.x0, p.y, proj, zero).values == p.x0.values);
}

TEST_CASE("magic block adds the assembled graph branch") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 3);
  const auto net = MagicNetwork::initialized(small_config(2, 1, true, Activation::Relu), g, 4);
  const auto& b = net.block(0);
  const auto graph = stage_graph(p.x0.values, net.layout(), 3);
  const Matrix X = extract_patches(p.x0.values, net.layout());
  const Matrix psi = gcn_module_psi(X, graph.propagation, b.graph);
  const Matrix expected = learn_block(p.x0, p.y, net.projector(), b).values + assemble_patches(psi, net.layout());
  const auto out = magic_block(p.x0, p.y, net.projector(), graph, net.layout(), b, Activation::Relu);
  CHECK((out.values - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("graphs are built once per stage") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 5);
  auto two = forward_pass(MagicNetwork::initialized(small_config(4, 2), g, 1), p.x0, p.y);
  CHECK(two.tape.graph_builds == 2);
  CHECK(two.tape.blocks[1].stage == 0);
  CHECK(two.tape.blocks[2].stage == 1);
  auto one = forward_pass(MagicNetwork::initialized(small_config(3, 3), g, 1), p.x0, p.y);
  CHECK(one.tape.graph_builds == 1);
  auto none = forward_pass(MagicNetwork::initialized(small_config(3, 1, false), g, 1), p.x0, p.y);
  CHECK(none.tape.graph_builds == 0);
}

TEST_CASE("the fine graph comes from the iterate after the coarse stage") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 6);
  const auto net = MagicNetwork::initialized(small_config(3, 1, true, Activation::Relu), g, 2);
  const auto run = forward_pass(net, p.x0, p.y);
  REQUIRE(run.tape.graphs.size() == 2);
  const auto coarse = stage_graph(p.x0.values, net.layout(), 3);
  CHECK(Matrix(run.tape.graphs[0].weights) == Matrix(coarse.weights));
  const auto g1 = magic_block(p.x0, p.y, net.projector(), coarse, net.layout(), net.block(0), Activation::Relu);
  const auto fine = stage_graph(g1.values, net.layout(), 3);
  CHECK((Matrix(run.tape.graphs[1].weights) - Matrix(fine.weights)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward pass matches central differences") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 7);
  SUBCASE("single graph, identity activation") {
    auto net = MagicNetwork::initialized(small_config(3, 3), g, 11);
    CHECK(gradient_error(net, p, 7) <= 1e-6);
  }
  SUBCASE("single graph, relu") {
    auto net = MagicNetwork::initialized(small_config(2, 2, true, Activation::Relu), g, 12);
    CHECK(gradient_error(net, p, 5) <= 1e-4);
  }
  SUBCASE("learn network") {
    auto net = MagicNetwork::initialized(small_config(3, 1, false, Activation::Relu), g, 13);
    CHECK(gradient_error(net, p, 3) <= 1e-4);
  }
  SUBCASE("two stages, fine-stage parameters") {
    // Coarse-stage parameters move the fine graph, which the backward pass
    // treats as a constant; only the last block is compared.
    auto net = MagicNetwork::initialized(small_config(3, 2), g, 14);
    const auto per_block = static_cast<int>(net.parameter_count() / 3);
    CHECK(gradient_error(net, p, 3, 2 * per_block) <= 1e-6);
  }
}

TEST_CASE("alpha gradient is minus the inner product with the fidelity gradient") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 8);
  const auto net = MagicNetwork::initialized(small_config(1, 1, false), g, 3);
  const auto fwd = forward_pass(net, p.x0, p.y);
  const auto grads = backward_pass(net, fwd.tape, p.weight);
  Projector proj(g);
  Matrix ax, fid;
  proj.forward(p.x0.values, ax);
  proj.back(Matrix(ax - p.y.values), fid);
  CHECK(grads[0].alpha == doctest::Approx(-(p.weight.values.array() * fid.array()).sum()).epsilon(1e-12));
}

TEST_CASE("stale tapes are rejected") {
  const auto g = small_geometry();
  const auto p = make_problem(g, 9);
  auto net = MagicNetwork::initialized(small_config(2, 1), g, 3);
  const auto fwd = forward_pass(net, p.x0, p.y);
  net.mutable_block(0).alpha *= 2.0;
  CHECK_THROWS_AS(backward_pass(net, fwd.tape, p.weight), InternalError);
}

TEST_CASE("initialisation and parameter vector round trip") {
  const auto g = small_geometry();
  auto net = MagicNetwork::initialized(small_config(3, 2), g, 21);
  CHECK(net.block(0).alpha == doctest::Approx(1.0 / net.normal_norm()));
  const double bound = 1.0 / 3.0;  // 1/sqrt(9) for w1
  CHECK(net.block(1).spatial.w1.cwiseAbs().maxCoeff() <= bound);
  const auto same = MagicNetwork::initialized(small_config(3, 2), g, 21);
  CHECK(same.flatten() == net.flatten());
  CHECK(MagicNetwork::initialized(small_config(3, 2), g, 22).flatten() != net.flatten());

  const Vector v = net.flatten();
  CHECK(static_cast<std::size_t>(v.size()) == net.parameter_count());
  const auto before = net.version();
  net.assign(v);
  CHECK(net.version() > before);
  CHECK(net.flatten() == v);
  CHECK(net.block(2).alpha * net.alpha_scale() == v(2 * (v.size() / 3)));
  const double scale = net.alpha_scale();
  CHECK(std::exp2(std::round(std::log2(scale))) == scale);
}

TEST_CASE("default initialisation starts magic as learn") {
  const auto g = small_geometry();
  auto mc = small_config(3, 2, true, Activation::Relu);
  mc.zero_graph_output = true;
  const auto magic = MagicNetwork::initialized(mc, g, 8);
  const auto learn = MagicNetwork::initialized(small_config(3, 2, false, Activation::Relu), g, 8);
  for (int t = 0; t < 3; ++t) {
    CHECK(magic.block(t).spatial.w2 == learn.block(t).spatial.w2);
    CHECK(magic.block(t).graph.theta2.isZero(0.0));
    CHECK_FALSE(magic.block(t).graph.theta1.isZero(0.0));
  }
  const auto p = make_problem(g, 9);
  const auto a = forward_pass(magic, p.x0, p.y).output.values;
  const auto b = forward_pass(learn, p.x0, p.y).output.values;
  CHECK(a == b);
}

TEST_CASE("checkpoint save and load are bitwise") {
  const auto g = small_geometry();
  const auto net = MagicNetwork::initialized(small_config(3, 2, true, Activation::Relu), g, 31);
  const auto path = std::filesystem::temp_directory_path() / "magic_unit_net.bin";
  net.save(path.string());
  const auto back = MagicNetwork::load(path.string());
  CHECK(back.flatten() == net.flatten());
  CHECK(back.config().coarse_blocks == 2);
  CHECK(back.config().activation == Activation::Relu);
  CHECK(back.geometry().n_views == g.n_views);
  const auto p = make_problem(g, 10);
  CHECK(forward_pass(back, p.x0, p.y).output.values == forward_pass(net, p.x0, p.y).output.values);

  {
    std::FILE* f = std::fopen(path.string().c_str(), "r+b");
    std::fputs("BROKEN", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(MagicNetwork::load(path.string()), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(MagicNetwork::load(path.string()), IoError);
}

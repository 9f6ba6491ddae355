#include "doctest.h"
#include "oracles.hpp"

#include "magic/spatialconv.hpp"

#include <array>
#include <random>

using namespace magic;

namespace {

// Direct zero-padded 3x3 cross-correlation.
Matrix naive_conv(const Matrix& stack, int m, int n, const Matrix& k) {
  const int cin = static_cast<int>(stack.rows());
  Matrix out = Matrix::Zero(k.rows(), m * n);
  for (int o = 0; o < k.rows(); ++o)
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        double s = 0.0;
        for (int i = 0; i < cin; ++i)
          for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b) {
              const int rr = r + a, cc = c + b;
              if (rr < 0 || rr >= m || cc < 0 || cc >= n) continue;
              s += k(o, i * 9 + (a + 1) * 3 + (b + 1)) * stack(i, rr * n + cc);
            }
        out(o, r * n + c) = s;
      }
  return out;
}

SpatialKernels random_kernels(int c, std::mt19937_64& rng) {
  return {oracle::random_matrix(c, 9, rng), oracle::random_matrix(c, 9 * c, rng, -0.3, 0.3),
          oracle::random_matrix(1, 9 * c, rng, -0.3, 0.3)};
}

double inner(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

}  // namespace

TEST_CASE("conv2d matches direct cross-correlation") {
  std::mt19937_64 rng(1);
  for (auto [cin, cout, m, n] : {std::array<int, 4>{1, 4, 7, 9}, {3, 2, 5, 5}, {2, 1, 1, 6}}) {
    const Matrix x = oracle::random_matrix(cin, m * n, rng);
    const Matrix k = oracle::random_matrix(cout, 9 * cin, rng);
    CHECK((conv2d(x, m, n, k) - naive_conv(x, m, n, k)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("a centred delta kernel is the identity") {
  std::mt19937_64 rng(2);
  const Matrix x = oracle::random_matrix(1, 30, rng);
  Matrix k = Matrix::Zero(1, 9);
  k(0, 4) = 1.0;
  CHECK(conv2d(x, 5, 6, k) == x);
}

TEST_CASE("col2im is the adjoint of im2col") {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random_matrix(3, 48, rng);
  const Matrix cols = im2col(x, 6, 8);
  const Matrix y = oracle::random_matrix(cols.rows(), cols.cols(), rng);
  CHECK(inner(cols, y) == doctest::Approx(inner(x, col2im(y, 3, 6, 8))).epsilon(1e-12));
}

TEST_CASE("conv2d backward gives the exact linear adjoints") {
  std::mt19937_64 rng(4);
  const int m = 6, n = 7;
  const Matrix x = oracle::random_matrix(2, m * n, rng);
  const Matrix k = oracle::random_matrix(3, 18, rng);
  const Matrix g = oracle::random_matrix(3, m * n, rng);
  Matrix gk;
  const Matrix gx = conv2d_backward(x, m, n, k, g, gk);
  // <g, conv(x, k)> is bilinear, so the gradients are exact directional derivatives.
  const Matrix dx = oracle::random_matrix(2, m * n, rng);
  const Matrix dk = oracle::random_matrix(3, 18, rng);
  CHECK(inner(g, conv2d(dx, m, n, k)) == doctest::Approx(inner(gx, dx)).epsilon(1e-12));
  CHECK(inner(g, conv2d(x, m, n, dk)) == doctest::Approx(inner(gk, dk)).epsilon(1e-12));
}

TEST_CASE("phi matches the layered definition") {
  std::mt19937_64 rng(5);
  const auto k = random_kernels(4, rng);
  const Matrix img = oracle::random_matrix(9, 11, rng);
  const Matrix flat = Eigen::Map<const Matrix>(img.data(), 1, 99);
  const Matrix h1 = naive_conv(flat, 9, 11, k.w1).cwiseMax(0.0);
  const Matrix h2 = naive_conv(h1, 9, 11, k.w2).cwiseMax(0.0);
  const Matrix out = naive_conv(h2, 9, 11, k.w3);
  const Matrix phi = cnn_module_phi(img, k);
  REQUIRE(phi.rows() == 9);
  REQUIRE(phi.cols() == 11);
  CHECK((Eigen::Map<const Matrix>(phi.data(), 1, 99) - out).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(cnn_module_phi(img, SpatialKernels::zeros(4)).isZero(0.0));
}

TEST_CASE("phi backward agrees with central differences") {
  std::mt19937_64 rng(6);
  const int m = 6, n = 5, c = 3;
  for (auto act : {Activation::Identity, Activation::Relu}) {
    auto k = random_kernels(c, rng);
    const Matrix img = oracle::random_matrix(m, n, rng);
    const Matrix g = oracle::random_matrix(m, n, rng);
    PhiTape tape;
    cnn_module_phi(img, k, act, &tape);
    auto gk = SpatialKernels::zeros(c);
    const Matrix gimg = cnn_module_phi_backward(img, tape, k, act, g, gk);
    const double h = 1e-6;
    const auto loss = [&](const Matrix& x, const SpatialKernels& kk) { return inner(g, cnn_module_phi(x, kk, act)); };
    for (int i = 0; i < m * n; i += 4) {
      Matrix xp = img, xm = img;
      xp.data()[i] += h;
      xm.data()[i] -= h;
      CHECK((loss(xp, k) - loss(xm, k)) / (2 * h) == doctest::Approx(gimg.data()[i]).epsilon(1e-5).scale(1.0));
    }
    for (Matrix SpatialKernels::*w : {&SpatialKernels::w1, &SpatialKernels::w2, &SpatialKernels::w3}) {
      for (Eigen::Index i = 0; i < (k.*w).size(); i += 5) {
        auto kp = k, km = k;
        (kp.*w).data()[i] += h;
        (km.*w).data()[i] -= h;
        CHECK((loss(img, kp) - loss(img, km)) / (2 * h) ==
              doctest::Approx((gk.*w).data()[i]).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("backward accumulates into existing gradients") {
  std::mt19937_64 rng(7);
  const auto k = random_kernels(2, rng);
  const Matrix img = oracle::random_matrix(4, 4, rng);
  const Matrix g = oracle::random_matrix(4, 4, rng);
  PhiTape tape;
  cnn_module_phi(img, k, Activation::Relu, &tape);
  auto once = SpatialKernels::zeros(2);
  cnn_module_phi_backward(img, tape, k, Activation::Relu, g, once);
  auto twice = once;
  cnn_module_phi_backward(img, tape, k, Activation::Relu, g, twice);
  CHECK((twice.w2 - 2.0 * once.w2).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("kernel validation") {
  auto k = SpatialKernels::zeros(3);
  CHECK_NOTHROW(k.validate());
  k.w2 = Matrix::Zero(3, 20);
  CHECK_THROWS_AS(k.validate(), InputError);
}

#include "magic/metrics.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace magic {

namespace {

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(who) + ": images are " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " and " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// Valid-mode separable Gaussian filtering.
Matrix filter_valid(const Matrix& img, const std::vector<double>& w) {
  const int k = static_cast<int>(w.size());
  const int m = static_cast<int>(img.rows());
  const int n = static_cast<int>(img.cols());
  Matrix tmp(m, n - k + 1);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c + k <= n; ++c) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += w[i] * img(r, c + i);
      tmp(r, c) = s;
    }
  Matrix out(m - k + 1, n - k + 1);
  for (int r = 0; r + k <= m; ++r)
    for (int c = 0; c < out.cols(); ++c) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += w[i] * tmp(r + i, c);
      out(r, c) = s;
    }
  return out;
}

}  // namespace

double dynamic_range(const ImageGrid& img) { return img.values.maxCoeff() - img.values.minCoeff(); }

std::optional<double> psnr(const ImageGrid& pred, const ImageGrid& ref, double peak) {
  require_same_shape(pred, ref, "psnr");
  if (!(peak > 0.0)) throw InputError("psnr: peak must be > 0");
  const double mse = (pred.values - ref.values).squaredNorm() / static_cast<double>(ref.values.size());
  if (mse == 0.0) return std::nullopt;
  return 10.0 * std::log10(peak * peak / mse);
}

std::optional<double> psnr(const ImageGrid& pred, const ImageGrid& ref) {
  return psnr(pred, ref, dynamic_range(ref));
}

double ssim(const ImageGrid& pred, const ImageGrid& ref, const SsimOptions& opts) {
  require_same_shape(pred, ref, "ssim");
  if (opts.window < 1 || pred.rows() < opts.window || pred.cols() < opts.window)
    throw InputError("ssim: image is smaller than the " + std::to_string(opts.window) + "x" +
                     std::to_string(opts.window) + " window");
  double range = opts.dynamic_range > 0.0 ? opts.dynamic_range : dynamic_range(ref);
  if (!(range > 0.0)) range = 1.0;
  std::vector<double> w(opts.window);
  double total = 0.0;
  for (int i = 0; i < opts.window; ++i) {
    const double x = i - 0.5 * (opts.window - 1);
    w[i] = std::exp(-x * x / (2.0 * opts.sigma * opts.sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;

  const Matrix& a = pred.values;
  const Matrix& b = ref.values;
  const Matrix mu_a = filter_valid(a, w);
  const Matrix mu_b = filter_valid(b, w);
  const Matrix aa = filter_valid(a.cwiseProduct(a), w);
  const Matrix bb = filter_valid(b.cwiseProduct(b), w);
  const Matrix ab = filter_valid(a.cwiseProduct(b), w);
  const double c1 = (opts.k1 * range) * (opts.k1 * range);
  const double c2 = (opts.k2 * range) * (opts.k2 * range);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data()[i];
    const double mb = mu_b.data()[i];
    const double va = aa.data()[i] - ma * ma;
    const double vb = bb.data()[i] - mb * mb;
    const double cov = ab.data()[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

RoiStats roi_stats(const ImageGrid& img, const Roi& roi) {
  if (roi.height < 1 || roi.width < 1) throw InputError("roi_stats: region is empty");
  if (roi.row < 0 || roi.col < 0 || roi.row + roi.height > img.rows() || roi.col + roi.width > img.cols())
    throw InputError("roi_stats: region lies outside the image");
  const auto block = img.values.block(roi.row, roi.col, roi.height, roi.width);
  const double n = static_cast<double>(block.size());
  RoiStats s;
  s.mean = block.sum() / n;
  if (block.size() > 1) s.sd = std::sqrt((block.array() - s.mean).square().sum() / (n - 1.0));
  return s;
}

}  // namespace magic

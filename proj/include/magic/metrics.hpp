#pragma once

#include "magic/geometry.hpp"

#include <optional>

namespace magic {

// PSNR in dB, or std::nullopt when the images are identical (MSE = 0).
std::optional<double> psnr(const ImageGrid& pred, const ImageGrid& ref, double peak);
// Peak defaults to the dynamic range (max - min) of ref.
std::optional<double> psnr(const ImageGrid& pred, const ImageGrid& ref);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 0.0;  // <= 0: dynamic range of ref
};

// Mean local SSIM over the positions where the Gaussian window fits.
double ssim(const ImageGrid& pred, const ImageGrid& ref, const SsimOptions& opts = {});

struct Roi {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
};

struct RoiStats {
  double mean = 0.0;
  double sd = 0.0;  // n - 1 normalisation; 0 for a single pixel
};

RoiStats roi_stats(const ImageGrid& img, const Roi& roi);

double dynamic_range(const ImageGrid& img);

}  // namespace magic

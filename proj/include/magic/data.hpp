#pragma once

#include "magic/geometry.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace magic {

enum class PhantomKind { SheppLogan, RandomEllipses };

PhantomKind parse_phantom_kind(const std::string& name);
std::string to_string(PhantomKind k);

// Values clamped to [0, 1]. The seed only affects random ellipses.
ImageGrid make_phantom(PhantomKind kind, int m, int n, std::uint64_t seed = 0);

// Raw array file: a text header terminated by an "end" line, then
// rows * cols little-endian float32 values in row-major order.
//
//   MAGICRAW 1
//   rows <m>
//   cols <n>
//   pixel_size <mm>
//   dose <tag>
//   end
struct RawHeader {
  int rows = 0;
  int cols = 0;
  double pixel_size = 0.0;
  std::string dose = "none";
};

struct RawArray {
  RawHeader header;
  Matrix values;
};

void save_raw(const Matrix& values, const std::string& path, double pixel_size = 0.0,
              const std::string& dose = "none");
RawArray load_raw(const std::string& path);

void save_image(const ImageGrid& img, const std::string& path, double pixel_size = 0.0,
                const std::string& dose = "none");
ImageGrid load_image(const std::string& path);
void save_sinogram(const Sinogram& sino, const std::string& path, const std::string& dose = "none");
Sinogram load_sinogram(const std::string& path);

// Optional affine map from stored values to Hounsfield units.
struct HuCalibration {
  double slope = 1.0;
  double intercept = 0.0;
};

// 8-bit grey PNG: window [lo, hi] maps linearly onto 0..255, clamped.
// With a calibration the window is given in HU.
struct DisplayWindow {
  double lo = 0.0;
  double hi = 1.0;
};

std::vector<std::uint8_t> window_to_gray(const ImageGrid& img, const DisplayWindow& window,
                                         const std::optional<HuCalibration>& hu = std::nullopt);
void save_png(const ImageGrid& img, const std::string& path, const DisplayWindow& window,
              const std::optional<HuCalibration>& hu = std::nullopt);

struct DatasetItem {
  std::string id;
  ImageGrid image;
  std::string path;  // source file, empty for generated phantoms
  bool train = true;
  bool labeled = false;
};

struct Dataset {
  std::vector<DatasetItem> items;

  std::vector<const DatasetItem*> train() const;
  std::vector<const DatasetItem*> test() const;
  double labeled_fraction() const;
};

// Seeded shuffle; the first round(train_fraction * N) items train, the first
// ceil(labeled_fraction * |train|) shuffled train items are labeled.
Dataset split_dataset(std::vector<DatasetItem> items, double train_fraction, double labeled_fraction,
                      std::uint64_t seed);

// Every *.raw file of a directory in name order.
std::vector<DatasetItem> load_image_directory(const std::string& dir);

// JSON list of {id, path, split, labeled}.
void write_manifest(const Dataset& ds, const std::string& path);
Dataset read_manifest(const std::string& path);

}  // namespace magic

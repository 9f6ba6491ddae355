#include "magic/data.hpp"

#include <png.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

namespace magic {

static_assert(std::endian::native == std::endian::little, "raw arrays are read and written as native little-endian");

PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "shepp-logan") return PhantomKind::SheppLogan;
  if (name == "random-ellipses") return PhantomKind::RandomEllipses;
  throw ConfigError("unknown phantom '" + name + "' (expected shepp-logan or random-ellipses)");
}

std::string to_string(PhantomKind k) { return k == PhantomKind::SheppLogan ? "shepp-logan" : "random-ellipses"; }

namespace {

struct Ellipse {
  double amplitude, a, b, x0, y0, phi_deg;
};

// Modified (high-contrast) Shepp-Logan head.
constexpr std::array<Ellipse, 10> kSheppLogan = {{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

ImageGrid rasterize(const std::vector<Ellipse>& ellipses, int m, int n) {
  ImageGrid img(m, n);
  for (const auto& e : ellipses) {
    const double phi = e.phi_deg * std::numbers::pi / 180.0;
    const double cp = std::cos(phi), sp = std::sin(phi);
    for (int r = 0; r < m; ++r) {
      const double y = 1.0 - (r + 0.5) * 2.0 / m;
      for (int c = 0; c < n; ++c) {
        const double x = (c + 0.5) * 2.0 / n - 1.0;
        const double u = (x - e.x0) * cp + (y - e.y0) * sp;
        const double v = -(x - e.x0) * sp + (y - e.y0) * cp;
        if ((u / e.a) * (u / e.a) + (v / e.b) * (v / e.b) <= 1.0) img.values(r, c) += e.amplitude;
      }
    }
  }
  img.values = img.values.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

std::vector<Ellipse> random_ellipses(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int count = std::uniform_int_distribution<int>(5, 12)(rng);
  std::vector<Ellipse> out;
  // Body outline first, then internal structures inside it.
  out.push_back({uni(0.5, 0.8), uni(0.6, 0.85), uni(0.6, 0.85), uni(-0.05, 0.05), uni(-0.05, 0.05), uni(0.0, 180.0)});
  for (int i = 1; i < count; ++i) {
    const double radius = uni(0.0, 0.45);
    const double theta = uni(0.0, 2.0 * std::numbers::pi);
    const double sign = uni(0.0, 1.0) < 0.65 ? 1.0 : -1.0;
    out.push_back({sign * uni(0.08, 0.35), uni(0.04, 0.25), uni(0.04, 0.25), radius * std::cos(theta),
                   radius * std::sin(theta), uni(0.0, 180.0)});
  }
  return out;
}

}  // namespace

ImageGrid make_phantom(PhantomKind kind, int m, int n, std::uint64_t seed) {
  if (m < 16 || n < 16) throw ConfigError("make_phantom: grid must be at least 16x16");
  if (kind == PhantomKind::SheppLogan) return rasterize({kSheppLogan.begin(), kSheppLogan.end()}, m, n);
  return rasterize(random_ellipses(seed), m, n);
}

void save_raw(const Matrix& values, const std::string& path, double pixel_size, const std::string& dose) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "MAGICRAW 1\nrows " << values.rows() << "\ncols " << values.cols() << "\npixel_size " << pixel_size
      << "\ndose " << (dose.empty() ? "none" : dose) << "\nend\n";
  os << hdr.str();
  std::vector<float> buf(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values.data()[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + path);
}

RawArray load_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  RawArray out;
  std::string line;
  std::size_t offset = 0;
  bool first = true, rows = false, cols = false, ended = false;
  while (std::getline(is, line)) {
    const std::size_t here = offset;
    offset += line.size() + 1;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (first) {
      int version = 0;
      if (key != "MAGICRAW" || !(ls >> version) || version != 1)
        throw ParseError(path + ": expected 'MAGICRAW 1' header", here);
      first = false;
      continue;
    }
    if (key == "end") {
      ended = true;
      break;
    }
    bool ok = true;
    if (key == "rows") {
      ok = static_cast<bool>(ls >> out.header.rows) && out.header.rows > 0;
      rows = true;
    } else if (key == "cols") {
      ok = static_cast<bool>(ls >> out.header.cols) && out.header.cols > 0;
      cols = true;
    } else if (key == "pixel_size") {
      ok = static_cast<bool>(ls >> out.header.pixel_size);
    } else if (key == "dose") {
      ok = static_cast<bool>(ls >> out.header.dose);
    } else {
      throw ParseError(path + ": unknown header key '" + key + "'", here);
    }
    if (!ok) throw ParseError(path + ": malformed value for '" + key + "'", here);
  }
  if (first) throw ParseError(path + ": empty file", 0);
  if (!ended) throw ParseError(path + ": header has no 'end' line", offset);
  if (!rows || !cols) throw ParseError(path + ": header lacks rows/cols", offset);
  const std::size_t count = static_cast<std::size_t>(out.header.rows) * out.header.cols;
  std::vector<float> buf(count);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(float))
    throw ParseError(path + ": payload is truncated", offset + static_cast<std::size_t>(is.gcount()));
  out.values.resize(out.header.rows, out.header.cols);
  for (std::size_t i = 0; i < count; ++i) out.values.data()[i] = buf[i];
  return out;
}

void save_image(const ImageGrid& img, const std::string& path, double pixel_size, const std::string& dose) {
  save_raw(img.values, path, pixel_size, dose);
}

ImageGrid load_image(const std::string& path) { return ImageGrid(load_raw(path).values); }

void save_sinogram(const Sinogram& sino, const std::string& path, const std::string& dose) {
  save_raw(sino.values, path, 0.0, dose);
}

Sinogram load_sinogram(const std::string& path) { return Sinogram(load_raw(path).values); }

std::vector<std::uint8_t> window_to_gray(const ImageGrid& img, const DisplayWindow& window,
                                         const std::optional<HuCalibration>& hu) {
  if (!(window.hi > window.lo)) throw ConfigError("display window must satisfy lo < hi");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(img.values.size()));
  for (Eigen::Index i = 0; i < img.values.size(); ++i) {
    double v = img.values.data()[i];
    if (hu) v = hu->slope * v + hu->intercept;
    const double t = std::clamp((v - window.lo) / (window.hi - window.lo), 0.0, 1.0);
    out[i] = static_cast<std::uint8_t>(std::lround(t * 255.0));
  }
  return out;
}

void save_png(const ImageGrid& img, const std::string& path, const DisplayWindow& window,
              const std::optional<HuCalibration>& hu) {
  const auto gray = window_to_gray(img, window, hu);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.cols(), img.rows(), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.rows(); ++r)
    png_write_row(png, const_cast<png_bytep>(gray.data() + static_cast<std::size_t>(r) * img.cols()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<const DatasetItem*> Dataset::train() const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items)
    if (it.train) out.push_back(&it);
  return out;
}

std::vector<const DatasetItem*> Dataset::test() const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items)
    if (!it.train) out.push_back(&it);
  return out;
}

double Dataset::labeled_fraction() const {
  const auto tr = train();
  if (tr.empty()) return 0.0;
  const auto labeled = std::count_if(tr.begin(), tr.end(), [](const DatasetItem* i) { return i->labeled; });
  return static_cast<double>(labeled) / static_cast<double>(tr.size());
}

Dataset split_dataset(std::vector<DatasetItem> items, double train_fraction, double labeled_fraction,
                      std::uint64_t seed) {
  if (items.empty()) throw InputError("split_dataset: no items");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0) || !(labeled_fraction >= 0.0 && labeled_fraction <= 1.0))
    throw InputError("split_dataset: fractions must lie in [0, 1]");
  std::vector<std::string> ids;
  for (const auto& it : items) ids.push_back(it.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw InputError("split_dataset: ids must be unique");

  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(items.size())));
  const auto n_labeled =
      static_cast<std::size_t>(std::ceil(labeled_fraction * static_cast<double>(n_train) - 1e-9));
  Dataset ds;
  ds.items = std::move(items);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    ds.items[i].train = i < n_train;
    ds.items[i].labeled = i < n_train && i < n_labeled;
  }
  return ds;
}

std::vector<DatasetItem> load_image_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".raw") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<DatasetItem> out;
  for (const auto& f : files) {
    DatasetItem it;
    it.id = f.stem().string();
    it.path = f.string();
    it.image = load_image(it.path);
    out.push_back(std::move(it));
  }
  return out;
}

void write_manifest(const Dataset& ds, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& it : ds.items)
    j.push_back({{"id", it.id}, {"path", it.path}, {"split", it.train ? "train" : "test"}, {"labeled", it.labeled}});
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path);
  os << j.dump(2) << '\n';
}

Dataset read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  if (!j.is_array()) throw ParseError(path + ": manifest must be a JSON list", 0);
  Dataset ds;
  for (const auto& e : j) {
    DatasetItem it;
    it.id = e.at("id").get<std::string>();
    it.path = e.value("path", "");
    it.train = e.value("split", "train") == "train";
    it.labeled = e.value("labeled", false);
    if (!it.path.empty()) it.image = load_image(it.path);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

}  // namespace magic

#pragma once

#include "magic/geometry.hpp"

#include <string>

namespace magic {

enum class FbpFilter { Ramp, Hann };

FbpFilter parse_fbp_filter(const std::string& name);
std::string to_string(FbpFilter f);

// Equiangular fan-beam FBP: cosine pre-weighting, ramp filtering per view in
// the frequency domain (zero-padded to a power of two), then a
// distance-weighted pixel-driven backprojection over the full scan.
ImageGrid fbp_reconstruct(const Sinogram& sino, const ScanGeometry& geom, FbpFilter filter = FbpFilter::Ramp);

}  // namespace magic

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rover/camgeo.hpp"
#include "rover/errors.hpp"
#include "rover/imageproc.hpp"

namespace rover {

// Depth/image dimensions disagree with the expected companion size.
struct DimensionMismatch : Error {
    using Error::Error;
};

// A PLY/PFM header deviates from the supported layout.
struct MalformedHeader : Error {
    using Error::Error;
};

// PLY vertex rows do not match the declared element count.
struct VertexCountMismatch : Error {
    using Error::Error;
};

// No anchor had a usable depth neighborhood.
struct NoValidAnchors : Error {
    using Error::Error;
};

// Row-major depth raster in model units. Values <= 0 are holes.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;

    double at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
    double& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
    bool valid(int x, int y) const { return at(x, y) > 0.0; }
};

// Affine map from model depth to metric range: z = scale * d + shift.
// degenerate marks the fallback fit (scale pinned to 1) used when the
// anchors cannot determine a scale.
struct MetricAlignment {
    double scale = 1.0;
    double shift = 0.0;  // meters
    bool degenerate = false;
};

struct CloudPoint {
    Vec3 p{0.0, 0.0, 0.0};
    std::uint8_t gray = 0;
};

struct PointCloud {
    std::vector<CloudPoint> points;
};

// Reads a depth raster: PFM ("Pf", single channel, little-endian, rows
// stored bottom-up) or 16-bit PGM whose values are multiplied by the factor
// in a "<path>.scale" sidecar text file. Pass the companion image size to
// enforce it; -1 skips the check.
DepthMap load_depth(const std::string& path, int expect_width = -1,
                    int expect_height = -1);

struct DepthAnchor {
    Pixel px;            // position in the depth raster
    double distance_cm;  // metric range the model should report there
};

// Fits z = s*d + t by least squares over the anchors. Each anchor's model
// depth is the median of the valid entries in its 5x5 neighborhood; anchors
// with no valid neighborhood (or a non-positive target) are dropped. One
// anchor fixes t = 0. Anchors with no depth spread cannot determine s, so
// the fit falls back to s = 1, t = mean residual, and sets degenerate.
MetricAlignment fit_alignment(const DepthMap& depth,
                              const std::vector<DepthAnchor>& anchors);

// Lifts every valid pixel on the stride grid to 3D. The aligned value
// z = s*d + t is the range along the pixel ray by default, or the camera-Z
// coordinate under DistanceConvention::ZDepth. Intensity comes from the
// companion image. Pixels whose aligned depth is not positive are skipped.
PointCloud backproject(const DepthMap& depth, const MetricAlignment& align,
                       const CahvCamera& cam, const GrayImage& img, int stride = 1,
                       DistanceConvention conv = DistanceConvention::Euclidean);

// ASCII PLY with the fixed header
//   ply / format ascii 1.0 / element vertex N /
//   property float x|y|z / property uchar gray / end_header
// Coordinates are written as float32; read_ply is the exact inverse.
void write_ply(const PointCloud& cloud, const std::string& path);
PointCloud read_ply(const std::string& path);

}  // namespace rover

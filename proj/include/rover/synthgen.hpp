#pragma once

#include <string>
#include <vector>

#include "rover/camgeo.hpp"
#include "rover/errors.hpp"

namespace rover {

/// One supervised example: a left/right pixel pair and the 3D point that
/// produced it (world frame, meters).
struct TriangulationSample {
    double x1 = 0, y1 = 0;  // left image
    double x2 = 0, y2 = 0;  // right image
    Vec3 truth = Vec3::Zero();
};

struct SceneConfig {
    double z_min = 1.0;   // meters, depth along the left optical axis
    double z_max = 10.0;
    int n = 0;
    double noise_sigma = 0.0;  // pixels, added to every coordinate
    std::uint64_t seed = 0;
    int width = 1024;   // image bounds for rejection sampling
    int height = 1024;
};

struct InvalidSceneConfig : Error {
    using Error::Error;
};
struct EmptyFrustumIntersection : Error {
    using Error::Error;
};
struct InsufficientSamples : Error {
    using Error::Error;
};
struct DatasetParseError : Error {
    using Error::Error;
};

/// Samples points uniformly over the left image footprint at a uniformly
/// drawn depth, keeps those whose right projection stays in bounds, and
/// attaches Gaussian pixel noise afterwards. A sample whose noisy pixels
/// leave the image (or lose positive disparity) is resampled whole, never
/// clamped. Deterministic for a fixed seed. Throws
/// EmptyFrustumIntersection when 1000*n draws cannot produce n samples.
std::vector<TriangulationSample> generate_dataset(const StereoRig& rig,
                                                  const SceneConfig& cfg);

struct DatasetSplit {
    std::vector<TriangulationSample> train;
    std::vector<TriangulationSample> val;
    std::vector<TriangulationSample> test;
};

/// Deterministic shuffled partition. Sizes are round(n*frac) for train and
/// val; test takes the remainder. Throws InsufficientSamples if any part
/// would be empty.
DatasetSplit split_dataset(const std::vector<TriangulationSample>& samples,
                           double train_frac, double val_frac,
                           std::uint64_t seed);

/// CSV with header x1,y1,x2,y2,X,Y,Z; doubles at full precision.
void save_dataset(const std::vector<TriangulationSample>& samples,
                  const std::string& path);
std::vector<TriangulationSample> load_dataset(const std::string& path);

}  // namespace rover

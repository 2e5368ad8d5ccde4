#pragma once

#include <string>
#include <vector>

#include "rover/bbox.hpp"
#include "rover/camgeo.hpp"
#include "rover/errors.hpp"
#include "rover/imageproc.hpp"

namespace rover {

struct Keypoint {
    Pixel px;
    double response = 0.0;
    std::vector<double> descriptor;
};

struct Match {
    int left_index = 0;
    int right_index = 0;
    double dist = 0.0;  // descriptor-space L2 distance
};

struct DetectConfig {
    int max_keypoints = 64;     // top-K by corner response
    double min_response = 1e-8;  // on /255-scaled intensities
    double harris_k = 0.04;
    double window_sigma = 1.0;  // Gaussian window, radius 2 (5x5)
    int border_margin = 4;      // px to the image border; keeps the patch valid
};

struct EmptyRoi : Error {
    using Error::Error;
};
struct DescriptorLengthMismatch : Error {
    using Error::Error;
};
struct BadHeader : Error {
    using Error::Error;
};
struct RaggedRow : Error {
    using Error::Error;
};

/// Harris corners inside a region of interest.
///
/// Response uses central-difference gradients of the /255-scaled image and a
/// unit-sum Gaussian window (sigma 1.0, radius 2): R = det(M) - k tr(M)^2.
/// Non-maximum suppression over a 5x5 neighborhood keeps the first point in
/// raster order among equal responses. Results are the top-K by response,
/// strongest first. Each keypoint carries an 8x8 intensity patch starting at
/// (x-3, y-3), mean-subtracted and L2-normalized, flattened row-major to 64
/// values (all zeros for a constant patch). Points closer than
/// border_margin to the image border are dropped; the roi is clamped to the
/// image before use.
std::vector<Keypoint> detect(const GrayImage& img, const BBox& roi,
                             const DetectConfig& cfg = {});

/// Mutual-best brute-force matching: (i, j) is emitted iff j minimizes the
/// distance from left i over all right keypoints and i minimizes the
/// distance to right j over all left keypoints, ties broken by the lowest
/// index. With ratio > 0, a candidate is additionally rejected unless its
/// distance is at most ratio times the second-best distance in both
/// directions (off by default). Output is ordered by left index.
std::vector<Match> match_two_way(const std::vector<Keypoint>& left,
                                 const std::vector<Keypoint>& right,
                                 double ratio = 0.0);

/// Keypoint CSV: header "x,y,d0,...,d{n-1}", one keypoint per row. The
/// descriptor length is inferred from the header.
std::vector<Keypoint> load_keypoints(const std::string& path);
void save_keypoints(const std::vector<Keypoint>& kps, const std::string& path);

}  // namespace rover

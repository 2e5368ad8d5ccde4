#pragma once

#include <Eigen/Core>

#include <string>

#include "rover/errors.hpp"

namespace rover {

using Vec3 = Eigen::Vector3d;

/// Continuous image coordinates: x = column, y = row.
struct Pixel {
    double x = 0.0;
    double y = 0.0;
};

/// Pinhole camera parameterized by four 3-vectors: center, unit optical
/// axis, and the pixel-scaled horizontal/vertical vectors. Projection is
///   x = ((P - c) . h) / ((P - c) . a),  y = ((P - c) . v) / ((P - c) . a).
struct CahvCamera {
    Vec3 c = Vec3::Zero();
    Vec3 a = Vec3::UnitZ();
    Vec3 h = Vec3::Zero();
    Vec3 v = Vec3::Zero();

    /// Effective horizontal focal length |h - (h.a) a| in pixels.
    double focal_h() const;
    /// Effective vertical focal length |v - (v.a) a| in pixels.
    double focal_v() const;

    /// Throws InvalidCamera unless |a| = 1 (within 1e-9), both focal
    /// lengths are positive and every component is finite.
    void validate() const;
};

/// Left/right camera pair. The world frame is anchored at the left camera
/// center; baseline is derived from the camera centers, never stored
/// independently.
struct StereoRig {
    CahvCamera left;
    CahvCamera right;
    double baseline = 0.0;  // meters, |left.c - right.c|

    static StereoRig from_cameras(const CahvCamera& left, const CahvCamera& right);
};

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length, dir . a > 0
};

struct TriangulationResult {
    Vec3 point;
    bool negative_depth = false;  // solution behind either camera
};

struct InvalidCamera : Error {
    using Error::Error;
};
struct PointBehindCamera : Error {
    PointBehindCamera() : Error("point at or behind the camera plane") {}
};
struct DegenerateRay : Error {
    DegenerateRay() : Error("pixel constraints are parallel; no unique ray") {}
};
struct RankDeficient : Error {
    RankDeficient() : Error("triangulation system has numerical rank < 3") {}
};
struct InvalidFov : Error {
    using Error::Error;
};
struct RigParseError : Error {
    using Error::Error;
};

/// Project a world point into the image. Throws PointBehindCamera when the
/// point is not strictly in front of the camera plane ((p - c) . a <= 1e-12).
Pixel project(const CahvCamera& cam, const Vec3& p);

/// Back-project a pixel to the viewing ray through it. The direction is the
/// unit solution of (h - x a) . d = 0, (v - y a) . d = 0 with d . a > 0.
Ray pixel_ray(const CahvCamera& cam, const Pixel& px);

/// Least-squares two-view triangulation: stacks the four linear constraints
///   (h_L - x_L a_L) . (P - c_L) = 0,  (v_L - y_L a_L) . (P - c_L) = 0,
///   (h_R - x_R a_R) . (P - c_R) = 0,  (v_R - y_R a_R) . (P - c_R) = 0
/// and solves the 4x3 system by SVD. Throws RankDeficient when the smallest
/// singular value is below 1e-10 times the largest. The negative_depth flag
/// is set when the solution lies behind either camera.
TriangulationResult triangulate(const StereoRig& rig, const Pixel& left_px,
                                const Pixel& right_px);

/// Fronto-parallel rig: focal (width/2)/tan(fov/2), principal point at the
/// pixel-grid center ((width-1)/2, (height-1)/2), right camera displaced by
/// +baseline along x.
StereoRig make_parallel_rig(double baseline_m, int image_width, int image_height,
                            double fov_deg);

enum class DistanceConvention {
    Euclidean,  // |P| from the left camera center (default)
    ZDepth,     // Z component only
};

double distance_of(const Vec3& p,
                   DistanceConvention conv = DistanceConvention::Euclidean);

/// Rig file I/O. Text format with [left] / [right] blocks each holding
/// c/a/h/v lines of three decimal numbers; see docs/formats.md.
StereoRig load_rig(const std::string& path);
void save_rig(const StereoRig& rig, const std::string& path);

}  // namespace rover

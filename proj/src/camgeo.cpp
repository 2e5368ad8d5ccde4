#include "rover/camgeo.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace rover {

namespace {

Vec3 off_axis(const Vec3& w, const Vec3& a) { return w - w.dot(a) * a; }

}  // namespace

double CahvCamera::focal_h() const { return off_axis(h, a).norm(); }
double CahvCamera::focal_v() const { return off_axis(v, a).norm(); }

void CahvCamera::validate() const {
    for (const Vec3* w : {&c, &a, &h, &v}) {
        if (!w->allFinite()) throw InvalidCamera("camera vector is not finite");
    }
    if (std::abs(a.norm() - 1.0) > 1e-9)
        throw InvalidCamera("optical axis is not unit length");
    if (!(focal_h() > 0.0)) throw InvalidCamera("horizontal focal length is not positive");
    if (!(focal_v() > 0.0)) throw InvalidCamera("vertical focal length is not positive");
}

StereoRig StereoRig::from_cameras(const CahvCamera& left, const CahvCamera& right) {
    left.validate();
    right.validate();
    StereoRig rig;
    rig.left = left;
    rig.right = right;
    rig.baseline = (left.c - right.c).norm();
    return rig;
}

Pixel project(const CahvCamera& cam, const Vec3& p) {
    const Vec3 d = p - cam.c;
    const double depth = d.dot(cam.a);
    if (depth <= 1e-12) throw PointBehindCamera();
    return Pixel{d.dot(cam.h) / depth, d.dot(cam.v) / depth};
}

Ray pixel_ray(const CahvCamera& cam, const Pixel& px) {
    // The direction is orthogonal to both constraint rows, i.e. their
    // cross product.
    const Vec3 rh = cam.h - px.x * cam.a;
    const Vec3 rv = cam.v - px.y * cam.a;
    Vec3 d = rh.cross(rv);
    const double n = d.norm();
    if (n < 1e-12 * rh.norm() * rv.norm() || n == 0.0) throw DegenerateRay();
    d /= n;
    if (d.dot(cam.a) < 0.0) d = -d;
    return Ray{cam.c, d};
}

TriangulationResult triangulate(const StereoRig& rig, const Pixel& left_px,
                                const Pixel& right_px) {
    Eigen::Matrix<double, 4, 3> m;
    Eigen::Matrix<double, 4, 1> b;
    const CahvCamera* cams[2] = {&rig.left, &rig.right};
    const Pixel* pxs[2] = {&left_px, &right_px};
    for (int i = 0; i < 2; ++i) {
        const CahvCamera& cam = *cams[i];
        const Vec3 rh = cam.h - pxs[i]->x * cam.a;
        const Vec3 rv = cam.v - pxs[i]->y * cam.a;
        m.row(2 * i) = rh.transpose();
        m.row(2 * i + 1) = rv.transpose();
        b(2 * i) = rh.dot(cam.c);
        b(2 * i + 1) = rv.dot(cam.c);
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 4, 3>> svd(
        m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) == 0.0 || sv(2) / sv(0) < 1e-10) throw RankDeficient();
    TriangulationResult res;
    res.point = svd.solve(b);
    res.negative_depth = (res.point - rig.left.c).dot(rig.left.a) <= 0.0 ||
                         (res.point - rig.right.c).dot(rig.right.a) <= 0.0;
    return res;
}

StereoRig make_parallel_rig(double baseline_m, int image_width, int image_height,
                            double fov_deg) {
    if (!(fov_deg > 0.0) || !(fov_deg < 180.0))
        throw InvalidFov("horizontal field of view must lie in (0, 180) degrees");
    if (image_width < 2 || image_height < 2)
        throw InvalidCamera("image must be at least 2x2");
    const double f =
        (image_width / 2.0) / std::tan(fov_deg * M_PI / 180.0 / 2.0);
    const double cx = (image_width - 1) / 2.0;
    const double cy = (image_height - 1) / 2.0;
    CahvCamera left;
    left.c = Vec3::Zero();
    left.a = Vec3::UnitZ();
    left.h = Vec3(f, 0.0, cx);
    left.v = Vec3(0.0, f, cy);
    CahvCamera right = left;
    right.c = Vec3(baseline_m, 0.0, 0.0);
    return StereoRig::from_cameras(left, right);
}

double distance_of(const Vec3& p, DistanceConvention conv) {
    return conv == DistanceConvention::Euclidean ? p.norm() : p.z();
}

namespace {

void write_vec(std::ostream& os, const char* name, const Vec3& w) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s = %.17g %.17g %.17g", name, w.x(), w.y(),
                  w.z());
    os << buf << '\n';
}

}  // namespace

void save_rig(const StereoRig& rig, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open rig file for writing: " + path);
    const CahvCamera* cams[2] = {&rig.left, &rig.right};
    const char* names[2] = {"left", "right"};
    for (int i = 0; i < 2; ++i) {
        os << '[' << names[i] << "]\n";
        write_vec(os, "c", cams[i]->c);
        write_vec(os, "a", cams[i]->a);
        write_vec(os, "h", cams[i]->h);
        write_vec(os, "v", cams[i]->v);
    }
    if (!os) throw IoError("failed writing rig file: " + path);
}

StereoRig load_rig(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open rig file: " + path);
    std::map<std::string, CahvCamera> cams;
    std::map<std::string, int> seen;  // bitmask of c/a/h/v per block
    CahvCamera* cur = nullptr;
    int* cur_seen = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        // Tolerate surrounding whitespace, blank lines and # comments.
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        std::string t = line.substr(b, e - b + 1);
        if (t[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (t.front() == '[') {
            if (t.back() != ']') throw RigParseError(where + ": unterminated section header");
            std::string name = t.substr(1, t.size() - 2);
            if (name != "left" && name != "right")
                throw RigParseError(where + ": unknown section [" + name + "]");
            if (cams.count(name))
                throw RigParseError(where + ": duplicate section [" + name + "]");
            cur = &cams[name];
            cur_seen = &seen[name];
            continue;
        }
        if (!cur) throw RigParseError(where + ": vector line before any section");
        std::istringstream ls(t);
        std::string key, eq;
        double x, y, z;
        if (!(ls >> key >> eq >> x >> y >> z) || eq != "=")
            throw RigParseError(where + ": expected 'c|a|h|v = x y z'");
        std::string trail;
        if (ls >> trail) throw RigParseError(where + ": trailing data after vector");
        int bit;
        Vec3* dst;
        if (key == "c") { bit = 1; dst = &cur->c; }
        else if (key == "a") { bit = 2; dst = &cur->a; }
        else if (key == "h") { bit = 4; dst = &cur->h; }
        else if (key == "v") { bit = 8; dst = &cur->v; }
        else throw RigParseError(where + ": unknown vector '" + key + "'");
        if (*cur_seen & bit)
            throw RigParseError(where + ": duplicate vector '" + key + "'");
        *cur_seen |= bit;
        *dst = Vec3(x, y, z);
    }
    for (const char* name : {"left", "right"}) {
        if (!cams.count(name))
            throw RigParseError(path + ": missing section [" + std::string(name) + "]");
        if (seen[name] != 15)
            throw RigParseError(path + ": section [" + std::string(name) +
                                "] is missing one of c/a/h/v");
    }
    try {
        return StereoRig::from_cameras(cams["left"], cams["right"]);
    } catch (const InvalidCamera& e) {
        throw RigParseError(path + ": " + e.what());
    }
}

}  // namespace rover

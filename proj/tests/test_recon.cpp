#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "rover/recon.hpp"

using namespace rover;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/rover_recon_") + name;
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Writes a little-endian PFM; rows holds the raster top-down, the file
// stores it bottom-up.
void write_pfm(const std::string& path, int w, int h,
               const std::vector<float>& rows) {
    std::ofstream os(path, std::ios::binary);
    os << "Pf\n" << w << " " << h << "\n-1.0\n";
    for (int y = h - 1; y >= 0; --y)
        os.write(reinterpret_cast<const char*>(&rows[static_cast<size_t>(y) * w]),
                 static_cast<std::streamsize>(sizeof(float)) * w);
}

void write_pgm16(const std::string& path, int w, int h,
                 const std::vector<uint16_t>& vals, double scale) {
    std::ofstream os(path, std::ios::binary);
    os << "P5\n" << w << " " << h << "\n65535\n";
    for (uint16_t v : vals) {
        const unsigned char b[2] = {static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 2);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", scale);
    spit(path + ".scale", buf);
}

DepthMap const_map(int w, int h, double v) {
    DepthMap m;
    m.width = w;
    m.height = h;
    m.depth.assign(static_cast<size_t>(w) * h, v);
    return m;
}

GrayImage const_image(int w, int h, uint8_t v) {
    GrayImage img;
    img.width = w;
    img.height = h;
    img.data.assign(static_cast<size_t>(w) * h, v);
    return img;
}

// 5x5 valid-neighborhood median, written independently of the library.
double anchor_depth(const DepthMap& m, int cx, int cy) {
    std::vector<double> v;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            const int x = cx + dx, y = cy + dy;
            if (x < 0 || x >= m.width || y < 0 || y >= m.height) continue;
            if (m.at(x, y) > 0.0) v.push_back(m.at(x, y));
        }
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

TEST_CASE("pfm values load top-down") {
    const std::string p = tmp_path("d.pfm");
    write_pfm(p, 2, 2, {1.0f, 2.0f, 3.0f, 4.0f});
    const DepthMap m = load_depth(p);
    REQUIRE(m.width == 2);
    REQUIRE(m.height == 2);
    CHECK(m.at(0, 0) == 1.0);
    CHECK(m.at(1, 0) == 2.0);
    CHECK(m.at(0, 1) == 3.0);
    CHECK(m.at(1, 1) == 4.0);
}

TEST_CASE("sixteen bit pgm applies the sidecar scale") {
    const std::string p = tmp_path("d.pgm");
    write_pgm16(p, 2, 1, {1000, 40000}, 0.001);
    const DepthMap m = load_depth(p);
    REQUIRE(m.width == 2);
    CHECK(m.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.at(1, 0) == doctest::Approx(40.0).epsilon(1e-15));
}

TEST_CASE("depth loading diagnostics") {
    const std::string p = tmp_path("d.pfm");

    write_pfm(p, 2, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(load_depth(p, 3, 3), DimensionMismatch);
    CHECK(load_depth(p, 2, 2).width == 2);
    CHECK(load_depth(p, -1, -1).width == 2);

    spit(p, "P7\nnope");
    CHECK_THROWS_AS(load_depth(p), BadMagic);

    spit(p, "Pf\n2 2\n1.0\n");  // positive scale marks big-endian data
    CHECK_THROWS_AS(load_depth(p), MalformedHeader);

    std::ofstream os(p, std::ios::binary);
    os << "Pf\n2 2\n-1.0\n";
    const float one = 1.0f;
    os.write(reinterpret_cast<const char*>(&one), 4);  // 1 of 4 samples
    os.close();
    CHECK_THROWS_AS(load_depth(p), Truncated);

    const std::string q = tmp_path("d8.pgm");
    spit(q, "P5\n2 1\n255\n xx");
    CHECK_THROWS_AS(load_depth(q), BadMaxval);

    const std::string r = tmp_path("noscale.pgm");
    write_pgm16(r, 1, 1, {5}, 1.0);
    std::remove((r + ".scale").c_str());
    CHECK_THROWS_AS(load_depth(r), IoError);

    CHECK_THROWS_AS(load_depth(tmp_path("absent.pfm")), IoError);
}

TEST_CASE("alignment fit on hand-solvable anchor sets") {
    // Two constant half-planes give exact anchor depths 1 and 2.
    DepthMap m = const_map(20, 20, 1.0);
    for (int y = 0; y < 20; ++y)
        for (int x = 10; x < 20; ++x) m.at(x, y) = 2.0;

    const MetricAlignment fit =
        fit_alignment(m, {{{5, 10}, 250.0}, {{15, 10}, 450.0}});
    CHECK(fit.scale == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.shift == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(!fit.degenerate);

    // Already metric: targets are 100 cm per unit depth.
    const MetricAlignment id =
        fit_alignment(m, {{{5, 10}, 100.0}, {{15, 10}, 200.0}});
    CHECK(id.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(id.shift) <= 1e-9);

    // Single anchor pins the shift to zero.
    const MetricAlignment one = fit_alignment(const_map(9, 9, 4.0), {{{4, 4}, 1000.0}});
    CHECK(one.scale == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(one.shift == 0.0);
    CHECK(!one.degenerate);
}

TEST_CASE("anchor depth is a hole-tolerant median") {
    DepthMap m = const_map(9, 9, 2.0);
    m.at(4, 4) = 100.0;  // outlier at the anchor pixel itself
    m.at(3, 4) = 0.0;    // holes are excluded
    m.at(5, 4) = -1.0;
    const MetricAlignment fit = fit_alignment(m, {{{4, 4}, 400.0}});
    CHECK(fit.scale == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("unusable anchors are dropped, none left is an error") {
    DepthMap m = const_map(9, 9, 2.0);
    for (int y = 0; y < 9; ++y)
        for (int x = 6; x < 9; ++x) m.at(x, y) = 0.0;  // hole region

    // Off-map and hole-only anchors fall away, leaving the single good one.
    const MetricAlignment fit = fit_alignment(
        m, {{{50, 50}, 100.0}, {{8, 4}, 100.0}, {{2, 4}, 500.0}, {{2, 4}, -3.0}});
    CHECK(fit.scale == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(fit.shift == 0.0);

    CHECK_THROWS_AS(fit_alignment(m, {{{50, 50}, 100.0}}), NoValidAnchors);
    CHECK_THROWS_AS(fit_alignment(m, {}), NoValidAnchors);
}

TEST_CASE("equal anchor depths fall back to a pure shift") {
    const DepthMap m = const_map(20, 20, 1.0);
    const MetricAlignment fit =
        fit_alignment(m, {{{5, 10}, 200.0}, {{15, 10}, 400.0}});
    CHECK(fit.degenerate);
    CHECK(fit.scale == 1.0);
    CHECK(fit.shift == doctest::Approx(2.0).epsilon(1e-12));  // mean residual
}

TEST_CASE("alignment recovers a known affine map") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> us(0.5, 3.0), ut(-0.5, 0.5);
    std::uniform_int_distribution<int> ux(2, 37), uy(2, 27);
    for (int trial = 0; trial < 30; ++trial) {
        const double s_true = us(rng), t_true = ut(rng);
        // Linear metric field; its 5x5 median equals the center value.
        const auto z_of = [](int x, int y) { return 1.0 + 0.01 * x + 0.02 * y; };
        DepthMap m;
        m.width = 40;
        m.height = 30;
        m.depth.resize(40 * 30);
        for (int y = 0; y < 30; ++y)
            for (int x = 0; x < 40; ++x) m.at(x, y) = (z_of(x, y) - t_true) / s_true;

        std::vector<DepthAnchor> anchors;
        for (int k = 0; k < 5; ++k) {
            const int x = ux(rng), y = uy(rng);
            anchors.push_back({{static_cast<double>(x), static_cast<double>(y)},
                               100.0 * z_of(x, y)});
        }
        // Ensure depth spread across anchors.
        anchors.push_back({{2.0, 2.0}, 100.0 * z_of(2, 2)});
        anchors.push_back({{37.0, 27.0}, 100.0 * z_of(37, 27)});

        const MetricAlignment fit = fit_alignment(m, anchors);
        CHECK(!fit.degenerate);
        CHECK(std::abs(fit.scale - s_true) <= 1e-9);
        CHECK(std::abs(fit.shift - t_true) <= 1e-9);
    }
}

TEST_CASE("fitted alignment is a local least-squares minimum") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> ud(0.5, 8.0), uy01(0.0, 1.0);
    std::uniform_int_distribution<int> upix(2, 17);
    for (int trial = 0; trial < 50; ++trial) {
        DepthMap m;
        m.width = 20;
        m.height = 20;
        m.depth.resize(400);
        for (double& v : m.depth) v = ud(rng);

        std::vector<DepthAnchor> anchors;
        const int n = 2 + trial % 4;
        for (int k = 0; k < n; ++k)
            anchors.push_back({{static_cast<double>(upix(rng)),
                                static_cast<double>(upix(rng))},
                               50.0 + 900.0 * uy01(rng)});

        const MetricAlignment fit = fit_alignment(m, anchors);
        if (fit.degenerate) continue;

        const auto sse = [&](double s, double t) {
            double acc = 0.0;
            for (const DepthAnchor& a : anchors) {
                const double d = anchor_depth(m, static_cast<int>(a.px.x),
                                              static_cast<int>(a.px.y));
                const double r = s * d + t - a.distance_cm / 100.0;
                acc += r * r;
            }
            return acc;
        };
        const double base = sse(fit.scale, fit.shift);
        for (const double ds : {-1e-3, 0.0, 1e-3})
            for (const double dt : {-1e-3, 0.0, 1e-3}) {
                if (ds == 0.0 && dt == 0.0) continue;
                CHECK(sse(fit.scale + ds, fit.shift + dt) >=
                      base - 1e-12 * std::max(1.0, base));
            }
    }
}

TEST_CASE("optical axis pixel lifts to a point straight ahead") {
    // 3x3 rig at 90 degrees puts the principal point on integer pixel (1,1).
    const StereoRig rig = make_parallel_rig(0.24, 3, 3, 90.0);
    REQUIRE(rig.left.c.norm() == 0.0);
    const DepthMap m = const_map(3, 3, 2.4);
    const GrayImage img = const_image(3, 3, 200);
    const PointCloud cloud = backproject(m, {1.0, 0.0, false}, rig.left, img);
    REQUIRE(cloud.points.size() == 9);
    const CloudPoint& center = cloud.points[4];  // row-major (1,1)
    CHECK(std::abs(center.p.x()) <= 1e-12);
    CHECK(std::abs(center.p.y()) <= 1e-12);
    CHECK(center.p.z() == doctest::Approx(2.4).epsilon(1e-12));
    CHECK(center.gray == 200);
}

TEST_CASE("stride and holes control the point count") {
    const StereoRig rig = make_parallel_rig(0.24, 100, 100, 60.0);
    DepthMap m = const_map(100, 100, 3.0);
    const GrayImage img = const_image(100, 100, 10);

    CHECK(backproject(m, {}, rig.left, img, 2).points.size() == 2500);
    CHECK(backproject(m, {}, rig.left, img, 1).points.size() == 10000);
    CHECK(backproject(m, {}, rig.left, img, 97).points.size() == 4);

    m.at(0, 0) = 0.0;
    m.at(2, 0) = -5.0;
    m.at(50, 50) = 0.0;
    CHECK(backproject(m, {}, rig.left, img, 2).points.size() == 2497);

    // A shift that drags everything behind the camera leaves nothing.
    CHECK(backproject(m, {1.0, -100.0, false}, rig.left, img, 2).points.empty());

    CHECK_THROWS_AS(backproject(m, {}, rig.left, img, 0), Error);
    CHECK_THROWS_AS(backproject(m, {}, rig.left, const_image(64, 64, 0), 1),
                    DimensionMismatch);
}

TEST_CASE("backprojection lands on the rendered plane") {
    const StereoRig rig = make_parallel_rig(0.24, 64, 48, 70.0);
    const CahvCamera& cam = rig.left;
    std::mt19937_64 rng(5150);
    std::uniform_real_distribution<double> uz(2.0, 5.0), un(-0.3, 0.3),
        us(0.5, 2.0), ut(-0.3, 0.3);

    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 p0(0.0, 0.0, uz(rng));
        const Vec3 n = (cam.a + Vec3(un(rng), un(rng), 0.0)).normalized();
        const double s_true = us(rng), t_true = ut(rng);
        const bool zdepth = trial % 2 == 1;

        DepthMap m;
        m.width = 64;
        m.height = 48;
        m.depth.resize(64 * 48);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 64; ++x) {
                const Ray ray = pixel_ray(cam, {static_cast<double>(x),
                                                static_cast<double>(y)});
                const double range = n.dot(p0 - ray.origin) / n.dot(ray.dir);
                const double z = zdepth ? range * ray.dir.dot(cam.a) : range;
                m.at(x, y) = (z - t_true) / s_true;
            }

        const GrayImage img = const_image(64, 48, 128);
        const PointCloud cloud = backproject(
            m, {s_true, t_true, false}, cam, img, 3,
            zdepth ? DistanceConvention::ZDepth : DistanceConvention::Euclidean);
        REQUIRE(cloud.points.size() == 22 * 16);
        double worst = 0.0;
        for (const CloudPoint& pt : cloud.points)
            worst = std::max(worst, std::abs(n.dot(pt.p - p0)));
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("ply writes the fixed header and reads back") {
    const std::string p = tmp_path("cloud.ply");

    write_ply({}, p);
    CHECK(slurp(p) ==
          "ply\n"
          "format ascii 1.0\n"
          "element vertex 0\n"
          "property float x\n"
          "property float y\n"
          "property float z\n"
          "property uchar gray\n"
          "end_header\n");
    CHECK(read_ply(p).points.empty());

    PointCloud cloud;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> uc(-10.0, 10.0);
    std::uniform_int_distribution<int> ug(0, 255);
    for (int k = 0; k < 200; ++k) {
        CloudPoint pt;
        pt.p = Vec3(uc(rng), uc(rng), uc(rng));
        pt.gray = static_cast<uint8_t>(ug(rng));
        cloud.points.push_back(pt);
    }
    write_ply(cloud, p);
    const PointCloud back = read_ply(p);
    REQUIRE(back.points.size() == cloud.points.size());
    for (size_t k = 0; k < cloud.points.size(); ++k) {
        // float32 quantization exactly, no further loss
        CHECK(back.points[k].p.x() == static_cast<double>(static_cast<float>(
                                          cloud.points[k].p.x())));
        CHECK(back.points[k].p.y() == static_cast<double>(static_cast<float>(
                                          cloud.points[k].p.y())));
        CHECK(back.points[k].p.z() == static_cast<double>(static_cast<float>(
                                          cloud.points[k].p.z())));
        CHECK(back.points[k].gray == cloud.points[k].gray);
    }
}

TEST_CASE("ply diagnostics") {
    const std::string p = tmp_path("bad.ply");
    const std::string header =
        "ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\n"
        "property float y\nproperty float z\nproperty uchar gray\nend_header\n";

    spit(p, header + "0 0 0 1\n0 0 0 2\n0 0 0 3\n0 0 0 4\n");
    CHECK_THROWS_AS(read_ply(p), VertexCountMismatch);

    spit(p, header + "0 0 0 1\n0 0 0 2\n0 0 0 3\n0 0 0 4\n0 0 0 5\n0 0 0 6\n");
    CHECK_THROWS_AS(read_ply(p), VertexCountMismatch);

    spit(p, "ply\nformat ascii 2.0\n");
    CHECK_THROWS_AS(read_ply(p), MalformedHeader);

    spit(p,
         "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\n"
         "property float y\nproperty uchar gray\nend_header\n");
    CHECK_THROWS_AS(read_ply(p), MalformedHeader);

    spit(p,
         "ply\nformat ascii 1.0\nelement vertex zero\nproperty float x\n");
    CHECK_THROWS_AS(read_ply(p), MalformedHeader);

    CHECK_THROWS_AS(read_ply(tmp_path("absent.ply")), IoError);
}

// Release acceptance gate. Each check prints exactly one PASS/FAIL line and
// the binary exits 0 only when every check holds, so CI can grep the output
// and scripts can trust the exit code. The network checks share one trained
// model: check 3 trains it, checks 5 and 6 probe it.

#include <sys/wait.h>

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rover/camgeo.hpp"
#include "rover/features.hpp"
#include "rover/imageproc.hpp"
#include "rover/mlp.hpp"
#include "rover/objpipe.hpp"
#include "rover/recon.hpp"
#include "rover/synthgen.hpp"

using namespace rover;

namespace {

// Every numeric bound enforced below, in one place.
constexpr double kRoundTripTolM = 1e-9;       // triangulation recovery
constexpr double kRoundTripBudgetS = 5.0;
constexpr double kDisparityRelTol = 1e-6;     // Z*d versus f*b
constexpr int kDatasetSize = 64250;           // splits 51400/8995/3855
constexpr int kHeldOutSize = 3855;
constexpr double kMedianCeilingCm = 2.26;     // held-out median abs error
constexpr double kIqrHiCeilingCm = 5.58;      // held-out 75th percentile
constexpr double kTrainMaeCeilingCm = 1.0;
constexpr double kTrainBudgetS = 900.0;
constexpr double kGradRelTol = 1e-4;          // backprop vs central FD
constexpr double kFarThresholdM = 10.0;       // reporting clamp
constexpr double kAlignTolAbs = 1e-9;         // scale/shift recovery
constexpr double kPlaneTolM = 1e-6;           // back-projection residual

struct Outcome {
    bool ok = false;
    std::string detail;
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Trained by check 3, probed by checks 5 and 6.
std::optional<MlpNet> g_trained;

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> to_matrices(
    const std::vector<TriangulationSample>& samples) {
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd x(n, 4), y(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) << samples[i].x1, samples[i].y1, samples[i].x2, samples[i].y2;
        y.row(i) = samples[i].truth.transpose();
    }
    return {x, y};
}

// ------------------------------------------------------------------- 1

Outcome check_roundtrip() {
    const auto t0 = std::chrono::steady_clock::now();
    const StereoRig rig = make_parallel_rig(0.24, 1024, 1024, 39.0);
    SceneConfig sc;
    sc.n = 10000;
    sc.seed = 101;
    const std::vector<TriangulationSample> samples = generate_dataset(rig, sc);

    double worst = 0.0;
    for (const TriangulationSample& s : samples) {
        const TriangulationResult r = triangulate(rig, {s.x1, s.y1}, {s.x2, s.y2});
        if (r.negative_depth) return {false, "solution behind a camera"};
        worst = std::max(worst, (r.point - s.truth).norm());
    }
    const double secs = seconds_since(t0);
    return {worst <= kRoundTripTolM && secs < kRoundTripBudgetS,
            fmt("max error %.3g m over %d points, %.2f s", worst, sc.n, secs)};
}

// ------------------------------------------------------------------- 2

Outcome check_disparity_law() {
    const StereoRig rig = make_parallel_rig(0.24, 1024, 1024, 39.0);
    const double fb = rig.left.focal_h() * rig.baseline;
    double worst = 0.0;
    for (int z = 1; z <= 10; ++z) {
        const Vec3 p(0.0, 0.0, static_cast<double>(z));
        const double d = project(rig.left, p).x - project(rig.right, p).x;
        worst = std::max(worst, std::abs(z * d - fb) / fb);
    }
    return {worst <= kDisparityRelTol, fmt("max relative deviation %.3g", worst)};
}

// ------------------------------------------------------------------- 3

Outcome check_ann_accuracy() {
    const auto t0 = std::chrono::steady_clock::now();
    const StereoRig rig = make_parallel_rig(0.24, 1024, 1024, 39.0);
    SceneConfig sc;
    sc.n = kDatasetSize;
    sc.seed = 0;
    const std::vector<TriangulationSample> samples = generate_dataset(rig, sc);
    const DatasetSplit split = split_dataset(samples, 0.8, 0.14, 0);
    if (static_cast<int>(split.test.size()) != kHeldOutSize)
        return {false, fmt("held-out size %zu", split.test.size())};

    const auto [tx, ty] = to_matrices(split.train);
    const auto [vx, vy] = to_matrices(split.val);
    const TrainResult result =
        train(MlpNet::glorot(MlpNet::canonical_shape(), 0), tx, ty, vx, vy, TrainConfig{});
    const EvalMetrics m = evaluate(result.net, split.test);
    const double secs = seconds_since(t0);
    g_trained = result.net;

    const bool ok = m.median_abs_err_cm <= kMedianCeilingCm &&
                    m.iqr_hi_cm <= kIqrHiCeilingCm &&
                    result.report.train_mae <= kTrainMaeCeilingCm && secs < kTrainBudgetS;
    return {ok, fmt("median %.2f cm, IQR hi %.2f cm, train MAE %.2f cm, %d held out, "
                    "%d epochs, %.0f s",
                    m.median_abs_err_cm, m.iqr_hi_cm, result.report.train_mae,
                    kHeldOutSize, result.report.epochs_run, secs)};
}

// ------------------------------------------------------------------- 4

Eigen::VectorXd manual_forward(const MlpNet& net, const Eigen::VectorXd& px,
                               double* min_pre_abs) {
    Eigen::VectorXd a = px / net.input_scale;
    double min_abs = 1e300;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        Eigen::VectorXd z = net.layers[l].w * a + net.layers[l].b;
        if (l + 1 < net.layers.size()) {
            for (int i = 0; i < z.size(); ++i) {
                min_abs = std::min(min_abs, std::abs(z(i)));
                z(i) = z(i) >= 0 ? z(i) : net.leak_alpha * z(i);
            }
        }
        a = z;
    }
    if (min_pre_abs) *min_pre_abs = min_abs;
    return a;
}

Outcome check_gradients() {
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> upix(0.0, 1024.0);
    std::uniform_real_distribution<double> utgt(-5.0, 5.0);
    const double h = 1e-6;
    const int n_nets = 20, batch = 4;
    auto loss_of = [](const MlpNet& net, const Eigen::MatrixXd& x,
                      const Eigen::MatrixXd& y) { return mae_loss(predict_batch(net, x), y); };

    double worst = 0.0;
    int tested = 0, attempts = 0;
    while (tested < n_nets && attempts < 200) {
        ++attempts;
        MlpNet net = MlpNet::glorot({4, 8, 6, 4, 3}, rng());
        Eigen::MatrixXd x(batch, 4), y(batch, 3);
        for (int r = 0; r < batch; ++r) {
            for (int c = 0; c < 4; ++c) x(r, c) = upix(rng);
            for (int c = 0; c < 3; ++c) y(r, c) = utgt(rng);
        }
        // Instances within a finite-difference step of an activation or loss
        // kink are resampled; the derivative is not defined across them.
        bool near_kink = false;
        for (int r = 0; r < batch; ++r) {
            double min_pre = 1e300;
            const Eigen::VectorXd pred = manual_forward(net, x.row(r).transpose(), &min_pre);
            if (min_pre < 1e-5) near_kink = true;
            for (int c = 0; c < 3; ++c)
                if (std::abs(pred(c) - y(r, c)) < 1e-4) near_kink = true;
        }
        if (near_kink) continue;
        ++tested;

        const Gradients g = backward(net, x, y);
        for (size_t l = 0; l < net.layers.size(); ++l) {
            auto check_param = [&](double& p, double analytic) {
                const double keep = p;
                p = keep + h;
                const double up = loss_of(net, x, y);
                p = keep - h;
                const double dn = loss_of(net, x, y);
                p = keep;
                const double fd = (up - dn) / (2.0 * h);
                // The 1e-3 floor keeps central-difference roundoff (the loss
                // is O(100) cm, so the FD noise floor is ~3e-8) from
                // dominating near-zero entries.
                worst = std::max(worst, std::abs(analytic - fd) /
                                            std::max({std::abs(analytic), std::abs(fd),
                                                      1e-3}));
            };
            for (int r = 0; r < net.layers[l].w.rows(); ++r)
                for (int c = 0; c < net.layers[l].w.cols(); ++c)
                    check_param(net.layers[l].w(r, c), g.g[l].w(r, c));
            for (int r = 0; r < net.layers[l].b.size(); ++r)
                check_param(net.layers[l].b(r), g.g[l].b(r));
        }
    }
    return {tested == n_nets && worst <= kGradRelTol,
            fmt("%d nets checked, worst relative deviation %.3g", tested, worst)};
}

// ------------------------------------------------------------------- 5

Outcome check_monotonic() {
    if (!g_trained) return {false, "no trained model available"};
    const double xc = 511.5, yc = 511.5;
    const int disparities[] = {24, 48, 120, 240};
    std::string dists;
    double prev = 1e300;
    bool ok = true;
    for (int d : disparities) {
        const Eigen::Vector4d in(xc, yc, xc - d, yc);
        const double dist = distance_of(forward(*g_trained, in));
        ok = ok && dist <= prev;
        prev = dist;
        dists += fmt("%s%.2f", dists.empty() ? "" : ", ", dist);
    }
    return {ok, "predicted meters at 24/48/120/240 px: " + dists};
}

// ------------------------------------------------------------------- 6

Outcome check_far_clamp() {
    if (!g_trained) return {false, "no trained model available"};
    const StereoRig rig = make_parallel_rig(0.24, 1024, 1024, 39.0);
    const double fb = rig.left.focal_h() * rig.baseline;

    int clamped = 0, total = 0;
    for (int z = 12; z <= 20; ++z) {
        const double d = fb / z;
        Association a;
        a.left_index = 0;
        a.left_box.label = "rock";
        for (int k = 0; k < 6; ++k) {
            Keypoint l, r;
            l.px = {400.0 + 40.0 * k, 500.0 + 5.0 * k};
            r.px = {l.px.x - d, l.px.y};
            a.left_keypoints.push_back(l);
            a.right_keypoints.push_back(r);
            a.matches.push_back({k, k, 0.0});
        }
        const RangedObject obj = range_object(a, *g_trained, kFarThresholdM);
        ++total;
        if (obj.far_flag && obj.median_cm == 100.0 * kFarThresholdM) ++clamped;
    }
    return {clamped == total, fmt("%d of %d out-of-range disparities clamped to %.0f m",
                                  clamped, total, kFarThresholdM)};
}

// ------------------------------------------------------------------- 7

Outcome check_matcher() {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> usize(0, 50);
    std::uniform_real_distribution<double> uval(0.0, 1.0);
    auto make_set = [&](int n) {
        std::vector<Keypoint> kps(n);
        for (Keypoint& k : kps) {
            k.descriptor.resize(8);
            for (double& v : k.descriptor) v = uval(rng);
        }
        return kps;
    };
    auto dist2 = [](const Keypoint& a, const Keypoint& b) {
        double s = 0;
        for (size_t i = 0; i < a.descriptor.size(); ++i) {
            const double d = a.descriptor[i] - b.descriptor[i];
            s += d * d;
        }
        return s;
    };

    int violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::vector<Keypoint> left = make_set(usize(rng));
        const std::vector<Keypoint> right = make_set(usize(rng));
        const std::vector<Match> got = match_two_way(left, right);

        // Brute force: a pair survives iff each side is the other's unique
        // nearest neighbour, first index winning ties.
        std::vector<std::pair<int, int>> expected;
        for (size_t i = 0; i < left.size(); ++i) {
            int bj = -1;
            double bd = 1e300;
            for (size_t j = 0; j < right.size(); ++j)
                if (dist2(left[i], right[j]) < bd) bd = dist2(left[i], right[j]), bj = (int)j;
            if (bj < 0) continue;
            int bi = -1;
            double bd2 = 1e300;
            for (size_t i2 = 0; i2 < left.size(); ++i2)
                if (dist2(left[i2], right[bj]) < bd2)
                    bd2 = dist2(left[i2], right[bj]), bi = (int)i2;
            if (bi == static_cast<int>(i)) expected.emplace_back((int)i, bj);
        }
        if (got.size() != expected.size()) {
            ++violations;
            continue;
        }
        for (size_t k = 0; k < got.size(); ++k)
            if (got[k].left_index != expected[k].first ||
                got[k].right_index != expected[k].second)
                ++violations;
    }

    // Acceptance boundary of the match-count gate: 3 is never enough, 4
    // always is.
    int gate_failures = 0;
    for (int t = 0; t < 20; ++t) {
        const int nl = 1 + static_cast<int>(rng() % 4);
        const int nr = 1 + static_cast<int>(rng() % 4);
        const int i = static_cast<int>(rng() % nl);
        const int j = static_cast<int>(rng() % nr);
        std::vector<std::vector<int>> counts(nl, std::vector<int>(nr, 0));
        counts[i][j] = 3;
        if (!associate_by_counts(counts, nr).pairs.empty()) ++gate_failures;
        counts[i][j] = 4;
        const PairingResult r = associate_by_counts(counts, nr);
        if (r.pairs.size() != 1 || r.pairs[0] != std::make_pair(i, j)) ++gate_failures;
    }
    return {violations == 0 && gate_failures == 0,
            fmt("%d mutual-best violations over 100 set pairs, %d gate failures",
                violations, gate_failures)};
}

// ------------------------------------------------------------------- 8

Outcome check_comparison_table() {
    const std::vector<ComparisonRow> rows = {
        {1, "rock", 140.55, 141.23}, {7, "rock", 150.18, 154.64},
        {6, "rock", 204.10, 203.44}, {4, "rock", 214.63, 213.87},
        {2, "rock", 228.22, 231.24}, {9, "rock", 336.99, 340.86},
        {0, "rock", 349.33, 351.45}, {3, "artifact", 950.00, 3915.83},
    };
    const std::string path = "/tmp/rover_acceptance_comparison.csv";
    write_comparison_table(rows, path);

    std::ifstream is(path);
    std::string line;
    std::getline(is, line);  // header
    std::map<int, std::string> err_by_id;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string id, cls, ann, cahv, err;
        std::getline(ss, id, ',');
        std::getline(ss, cls, ',');
        std::getline(ss, ann, ',');
        std::getline(ss, cahv, ',');
        std::getline(ss, err);
        err_by_id[std::stoi(id)] = err;
    }

    // Reference absolute-error column; entry 2 is pinned to its own
    // operands (|228.22 - 231.24| = 3.02; the listing these rows came from
    // shows 3.03, a final-digit rounding slip).
    const std::map<int, std::string> expected = {
        {1, "0.68"}, {7, "4.46"}, {6, "0.66"}, {4, "0.76"},
        {2, "3.02"}, {9, "3.87"}, {0, "2.12"}, {3, "2965.83"},
    };
    int exact = 0;
    for (const auto& [id, want] : expected)
        if (err_by_id.count(id) && err_by_id[id] == want) ++exact;
    const bool flagship = err_by_id.count(1) && err_by_id[1] == "0.68";
    return {exact == 8 && flagship,
            fmt("%d of 8 error entries exact incl. |140.55 - 141.23| = 0.68; entry 2 "
                "recomputes to 3.02",
                exact)};
}

// ------------------------------------------------------------------- 9

GrayImage equalize_reference(const GrayImage& img) {
    long long hist[256] = {};
    for (std::uint8_t v : img.data) ++hist[v];
    const long long n = static_cast<long long>(img.data.size());
    std::uint8_t map[256];
    long long cum = 0;
    for (int b = 0; b < 256; ++b) {
        cum += hist[b];
        map[b] = static_cast<std::uint8_t>((2 * 255 * cum + n) / (2 * n));
    }
    GrayImage out(img.width, img.height);
    for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = map[img.data[i]];
    return out;
}

Outcome check_clahe_goldens() {
    const std::string data = ROVER_TEST_DATA_DIR;
    struct Fixture {
        const char* name;
        ClaheConfig cfg;
    };
    const Fixture fixtures[] = {
        {"clahe_gradient", {2.0, 8, 8, 256}},
        {"clahe_noise", {2.0, 8, 8, 256}},
        {"clahe_texture", {3.0, 5, 6, 256}},
    };
    int matched = 0;
    for (const Fixture& f : fixtures) {
        const GrayImage in = load_pgm(data + "/" + f.name + "_in.pgm");
        const GrayImage ref = load_pgm(data + "/" + f.name + "_ref.pgm");
        if (clahe(in, f.cfg).data == ref.data) ++matched;
    }

    std::mt19937 rng(2);
    std::uniform_int_distribution<int> u(0, 255);
    GrayImage img(64, 48);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(u(rng));
    ClaheConfig single;
    single.grid_x = 1;
    single.grid_y = 1;
    single.clip_limit = 1e9;  // ceiling above any possible bin count
    const bool reduces = clahe(img, single).data == equalize_reference(img).data;

    return {matched == 3 && reduces,
            fmt("%d of 3 goldens byte-identical; single-tile run %s global "
                "equalization",
                matched, reduces ? "equals" : "differs from")};
}

// ------------------------------------------------------------------ 10

Outcome check_reconstruction() {
    // Affine recovery: a linear depth field makes every 5x5 anchor median
    // exact, so the two-parameter fit must land on the staged (s, t).
    DepthMap depth;
    depth.width = 40;
    depth.height = 30;
    depth.depth.resize(40 * 30);
    for (int y = 0; y < 30; ++y)
        for (int x = 0; x < 40; ++x) depth.at(x, y) = 1.0 + 0.01 * x + 0.02 * y;
    const double s_true = 2.2, t_true = 0.35;
    std::vector<DepthAnchor> anchors;
    for (auto [ax, ay] : {std::pair{5, 5}, {30, 10}, {15, 25}})
        anchors.push_back({{static_cast<double>(ax), static_cast<double>(ay)},
                           100.0 * (s_true * depth.at(ax, ay) + t_true)});
    const MetricAlignment fit = fit_alignment(depth, anchors);
    const double align_err =
        std::max(std::abs(fit.scale - s_true), std::abs(fit.shift - t_true));

    // Back-projected points from a rendered plane must land on the plane.
    const CahvCamera cam = make_parallel_rig(0.24, 64, 48, 60.0).left;
    const Vec3 n(0.1, -0.05, 1.0);
    const double c = 2.5;
    DepthMap plane;
    plane.width = 64;
    plane.height = 48;
    plane.depth.resize(64 * 48);
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x) {
            const Ray ray = pixel_ray(cam, {static_cast<double>(x), static_cast<double>(y)});
            plane.at(x, y) = c / n.dot(ray.dir);
        }
    const GrayImage gray(64, 48, 200);
    const PointCloud cloud = backproject(plane, MetricAlignment{}, cam, gray);
    double plane_err = 0.0;
    for (const CloudPoint& p : cloud.points)
        plane_err = std::max(plane_err, std::abs(n.dot(p.p) - c));

    // PLY round trip loses nothing beyond the declared float32 precision.
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> uc(-10.0, 10.0);
    PointCloud orig;
    for (int i = 0; i < 200; ++i) {
        CloudPoint p;
        p.p = Vec3(uc(rng), uc(rng), uc(rng));
        p.gray = static_cast<std::uint8_t>(rng() % 256);
        orig.points.push_back(p);
    }
    const std::string path = "/tmp/rover_acceptance_cloud.ply";
    write_ply(orig, path);
    const PointCloud back = read_ply(path);
    bool lossless = back.points.size() == orig.points.size();
    for (size_t i = 0; lossless && i < orig.points.size(); ++i) {
        for (int k = 0; k < 3; ++k)
            lossless = lossless &&
                       back.points[i].p(k) ==
                           static_cast<double>(static_cast<float>(orig.points[i].p(k)));
        lossless = lossless && back.points[i].gray == orig.points[i].gray;
    }

    const bool ok = align_err <= kAlignTolAbs && plane_err <= kPlaneTolM &&
                    cloud.points.size() == 64 * 48 && lossless;
    return {ok, fmt("align err %.3g, plane residual %.3g m, %zu points, round trip %s",
                    align_err, plane_err, cloud.points.size(),
                    lossless ? "lossless" : "lossy")};
}

// ------------------------------------------------------------------ 11

double report_value(const std::string& text, const std::string& key) {
    const size_t pos = text.find(key + " ");
    if (pos == std::string::npos) return std::nan("");
    return std::stod(text.substr(pos + key.size() + 1));
}

Outcome check_bench() {
    const std::string dir = "/tmp/rover_acceptance_bench";
    std::filesystem::remove_all(dir);
    const std::string cmd = std::string(ROVER_CLI) +
                            " bench --n 10000 --seed 11 --out-dir " + dir +
                            " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        return {false, "bench subcommand failed"};
    std::ifstream is(dir + "/bench.txt");
    if (!is) return {false, "bench report missing"};
    std::stringstream ss;
    ss << is.rdbuf();
    const double ann = report_value(ss.str(), "batched_ann_samples_per_s");
    const double svd = report_value(ss.str(), "sequential_svd_samples_per_s");
    if (std::isnan(ann) || std::isnan(svd)) return {false, "bench report incomplete"};
    return {ann >= svd, fmt("batched %.3g samples/s vs sequential %.3g samples/s", ann, svd)};
}

}  // namespace

int main() {
    struct Check {
        int id;
        const char* name;
        Outcome (*run)();
    };
    const Check checks[] = {
        {1, "triangulation round trip", check_roundtrip},
        {2, "disparity-distance product", check_disparity_law},
        {3, "network ranging accuracy", check_ann_accuracy},
        {4, "backprop gradients", check_gradients},
        {5, "distance monotonic in disparity", check_monotonic},
        {6, "far-range clamp", check_far_clamp},
        {7, "mutual-best matcher", check_matcher},
        {8, "comparison-table arithmetic", check_comparison_table},
        {9, "CLAHE goldens", check_clahe_goldens},
        {10, "metric reconstruction", check_reconstruction},
        {11, "batched inference throughput", check_bench},
    };

    int failed = 0;
    for (const Check& c : checks) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("unhandled error: ") + e.what()};
        }
        if (!o.ok) ++failed;
        std::printf("[%2d] %s  %s: %s\n", c.id, o.ok ? "PASS" : "FAIL", c.name,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of 11 criteria passed\n", 11 - failed);
    return failed == 0 ? 0 : 1;
}

#include "rover/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace rover {

std::vector<TriangulationSample> generate_dataset(const StereoRig& rig,
                                                  const SceneConfig& cfg) {
    if (!(cfg.z_min > 0.0) || !(cfg.z_max > cfg.z_min))
        throw InvalidSceneConfig("need 0 < z_min < z_max");
    if (cfg.n <= 0) throw InvalidSceneConfig("need n > 0");
    if (cfg.noise_sigma < 0.0) throw InvalidSceneConfig("need noise_sigma >= 0");
    if (cfg.width < 2 || cfg.height < 2)
        throw InvalidSceneConfig("image bounds must be at least 2x2");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uz(cfg.z_min, cfg.z_max);
    std::uniform_real_distribution<double> ux(0.0, cfg.width - 1.0);
    std::uniform_real_distribution<double> uy(0.0, cfg.height - 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const double xb = cfg.width - 1.0, yb = cfg.height - 1.0;
    auto in_bounds = [&](double x, double y) {
        return x >= 0.0 && x <= xb && y >= 0.0 && y <= yb;
    };

    std::vector<TriangulationSample> out;
    out.reserve(static_cast<size_t>(cfg.n));
    const long long budget = 1000LL * cfg.n;
    long long attempts = 0;
    while (static_cast<int>(out.size()) < cfg.n) {
        if (attempts++ >= budget)
            throw EmptyFrustumIntersection(
                "rejection sampling exhausted its draw budget; the view "
                "frusta barely overlap (or not at all) in the depth range");
        const double z = uz(rng);
        const Pixel lp{ux(rng), uy(rng)};
        const Ray ray = pixel_ray(rig.left, lp);
        // Advance to the plane at depth z along the left optical axis.
        const double t = z / ray.dir.dot(rig.left.a);
        const Vec3 p = ray.origin + t * ray.dir;

        Pixel rp;
        try {
            rp = project(rig.right, p);
        } catch (const PointBehindCamera&) {
            continue;
        }
        if (!in_bounds(rp.x, rp.y)) continue;

        TriangulationSample s;
        s.x1 = lp.x;
        s.y1 = lp.y;
        s.x2 = rp.x;
        s.y2 = rp.y;
        s.truth = p;
        if (cfg.noise_sigma > 0.0) {
            s.x1 += cfg.noise_sigma * noise(rng);
            s.y1 += cfg.noise_sigma * noise(rng);
            s.x2 += cfg.noise_sigma * noise(rng);
            s.y2 += cfg.noise_sigma * noise(rng);
            if (!in_bounds(s.x1, s.y1) || !in_bounds(s.x2, s.y2)) continue;
        }
        if (s.x1 - s.x2 <= 0.0) continue;  // keep positive disparity
        out.push_back(s);
    }
    return out;
}

DatasetSplit split_dataset(const std::vector<TriangulationSample>& samples,
                           double train_frac, double val_frac,
                           std::uint64_t seed) {
    if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0))
        throw InvalidSceneConfig(
            "split fractions must be positive and sum below 1");
    const long long n = static_cast<long long>(samples.size());
    const long long n_train = std::llround(n * train_frac);
    const long long n_val = std::llround(n * val_frac);
    const long long n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw InsufficientSamples("a split partition would be empty (" +
                                  std::to_string(n_train) + "/" +
                                  std::to_string(n_val) + "/" +
                                  std::to_string(n_test) + ")");

    std::vector<size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);

    DatasetSplit split;
    split.train.reserve(static_cast<size_t>(n_train));
    split.val.reserve(static_cast<size_t>(n_val));
    split.test.reserve(static_cast<size_t>(n_test));
    for (long long i = 0; i < n; ++i) {
        const TriangulationSample& s = samples[idx[static_cast<size_t>(i)]];
        if (i < n_train)
            split.train.push_back(s);
        else if (i < n_train + n_val)
            split.val.push_back(s);
        else
            split.test.push_back(s);
    }
    return split;
}

void save_dataset(const std::vector<TriangulationSample>& samples,
                  const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open dataset for writing: " + path);
    os << "x1,y1,x2,y2,X,Y,Z\n";
    char buf[256];
    for (const auto& s : samples) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      s.x1, s.y1, s.x2, s.y2, s.truth.x(), s.truth.y(), s.truth.z());
        os << buf;
    }
    if (!os) throw IoError("failed writing dataset: " + path);
}

std::vector<TriangulationSample> load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DatasetParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x1,y1,x2,y2,X,Y,Z")
        throw DatasetParseError(path + ": unexpected header \"" + line + "\"");

    std::vector<TriangulationSample> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        double v[7];
        std::stringstream ls(line);
        std::string tok;
        int k = 0;
        while (std::getline(ls, tok, ',')) {
            if (k >= 7)
                throw DatasetParseError(path + ":" + std::to_string(lineno) +
                                        ": too many columns");
            try {
                size_t used = 0;
                v[k] = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw DatasetParseError(path + ":" + std::to_string(lineno) +
                                        ": bad number \"" + tok + "\"");
            }
            ++k;
        }
        if (k != 7)
            throw DatasetParseError(path + ":" + std::to_string(lineno) +
                                    ": expected 7 columns, got " + std::to_string(k));
        TriangulationSample s;
        s.x1 = v[0];
        s.y1 = v[1];
        s.x2 = v[2];
        s.y2 = v[3];
        s.truth = Vec3(v[4], v[5], v[6]);
        out.push_back(s);
    }
    return out;
}

}  // namespace rover

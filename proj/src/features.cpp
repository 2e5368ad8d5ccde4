#include "rover/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace rover {

namespace {

struct Rect {
    int x0, y0, x1, y1;  // half-open
    bool empty() const { return x0 >= x1 || y0 >= y1; }
};

Rect clamp_roi(const BBox& roi, const GrayImage& img) {
    Rect r;
    r.x0 = std::max(0, static_cast<int>(std::floor(roi.x_min)));
    r.y0 = std::max(0, static_cast<int>(std::floor(roi.y_min)));
    r.x1 = std::min(img.width, static_cast<int>(std::ceil(roi.x_max)));
    r.y1 = std::min(img.height, static_cast<int>(std::ceil(roi.y_max)));
    return r;
}

double l2_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

std::vector<Keypoint> detect(const GrayImage& img, const BBox& roi,
                             const DetectConfig& cfg) {
    const Rect r = clamp_roi(roi, img);
    if (r.empty()) throw EmptyRoi("detect: region of interest has zero area");

    // Gaussian window weights, radius 2, normalized to unit sum.
    double w[5][5];
    double wsum = 0.0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            w[dy + 2][dx + 2] =
                std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.window_sigma * cfg.window_sigma));
            wsum += w[dy + 2][dx + 2];
        }
    for (auto& row : w)
        for (double& v : row) v /= wsum;

    const int m = std::max(cfg.border_margin, 3);  // gradients need 3 px of context
    const int cx0 = std::max(r.x0, m), cx1 = std::min(r.x1, img.width - m);
    const int cy0 = std::max(r.y0, m), cy1 = std::min(r.y1, img.height - m);

    auto grad = [&](int x, int y, double& ix, double& iy) {
        ix = (img.at(x + 1, y) - img.at(x - 1, y)) / (2.0 * 255.0);
        iy = (img.at(x, y + 1) - img.at(x, y - 1)) / (2.0 * 255.0);
    };

    const int rw = std::max(0, cx1 - cx0), rh = std::max(0, cy1 - cy0);
    if (rw == 0 || rh == 0) return {};
    std::vector<double> resp(static_cast<size_t>(rw) * rh,
                             -std::numeric_limits<double>::infinity());
    auto resp_at = [&](int x, int y) -> double& {
        return resp[static_cast<size_t>(y - cy0) * rw + (x - cx0)];
    };

    for (int y = cy0; y < cy1; ++y) {
        for (int x = cx0; x < cx1; ++x) {
            double sxx = 0.0, syy = 0.0, sxy = 0.0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) {
                    double ix, iy;
                    grad(x + dx, y + dy, ix, iy);
                    const double ww = w[dy + 2][dx + 2];
                    sxx += ww * ix * ix;
                    syy += ww * iy * iy;
                    sxy += ww * ix * iy;
                }
            const double det = sxx * syy - sxy * sxy;
            const double tr = sxx + syy;
            resp_at(x, y) = det - cfg.harris_k * tr * tr;
        }
    }

    std::vector<Keypoint> kps;
    for (int y = cy0; y < cy1; ++y) {
        for (int x = cx0; x < cx1; ++x) {
            const double v = resp_at(x, y);
            if (!(v > cfg.min_response)) continue;
            bool is_max = true;
            for (int dy = -2; dy <= 2 && is_max; ++dy) {
                for (int dx = -2; dx <= 2; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int nx = x + dx, ny = y + dy;
                    if (nx < cx0 || nx >= cx1 || ny < cy0 || ny >= cy1) continue;
                    const double nv = resp_at(nx, ny);
                    // Earlier raster position wins an exact tie.
                    if (nv > v || (nv == v && (dy < 0 || (dy == 0 && dx < 0)))) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (!is_max) continue;
            Keypoint kp;
            kp.px = Pixel{static_cast<double>(x), static_cast<double>(y)};
            kp.response = v;
            kp.descriptor.resize(64);
            double mean = 0.0;
            for (int py = 0; py < 8; ++py)
                for (int px = 0; px < 8; ++px) {
                    const double t = img.at(x - 3 + px, y - 3 + py);
                    kp.descriptor[py * 8 + px] = t;
                    mean += t;
                }
            mean /= 64.0;
            double norm = 0.0;
            for (double& d : kp.descriptor) {
                d -= mean;
                norm += d * d;
            }
            norm = std::sqrt(norm);
            if (norm > 0.0)
                for (double& d : kp.descriptor) d /= norm;
            kps.push_back(std::move(kp));
        }
    }

    std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
        return a.response > b.response;
    });
    if (static_cast<int>(kps.size()) > cfg.max_keypoints)
        kps.resize(static_cast<size_t>(cfg.max_keypoints));
    return kps;
}

std::vector<Match> match_two_way(const std::vector<Keypoint>& left,
                                 const std::vector<Keypoint>& right,
                                 double ratio) {
    if (left.empty() || right.empty()) return {};
    const size_t dim = left[0].descriptor.size();
    for (const auto& kp : left)
        if (kp.descriptor.size() != dim)
            throw DescriptorLengthMismatch("left descriptor lengths differ");
    for (const auto& kp : right)
        if (kp.descriptor.size() != dim)
            throw DescriptorLengthMismatch(
                "descriptor length mismatch between the two sets");

    const int nl = static_cast<int>(left.size());
    const int nr = static_cast<int>(right.size());
    std::vector<double> dist(static_cast<size_t>(nl) * nr);
    for (int i = 0; i < nl; ++i)
        for (int j = 0; j < nr; ++j)
            dist[static_cast<size_t>(i) * nr + j] =
                l2_dist(left[i].descriptor, right[j].descriptor);
    auto d = [&](int i, int j) { return dist[static_cast<size_t>(i) * nr + j]; };

    // best_r[i]: lowest-index argmin over right; second_r[i]: runner-up value.
    std::vector<int> best_r(nl), best_l(nr);
    std::vector<double> second_r(nl, std::numeric_limits<double>::infinity());
    std::vector<double> second_l(nr, std::numeric_limits<double>::infinity());
    for (int i = 0; i < nl; ++i) {
        int bj = 0;
        for (int j = 1; j < nr; ++j)
            if (d(i, j) < d(i, bj)) bj = j;
        best_r[i] = bj;
        for (int j = 0; j < nr; ++j)
            if (j != bj) second_r[i] = std::min(second_r[i], d(i, j));
    }
    for (int j = 0; j < nr; ++j) {
        int bi = 0;
        for (int i = 1; i < nl; ++i)
            if (d(i, j) < d(bi, j)) bi = i;
        best_l[j] = bi;
        for (int i = 0; i < nl; ++i)
            if (i != bi) second_l[j] = std::min(second_l[j], d(i, j));
    }

    std::vector<Match> out;
    for (int i = 0; i < nl; ++i) {
        const int j = best_r[i];
        if (best_l[j] != i) continue;
        if (ratio > 0.0) {
            if (d(i, j) > ratio * second_r[i]) continue;
            if (d(i, j) > ratio * second_l[j]) continue;
        }
        out.push_back(Match{i, j, d(i, j)});
    }
    return out;
}

std::vector<Keypoint> load_keypoints(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open keypoint file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw BadHeader(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> cols;
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) cols.push_back(tok);
    if (cols.size() < 3 || cols[0] != "x" || cols[1] != "y")
        throw BadHeader(path + ": header must start with x,y,d0,...");
    const size_t dim = cols.size() - 2;
    for (size_t k = 0; k < dim; ++k)
        if (cols[2 + k] != "d" + std::to_string(k))
            throw BadHeader(path + ": descriptor column " + std::to_string(k) +
                            " is named \"" + cols[2 + k] + "\"");

    std::vector<Keypoint> kps;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::vector<double> vals;
        while (std::getline(ls, tok, ',')) {
            try {
                size_t used = 0;
                vals.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw RaggedRow(path + ":" + std::to_string(lineno) +
                                ": bad number \"" + tok + "\"");
            }
        }
        if (vals.size() != dim + 2)
            throw RaggedRow(path + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(dim + 2) + " columns, got " +
                            std::to_string(vals.size()));
        Keypoint kp;
        kp.px = Pixel{vals[0], vals[1]};
        kp.descriptor.assign(vals.begin() + 2, vals.end());
        kps.push_back(std::move(kp));
    }
    return kps;
}

void save_keypoints(const std::vector<Keypoint>& kps, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open keypoint file for writing: " + path);
    const size_t dim = kps.empty() ? 0 : kps[0].descriptor.size();
    os << "x,y";
    for (size_t k = 0; k < dim; ++k) os << ",d" << k;
    os << '\n';
    char buf[32];
    for (const auto& kp : kps) {
        if (kp.descriptor.size() != dim)
            throw DescriptorLengthMismatch("descriptor lengths differ within the set");
        std::snprintf(buf, sizeof(buf), "%.17g", kp.px.x);
        os << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", kp.px.y);
        os << buf;
        for (double d : kp.descriptor) {
            std::snprintf(buf, sizeof(buf), ",%.17g", d);
            os << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("failed writing keypoint file: " + path);
}

}  // namespace rover

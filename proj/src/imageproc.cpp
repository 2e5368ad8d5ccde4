#include "rover/imageproc.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace rover {

namespace {

struct Axis {
    // Doubled tile-center coordinates and the bracketing segment per pixel.
    std::vector<int> edge;    // tile boundaries, size tiles+1
    std::vector<int> center2;  // 2*center per tile

    Axis(int extent, int tiles) {
        edge.resize(tiles + 1);
        for (int i = 0; i <= tiles; ++i)
            edge[i] = static_cast<int>(static_cast<long long>(i) * extent / tiles);
        center2.resize(tiles);
        for (int i = 0; i < tiles; ++i) center2[i] = edge[i] + edge[i + 1] - 1;
    }

    // Bracketing tiles (lo, hi) and interpolation fraction num/den for a
    // pixel coordinate; clamps outside the outer centers.
    void locate(int p, int& lo, int& hi, int& num, int& den) const {
        const int tiles = static_cast<int>(center2.size());
        const int p2 = 2 * p;
        if (p2 <= center2.front() || tiles == 1) {
            lo = hi = 0;
            num = 0;
            den = 1;
            return;
        }
        if (p2 >= center2.back()) {
            lo = hi = tiles - 1;
            num = 0;
            den = 1;
            return;
        }
        int i = 0;
        while (center2[i + 1] <= p2) ++i;
        lo = i;
        hi = i + 1;
        num = p2 - center2[i];
        den = center2[i + 1] - center2[i];
    }
};

using TileMap = std::array<std::uint8_t, 256>;

TileMap tile_mapping(const GrayImage& img, int x0, int x1, int y0, int y1,
                     double clip_limit) {
    const long long area = static_cast<long long>(x1 - x0) * (y1 - y0);
    std::array<long long, 256> hist{};
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) ++hist[img.at(x, y)];

    const long long clip =
        std::max(1LL, static_cast<long long>(clip_limit * area / 256.0));
    long long excess = 0;
    for (auto& h : hist) {
        if (h > clip) {
            excess += h - clip;
            h = clip;
        }
    }
    const long long bonus = excess / 256;
    const int residual = static_cast<int>(excess % 256);
    for (auto& h : hist) h += bonus;
    for (int b = 0; b < residual; ++b) ++hist[b];

    TileMap map;
    long long cum = 0;
    for (int b = 0; b < 256; ++b) {
        cum += hist[b];
        map[b] = static_cast<std::uint8_t>((2 * 255 * cum + area) / (2 * area));
    }
    return map;
}

}  // namespace

GrayImage clahe(const GrayImage& img, const ClaheConfig& cfg) {
    if (img.empty()) throw ImageTooSmall("clahe: empty image");
    if (cfg.grid_x < 1 || cfg.grid_y < 1)
        throw ImageTooSmall("clahe: grid dimensions must be at least 1");
    if (img.width < cfg.grid_x || img.height < cfg.grid_y)
        throw ImageTooSmall("clahe: image smaller than the tile grid");
    if (cfg.clip_limit < 1.0)
        throw ImageTooSmall("clahe: clip limit must be at least 1.0");
    if (cfg.bins != 256) throw ImageTooSmall("clahe: bins must be 256");

    const Axis ax(img.width, cfg.grid_x);
    const Axis ay(img.height, cfg.grid_y);

    std::vector<TileMap> maps(static_cast<size_t>(cfg.grid_x) * cfg.grid_y);
    for (int j = 0; j < cfg.grid_y; ++j)
        for (int i = 0; i < cfg.grid_x; ++i)
            maps[static_cast<size_t>(j) * cfg.grid_x + i] = tile_mapping(
                img, ax.edge[i], ax.edge[i + 1], ay.edge[j], ay.edge[j + 1],
                cfg.clip_limit);

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        int jlo, jhi, ynum, yden;
        ay.locate(y, jlo, jhi, ynum, yden);
        const TileMap* row_lo = &maps[static_cast<size_t>(jlo) * cfg.grid_x];
        const TileMap* row_hi = &maps[static_cast<size_t>(jhi) * cfg.grid_x];
        for (int x = 0; x < img.width; ++x) {
            int ilo, ihi, xnum, xden;
            ax.locate(x, ilo, ihi, xnum, xden);
            const std::uint8_t v = img.at(x, y);
            const long long top = static_cast<long long>(xden - xnum) * row_lo[ilo][v] +
                                  static_cast<long long>(xnum) * row_lo[ihi][v];
            const long long bot = static_cast<long long>(xden - xnum) * row_hi[ilo][v] +
                                  static_cast<long long>(xnum) * row_hi[ihi][v];
            const long long acc =
                static_cast<long long>(yden - ynum) * top + static_cast<long long>(ynum) * bot;
            const long long d = static_cast<long long>(xden) * yden;
            out.at(x, y) = static_cast<std::uint8_t>((2 * acc + d) / (2 * d));
        }
    }
    return out;
}

GrayImage load_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string s = buf.str();

    size_t pos = 0;
    auto next_token = [&](const char* what) -> std::string {
        // Whitespace and '#'-to-end-of-line comments may precede any token.
        while (pos < s.size()) {
            if (std::isspace(static_cast<unsigned char>(s[pos]))) {
                ++pos;
            } else if (s[pos] == '#') {
                while (pos < s.size() && s[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        size_t start = pos;
        while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos])))
            ++pos;
        if (start == pos)
            throw Truncated(path + ": missing " + what);
        return s.substr(start, pos - start);
    };

    if (s.size() < 2 || s[0] != 'P' || s[1] != '5') {
        const std::string magic = s.substr(0, std::min<size_t>(2, s.size()));
        throw BadMagic(path + ": expected P5, got \"" + magic + "\"");
    }
    pos = 2;

    auto parse_int = [&](const char* what) {
        const std::string tok = next_token(what);
        try {
            size_t used = 0;
            const long v = std::stol(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw BadDimensions(path + ": bad " + std::string(what) + " \"" + tok + "\"");
        }
    };
    const long w = parse_int("width");
    const long h = parse_int("height");
    const long maxval = parse_int("maxval");
    if (w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
        throw BadDimensions(path + ": bad image size " + std::to_string(w) + "x" +
                            std::to_string(h));
    if (maxval != 255)
        throw BadMaxval(path + ": maxval " + std::to_string(maxval) +
                        " (only 255 supported)");
    if (pos >= s.size()) throw Truncated(path + ": no payload");
    ++pos;  // single whitespace byte separates header from payload

    const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h);
    if (s.size() - pos < need)
        throw Truncated(path + ": payload has " + std::to_string(s.size() - pos) +
                        " of " + std::to_string(need) + " bytes");
    GrayImage img(static_cast<int>(w), static_cast<int>(h));
    std::copy_n(reinterpret_cast<const std::uint8_t*>(s.data()) + pos, need,
                img.data.begin());
    return img;
}

void save_pgm(const GrayImage& img, const std::string& path) {
    if (img.empty()) throw BadDimensions("save_pgm: empty image");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open image for writing: " + path);
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
    if (!os) throw IoError("failed writing image: " + path);
}

}  // namespace rover

#include "rover/recon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rover {

namespace {

// Token reader for the PFM/PGM headers; PGM additionally allows # comments.
std::string next_token(std::istream& is, bool allow_comments) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (allow_comments && c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

long long parse_int_token(std::istream& is, bool comments, const std::string& path,
                          const char* what) {
    const std::string tok = next_token(is, comments);
    try {
        size_t used = 0;
        const long long v = std::stoll(tok, &used);
        if (used == tok.size()) return v;
    } catch (...) {
    }
    throw MalformedHeader(path + ": bad " + what + " token '" + tok + "'");
}

DepthMap load_pfm(std::ifstream& is, const std::string& path) {
    const long long w = parse_int_token(is, false, path, "width");
    const long long h = parse_int_token(is, false, path, "height");
    const std::string scale_tok = next_token(is, false);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (...) {
        throw MalformedHeader(path + ": bad scale token '" + scale_tok + "'");
    }
    if (w <= 0 || h <= 0) throw MalformedHeader(path + ": non-positive dimensions");
    if (scale >= 0.0)
        throw MalformedHeader(path + ": big-endian PFM is not supported");

    DepthMap map;
    map.width = static_cast<int>(w);
    map.height = static_cast<int>(h);
    map.depth.resize(static_cast<size_t>(w) * h);
    std::vector<float> row(map.width);
    // PFM stores rows bottom-up.
    for (int y = map.height - 1; y >= 0; --y) {
        is.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(sizeof(float)) * map.width);
        if (is.gcount() != static_cast<std::streamsize>(sizeof(float)) * map.width)
            throw Truncated(path + ": depth data ends early");
        for (int x = 0; x < map.width; ++x) map.at(x, y) = row[x];
    }
    return map;
}

DepthMap load_pgm16(std::ifstream& is, const std::string& path) {
    const long long w = parse_int_token(is, true, path, "width");
    const long long h = parse_int_token(is, true, path, "height");
    const long long maxval = parse_int_token(is, true, path, "maxval");
    if (w <= 0 || h <= 0) throw BadDimensions(path + ": non-positive dimensions");
    if (maxval <= 255 || maxval > 65535)
        throw BadMaxval(path + ": expected a 16-bit maxval, got " +
                        std::to_string(maxval));

    const std::string scale_path = path + ".scale";
    std::ifstream ss(scale_path);
    if (!ss) throw IoError("cannot open depth scale sidecar: " + scale_path);
    double scale = 0.0;
    if (!(ss >> scale) || !(scale > 0.0))
        throw Error(scale_path + ": expected one positive number");

    DepthMap map;
    map.width = static_cast<int>(w);
    map.height = static_cast<int>(h);
    map.depth.resize(static_cast<size_t>(w) * h);
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 2);
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size()))
        throw Truncated(path + ": depth data ends early");
    for (size_t i = 0; i < map.depth.size(); ++i) {
        const unsigned v = (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
        map.depth[i] = scale * static_cast<double>(v);
    }
    return map;
}

double median_of(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

DepthMap load_depth(const std::string& path, int expect_width, int expect_height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open depth file: " + path);
    char magic[2] = {0, 0};
    is.read(magic, 2);
    DepthMap map;
    if (magic[0] == 'P' && magic[1] == 'f') {
        map = load_pfm(is, path);
    } else if (magic[0] == 'P' && magic[1] == '5') {
        map = load_pgm16(is, path);
    } else {
        throw BadMagic(path + ": expected Pf or P5 depth raster");
    }
    if ((expect_width >= 0 && map.width != expect_width) ||
        (expect_height >= 0 && map.height != expect_height))
        throw DimensionMismatch(path + ": depth is " + std::to_string(map.width) +
                                "x" + std::to_string(map.height) + ", companion is " +
                                std::to_string(expect_width) + "x" +
                                std::to_string(expect_height));
    return map;
}

MetricAlignment fit_alignment(const DepthMap& depth,
                              const std::vector<DepthAnchor>& anchors) {
    std::vector<double> d, y;
    for (const DepthAnchor& a : anchors) {
        if (!(a.distance_cm > 0.0)) continue;
        const int cx = static_cast<int>(std::llround(a.px.x));
        const int cy = static_cast<int>(std::llround(a.px.y));
        if (cx < 0 || cx >= depth.width || cy < 0 || cy >= depth.height) continue;
        std::vector<double> hood;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                const int x = cx + dx, yy = cy + dy;
                if (x < 0 || x >= depth.width || yy < 0 || yy >= depth.height)
                    continue;
                if (depth.valid(x, yy)) hood.push_back(depth.at(x, yy));
            }
        if (hood.empty()) continue;
        d.push_back(median_of(hood));
        y.push_back(a.distance_cm / 100.0);
    }
    if (d.empty()) throw NoValidAnchors("fit_alignment: no usable anchors");

    MetricAlignment align;
    const size_t n = d.size();
    if (n == 1) {
        align.scale = y[0] / d[0];
        align.shift = 0.0;
        return align;
    }
    double md = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        md += d[i];
        my += y[i];
    }
    md /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sdd = 0.0, sdy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sdd += (d[i] - md) * (d[i] - md);
        sdy += (d[i] - md) * (y[i] - my);
    }
    const double s = sdy / sdd;  // normal equations of the 2-parameter fit
    if (sdd > 0.0 && std::isfinite(s) && s > 0.0) {
        align.scale = s;
        align.shift = my - s * md;
        return align;
    }
    // Equal (or scale-hostile) anchor depths: pin the scale, absorb the rest
    // into the shift.
    align.scale = 1.0;
    align.shift = my - md;
    align.degenerate = true;
    return align;
}

PointCloud backproject(const DepthMap& depth, const MetricAlignment& align,
                       const CahvCamera& cam, const GrayImage& img, int stride,
                       DistanceConvention conv) {
    if (stride < 1) throw Error("backproject: stride must be >= 1");
    if (img.width != depth.width || img.height != depth.height)
        throw DimensionMismatch("backproject: image is " + std::to_string(img.width) +
                                "x" + std::to_string(img.height) + ", depth is " +
                                std::to_string(depth.width) + "x" +
                                std::to_string(depth.height));
    PointCloud cloud;
    for (int y = 0; y < depth.height; y += stride) {
        for (int x = 0; x < depth.width; x += stride) {
            const double d = depth.at(x, y);
            if (!(d > 0.0)) continue;
            const double z = align.scale * d + align.shift;
            if (!(z > 0.0)) continue;  // alignment pushed the pixel behind us
            const Ray ray = pixel_ray(cam, {static_cast<double>(x),
                                            static_cast<double>(y)});
            double along = z;  // Euclidean: z is the range along the unit ray
            if (conv == DistanceConvention::ZDepth) along = z / ray.dir.dot(cam.a);
            CloudPoint pt;
            pt.p = ray.origin + along * ray.dir;
            pt.gray = img.at(x, y);
            cloud.points.push_back(pt);
        }
    }
    return cloud;
}

void write_ply(const PointCloud& cloud, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open PLY for writing: " + path);
    os << "ply\n"
          "format ascii 1.0\n"
          "element vertex "
       << cloud.points.size()
       << "\n"
          "property float x\n"
          "property float y\n"
          "property float z\n"
          "property uchar gray\n"
          "end_header\n";
    char buf[128];
    for (const CloudPoint& pt : cloud.points) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %u\n",
                      static_cast<double>(static_cast<float>(pt.p.x())),
                      static_cast<double>(static_cast<float>(pt.p.y())),
                      static_cast<double>(static_cast<float>(pt.p.z())),
                      static_cast<unsigned>(pt.gray));
        os << buf;
    }
    if (!os) throw IoError("failed writing PLY: " + path);
}

PointCloud read_ply(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open PLY: " + path);
    const auto expect_line = [&](const std::string& want) {
        std::string line;
        if (!std::getline(is, line) || line != want)
            throw MalformedHeader(path + ": expected header line '" + want +
                                  "', got '" + line + "'");
    };
    expect_line("ply");
    expect_line("format ascii 1.0");
    std::string line;
    if (!std::getline(is, line) || line.rfind("element vertex ", 0) != 0)
        throw MalformedHeader(path + ": expected 'element vertex N', got '" + line +
                              "'");
    long long n = -1;
    try {
        size_t used = 0;
        n = std::stoll(line.substr(15), &used);
        if (used != line.size() - 15) n = -1;
    } catch (...) {
    }
    if (n < 0) throw MalformedHeader(path + ": bad vertex count in '" + line + "'");
    expect_line("property float x");
    expect_line("property float y");
    expect_line("property float z");
    expect_line("property uchar gray");
    expect_line("end_header");

    PointCloud cloud;
    cloud.points.reserve(static_cast<size_t>(n));
    long long seen = 0;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        // Parsed as float32 so coordinates land exactly on the stored
        // values the "property float" declaration promises.
        float x, y, z;
        long long gray;
        if (!(ss >> x >> y >> z >> gray)) {
            std::string probe;
            std::istringstream blank(line);
            if (!(blank >> probe)) continue;  // trailing blank line
            throw Error(path + ": bad vertex row '" + line + "'");
        }
        if (gray < 0 || gray > 255)
            throw Error(path + ": gray value out of range in '" + line + "'");
        if (++seen > n) throw VertexCountMismatch(path + ": more rows than declared");
        CloudPoint pt;
        pt.p = Vec3(x, y, z);
        pt.gray = static_cast<std::uint8_t>(gray);
        cloud.points.push_back(pt);
    }
    if (seen != n)
        throw VertexCountMismatch(path + ": declared " + std::to_string(n) +
                                  " vertices, found " + std::to_string(seen));
    return cloud;
}

}  // namespace rover

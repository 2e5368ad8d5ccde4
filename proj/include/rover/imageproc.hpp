#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rover/errors.hpp"

namespace rover {

/// Row-major 8-bit grayscale image.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const {
        return data[static_cast<size_t>(y) * width + x];
    }
    bool empty() const { return width <= 0 || height <= 0; }
};

struct ClaheConfig {
    double clip_limit = 2.0;  // multiplier over the uniform bin height
    int grid_x = 8;
    int grid_y = 8;
    int bins = 256;  // fixed; present for config readability
};

struct ImageTooSmall : Error {
    using Error::Error;
};
struct BadMagic : Error {
    using Error::Error;
};
struct BadDimensions : Error {
    using Error::Error;
};
struct BadMaxval : Error {
    using Error::Error;
};
struct Truncated : Error {
    using Error::Error;
};

/// Contrast-limited adaptive histogram equalization.
///
/// The arithmetic is fully integral so output bytes are reproducible across
/// compilers; golden tests depend on every rule below.
///   - Tile columns [i*W/gx, (i+1)*W/gx), rows alike (integer division).
///   - Per-tile clip ceiling: max(1, int(clip_limit * tile_area / 256.0)).
///   - Clipped excess is redistributed once: excess/256 to every bin, the
///     remainder one count each to bins 0..(excess%256)-1. No second pass.
///   - Tile mapping: map[v] = (2*255*cum[v] + area) / (2*area), i.e. the
///     CDF scaled to [0,255] with round-half-up.
///   - Per pixel, the four surrounding tile mappings are blended bilinearly
///     with weights formed from doubled tile-center coordinates
///     (2*center = col_start + col_end - 1), rounding half up once at the
///     end; pixels outside the outer tile centers clamp to the edge tile.
GrayImage clahe(const GrayImage& img, const ClaheConfig& cfg = {});

/// Binary 8-bit PGM (P5, maxval 255).
GrayImage load_pgm(const std::string& path);
void save_pgm(const GrayImage& img, const std::string& path);

}  // namespace rover

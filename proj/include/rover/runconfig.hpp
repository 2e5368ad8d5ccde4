#pragma once

#include <cstdint>
#include <string>

#include "rover/errors.hpp"
#include "rover/imageproc.hpp"
#include "rover/mlp.hpp"

namespace rover {

struct BadConfigKey : Error {
    using Error::Error;
};
struct BadConfigValue : Error {
    using Error::Error;
};

/// Everything the command-line tool accepts from a config file, with the
/// reference rover setup as defaults: 0.24 m baseline, 39 deg field of
/// view, 1024x1024 images, CLAHE clip 2.0 on an 8x8 grid, the standard
/// training recipe, and a 10 m far-range clamp.
struct RunConfig {
    double baseline_m = 0.24;
    double fov_deg = 39.0;
    int image_width = 1024;
    int image_height = 1024;
    ClaheConfig clahe;
    TrainConfig training;
    double far_threshold_m = 10.0;
    std::uint64_t seed = 0;
};

/// Merges a "key=value" file into cfg. Blank lines and lines starting with
/// '#' are skipped; whitespace around keys and values is trimmed. Any key
/// outside the RunConfig field list raises BadConfigKey, and a value that
/// does not parse (or violates the field's range) raises BadConfigValue;
/// both messages name the offending key so scripts can report it.
void apply_config_file(RunConfig& cfg, const std::string& path);

}  // namespace rover

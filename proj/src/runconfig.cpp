#include "rover/runconfig.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

namespace rover {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& why) {
    throw BadConfigValue("config key '" + key + "': " + why);
}

double parse_double(const std::string& key, const std::string& text) {
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        bad_value(key, "'" + text + "' is not a number");
    }
    if (used != text.size()) bad_value(key, "'" + text + "' is not a number");
    return v;
}

long long parse_int(const std::string& key, const std::string& text) {
    size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        bad_value(key, "'" + text + "' is not an integer");
    }
    if (used != text.size()) bad_value(key, "'" + text + "' is not an integer");
    return v;
}

double positive(const std::string& key, double v) {
    if (!(v > 0)) bad_value(key, "must be positive");
    return v;
}

int positive_int(const std::string& key, long long v) {
    if (v <= 0 || v > 1000000000) bad_value(key, "must be a positive integer");
    return static_cast<int>(v);
}

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);

    using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"baseline_m",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.baseline_m = positive(k, parse_double(k, v));
         }},
        {"fov_deg",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             double d = parse_double(k, v);
             if (!(d > 0 && d < 180)) bad_value(k, "must be in (0, 180)");
             c.fov_deg = d;
         }},
        {"image_width",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.image_width = positive_int(k, parse_int(k, v));
         }},
        {"image_height",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.image_height = positive_int(k, parse_int(k, v));
         }},
        {"clahe_clip",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.clahe.clip_limit = positive(k, parse_double(k, v));
         }},
        {"clahe_grid_x",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.clahe.grid_x = positive_int(k, parse_int(k, v));
         }},
        {"clahe_grid_y",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.clahe.grid_y = positive_int(k, parse_int(k, v));
         }},
        {"learning_rate",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.training.learning_rate = positive(k, parse_double(k, v));
         }},
        {"patience",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.training.patience = positive_int(k, parse_int(k, v));
         }},
        {"max_epochs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.training.max_epochs = positive_int(k, parse_int(k, v));
         }},
        {"batch_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.training.batch_size = positive_int(k, parse_int(k, v));
         }},
        {"lr_factor",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             double d = parse_double(k, v);
             if (!(d > 0 && d <= 1)) bad_value(k, "must be in (0, 1]");
             c.training.lr_factor = d;
         }},
        {"lr_patience",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.training.lr_patience = positive_int(k, parse_int(k, v));
         }},
        {"lr_min",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             double d = parse_double(k, v);
             if (d < 0) bad_value(k, "must be non-negative");
             c.training.lr_min = d;
         }},
        {"far_threshold_m",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.far_threshold_m = positive(k, parse_double(k, v));
         }},
        {"seed",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             unsigned long long s = 0;
             size_t used = 0;
             try {
                 s = std::stoull(v, &used);
             } catch (const std::exception&) {
                 bad_value(k, "'" + v + "' is not an unsigned integer");
             }
             if (used != v.size() || v[0] == '-')
                 bad_value(k, "'" + v + "' is not an unsigned integer");
             c.seed = s;
             c.training.seed = s;
         }},
    };

    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw BadConfigValue("config line " + std::to_string(lineno) +
                                 " has no '=': " + t);
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw BadConfigKey("unknown config key '" + key + "'");
        if (value.empty()) bad_value(key, "empty value");
        it->second(cfg, key, value);
    }
}

}  // namespace rover

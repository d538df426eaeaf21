#include "hdrdistill/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace hdrdistill {

void TrainConfig::validate() const {
    if (image_size < 8 || image_size % 4) {
        throw ConfigError("image_size must be >= 8 and divisible by 4");
    }
    if (image_size % 16) throw ConfigError("image_size must be divisible by 16 (pyramid depth)");
    if (n_frames < 2) throw ConfigError("need at least 2 frames");
    if (format != "srgb" && format != "raw") throw ConfigError("format must be srgb or raw");
    if (bayer != "rggb" && bayer != "bggr" && bayer != "grbg" && bayer != "gbrg") {
        throw ConfigError("unknown bayer pattern: " + bayer);
    }
    if (hist_mask_mode != "in_mask" && hist_mask_mode != "product") {
        throw ConfigError("hist_mask_mode must be in_mask or product");
    }
    if (epochs < 0 || batch_size < 1) throw ConfigError("bad epochs/batch_size");
    if (fpn_out != spgrm_width) {
        throw ConfigError("fpn_out must equal spgrm_width (prior fusion channel contract)");
    }
    if (k_masks < 1 || skam_stages < 0) throw ConfigError("bad k_masks/skam_stages");
    if (train_scenes < 1 || test_scenes < 1) throw ConfigError("bad dataset sizes");
    if (!(lr > 0.0) || !(adam_beta1 >= 0 && adam_beta1 < 1) ||
        !(adam_beta2 >= 0 && adam_beta2 < 1)) {
        throw ConfigError("bad optimizer settings");
    }
    if (lambda_perc < 0 || lambda1 < 0 || lambda2 < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
    hist_spec().validate();
    if (!(mu > 0)) throw ConfigError("mu must be positive");
    if (min_instances < 1 || max_instances < min_instances) {
        throw ConfigError("bad instance count range");
    }
}

PixelFormat TrainConfig::pixel_format() const {
    return format == "raw" ? PixelFormat::RawBayer : PixelFormat::SrgbLinear;
}

BayerPattern TrainConfig::bayer_pattern() const {
    if (bayer == "bggr") return BayerPattern::BGGR;
    if (bayer == "grbg") return BayerPattern::GRBG;
    if (bayer == "gbrg") return BayerPattern::GBRG;
    return BayerPattern::RGGB;
}

MaskedHistogramMode TrainConfig::mask_mode() const {
    return hist_mask_mode == "product" ? MaskedHistogramMode::ZeroFilledProduct
                                       : MaskedHistogramMode::InMaskOnly;
}

SceneConfig TrainConfig::scene_config() const {
    SceneConfig sc;
    sc.height = image_size;
    sc.width = image_size;
    sc.n_frames = n_frames;
    sc.format = pixel_format();
    sc.pattern = bayer_pattern();
    sc.min_instances = min_instances;
    sc.max_instances = max_instances;
    sc.noise_sigma = noise_sigma;
    sc.max_shift = max_shift;
    sc.exposure_ratio = exposure_ratio;
    return sc;
}

namespace {

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <class T>
T parse_number(const std::string& v, const std::string& key);

template <>
double parse_number<double>(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    double out;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("trailing junk in value for " + key);
    return out;
}

template <>
int parse_number<int>(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    long out;
    try {
        out = std::stol(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for " + key + ": '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("trailing junk in value for " + key);
    return static_cast<int>(out);
}

template <>
std::uint64_t parse_number<std::uint64_t>(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    unsigned long long out;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("bad seed value for " + key + ": '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("trailing junk in value for " + key);
    return out;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::vector<std::pair<std::string, Field>>& fields() {
    auto num = [](auto member) {
        return Field{[member](TrainConfig& c, const std::string& v) {
                         c.*member = parse_number<std::decay_t<decltype(c.*member)>>(v, "field");
                     },
                     [member](const TrainConfig& c) -> std::string {
                         using T = std::decay_t<decltype(c.*member)>;
                         if constexpr (std::is_same_v<T, double>) {
                             return format_double(c.*member);
                         } else {
                             return std::to_string(c.*member);
                         }
                     }};
    };
    auto str = [](std::string TrainConfig::* member) {
        return Field{[member](TrainConfig& c, const std::string& v) { c.*member = v; },
                     [member](const TrainConfig& c) { return c.*member; }};
    };
    static const std::vector<std::pair<std::string, Field>> table = {
        {"seed", num(&TrainConfig::seed)},
        {"image_size", num(&TrainConfig::image_size)},
        {"n_frames", num(&TrainConfig::n_frames)},
        {"format", str(&TrainConfig::format)},
        {"bayer", str(&TrainConfig::bayer)},
        {"epochs", num(&TrainConfig::epochs)},
        {"batch_size", num(&TrainConfig::batch_size)},
        {"adam_beta1", num(&TrainConfig::adam_beta1)},
        {"adam_beta2", num(&TrainConfig::adam_beta2)},
        {"lr", num(&TrainConfig::lr)},
        {"adam_eps", num(&TrainConfig::adam_eps)},
        {"lambda_perc", num(&TrainConfig::lambda_perc)},
        {"lambda1", num(&TrainConfig::lambda1)},
        {"lambda2", num(&TrainConfig::lambda2)},
        {"hist_bins", num(&TrainConfig::hist_bins)},
        {"hist_min", num(&TrainConfig::hist_min)},
        {"hist_max", num(&TrainConfig::hist_max)},
        {"hist_sigma", num(&TrainConfig::hist_sigma)},
        {"hist_mask_mode", str(&TrainConfig::hist_mask_mode)},
        {"mu", num(&TrainConfig::mu)},
        {"k_masks", num(&TrainConfig::k_masks)},
        {"skam_stages", num(&TrainConfig::skam_stages)},
        {"orm_width", num(&TrainConfig::orm_width)},
        {"spgrm_width", num(&TrainConfig::spgrm_width)},
        {"skam_latent", num(&TrainConfig::skam_latent)},
        {"phi_width", num(&TrainConfig::phi_width)},
        {"fpn_out", num(&TrainConfig::fpn_out)},
        {"train_scenes", num(&TrainConfig::train_scenes)},
        {"test_scenes", num(&TrainConfig::test_scenes)},
        {"noise_sigma", num(&TrainConfig::noise_sigma)},
        {"max_shift", num(&TrainConfig::max_shift)},
        {"exposure_ratio", num(&TrainConfig::exposure_ratio)},
        {"min_instances", num(&TrainConfig::min_instances)},
        {"max_instances", num(&TrainConfig::max_instances)},
        {"output_dir", str(&TrainConfig::output_dir)},
    };
    return table;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& [name, field] : fields()) {
            if (name == key) {
                try {
                    field.set(cfg, value);
                } catch (const ConfigError&) {
                    throw ConfigError("line " + std::to_string(lineno) + ": bad value for " +
                                      key + ": '" + value + "'");
                }
                found = true;
                break;
            }
        }
        if (!found) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream os;
    for (const auto& [name, field] : fields()) {
        os << name << " = " << field.get(cfg) << "\n";
    }
    return os.str();
}

}  // namespace hdrdistill

#include "deanet/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace deanet {

namespace {

std::string trim(std::string s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.front())) s.erase(s.begin());
    while (!s.empty() && is_space(s.back())) s.pop_back();
    return s;
}

} // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file: " + path);
    }
    KeyValueConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        cfg.values[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

void KeyValueConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    }
    values[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        auto v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
    }
}

double KeyValueConfig::get_real(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        auto v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
    }
}

bool KeyValueConfig::get_flag(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<double> KeyValueConfig::get_reals(const std::string& key,
                                              std::vector<double> fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects comma-separated numbers, got '" +
                              it->second + "'");
        }
    }
    if (out.empty()) {
        throw ConfigError("config key '" + key + "' is empty");
    }
    return out;
}

std::string KeyValueConfig::dump() const {
    std::ostringstream out;
    for (const auto& [key, value] : values) {
        out << key << " = " << value << "\n";
    }
    return out.str();
}

RunConfig RunConfig::resolve(const KeyValueConfig& kv) {
    RunConfig cfg;
    cfg.raw = kv;

    cfg.dataset = dataset_from_string(kv.get("data.dataset", "glas"));
    cfg.data_root = kv.get("data.root", "");

    cfg.model.variant = variant_from_string(kv.get("model.variant", "full"));
    cfg.model.base_width = kv.get_int("model.base_width", 64);
    cfg.model.ld_channels = kv.get_int("model.ld_channels", 64);
    cfg.model.ld_weights_path = kv.get("model.ld_weights_path", "");
    cfg.model.ld_weights_required = kv.get_flag("model.ld_weights_required", false);
    cfg.model.freeze_ld = kv.get_flag("model.freeze_ld", false);
    cfg.model.ld_lr_multiplier = kv.get_real("model.ld_lr_multiplier", 0.1);
    {
        auto rates = kv.get_reals("model.dilation_rates", {1, 2, 4, 8});
        if (rates.size() != 4) throw ConfigError("model.dilation_rates expects 4 values");
        for (size_t i = 0; i < 4; ++i) {
            cfg.model.ffm.dilation_rates[i] = static_cast<int64_t>(rates[i]);
        }
    }

    auto& train = cfg.train;
    train.epochs = static_cast<int>(kv.get_int("train.epochs", 1000));
    train.batch_size = static_cast<int>(kv.get_int("train.batch_size", 4));
    train.lr = kv.get_real("train.lr", 5e-4);
    train.seed = static_cast<uint64_t>(kv.get_int("run.seed", 0));
    train.deterministic = kv.get_flag("run.deterministic", false);
    train.val_interval = static_cast<int>(kv.get_int("train.val_interval", 1));
    train.ckpt_interval = static_cast<int>(kv.get_int("train.ckpt_interval", 100));
    train.val_fraction = kv.get_real("train.val_fraction", 0.1);
    train.boundary_width = static_cast<int>(kv.get_int("data.boundary_width", 2));
    train.resume = kv.get("train.resume", "");

    const int default_crop = cfg.dataset == DatasetKind::Glas ? 416 : 512;
    train.aug.crop_h = static_cast<int>(kv.get_int("aug.crop_h", default_crop));
    train.aug.crop_w = static_cast<int>(kv.get_int("aug.crop_w", default_crop));
    train.aug.hflip_prob = kv.get_real("aug.hflip_prob", 0.5);
    train.aug.rotation_deg = kv.get_real("aug.rotation_deg", 180.0);
    train.aug.scale_min = kv.get_real("aug.scale_min", 0.8);
    train.aug.scale_max = kv.get_real("aug.scale_max", 1.25);
    train.aug.elastic_alpha = kv.get_real("aug.elastic_alpha", 100.0);
    train.aug.elastic_sigma = kv.get_real("aug.elastic_sigma", 10.0);

    {
        auto weights = kv.get_reals("loss.stage_weights", {1.0, 0.8, 0.6, 0.4});
        if (weights.size() != 4) throw ConfigError("loss.stage_weights expects 4 values");
        std::copy(weights.begin(), weights.end(), train.loss.stage_weights.begin());
    }
    train.loss.variance_lambda = kv.get_real("loss.variance_lambda", 0.1);
    train.loss.mb_lambda = kv.get_flag("model.supervise_mb", false)
                               ? kv.get_real("loss.mb_lambda", 0.1)
                               : kv.get_real("loss.mb_lambda", 0.0);

    train.post.min_object_area = static_cast<int>(kv.get_int("post.min_object_area", 100));
    train.post.fill_holes = kv.get_flag("post.fill_holes", true);
    train.post.boundary_reassign = kv.get_flag("post.boundary_reassign", true);

    cfg.out_dir = kv.get("run.out_dir", "out");
    cfg.run_name = kv.get("run.name", "");
    cfg.overwrite = kv.get_flag("run.overwrite", false);
    return cfg;
}

std::string resolve_cache_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv("DEANET_CACHE"); env && *env) {
        return env;
    }
    if (cfg.data_root.empty()) return "";
    return (std::filesystem::path(cfg.data_root) / "cache").string();
}

} // namespace deanet

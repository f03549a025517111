#include "cmwno/config.hpp"

#include "cmwno/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cmwno {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
        throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
    return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    auto [p, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || p != end)
        throw ConfigError("config key '" + key + "': '" + text + "' is not a non-negative integer");
    return v;
}

bool to_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config key '" + key + "': '" + text + "' is not a boolean");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"experiment.system", [](auto& c, auto&, auto& v) { c.system = v; }},
        {"experiment.out", [](auto& c, auto&, auto& v) { c.out = v; }},
        {"experiment.seed", [](auto& c, auto& k, auto& v) { c.seed = to_uint(k, v); }},

        {"model.kind", [](auto& c, auto&, auto& v) { c.kind = model::parse_model_kind(v); }},
        {"model.k", [](auto& c, auto& k, auto& v) { c.model.k = static_cast<int>(to_uint(k, v)); }},
        {"model.c", [](auto& c, auto& k, auto& v) { c.model.c = to_uint(k, v); }},
        {"model.floor", [](auto& c, auto& k, auto& v) { c.model.floor = static_cast<int>(to_uint(k, v)); }},
        {"model.width", [](auto& c, auto& k, auto& v) { c.model.width = to_uint(k, v); }},

        {"datagen.train_samples", [](auto& c, auto& k, auto& v) { c.datagen.train_samples = to_uint(k, v); }},
        {"datagen.test_samples", [](auto& c, auto& k, auto& v) { c.datagen.test_samples = to_uint(k, v); }},
        {"datagen.resolution", [](auto& c, auto& k, auto& v) { c.datagen.resolution = to_uint(k, v); }},
        {"datagen.lambda", [](auto& c, auto& k, auto& v) { c.datagen.lambda = to_double(k, v); }},
        {"datagen.init", [](auto& c, auto&, auto& v) { c.datagen.init = split_list(v); }},
        {"datagen.gamma",
         [](auto& c, auto& k, auto& v) {
             c.datagen.gamma.clear();
             for (const auto& x : split_list(v)) c.datagen.gamma.push_back(to_double(k, x));
         }},
        {"datagen.dt", [](auto& c, auto& k, auto& v) { c.datagen.dt = to_double(k, v); }},
        {"datagen.train_path", [](auto& c, auto&, auto& v) { c.datagen.train_path = v; }},
        {"datagen.test_path", [](auto& c, auto&, auto& v) { c.datagen.test_path = v; }},

        {"train.epochs", [](auto& c, auto& k, auto& v) { c.train.epochs = to_uint(k, v); }},
        {"train.batch", [](auto& c, auto& k, auto& v) { c.train.batch = to_uint(k, v); }},
        {"train.lr", [](auto& c, auto& k, auto& v) { c.train.adam.lr = to_double(k, v); }},
        {"train.decay", [](auto& c, auto& k, auto& v) { c.train.adam.decay_factor = to_double(k, v); }},
        {"train.decay_every", [](auto& c, auto& k, auto& v) { c.train.adam.decay_every = to_uint(k, v); }},
        {"train.resolution", [](auto& c, auto& k, auto& v) { c.train.resolution = to_uint(k, v); }},
        {"train.validation_fraction",
         [](auto& c, auto& k, auto& v) { c.train.validation_fraction = to_double(k, v); }},
        {"train.target_times",
         [](auto& c, auto& k, auto& v) {
             c.train.target_times.clear();
             for (const auto& x : split_list(v)) c.train.target_times.push_back(to_double(k, x));
         }},
        {"train.timing", [](auto& c, auto& k, auto& v) { c.train.timing = to_bool(k, v); }},

        {"eval.resolutions",
         [](auto& c, auto& k, auto& v) {
             c.eval.resolutions.clear();
             for (const auto& x : split_list(v)) c.eval.resolutions.push_back(to_uint(k, x));
         }},

        {"sweep.lambdas",
         [](auto& c, auto& k, auto& v) {
             c.sweep.lambdas.clear();
             for (const auto& x : split_list(v)) c.sweep.lambdas.push_back(to_double(k, x));
         }},
        {"sweep.models",
         [](auto& c, auto&, auto& v) {
             c.sweep.models.clear();
             for (const auto& x : split_list(v)) c.sweep.models.push_back(model::parse_model_kind(x));
         }},
    };
    return table;
}

bool power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

}  // namespace

std::vector<std::string> system_variables(const std::string& system) {
    if (system == "gs") return {"u", "v"};
    if (system == "bz") return {"u", "v", "w"};
    if (system == "mfg") return {"rho", "phi"};
    throw ConfigError("unknown system '" + system + "' (expected gs, bz or mfg)");
}

std::string ExperimentConfig::train_path() const {
    return datagen.train_path.empty() ? out + "/train.cmwds" : datagen.train_path;
}

std::string ExperimentConfig::test_path() const {
    return datagen.test_path.empty() ? out + "/test.cmwds" : datagen.test_path;
}

void ExperimentConfig::validate() const {
    const auto vars = system_variables(system);
    if (model.k < 1 || model.k > 8) throw ConfigError("model.k must lie in 1..8");
    if (model.c == 0) throw ConfigError("model.c must be positive");
    if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (train.batch == 0) throw ConfigError("train.batch must be positive");
    if (!(train.adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (train.adam.decay_every == 0) throw ConfigError("train.decay_every must be positive");
    if (!(train.validation_fraction >= 0.0 && train.validation_fraction < 1.0))
        throw ConfigError("train.validation_fraction must lie in [0, 1)");
    if (!power_of_two(train.resolution)) throw ConfigError("train.resolution must be a power of two");
    if (!power_of_two(datagen.resolution)) throw ConfigError("datagen.resolution must be a power of two");
    for (auto r : eval.resolutions)
        if (!power_of_two(r)) throw ConfigError("eval.resolutions entries must be powers of two");
    if (!datagen.init.empty() && datagen.init.size() != vars.size())
        throw ConfigError("datagen.init needs one entry per variable");
    for (const auto& s : datagen.init)
        if (s != "grf" && s != "rand") throw ConfigError("datagen.init entries must be grf or rand");
    if (!datagen.gamma.empty() && datagen.gamma.size() != vars.size())
        throw ConfigError("datagen.gamma needs one entry per variable");
    if (system == "gs" && !(datagen.lambda >= 0.0 && datagen.lambda <= 1.0))
        throw ConfigError("datagen.lambda must lie in [0, 1]");
    if (datagen.dt < 0.0) throw ConfigError("datagen.dt must be non-negative");
    for (double l : sweep.lambdas)
        if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("sweep.lambdas entries must lie in [0, 1]");
}

ExperimentConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
    }
    ExperimentConfig cfg;
    const auto& table = setters();
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config key '" + section + "' must live inside a [section]");
        for (const auto& [key, node] : body) {
            const std::string full = section + "." + key;
            auto it = table.find(full);
            if (it == table.end()) throw ConfigError("unknown config key '" + full + "'");
            it->second(cfg, full, trim(node.data()));
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace cmwno

#include "truemoe/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "truemoe/errors.hpp"

namespace truemoe {
namespace {

struct Field {
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

using Entry = std::pair<std::string, Field>;

Entry int_field(const char* name, int Config::*m) {
    return {name, {[=](Config& c, const std::string& v) { c.*m = int(to_int(name, v)); },
                   [=](const Config& c) { return std::to_string(c.*m); }}};
}

Entry double_field(const char* name, double Config::*m) {
    return {name, {[=](Config& c, const std::string& v) { c.*m = to_double(name, v); },
                   [=](const Config& c) { return fmt_double(c.*m); }}};
}

Entry path_field(const char* name, std::filesystem::path Config::*m) {
    return {name, {[=](Config& c, const std::string& v) { c.*m = v; }, [=](const Config& c) { return (c.*m).string(); }}};
}

Field count_field(int split, int which) {
    return {[=](Config& c, const std::string& v) {
                const int n = int(to_int("count", v));
                auto& s = c.splits[std::size_t(split)];
                (which < 0 ? s.real : s.fake[std::size_t(which)]) = n;
            },
            [=](const Config& c) {
                const auto& s = c.splits[std::size_t(split)];
                return std::to_string(which < 0 ? s.real : s.fake[std::size_t(which)]);
            }};
}

const std::vector<Entry>& fields() {
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t = {
            path_field("data_root", &Config::data_root),
            path_field("work_dir", &Config::work_dir),
            path_field("report_path", &Config::report_path),
            path_field("route_path", &Config::route_path),
            {"seed", {[](Config& c, const std::string& v) { c.seed = std::uint64_t(to_int("seed", v)); },
                      [](const Config& c) { return std::to_string(c.seed); }}},
        };
        for (int s = 0; s < 3; ++s) {
            const std::string sp = to_string(Split(s));
            t.push_back({sp + "_real", count_field(s, -1)});
            for (int f = 0; f < kNumFamilies; ++f) {
                t.push_back({sp + "_fake_" + std::string(1, char('a' + f)), count_field(s, f)});
            }
        }
        std::vector<Entry> rest = {
            int_field("pinned_scale", &Config::pinned_scale),
            int_field("epochs", &Config::epochs),
            int_field("batch_size", &Config::batch_size),
            double_field("momentum", &Config::momentum),
            int_field("pretrain_batch_size", &Config::pretrain_batch_size),
            int_field("ae_images_per_family", &Config::ae_images_per_family),
            int_field("ae_epochs", &Config::ae_epochs),
            double_field("ae_lr", &Config::ae_lr),
            int_field("mlre_images", &Config::mlre_images),
            int_field("mlre_epochs", &Config::mlre_epochs),
            double_field("mlre_lr", &Config::mlre_lr),
            {"mlre_domains", {[](Config& c, const std::string& v) { c.mlre_domains = parse_mlre_domains(v); },
                              [](const Config& c) { return to_string(c.mlre_domains); }}},
            int_field("gae_images", &Config::gae_images),
            int_field("gae_epochs", &Config::gae_epochs),
            double_field("gae_lr", &Config::gae_lr),
            double_field("gae_tau", &Config::gae_tau),
            {"gae_rgb_only", {[](Config& c, const std::string& v) { c.gae_rgb_only = to_bool("gae_rgb_only", v); },
                              [](const Config& c) { return std::string(c.gae_rgb_only ? "true" : "false"); }}},
            int_field("granularity_reference", &Config::granularity_reference),
            {"gdf_mode", {[](Config& c, const std::string& v) { c.gdf_mode = parse_gdf_mode(v); },
                          [](const Config& c) { return to_string(c.gdf_mode); }}},
            double_field("head_lr", &Config::head_lr),
            int_field("finetune_epochs", &Config::finetune_epochs),
            double_field("finetune_lr", &Config::finetune_lr),
            int_field("router_epochs", &Config::router_epochs),
            double_field("router_lr", &Config::router_lr),
            double_field("alpha", &Config::alpha),
            double_field("beta", &Config::beta),
            int_field("baseline_manifold", &Config::baseline_manifold),
            int_field("baseline_level", &Config::baseline_level),
            {"eval_split", {[](Config& c, const std::string& v) { c.eval_split = v; },
                            [](const Config& c) { return c.eval_split; }}},
            {"perturbation", {[](Config& c, const std::string& v) { c.perturbation = v; },
                              [](const Config& c) { return c.perturbation; }}},
            double_field("perturb_probability", &Config::perturb_probability),
            double_field("crop_max_fraction", &Config::crop_max_fraction),
        };
        t.insert(t.end(), rest.begin(), rest.end());
        return t;
    }();
    return table;
}

}  // namespace

Config parse_config(const std::string& text) {
    std::map<std::string, const Field*> index;
    for (const auto& [k, f] : fields()) index[k] = &f;
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const auto it = index.find(key);
        if (it == index.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->second->set(c, value);
    }
    validate(c);
    return c;
}

Config load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const Config& config) {
    std::ostringstream os;
    for (const auto& [k, f] : fields()) os << k << " = " << f.get(config) << '\n';
    return os.str();
}

void validate(const Config& c) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    for (const auto& s : c.splits) {
        require(s.real >= 0, "image counts must be non-negative");
        for (int f : s.fake) require(f >= 0, "image counts must be non-negative");
    }
    require(c.pinned_scale >= 0 && c.pinned_scale <= kNumScales, "pinned_scale must be 0 or in [1,6]");
    require(c.epochs >= 1 && c.ae_epochs >= 1 && c.mlre_epochs >= 1 && c.gae_epochs >= 1, "epochs must be >= 1");
    require(c.finetune_epochs >= 0 && c.router_epochs >= 1, "epochs must be non-negative");
    require(c.batch_size >= 1 && c.pretrain_batch_size >= 1, "batch sizes must be >= 1");
    require(c.momentum >= 0 && c.momentum < 1, "momentum must lie in [0,1)");
    for (double lr : {c.ae_lr, c.mlre_lr, c.gae_lr, c.head_lr, c.finetune_lr, c.router_lr}) {
        require(lr >= 0, "learning rates must be non-negative");
    }
    require(c.ae_images_per_family >= 1, "ae_images_per_family must be >= 1");
    require(c.mlre_images >= 0 && c.gae_images >= 0, "image limits must be non-negative");
    require(c.gae_tau > 0, "gae_tau must be positive");
    require(c.granularity_reference >= 0 && c.granularity_reference < kNumManifolds,
            "granularity_reference must be a manifold index in [0,3)");
    require(c.alpha >= 0 && c.beta >= 0, "alpha and beta must be non-negative");
    const bool auto_baseline = c.baseline_manifold == -1 && c.baseline_level == 0;
    require(auto_baseline || (c.baseline_manifold >= 0 && c.baseline_manifold < kNumManifolds &&
                              c.baseline_level >= 1 && c.baseline_level <= kNumLevels),
            "baseline must be -1/0 (auto) or a manifold in [0,3) and level in [1,6]");
    require(c.perturb_probability >= 0 && c.perturb_probability <= 1, "perturb_probability must lie in [0,1]");
    require(c.crop_max_fraction >= 0 && c.crop_max_fraction < 1, "crop_max_fraction must lie in [0,1)");
    if (c.perturbation != "none") parse_perturbation(c.perturbation);
    parse_split(c.eval_split);
}

}  // namespace truemoe

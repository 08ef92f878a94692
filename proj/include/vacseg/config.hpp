#pragma once

// Run configuration: command-line flags, an optional JSON file and built-in
// defaults, resolved into a fully explicit RunConfig.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vacseg/fidelity.hpp"
#include "vacseg/solver.hpp"

namespace vacseg {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SynthKind { none, circles, step, composite };

inline const char* to_string(SynthKind k) {
    switch (k) {
        case SynthKind::none: return "none";
        case SynthKind::circles: return "circles";
        case SynthKind::step: return "step";
        case SynthKind::composite: return "composite";
    }
    return "?";
}

struct EmitFlags {
    bool components = true;
    bool composite = true;
    bool rounded = true;
    bool remainder = true;
    bool diagnostics = true;

    friend bool operator==(const EmitFlags&, const EmitFlags&) = default;
};

struct RunConfig {
    std::string input;  // empty when synthesising
    SynthKind synth = SynthKind::none;
    int size = 128;     // synthetic width (and height, except for the step strip)
    double noise = 0.05;
    std::string out = "vacseg_out";
    std::string format = "png";  // png | pnm
    SolverParams solver;
    EmitFlags emit;
};

inline constexpr double default_sigma = 30.0;

inline double default_noise(SynthKind k) { return k == SynthKind::step ? 0.1 : 0.05; }

struct ParsedConfig {
    RunConfig config;
    std::vector<std::string> warnings;
    std::optional<std::string> help;  // set when --help was requested
};

namespace detail {

using json = nlohmann::json;

inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "input",   "synth",      "size",       "noise",     "seed",      "out",           "format",
        "components", "epsilon", "lambda",     "sigma",     "dt",        "refine",        "coarsen",
        "projection", "cycle",   "ordering",   "init",      "max_steps", "tol",           "steady_tol",
        "max_sweeps", "freeze_averages", "truncate_below", "truncate_after", "emit"};
    return keys;
}

inline const json* lookup(const json& j, const std::string& key) {
    const auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
}

inline std::string as_string(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number() || v.is_boolean()) return v.dump();
    throw ConfigError(key + ": expected a string");
}

inline double as_double(const json& v, const std::string& key) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        std::size_t used = 0;
        try {
            const double d = std::stod(s, &used);
            if (used == s.size()) return d;
        } catch (const std::exception&) {
        }
        throw ConfigError(key + ": '" + s + "' is not a number");
    }
    throw ConfigError(key + ": expected a number");
}

inline long long as_integer(const json& v, const std::string& key) {
    const double d = as_double(v, key);
    if (!std::isfinite(d) || d != std::floor(d) || std::abs(d) > 9.0e15) throw ConfigError(key + ": must be an integer");
    return static_cast<long long>(d);
}

inline bool as_bool(const json& v, const std::string& key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
    }
    throw ConfigError(key + ": expected true or false");
}

template <typename E>
E as_choice(const json& v, const std::string& key, const std::map<std::string, E>& choices) {
    const auto s = as_string(v, key);
    const auto it = choices.find(s);
    if (it != choices.end()) return it->second;
    std::string names;
    for (const auto& [name, _] : choices) names += (names.empty() ? "" : "|") + name;
    throw ConfigError(key + ": must be one of " + names + " (got '" + s + "')");
}

inline EmitFlags as_emit(const json& v) {
    std::vector<std::string> names;
    if (v.is_array()) {
        for (const auto& e : v) names.push_back(as_string(e, "emit"));
    } else {
        std::stringstream ss(as_string(v, "emit"));
        for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty()) names.push_back(item);
    }
    EmitFlags f{false, false, false, false, false};
    for (const auto& n : names) {
        if (n == "components") f.components = true;
        else if (n == "composite") f.composite = true;
        else if (n == "rounded") f.rounded = true;
        else if (n == "remainder") f.remainder = true;
        else if (n == "diagnostics") f.diagnostics = true;
        else if (n == "all") f = EmitFlags{};
        else if (n != "none") throw ConfigError("emit: unknown output '" + n + "'");
    }
    return f;
}

inline std::string emit_list(const EmitFlags& f) {
    std::string s;
    const auto add = [&](bool on, const char* name) {
        if (on) s += (s.empty() ? "" : ",") + std::string(name);
    };
    add(f.components, "components");
    add(f.composite, "composite");
    add(f.rounded, "rounded");
    add(f.remainder, "remainder");
    add(f.diagnostics, "diagnostics");
    return s.empty() ? "none" : s;
}

}  // namespace detail

/// Resolve merged key/value settings into an explicit configuration.
inline ParsedConfig resolve_config(const nlohmann::json& settings) {
    using namespace detail;
    if (!settings.is_object()) throw ConfigError("config: expected a JSON object");
    const auto& keys = config_keys();
    for (const auto& [key, _] : settings.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError(key + ": unknown key");

    ParsedConfig parsed;
    RunConfig& cfg = parsed.config;
    SolverParams& p = cfg.solver;

    if (const auto* v = lookup(settings, "input")) cfg.input = as_string(*v, "input");
    if (const auto* v = lookup(settings, "synth"))
        cfg.synth = as_choice<SynthKind>(*v, "synth", {{"none", SynthKind::none},
                                                      {"circles", SynthKind::circles},
                                                      {"step", SynthKind::step},
                                                      {"composite", SynthKind::composite}});
    if (cfg.input.empty() == (cfg.synth == SynthKind::none))
        throw ConfigError("input: exactly one of input and synth must be given");
    if (cfg.synth == SynthKind::step) cfg.size = 256;
    if (const auto* v = lookup(settings, "size")) {
        const auto n = as_integer(*v, "size");
        if (n < 1 || n > 65536) throw ConfigError("size: must be in [1, 65536]");
        cfg.size = static_cast<int>(n);
    }
    cfg.noise = default_noise(cfg.synth);
    if (const auto* v = lookup(settings, "noise")) cfg.noise = as_double(*v, "noise");
    if (!(cfg.noise >= 0.0 && cfg.noise <= 1.0)) throw ConfigError("noise: must be in [0, 1]");
    if (const auto* v = lookup(settings, "seed")) {
        const auto s = as_integer(*v, "seed");
        if (s < 0) throw ConfigError("seed: must be >= 0");
        p.seed = static_cast<std::uint64_t>(s);
    }
    if (const auto* v = lookup(settings, "out")) cfg.out = as_string(*v, "out");
    if (cfg.out.empty()) throw ConfigError("out: must not be empty");
    if (const auto* v = lookup(settings, "format"))
        cfg.format = as_choice<std::string>(*v, "format", {{"png", "png"}, {"pnm", "pnm"}});

    if (const auto* v = lookup(settings, "components")) {
        const auto n = as_integer(*v, "components");
        if (n < 2 || n > static_cast<long long>(max_components))
            throw ConfigError("components: must be in [2, " + std::to_string(max_components) + "]");
        p.components = static_cast<std::size_t>(n);
    }
    if (const auto* v = lookup(settings, "coarsen")) {
        const auto f = as_integer(*v, "coarsen");
        if (f < 1 || f > 4096) throw ConfigError("coarsen: must be in [1, 4096]");
        p.coarsen = static_cast<int>(f);
    }
    if (const auto* v = lookup(settings, "refine")) {
        const auto r = as_integer(*v, "refine");
        if (r < 0 || r > 12) throw ConfigError("refine: must be in [0, 12]");
        p.refinements = static_cast<int>(r);
    }
    // one coarse pixel
    p.epsilon = static_cast<double>(p.coarsen);
    if (const auto* v = lookup(settings, "epsilon")) p.epsilon = as_double(*v, "epsilon");
    if (!(p.epsilon > 0.0) || !std::isfinite(p.epsilon)) throw ConfigError("epsilon: must be a finite value > 0");

    const auto* lam = lookup(settings, "lambda");
    const auto* sig = lookup(settings, "sigma");
    if (lam != nullptr) {
        p.lambda = as_double(*lam, "lambda");
        if (!(p.lambda >= 0.0) || !std::isfinite(p.lambda)) throw ConfigError("lambda: must be a finite value >= 0");
        if (sig != nullptr) {
            const double s = as_double(*sig, "sigma");
            if (std::abs(s - p.sigma()) > 1e-9 * std::max(1.0, std::abs(s)))
                throw ConfigError("sigma: conflicts with lambda * epsilon = " + std::to_string(p.sigma()));
        }
    } else {
        const double s = sig != nullptr ? as_double(*sig, "sigma") : default_sigma;
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma: must be a finite value >= 0");
        p.lambda = s / p.epsilon;
    }
    if (const auto* v = lookup(settings, "dt")) {
        p.dt = as_double(*v, "dt");
        if (!(p.dt > 0.0) || !std::isfinite(p.dt)) throw ConfigError("dt: must be a finite value > 0");
    }
    p.dt = p.time_step();

    if (const auto* v = lookup(settings, "projection"))
        p.projection = as_choice<ProjectionMode>(*v, "projection",
                                                 {{"node", ProjectionMode::by_node}, {"simplex", ProjectionMode::by_simplex}});
    if (const auto* v = lookup(settings, "cycle"))
        p.cycle = as_choice<Cycle>(*v, "cycle", {{"w", Cycle::w}, {"v", Cycle::v}, {"finest", Cycle::finest_only}});
    if (const auto* v = lookup(settings, "ordering"))
        p.ordering = as_choice<Ordering>(*v, "ordering",
                                         {{"lexicographic", Ordering::lexicographic}, {"red-black", Ordering::red_black}});
    if (const auto* v = lookup(settings, "init"))
        p.init = as_choice<InitStrategy>(
            *v, "init", {{"otsu", InitStrategy::otsu}, {"quantile", InitStrategy::quantile}, {"uniform", InitStrategy::uniform}});
    if (const auto* v = lookup(settings, "max_steps")) {
        const auto n = as_integer(*v, "max_steps");
        if (n < 0 || n > 1000000) throw ConfigError("max_steps: must be in [0, 1000000]");
        p.max_time_steps = static_cast<int>(n);
    }
    if (const auto* v = lookup(settings, "tol")) p.sweep_tol = as_double(*v, "tol");
    if (const auto* v = lookup(settings, "steady_tol")) p.steady_tol = as_double(*v, "steady_tol");
    if (const auto* v = lookup(settings, "max_sweeps")) {
        const auto n = as_integer(*v, "max_sweeps");
        if (n < 1 || n > 1000000) throw ConfigError("max_sweeps: must be in [1, 1000000]");
        p.max_sweeps_per_step = static_cast<int>(n);
    }
    if (const auto* v = lookup(settings, "freeze_averages")) p.freeze_averages = as_bool(*v, "freeze_averages");
    if (const auto* v = lookup(settings, "truncate_below")) {
        const auto n = as_integer(*v, "truncate_below");
        if (n < 0 || n > 64) throw ConfigError("truncate_below: must be in [0, 64]");
        p.truncate_below_level = static_cast<int>(n);
    }
    if (const auto* v = lookup(settings, "truncate_after")) {
        const auto n = as_integer(*v, "truncate_after");
        if (n < 0) throw ConfigError("truncate_after: must be >= 0");
        p.truncate_after_step = static_cast<int>(n);
    }
    if (const auto* v = lookup(settings, "emit")) cfg.emit = as_emit(*v);

    if (cfg.synth != SynthKind::none) {
        const int w = cfg.size, h = cfg.synth == SynthKind::step ? 1 : cfg.size;
        if (w % p.coarsen != 0 || h % p.coarsen != 0)
            throw ConfigError("coarsen: factor " + std::to_string(p.coarsen) + " does not divide the " + std::to_string(w) +
                              "x" + std::to_string(h) + " image");
    }

    try {
        parsed.warnings = p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return parsed;
}

/// The resolved configuration with every value explicit; feeding it back to
/// resolve_config reproduces the same RunConfig.
inline nlohmann::json to_json(const RunConfig& cfg) {
    const auto& p = cfg.solver;
    nlohmann::json j;
    if (!cfg.input.empty()) j["input"] = cfg.input;
    j["synth"] = to_string(cfg.synth);
    j["size"] = cfg.size;
    j["noise"] = cfg.noise;
    j["seed"] = p.seed;
    j["out"] = cfg.out;
    j["format"] = cfg.format;
    j["components"] = p.components;
    j["epsilon"] = p.epsilon;
    j["lambda"] = p.lambda;
    j["sigma"] = p.sigma();
    j["dt"] = p.time_step();
    j["refine"] = p.refinements;
    j["coarsen"] = p.coarsen;
    j["projection"] = to_string(p.projection);
    j["cycle"] = to_string(p.cycle);
    j["ordering"] = to_string(p.ordering);
    j["init"] = to_string(p.init);
    j["max_steps"] = p.max_time_steps;
    j["tol"] = p.sweep_tol;
    j["steady_tol"] = p.steady_tol;
    j["max_sweeps"] = p.max_sweeps_per_step;
    j["freeze_averages"] = p.freeze_averages;
    j["truncate_below"] = p.truncate_below_level;
    j["truncate_after"] = p.truncate_after_step;
    j["emit"] = detail::emit_list(cfg.emit);
    return j;
}

/// Parse command-line arguments (without the program name). Flags override
/// values from --config, which override built-in defaults.
inline ParsedConfig parse_config(const std::vector<std::string>& args) {
    CLI::App app{"Multiphase image segmentation by a vector-valued Allen-Cahn flow", "vacseg"};
    std::map<std::string, std::string> flag;
    std::string config_path;
    const auto opt = [&](const std::string& name, const std::string& key, const std::string& help) {
        return app.add_option(name, flag[key], help);
    };
    app.add_option("--config", config_path, "JSON file with settings (keys as in config.json)");
    opt("--input,-i", "input", "Input image (PGM, PPM or PNG)");
    opt("--synth", "synth", "Synthetic input: circles|step|composite");
    opt("--size", "size", "Synthetic image size in pixels (step: strip length)");
    opt("--noise", "noise", "Synthetic noise amplitude");
    opt("--seed", "seed", "Seed for synthetic noise and random initialisation");
    opt("--out,-o", "out", "Output directory");
    opt("--format", "format", "Raster format for outputs: png|pnm");
    opt("--components,-N", "components", "Number of phases N");
    opt("--epsilon", "epsilon", "Interface width in pixels (default: one coarse pixel)");
    opt("--lambda", "lambda", "Fitting weight");
    opt("--sigma", "sigma", "lambda * epsilon (default 30)");
    opt("--dt", "dt", "Time step (default epsilon^2)");
    opt("--refine", "refine", "Uniform refinements of the coarse grid");
    opt("--coarsen", "coarsen", "Pixels per coarse cell side");
    opt("--projection", "projection", "Image projection: node|simplex");
    opt("--cycle", "cycle", "Level schedule: w|v|finest");
    opt("--ordering", "ordering", "Node order within a level: lexicographic|red-black");
    opt("--init", "init", "Initialisation: otsu|quantile|uniform");
    opt("--max-steps", "max_steps", "Maximum number of time steps");
    opt("--tol", "tol", "Sweep tolerance on the largest correction");
    opt("--steady-tol", "steady_tol", "Steady-state tolerance on the change per step");
    opt("--max-sweeps", "max_sweeps", "Maximum sweeps per time step");
    opt("--truncate-below", "truncate_below", "Skip levels below this index once truncation starts");
    opt("--truncate-after", "truncate_after", "Time step at which truncation starts");
    opt("--emit", "emit", "Comma-separated outputs: components,composite,rounded,remainder,diagnostics|all|none");
    auto* freeze = app.add_flag("--freeze-averages", "Keep the region averages at their initial values");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    ParsedConfig parsed;
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        parsed.help = app.help();
        return parsed;
    } catch (const CLI::ParseError& e) {
        throw ConfigError(std::string("arguments: ") + e.what());
    }

    nlohmann::json settings = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("config: cannot open " + config_path);
        try {
            settings = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config: " + config_path + ": " + e.what());
        }
        if (!settings.is_object()) throw ConfigError("config: " + config_path + " must hold a JSON object");
    }
    for (const auto& [key, value] : flag) {
        const auto* o = app.get_option("--" + [&] {
            std::string k = key;
            std::replace(k.begin(), k.end(), '_', '-');
            return k;
        }());
        if (o->count() > 0) settings[key] = value;
    }
    if (freeze->count() > 0) settings["freeze_averages"] = true;
    // a flag-given input replaces a file-given synth and vice versa
    if (app.get_option("--input")->count() > 0 && app.get_option("--synth")->count() == 0) settings.erase("synth");
    if (app.get_option("--synth")->count() > 0 && app.get_option("--input")->count() == 0) settings.erase("input");

    auto resolved = resolve_config(settings);
    resolved.help.reset();
    return resolved;
}

inline ParsedConfig parse_config(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return parse_config(args);
}

}  // namespace vacseg

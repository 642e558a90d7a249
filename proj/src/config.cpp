#include "metaflow/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metaflow/flowgen.hpp"

namespace metaflow {

namespace {

struct ScenarioEntry {
    Scenario scenario;
    const char* name;
    ScenarioFlags flags;
};

constexpr ScenarioEntry kScenarios[] = {
    {Scenario::NC_NVD_NVF, "NC-NVD-NVF", {false, false, false}},
    {Scenario::NC_NVD_VF, "NC-NVD-VF", {false, false, true}},
    {Scenario::NC_VD_VF, "NC-VD-VF", {false, true, true}},
    {Scenario::C_NVD_VF, "C-NVD-VF", {true, false, true}},
    {Scenario::C_VD_VF, "C-VD-VF", {true, true, true}},
};

const ScenarioEntry& entry(Scenario s) {
    for (const auto& e : kScenarios) {
        if (e.scenario == s) return e;
    }
    throw ConfigError("unknown scenario value");
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("invalid number for '" + std::string(key) + "': '" + std::string(v) + "'");
    }
    return out;
}

template <class Int>
Int to_int(std::string_view key, std::string_view v) {
    Int out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("invalid integer for '" + std::string(key) + "': '" + std::string(v) + "'");
    }
    return out;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

ScenarioFlags flags_of(Scenario s) { return entry(s).flags; }

std::string to_string(Scenario s) { return entry(s).name; }

Scenario parse_scenario(std::string_view name) {
    for (const auto& e : kScenarios) {
        if (name == e.name) return e.scenario;
    }
    std::string msg = "unknown scenario '" + std::string(name) + "'; valid options:";
    for (const auto& e : kScenarios) msg += std::string(" ") + e.name;
    throw ConfigError(msg);
}

const std::vector<Scenario>& all_scenarios() {
    static const std::vector<Scenario> v = {Scenario::NC_NVD_NVF, Scenario::NC_NVD_VF,
                                            Scenario::NC_VD_VF, Scenario::C_NVD_VF,
                                            Scenario::C_VD_VF};
    return v;
}

void SimulationConfig::validate() const {
    auto require = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(nu > 0, "nu must be > 0");
    require(phi > 0, "phi must be > 0");
    require(sigma_l >= 0, "sigma_l must be >= 0");
    require(s_max >= 1, "s_max must be >= 1");
    require(day_length > 0, "day_length must be > 0");
    require(mu_m > 1 && mu_m < 2, "mu_m must lie in (1, 2)");
    require(gamma_meta >= 0 && gamma_meta < 1, "gamma_meta must lie in [0, 1)");
    require(gamma_cross > 0, "gamma_cross must be > 0");
    require(t_cut >= 1, "t_cut must be >= 1");
    require(n0 > 0, "n0 must be > 0");
    require(std::isfinite(theta), "theta must be finite");
    require(n_days >= 1, "n_days must be >= 1");
    require(std::isfinite(m) && std::isfinite(lambda) && std::isfinite(lambda_p) &&
                std::isfinite(beta_m) && std::isfinite(tau0),
            "non-finite parameter");
    const auto f = flags_of(scenario);
    require(f.correlated || gamma_meta == 0.0, "gamma_meta must be 0 in an NC scenario");
    require(f.volume_dependent || (lambda == 0.0 && lambda_p == 0.0),
            "lambda and lambda_p must be 0 in an NVD scenario");
    require(f.volume_fluctuations || sigma_l == 0.0, "sigma_l must be 0 in an NVF scenario");
}

SimulationConfig apply_scenario(SimulationConfig cfg) {
    const auto f = flags_of(cfg.scenario);
    if (!f.correlated) cfg.gamma_meta = 0.0;
    if (!f.volume_dependent) {
        cfg.lambda = 0.0;
        cfg.lambda_p = 0.0;
    }
    if (!f.volume_fluctuations) cfg.sigma_l = 0.0;
    return cfg;
}

SimulationConfig preset(Scenario s, double target_events) {
    SimulationConfig cfg;
    cfg.scenario = s;
    return calibrate_day_length(apply_scenario(cfg), target_events);
}

SimulationConfig calibrate_day_length(SimulationConfig cfg, double target_events) {
    cfg.day_length = target_events / (cfg.nu * expected_children_per_metaorder(cfg));
    return cfg;
}

double effective_tau0(const SimulationConfig& cfg) {
    if (cfg.tau0 > 0) return cfg.tau0;
    return derive_tau0(cfg, mean_metaorder_size(cfg.mu_m, cfg.s_max));
}

std::string serialize(const SimulationConfig& c) {
    std::ostringstream os;
    os << "scenario = " << to_string(c.scenario) << "\n"
       << "nu = " << fmt(c.nu) << "\n"
       << "phi = " << fmt(c.phi) << "\n"
       << "m = " << fmt(c.m) << "\n"
       << "sigma_l = " << fmt(c.sigma_l) << "\n"
       << "mu_m = " << fmt(c.mu_m) << "\n"
       << "beta_m = " << fmt(c.beta_m) << "\n"
       << "lambda = " << fmt(c.lambda) << "\n"
       << "lambda_p = " << fmt(c.lambda_p) << "\n"
       << "gamma_meta = " << fmt(c.gamma_meta) << "\n"
       << "gamma_cross = " << fmt(c.gamma_cross) << "\n"
       << "t_cut = " << c.t_cut << "\n"
       << "theta = " << fmt(c.theta) << "\n"
       << "n0 = " << fmt(c.n0) << "\n"
       << "tau0 = " << fmt(c.tau0) << "\n"
       << "s_max = " << c.s_max << "\n"
       << "day_length = " << fmt(c.day_length) << "\n"
       << "n_days = " << c.n_days << "\n"
       << "seed = " << c.seed << "\n";
    return os.str();
}

void set_field(SimulationConfig& c, std::string_view key, std::string_view value) {
    key = trim(key);
    value = trim(value);
    if (key == "scenario") c.scenario = parse_scenario(value);
    else if (key == "nu") c.nu = to_double(key, value);
    else if (key == "phi") c.phi = to_double(key, value);
    else if (key == "m") c.m = to_double(key, value);
    else if (key == "sigma_l") c.sigma_l = to_double(key, value);
    else if (key == "mu_m") c.mu_m = to_double(key, value);
    else if (key == "beta_m") c.beta_m = to_double(key, value);
    else if (key == "lambda") c.lambda = to_double(key, value);
    else if (key == "lambda_p") c.lambda_p = to_double(key, value);
    else if (key == "gamma_meta") c.gamma_meta = to_double(key, value);
    else if (key == "gamma_cross") c.gamma_cross = to_double(key, value);
    else if (key == "t_cut") c.t_cut = to_int<int>(key, value);
    else if (key == "theta") c.theta = to_double(key, value);
    else if (key == "n0") c.n0 = to_double(key, value);
    else if (key == "tau0") c.tau0 = to_double(key, value);
    else if (key == "s_max") c.s_max = to_int<int>(key, value);
    else if (key == "day_length") c.day_length = to_double(key, value);
    else if (key == "n_days") c.n_days = to_int<int>(key, value);
    else if (key == "seed") c.seed = to_int<std::uint64_t>(key, value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

SimulationConfig parse_config(std::string_view text, SimulationConfig base) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        set_field(base, line.substr(0, eq), line.substr(eq + 1));
    }
    return base;
}

SimulationConfig load_config_file(const std::string& path, SimulationConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base);
}

std::string config_hash(const SimulationConfig& cfg) {
    SimulationConfig c = cfg;
    c.n_days = 1;
    const std::string text = serialize(c);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t day_seed(std::uint64_t run_seed, int day) {
    return splitmix64(splitmix64(run_seed) ^ static_cast<std::uint64_t>(day));
}

}  // namespace metaflow

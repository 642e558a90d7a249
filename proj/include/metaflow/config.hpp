#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metaflow {

/// Raised for malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical procedure cannot produce a valid result (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The five order-flow configurations. Each is a triplet of switches:
/// metaorder sign correlation (C/NC), volume dependence of the size and
/// decay exponents (VD/NVD), and child-volume fluctuations (VF/NVF).
enum class Scenario { NC_NVD_NVF, NC_NVD_VF, NC_VD_VF, C_NVD_VF, C_VD_VF };

struct ScenarioFlags {
    bool correlated;
    bool volume_dependent;
    bool volume_fluctuations;
};

ScenarioFlags flags_of(Scenario s);
std::string to_string(Scenario s);
/// Throws ConfigError listing the valid names when `name` is unknown.
Scenario parse_scenario(std::string_view name);
const std::vector<Scenario>& all_scenarios();

// Exponent clamps.
inline constexpr double kMuFloorEps = 0.05;     // mu_q >= 1 + kMuFloorEps
inline constexpr double kBetaCeilEps = 1e-3;    // beta_q <= 1/2 - kBetaCeilEps

struct SimulationConfig {
    double nu = 1.5e-3;          // metaorder initiation rate
    double phi = 2e-3;           // child execution rate within a metaorder
    double m = 3.0;              // lognormal location of child volume
    double sigma_l = 1.0;        // lognormal scale of child volume
    double mu_m = 1.5;           // size tail exponent at q = e^m
    double beta_m = 0.25;        // impact decay exponent at q = e^m
    double lambda = 0.125;       // d mu_q / d log q
    double lambda_p = 0.25;      // -d beta_q / d log q
    double gamma_meta = 0.1;     // cross-metaorder sign correlation amplitude
    double gamma_cross = 0.5;    // cross-metaorder sign correlation decay
    int t_cut = 1000;            // lag beyond which the target sign correlation is zero
    double theta = 1.0;
    double n0 = 3.0;
    double tau0 = 0.0;           // <= 0 means the mean gap between child orders, 1 / (nu * mean size)
    int s_max = 10000;
    double day_length = 1.7e7;
    int n_days = 1;
    std::uint64_t seed = 1;
    Scenario scenario = Scenario::C_VD_VF;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
};

/// Force parameters implied by the scenario switches (NC zeroes gamma_meta,
/// NVD zeroes lambda and lambda_p, NVF zeroes sigma_l; child volume is then 1).
SimulationConfig apply_scenario(SimulationConfig cfg);

/// Default operating point for a scenario, with day_length calibrated so that a
/// day holds `target_events` child orders on average.
SimulationConfig preset(Scenario s, double target_events = 5e4);

/// Sets day_length so that a day holds `target_events` child orders on average.
SimulationConfig calibrate_day_length(SimulationConfig cfg, double target_events = 5e4);

/// tau0 actually used by the price reconstruction (derived when cfg.tau0 <= 0).
double effective_tau0(const SimulationConfig& cfg);

// Flat "key = value" text. Unknown keys are a ConfigError.
std::string serialize(const SimulationConfig& cfg);
SimulationConfig parse_config(std::string_view text, SimulationConfig base = {});
void set_field(SimulationConfig& cfg, std::string_view key, std::string_view value);
SimulationConfig load_config_file(const std::string& path, SimulationConfig base = {});

/// Stable 64-bit FNV-1a hash of the canonical serialization, excluding n_days
/// (per-day seeds do not depend on the number of days). Lower-case hex.
std::string config_hash(const SimulationConfig& cfg);

/// Seed for day `day` of a run (splitmix64 of the run seed and the index).
std::uint64_t day_seed(std::uint64_t run_seed, int day);

}  // namespace metaflow

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "metaflow/config.hpp"

namespace metaflow {

using Rng = std::mt19937_64;

/// One parent order. The start time doubles as its identifier.
struct Metaorder {
    double id = 0.0;
    double t_start = 0.0;
    int sign = 1;
    double q = 1.0;
    int s = 1;
    double mu_q = 1.5;
    double beta_q = 0.25;
    std::vector<double> child_times;
};

/// One executed child order, i.e. one row of the flow table.
struct ChildOrderEvent {
    double timestamp = 0.0;
    double volume = 1.0;
    int sign = 1;
    int rank = 1;
    double parent_id = 0.0;      // start time of the parent metaorder
    double beta_q = 0.25;
    std::int32_t parent = -1;    // index into DayFlow::metaorders, -1 when unknown

    double t_start() const { return parent_id; }
};

struct DayFlow {
    std::vector<Metaorder> metaorders;
    std::vector<ChildOrderEvent> events;   // sorted by (timestamp, parent_id)
};

/// Raised when the target sign correlation is not a valid covariance.
/// `lag` is the first lag at which positive-definiteness fails (0 when the
/// failure is only detected in the circulant embedding).
class SignCorrelationError : public NumericalError {
public:
    SignCorrelationError(const std::string& what, int lag) : NumericalError(what), lag_(lag) {}
    int lag() const { return lag_; }

private:
    int lag_;
};

struct BaseExponents {
    double mu_1;
    double beta_1;
};

BaseExponents calibrate_base_exponents(const SimulationConfig& cfg);

// Both throw std::domain_error for q < 1.
double mu_of_q(double q, double mu_1, double lambda);
double beta_of_q(double q, double beta_1, double lambda_p);

/// Lognormal(m, sigma_l) conditioned on q >= 1; sigma_l == 0 returns e^m.
double sample_child_volume(Rng& rng, double m, double sigma_l);

/// Discrete power law P(s) ~ s^(-1-mu_q) on [1, s_max]. Throws std::domain_error for mu_q <= 1.
int sample_metaorder_size(Rng& rng, double mu_q, int s_max);

/// Mean of the truncated discrete size distribution, by direct summation.
double mean_metaorder_size(double mu, int s_max);

/// Expected child orders per metaorder under the scenario's volume law.
double expected_children_per_metaorder(const SimulationConfig& cfg);

/// +/-1 sequence whose lag-tau autocorrelation is gamma_meta * tau^-gamma_cross
/// for 1 <= tau <= t_cut and zero beyond. Clipped stationary Gaussian
/// sequence (arcsine law), sampled by circulant embedding.
std::vector<int> generate_correlated_signs(Rng& rng, std::size_t n, double gamma_meta,
                                           double gamma_cross, int t_cut);

/// Poisson start times on [0, day_length), strictly increasing and distinct
/// at microsecond resolution.
std::vector<double> sample_start_times(Rng& rng, double nu, double day_length);

std::vector<double> schedule_children(Rng& rng, double t_start, int s, double phi);

/// Child orders of all metaorders, sorted by (timestamp, parent_id).
std::vector<ChildOrderEvent> merge_children(const std::vector<Metaorder>& metaorders);

DayFlow build_day_flow(const SimulationConfig& cfg, Rng& rng);
DayFlow build_day_flow(const SimulationConfig& cfg, int day);

/// Mean time between two consecutive child orders of the whole market,
/// 1 / (nu * mean_size).
double derive_tau0(const SimulationConfig& cfg, double mean_size);

}  // namespace metaflow

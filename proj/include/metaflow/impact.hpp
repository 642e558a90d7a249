#pragma once

#include <span>
#include <vector>

#include "metaflow/config.hpp"
#include "metaflow/flowgen.hpp"

namespace metaflow {

/// Mid-price just before each execution of a day, in trade time.
struct PriceSeries {
    std::vector<double> times;
    std::vector<double> prices;
    int day_id = 0;
};

struct PropagatorParams {
    double phi;
    double theta;
    double n0;
    double tau0;
};

PropagatorParams propagator_params(const SimulationConfig& cfg);

/// Generalized propagator: lingering impact at `t_eval` of a child order of
/// volume q executed at `t_exec` by a metaorder started at `t_start`.
/// Throws std::domain_error on violated preconditions.
double kernel(double q, double t_start, double t_exec, double t_eval, double phi, double beta_q,
              double theta, double n0, double tau0);

/// Signed impact of each event at its own execution time (decay factor 1).
std::vector<double> instantaneous_impacts(std::span<const ChildOrderEvent> events,
                                          const PropagatorParams& p);

struct ReconstructionOptions {
    int block_size = 128;      // consecutive target events sharing one far-field expansion
    double max_ratio = 0.25;   // far-field admission: block half-width / source distance
    int order = 26;            // Taylor terms; truncation error <= max_ratio^order / (1 - max_ratio)
    unsigned threads = 1;
};

/// p_k = sum over events with timestamp < t_k of their signed propagator
/// evaluated at t_k.
/// Sources far from a block of targets are folded into a Taylor expansion
/// of the decay factor around the block centre; nearby sources are summed
/// directly in ascending order. Output does not depend on `threads`.
/// Throws std::invalid_argument when events are not sorted by timestamp.
PriceSeries reconstruct_prices(std::span<const ChildOrderEvent> events, const SimulationConfig& cfg,
                               int day_id = 0, const ReconstructionOptions& opts = {});

/// Same pairwise sum restricted to events with timestamp < t_eval.
double price_at(std::span<const ChildOrderEvent> events, double t_eval, const SimulationConfig& cfg);

}  // namespace metaflow

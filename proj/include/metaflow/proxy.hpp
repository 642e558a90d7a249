#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaflow/flowgen.hpp"
#include "metaflow/run.hpp"
#include "metaflow/stats.hpp"

namespace metaflow {

/// Buy and sell sub-streams. `index` maps back into the input event list.
struct SignStream {
    std::vector<ChildOrderEvent> events;
    std::vector<std::size_t> index;
};

struct SignStreams {
    SignStream buy;
    SignStream sell;
};

SignStreams split_by_sign(std::span<const ChildOrderEvent> events);

struct ProxyParams {
    double phi_hat = 2e-3;
    double mu_hat = 1.5;
    int s_max = 10000;
    double C = 4.0;
    bool literal_threshold = false;   // threshold = C time units instead of C / phi_hat

    double threshold() const { return literal_threshold ? C : C / phi_hat; }
};

struct ProxyAssignment {
    std::vector<int> ids;   // 1-based proxy metaorder id per event
    ProxyParams params;
};

/// Greedy grouping of one sorted same-sign stream into proxy metaorders.
/// Each new proxy starts at the first unassigned event, draws a size from the
/// power law, then repeatedly jumps to the first unassigned event at or after
/// current + Exp(phi_hat). The chain stops at the drawn size, at the end of
/// the stream, when the candidate lies more than the threshold past the
/// target time, or when the gap to it exceeds the threshold.
ProxyAssignment generate_meta_ids(std::span<const double> t_execs, const ProxyParams& params, Rng& rng);

/// Per-event metaorder label (-1 = none). Labels need not be contiguous.
using Grouping = std::vector<std::int64_t>;

Grouping ground_truth_grouping(std::span<const ChildOrderEvent> events);

/// Proxy labels for one day; buy and sell streams use independent RNG streams
/// derived from `seed`. Never reads parent_id.
Grouping proxy_grouping(std::span<const ChildOrderEvent> events, const ProxyParams& params, std::uint64_t seed);

/// Seed of the proxy grouping for one day of a run; disjoint from the flow seeds.
std::uint64_t proxy_day_seed(std::uint64_t run_seed, int day);

struct MetaorderImpact {
    double q_over_vd = 0;
    double impact_over_sigma = 0;
    int n_children = 0;
};

struct ImpactStats {
    std::vector<MetaorderImpact> impacts;
    long long excluded_small = 0;     // s < 2
    long long excluded_close = 0;     // no price after the last child (end of day)
};

/// Peak impact sign * (p after the last child - p before the first), where
/// "after" is the price before the first event strictly later than the last
/// child. Normalized by the day's volatility sqrt(N_D) * rms(p_{k+1} - p_k);
/// Q / V_D uses the day's total volume.
void peak_impacts(std::span<const ChildOrderEvent> events, std::span<const double> prices, const Grouping& grouping,
                  ImpactStats& out);

struct CurveOptions {
    double x_min = 1e-7;
    double x_max = 1.0;
    int bins_per_decade = 4;
    long long min_count = 30;
    double fit_lo = 1e-3;
    double fit_hi = 1e-1;
};

struct ImpactCurve {
    std::vector<double> edges;          // Q / V_D, strictly increasing
    std::vector<double> x;              // mean Q / V_D per bin
    std::vector<double> mean_impact;    // mean impact / sigma
    std::vector<double> stderr_;
    std::vector<long long> counts;
    ScalingFit fit;                     // free exponent over [fit_lo, fit_hi]
    double Y = kNaN;                    // prefactor with the exponent pinned at 1/2
    double Y_stderr = kNaN;
    long long excluded_small = 0;
    long long excluded_close = 0;
};

ImpactCurve peak_impact_curve(const ImpactStats& stats, const CurveOptions& opts = {});

/// Log-log slope of the curve over populated bins with x in [lo, hi].
ScalingFit local_slope(const ImpactCurve& c, double lo, double hi, long long min_count = 30);

inline constexpr double kCrossoverTolerance = 0.15;

struct CurveComparison {
    std::vector<double> x;
    std::vector<double> ratio;    // proxy / true
    std::vector<double> ratio_err;
    double crossover = kNaN;      // lower edge of the first bin from which |ratio - 1| < 0.15 persists
    bool has_crossover = false;
    std::string note;
};

/// Throws std::invalid_argument when edges differ or no bin is populated in both.
CurveComparison compare_curves(const ImpactCurve& truth, const ImpactCurve& proxy, long long min_count = 30);

}  // namespace metaflow

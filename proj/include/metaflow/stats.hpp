#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "metaflow/config.hpp"
#include "metaflow/flowgen.hpp"
#include "metaflow/run.hpp"

namespace metaflow {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ScalingFit {
    double exponent = kNaN;
    double prefactor = kNaN;
    double offset = 0.0;   // a0 of the offset model, 0 for a pure power law
    double T_lo = kNaN;
    double T_hi = kNaN;
    double stderr_ = kNaN;
    std::string model = "power";   // "power" or "offset"
    bool ok = false;
    std::string note;
};

/// Least squares of log y on log x over x in [x_lo, x_hi]. stderr_ is the
/// regression standard error of the slope. Non-positive y inside the range
/// yields ok = false.
ScalingFit fit_power_law(std::span<const double> x, std::span<const double> y,
                         double x_lo = 0.0, double x_hi = std::numeric_limits<double>::infinity());

/// y = a0 + a1 x^zeta, minimizing relative squared residuals. Linear in
/// (a0, a1) at fixed zeta; zeta found by golden-section search in [0, zeta_max].
ScalingFit fit_offset_power_law(std::span<const double> x, std::span<const double> y, double zeta_max);

// Bootstrap over days: weights[r][d] = number of times day d is drawn in replicate r.
std::vector<std::vector<double>> bootstrap_weights(int n_days, int reps, std::uint64_t seed);
double sample_stddev(std::span<const double> v);

inline constexpr int kBootstrapReps = 200;

// ---------------------------------------------------------------------------
// Sign autocorrelation by volume bin

struct AutocorrCurve {
    double edge_lo = kNaN;   // log(q / V_D) bin edges; infinite for the open outer bins
    double edge_hi = kNaN;
    long long n_events = 0;
    bool empty = false;
    std::vector<double> C;   // C[tau] for tau = 0..max_lag (C[0] = 1)
    ScalingFit fit;          // C ~ tau^-gamma; exponent holds gamma
};

struct AutocorrResult {
    std::vector<AutocorrCurve> bins;
    AutocorrCurve unconditional;
};

struct AutocorrOptions {
    int n_bins = 4;
    int max_lag = 1000;
    double fit_lo = 10;
    double fit_hi = 1000;
    double trim = 0.005;          // bins span the [trim, 1 - trim] quantiles of log(q / V_D)
    long long min_events = 1000;
    int bootstrap_reps = kBootstrapReps;
    std::uint64_t seed = 11;
};

/// C(tau) = E[eps_t eps_{t+tau}] over sign sequences restricted to one volume
/// bin, lag counted in bin-internal events, pairs never crossing a day.
AutocorrResult sign_autocorr_by_volume(std::span<const DayRecord> days, const AutocorrOptions& opts = {});

// ---------------------------------------------------------------------------
// Generalized imbalance and price changes on trade-time windows

/// Sum of sign * volume^a over consecutive windows of T events. The trailing
/// partial window is appended only when include_partial is set.
std::vector<double> imbalance_windows(std::span<const ChildOrderEvent> events, double a, int T,
                                      bool include_partial = false);

std::vector<double> default_a_grid();   // -0.5 .. 3.0 step 0.25
std::vector<int> default_T_grid();      // 8 .. 8192, powers of two

/// Non-overlapping windows [wT, (w+1)T) restarted every day; a window is kept
/// when the price p_{(w+1)T} just before the next event exists. Every (a, T)
/// cell shares the same windows.
struct ImbalanceGrid {
    std::vector<double> a_values;
    std::vector<int> T_values;
    std::vector<std::vector<std::vector<double>>> I;   // [a][T][window]
    std::vector<std::vector<double>> Delta;            // [T][window]
    std::vector<std::vector<int>> day;                 // [T][window] index into the day list
    int n_days = 0;
};

/// Without prices, Delta is left empty and windows need only T events.
ImbalanceGrid build_imbalance_grid(std::span<const DayRecord> days, const std::vector<double>& a_values,
                                   const std::vector<int>& T_values);

/// Per-day sums over windows; every moment is ratio-of-sums so that day
/// resampling only reweights rows.
struct GridMoments {
    std::vector<double> a_values;
    std::vector<int> T_values;
    int n_days = 0;
    std::vector<std::vector<double>> count;                   // [T][day]
    std::vector<std::vector<std::vector<double>>> d_pow;      // [k=1..3 -> 0..2][T][day] sum Delta^(2k)
    std::vector<std::vector<std::vector<std::vector<double>>>> i_pow;   // [k][a][T][day] sum I^(2k)
    std::vector<std::vector<std::vector<double>>> cross;      // [a][T][day] sum Delta * I
};

GridMoments grid_moments(const ImbalanceGrid& grid);

/// Ratio of weighted per-day sums (unit weights when `w` is empty).
double weighted_mean(const std::vector<double>& sums, const std::vector<double>& counts,
                     const std::vector<double>& w = {});

/// E[(I^a_T)^(2n)] per T.
std::vector<double> imbalance_moments(const GridMoments& gm, int a_index, int n, const std::vector<double>& w = {});
/// E[Delta_T^(2n)] per T.
std::vector<double> delta_moments(const GridMoments& gm, int n, const std::vector<double>& w = {});
/// E[Delta_T I^a_T] per T.
std::vector<double> cross_moments(const GridMoments& gm, int a_index, const std::vector<double>& w = {});

/// Log-log fit of a moment against T. Throws NumericalError on non-positive
/// moments or fewer than 4 points spanning 1.5 decades.
ScalingFit moment_scaling(const std::vector<int>& T_values, const std::vector<double>& moments,
                          double T_lo = 0, double T_hi = std::numeric_limits<double>::infinity());

struct ImbalanceScaling {
    std::vector<std::vector<ScalingFit>> fits;   // [n-1][a]
};

inline constexpr double kImbalanceFitLo = 8;
inline constexpr double kImbalanceFitHi = 2048;

ImbalanceScaling imbalance_scaling(const GridMoments& gm, const std::vector<int>& n_list,
                                   int bootstrap_reps = kBootstrapReps, std::uint64_t seed = 12);

// ---------------------------------------------------------------------------
// Theory

struct TheoryExponents {
    double imbalance = kNaN;    // exponent of E[(I^a_T)^(2n)]
    double a_c = kNaN;          // +inf without volume dependence
    double covariance = kNaN;   // exponent of E[Delta_T I^a_T]
    double a_c_prime = kNaN;
    bool has_crossover = false;
    std::string note;
};

TheoryExponents theory_exponents(const SimulationConfig& cfg, double a, int n);

// ---------------------------------------------------------------------------
// Price diagnostics

struct SignaturePlot {
    std::vector<int> lags;
    std::vector<double> value;    // E[(p_{k+tau} - p_k)^2] / tau
    std::vector<double> stderr_;
};

std::vector<int> default_signature_lags();   // ~10 per decade from 1 to 10^4

SignaturePlot signature_plot(std::span<const DayRecord> days, const std::vector<int>& lags,
                             int bootstrap_reps = kBootstrapReps, std::uint64_t seed = 13);

struct PriceMoments {
    std::vector<int> T_values;                  // 1 .. 8192
    std::vector<std::vector<double>> moment;    // [n-1][T] normalized to 1 at T = 1
    std::vector<ScalingFit> fits;               // per n, offset model
};

PriceMoments price_moment_scaling(std::span<const DayRecord> days, const std::vector<int>& n_list,
                                  int bootstrap_reps = kBootstrapReps, std::uint64_t seed = 14);

// ---------------------------------------------------------------------------
// Aggregated impact collapse

struct MasterCurve {
    int T = 0;
    std::vector<double> x;        // bin centre of I / T^chi
    std::vector<double> y;        // E[Delta | I] / Sigma_Delta(T)
    std::vector<double> count;
};

struct CollapseResult {
    double chi = kNaN;
    double chi_stderr = kNaN;
    double omega = kNaN;
    double omega_stderr = kNaN;
    std::vector<int> T_values;
    std::vector<double> slope;    // bulk slope of E[Delta | I] per T
    std::vector<double> bin_edges;
    std::vector<MasterCurve> master_curve;
    double rms_overlap = kNaN;    // relative RMS spread across the overlap T set
    std::vector<int> overlap_T;
};

struct CollapseOptions {
    std::vector<int> T_values = {16, 32, 64, 128, 256, 512, 1024};
    std::vector<int> overlap_T = {64, 256, 1024};
    double chi_lo = 0.3;
    double chi_hi = 1.2;
    double chi_step = 0.0025;
    int n_bins = 21;
    double x_range = 2.0;         // bins span +/- x_range times the smallest per-T std of I / T^chi
    int min_per_bin = 20;
    int bootstrap_reps = kBootstrapReps;
    std::uint64_t seed = 15;
};

CollapseResult aggregated_impact(const ImbalanceGrid& grid, int a_index, const CollapseOptions& opts = {});

// ---------------------------------------------------------------------------
// Covariance and correlation surfaces

inline constexpr double kCovarianceFitHi = 1000;

struct CovarianceSurface {
    std::vector<std::vector<double>> cov;   // [a][T] E[Delta_T I^a_T]
    std::vector<ScalingFit> fits;           // per a, over T < 1000
};

CovarianceSurface covariance_surface(const GridMoments& gm, int bootstrap_reps = kBootstrapReps,
                                     std::uint64_t seed = 16);

/// R_a(T) = E[Delta I] / sqrt(E[Delta^2] E[I^2]), [a][T].
std::vector<std::vector<double>> correlation_R(const GridMoments& gm);

enum class RaMode { A_only, B_only };

struct RaFit {
    RaMode mode = RaMode::B_only;
    double sigma2 = kNaN;
    double lambda = kNaN;   // NaN in A-only mode
    std::vector<double> amplitude;   // A(T) or B(T) per fitted T
    std::vector<int> T_values;
    double rss = kNaN;
    bool ok = false;
    std::string note;
};

inline constexpr double kRaFitMaxA = 1.5;
inline constexpr double kRaFitMaxT = 1000;

/// Joint least-squares fit of
///   R_a(T) = exp(-s2 a^2 / 2) (A(T) exp(s2 a / 2) + B(T) exp(lambda s2 a log T))
/// with one of A, B pinned to 0, shared (s2, lambda) and free per-T
/// amplitudes, over a < 1.5 and T < 1000.
RaFit fit_Ra(const std::vector<std::vector<double>>& R, const std::vector<double>& a_values,
             const std::vector<int>& T_values, RaMode mode);

}  // namespace metaflow

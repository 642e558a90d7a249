#include "metaflow/flowgen.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

namespace metaflow {

namespace {

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double exponential(Rng& rng, double rate) {
    return std::exponential_distribution<double>(rate)(rng);
}

int fair_sign(Rng& rng) { return (rng() >> 63) ? 1 : -1; }

std::size_t next_pow2(std::size_t n) {
    std::size_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

// Target Gaussian correlation at lag tau (arcsine-law inverse of the sign target).
double gaussian_target(int tau, double gamma_meta, double gamma_cross, int t_cut) {
    if (tau == 0) return 1.0;
    if (tau > t_cut) return 0.0;
    return std::sin(0.5 * M_PI * gamma_meta * std::pow(static_cast<double>(tau), -gamma_cross));
}

// Durbin-Levinson recursion; returns the first lag whose partial
// autocorrelation leaves (-1, 1), or 0 if the Toeplitz matrix is positive definite.
int first_invalid_lag(const std::vector<double>& r) {
    const int L = static_cast<int>(r.size()) - 1;
    std::vector<double> a(L + 1, 0.0), prev(L + 1, 0.0);
    double v = r[0];
    for (int k = 1; k <= L; ++k) {
        double acc = r[k];
        for (int j = 1; j < k; ++j) acc -= prev[j] * r[k - j];
        const double kappa = acc / v;
        if (!(std::abs(kappa) < 1.0)) return k;
        a[k] = kappa;
        for (int j = 1; j < k; ++j) a[j] = prev[j] - kappa * prev[k - j];
        v *= 1.0 - kappa * kappa;
        if (!(v > 0.0)) return k;
        std::copy(a.begin(), a.begin() + k + 1, prev.begin());
    }
    return 0;
}

}  // namespace

BaseExponents calibrate_base_exponents(const SimulationConfig& cfg) {
    return {cfg.mu_m - cfg.lambda * cfg.m, cfg.beta_m + cfg.lambda_p * cfg.m};
}

double mu_of_q(double q, double mu_1, double lambda) {
    if (!(q >= 1.0)) throw std::domain_error("mu_of_q: child volume must be >= 1");
    return std::max(mu_1 + lambda * std::log(q), 1.0 + kMuFloorEps);
}

double beta_of_q(double q, double beta_1, double lambda_p) {
    if (!(q >= 1.0)) throw std::domain_error("beta_of_q: child volume must be >= 1");
    return std::clamp(beta_1 - lambda_p * std::log(q), 0.0, 0.5 - kBetaCeilEps);
}

double sample_child_volume(Rng& rng, double m, double sigma_l) {
    if (sigma_l < 0) throw std::domain_error("sample_child_volume: sigma_l must be >= 0");
    if (sigma_l == 0.0) return std::max(1.0, std::exp(m));
    // Inverse CDF of the standard normal restricted to z >= -m / sigma_l.
    const boost::math::normal_distribution<double> unit;
    const double z0 = -m / sigma_l;
    const double tail = boost::math::cdf(boost::math::complement(unit, z0));
    const double u = 1.0 - uniform01(rng);  // (0, 1]
    const double z = boost::math::quantile(boost::math::complement(unit, u * tail));
    return std::max(1.0, std::exp(m + sigma_l * z));
}

int sample_metaorder_size(Rng& rng, double mu_q, int s_max) {
    if (!(mu_q > 1.0)) throw std::domain_error("sample_metaorder_size: mu_q must be > 1");
    if (s_max < 1) throw std::domain_error("sample_metaorder_size: s_max must be >= 1");
    if (s_max == 1) return 1;
    // Devroye's rejection sampler for the Zeta law with exponent mu_q + 1,
    // with U restricted so that floor(U^(-1/mu_q)) <= s_max.
    const double b = std::pow(2.0, mu_q);
    const double u_min = std::pow(static_cast<double>(s_max) + 1.0, -mu_q);
    for (;;) {
        const double u = 1.0 - uniform01(rng) * (1.0 - u_min);
        const double x = std::floor(std::pow(u, -1.0 / mu_q));
        if (x < 1.0 || x > s_max) continue;
        const double t = std::pow(1.0 + 1.0 / x, mu_q);
        const double v = uniform01(rng);
        if (v * x * (t - 1.0) / (b - 1.0) <= t / b) return static_cast<int>(x);
    }
}

double mean_metaorder_size(double mu, int s_max) {
    double num = 0.0, den = 0.0;
    for (int s = s_max; s >= 1; --s) {
        const double w = std::pow(static_cast<double>(s), -1.0 - mu);
        num += s * w;
        den += w;
    }
    return num / den;
}

double expected_children_per_metaorder(const SimulationConfig& cfg) {
    const auto base = calibrate_base_exponents(cfg);
    const auto flags = flags_of(cfg.scenario);
    if (!flags.volume_fluctuations || cfg.sigma_l == 0.0) {
        const double q = flags.volume_fluctuations ? std::exp(cfg.m) : 1.0;
        return mean_metaorder_size(mu_of_q(std::max(q, 1.0), base.mu_1, cfg.lambda), cfg.s_max);
    }
    if (cfg.lambda == 0.0) return mean_metaorder_size(base.mu_1, cfg.s_max);
    // Simpson rule over the truncated normal law of z = (log q - m) / sigma_l.
    const boost::math::normal_distribution<double> unit;
    const double z0 = std::max(-cfg.m / cfg.sigma_l, -9.0);
    const double z1 = std::max(z0 + 1.0, 9.0);
    const int n = 400;
    const double h = (z1 - z0) / n;
    double acc = 0.0, mass = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double z = z0 + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double dens = boost::math::pdf(unit, z);
        const double q = std::max(1.0, std::exp(cfg.m + cfg.sigma_l * z));
        acc += w * dens * mean_metaorder_size(mu_of_q(q, base.mu_1, cfg.lambda), cfg.s_max);
        mass += w * dens;
    }
    return acc / mass;
}

std::vector<int> generate_correlated_signs(Rng& rng, std::size_t n, double gamma_meta,
                                           double gamma_cross, int t_cut) {
    if (!(gamma_meta >= 0.0 && gamma_meta < 1.0)) {
        throw std::domain_error("generate_correlated_signs: gamma_meta must lie in [0, 1)");
    }
    if (!(gamma_cross > 0.0)) throw std::domain_error("generate_correlated_signs: gamma_cross must be > 0");
    if (t_cut < 1) throw std::domain_error("generate_correlated_signs: t_cut must be >= 1");

    std::vector<int> out(n);
    if (gamma_meta == 0.0) {
        for (auto& e : out) e = fair_sign(rng);
        return out;
    }
    if (n == 0) return out;

    std::vector<double> r(static_cast<std::size_t>(t_cut) + 1);
    for (int tau = 0; tau <= t_cut; ++tau) r[tau] = gaussian_target(tau, gamma_meta, gamma_cross, t_cut);
    if (int lag = first_invalid_lag(r); lag != 0) {
        throw SignCorrelationError("target sign correlation is not positive definite at lag " +
                                       std::to_string(lag),
                                   lag);
    }

    const std::size_t M = next_pow2(std::max(n + static_cast<std::size_t>(t_cut),
                                             2 * static_cast<std::size_t>(t_cut) + 2));
    std::vector<std::complex<double>> row(M), eig;
    for (std::size_t d = 0; d < M; ++d) {
        const std::size_t lag = std::min(d, M - d);
        row[d] = lag <= static_cast<std::size_t>(t_cut) ? r[lag] : 0.0;
    }
    Eigen::FFT<double> fft;
    fft.fwd(eig, row);

    double lmax = 0.0, lmin = 0.0;
    for (const auto& e : eig) {
        lmax = std::max(lmax, e.real());
        lmin = std::min(lmin, e.real());
    }
    if (lmin < -1e-8 * lmax) {
        throw SignCorrelationError("circulant embedding of size " + std::to_string(M) +
                                       " has a negative eigenvalue (" + std::to_string(lmin) + ")",
                                   0);
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::complex<double>> w(M), y;
    for (std::size_t f = 0; f < M; ++f) {
        const double scale = std::sqrt(std::max(eig[f].real(), 0.0) / static_cast<double>(M));
        const double re = gauss(rng);
        const double im = gauss(rng);
        w[f] = {scale * re, scale * im};
    }
    // Unscaled forward transform: Re(y) is N(0, circulant(row)).
    fft.SetFlag(Eigen::FFT<double>::Unscaled);
    fft.fwd(y, w);
    for (std::size_t i = 0; i < n; ++i) out[i] = y[i].real() >= 0.0 ? 1 : -1;
    return out;
}

std::vector<double> sample_start_times(Rng& rng, double nu, double day_length) {
    if (!(nu > 0)) throw std::domain_error("sample_start_times: nu must be > 0");
    std::vector<double> times;
    double current = 0.0;
    long long last_us = -1;
    for (;;) {
        const double candidate = current + exponential(rng, nu);
        if (candidate >= day_length) break;
        const long long us = std::llround(candidate * 1e6);
        if (candidate <= current || us == last_us) continue;  // redraw the gap
        times.push_back(candidate);
        current = candidate;
        last_us = us;
    }
    return times;
}

std::vector<double> schedule_children(Rng& rng, double t_start, int s, double phi) {
    if (s < 1) throw std::domain_error("schedule_children: s must be >= 1");
    if (!(phi > 0)) throw std::domain_error("schedule_children: phi must be > 0");
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(s));
    times.push_back(t_start);
    double t = t_start;
    while (static_cast<int>(times.size()) < s) {
        const double next = t + exponential(rng, phi);
        if (next <= t) continue;
        times.push_back(next);
        t = next;
    }
    return times;
}

std::vector<ChildOrderEvent> merge_children(const std::vector<Metaorder>& metaorders) {
    std::size_t total = 0;
    for (const auto& mo : metaorders) total += mo.child_times.size();
    std::vector<ChildOrderEvent> events;
    events.reserve(total);
    for (std::size_t i = 0; i < metaorders.size(); ++i) {
        const auto& mo = metaorders[i];
        for (std::size_t k = 0; k < mo.child_times.size(); ++k) {
            events.push_back({mo.child_times[k], mo.q, mo.sign, static_cast<int>(k) + 1, mo.id,
                              mo.beta_q, static_cast<std::int32_t>(i)});
        }
    }
    std::sort(events.begin(), events.end(), [](const ChildOrderEvent& a, const ChildOrderEvent& b) {
        if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
        if (a.parent_id != b.parent_id) return a.parent_id < b.parent_id;
        return a.rank < b.rank;
    });
    return events;
}

DayFlow build_day_flow(const SimulationConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto flags = flags_of(cfg.scenario);
    const auto base = calibrate_base_exponents(cfg);

    DayFlow day;
    const auto starts = sample_start_times(rng, cfg.nu, cfg.day_length);
    const auto signs = generate_correlated_signs(rng, starts.size(),
                                                 flags.correlated ? cfg.gamma_meta : 0.0,
                                                 cfg.gamma_cross, cfg.t_cut);
    day.metaorders.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
        Metaorder mo;
        mo.id = mo.t_start = starts[i];
        mo.sign = signs[i];
        mo.q = flags.volume_fluctuations ? sample_child_volume(rng, cfg.m, cfg.sigma_l) : 1.0;
        mo.mu_q = mu_of_q(mo.q, base.mu_1, cfg.lambda);
        mo.beta_q = beta_of_q(mo.q, base.beta_1, cfg.lambda_p);
        mo.s = sample_metaorder_size(rng, mo.mu_q, cfg.s_max);
        mo.child_times = schedule_children(rng, mo.t_start, mo.s, cfg.phi);
        day.metaorders.push_back(std::move(mo));
    }

    day.events = merge_children(day.metaorders);
    return day;
}

DayFlow build_day_flow(const SimulationConfig& cfg, int day) {
    Rng rng(day_seed(cfg.seed, day));
    return build_day_flow(cfg, rng);
}

double derive_tau0(const SimulationConfig& cfg, double mean_size) {
    if (!(mean_size > 0)) throw std::domain_error("derive_tau0: mean size must be > 0");
    return 1.0 / (cfg.nu * mean_size);
}

}  // namespace metaflow

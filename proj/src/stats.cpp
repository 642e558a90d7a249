#include "metaflow/stats.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace metaflow {

namespace {

using Vec = std::vector<double>;

std::size_t idx(int i) { return static_cast<std::size_t>(i); }

template <class F>
double bootstrap_se(int n_days, int reps, std::uint64_t seed, F&& stat) {
    if (reps <= 1 || n_days < 2) return kNaN;
    Vec vals;
    for (const auto& w : bootstrap_weights(n_days, reps, seed)) {
        const double v = stat(w);
        if (std::isfinite(v)) vals.push_back(v);
    }
    return vals.size() > 1 ? sample_stddev(vals) : kNaN;
}

double day_weight(const Vec& w, int d) { return w.empty() ? 1.0 : w[idx(d)]; }

}  // namespace

// ---------------------------------------------------------------------------
// Fitting

ScalingFit fit_power_law(std::span<const double> x, std::span<const double> y, double x_lo, double x_hi) {
    ScalingFit f;
    f.T_lo = x_lo;
    f.T_hi = x_hi;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    Vec lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < x_lo || x[i] > x_hi) continue;
        if (!(y[i] > 0) || !(x[i] > 0)) {
            f.note = "non-positive value in fit range";
            return f;
        }
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
        ++n;
    }
    if (n < 2) {
        f.note = "fewer than two points in fit range";
        return f;
    }
    f.T_lo = std::exp(*std::min_element(lx.begin(), lx.end()));
    f.T_hi = std::exp(*std::max_element(lx.begin(), lx.end()));
    for (int i = 0; i < n; ++i) {
        sx += lx[idx(i)];
        sy += ly[idx(i)];
    }
    const double mx = sx / n, my = sy / n;
    for (int i = 0; i < n; ++i) {
        sxx += (lx[idx(i)] - mx) * (lx[idx(i)] - mx);
        sxy += (lx[idx(i)] - mx) * (ly[idx(i)] - my);
    }
    if (!(sxx > 0)) {
        f.note = "degenerate abscissa";
        return f;
    }
    f.exponent = sxy / sxx;
    const double icpt = my - f.exponent * mx;
    f.prefactor = std::exp(icpt);
    double rss = 0;
    for (int i = 0; i < n; ++i) {
        const double r = ly[idx(i)] - icpt - f.exponent * lx[idx(i)];
        rss += r * r;
    }
    f.stderr_ = n > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
    f.ok = true;
    return f;
}

ScalingFit fit_offset_power_law(std::span<const double> x, std::span<const double> y, double zeta_max) {
    ScalingFit best;
    best.model = "offset";
    for (double v : y) {
        if (!(v > 0)) {
            best.note = "non-positive value";
            return best;
        }
    }
    if (x.size() < 4) {
        best.note = "fewer than four points";
        return best;
    }
    // Weighted least squares in (a0, a1) with weights 1/y^2.
    auto solve = [&](double zeta, double& a0, double& a1) {
        double s00 = 0, s01 = 0, s11 = 0, b0 = 0, b1 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double w = 1.0 / (y[i] * y[i]);
            const double g = std::pow(x[i], zeta);
            s00 += w;
            s01 += w * g;
            s11 += w * g * g;
            b0 += w * y[i];
            b1 += w * g * y[i];
        }
        const double det = s00 * s11 - s01 * s01;
        if (!(std::abs(det) > 1e-300)) {
            a0 = kNaN;
            a1 = kNaN;
            return std::numeric_limits<double>::infinity();
        }
        a0 = (b0 * s11 - b1 * s01) / det;
        a1 = (s00 * b1 - s01 * b0) / det;
        double rss = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = (a0 + a1 * std::pow(x[i], zeta) - y[i]) / y[i];
            rss += r * r;
        }
        return rss;
    };
    double a0 = 0, a1 = 0;
    const int coarse = 400;
    double zbest = kNaN, rbest = std::numeric_limits<double>::infinity();
    for (int i = 1; i <= coarse; ++i) {
        const double z = zeta_max * i / coarse;
        const double r = solve(z, a0, a1);
        if (r < rbest) {
            rbest = r;
            zbest = z;
        }
    }
    if (!std::isfinite(rbest)) {
        best.note = "offset fit did not converge";
        return best;
    }
    double lo = std::max(1e-9, zbest - zeta_max / coarse), hi = std::min(zeta_max, zbest + zeta_max / coarse);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
    double fc = solve(c, a0, a1), fd = solve(d, a0, a1);
    while (hi - lo > 1e-10) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = solve(c, a0, a1);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = solve(d, a0, a1);
        }
    }
    best.exponent = 0.5 * (lo + hi);
    best.stderr_ = std::sqrt(solve(best.exponent, a0, a1) / std::max<std::size_t>(1, x.size() - 3));
    best.offset = a0;
    best.prefactor = a1;
    best.T_lo = *std::min_element(x.begin(), x.end());
    best.T_hi = *std::max_element(x.begin(), x.end());
    best.ok = std::isfinite(a0) && std::isfinite(a1);
    if (best.exponent >= zeta_max - 1e-6) {
        best.ok = false;
        best.note = "exponent at search boundary";
    }
    return best;
}

std::vector<std::vector<double>> bootstrap_weights(int n_days, int reps, std::uint64_t seed) {
    std::vector<Vec> out(idx(std::max(0, reps)), Vec(idx(std::max(0, n_days)), 0.0));
    if (n_days <= 0) return out;
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, n_days - 1);
    for (auto& w : out) {
        for (int i = 0; i < n_days; ++i) w[idx(pick(rng))] += 1.0;
    }
    return out;
}

double sample_stddev(std::span<const double> v) {
    if (v.size() < 2) return kNaN;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Sign autocorrelation

AutocorrResult sign_autocorr_by_volume(std::span<const DayRecord> days, const AutocorrOptions& opts) {
    const int nb = opts.n_bins;
    const int L = opts.max_lag;
    const int n_days = static_cast<int>(days.size());

    Vec pooled;
    std::vector<Vec> lq(days.size());
    for (std::size_t d = 0; d < days.size(); ++d) {
        double vd = 0;
        for (const auto& e : days[d].events) vd += e.volume;
        for (const auto& e : days[d].events) lq[d].push_back(std::log(e.volume / vd));
        pooled.insert(pooled.end(), lq[d].begin(), lq[d].end());
    }
    Vec interior;
    if (!pooled.empty()) {
        std::sort(pooled.begin(), pooled.end());
        const auto at = [&](double p) {
            return pooled[std::min(pooled.size() - 1, static_cast<std::size_t>(p * static_cast<double>(pooled.size())))];
        };
        const double lo = at(opts.trim), hi = at(1.0 - opts.trim);
        for (int i = 1; i < nb; ++i) interior.push_back(lo + (hi - lo) * i / nb);
    }

    // sums[b][d][tau], b == nb is the unconditional sequence.
    std::vector<std::vector<Vec>> sums(idx(nb + 1), std::vector<Vec>(days.size(), Vec(idx(L + 1), 0.0)));
    std::vector<std::vector<Vec>> cnts = sums;
    std::vector<long long> n_events(idx(nb + 1), 0);

    std::vector<std::vector<std::int8_t>> seq(idx(nb + 1));
    for (std::size_t d = 0; d < days.size(); ++d) {
        for (auto& s : seq) s.clear();
        const auto& ev = days[d].events;
        for (std::size_t k = 0; k < ev.size(); ++k) {
            const int b = static_cast<int>(std::upper_bound(interior.begin(), interior.end(), lq[d][k]) - interior.begin());
            seq[idx(b)].push_back(static_cast<std::int8_t>(ev[k].sign));
            seq[idx(nb)].push_back(static_cast<std::int8_t>(ev[k].sign));
        }
        std::vector<std::int32_t> acc(idx(L + 1));
        for (int b = 0; b <= nb; ++b) {
            const auto& s = seq[idx(b)];
            const std::size_t n = s.size();
            n_events[idx(b)] += static_cast<long long>(n);
            std::fill(acc.begin(), acc.end(), 0);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t tmax = std::min<std::size_t>(idx(L), n - 1 - i);
                const std::int32_t si = s[i];
                const std::int8_t* p = s.data() + i;
                for (std::size_t t = 0; t <= tmax; ++t) acc[t] += si * p[t];
            }
            for (int t = 0; t <= L; ++t) {
                sums[idx(b)][d][idx(t)] = acc[idx(t)];
                cnts[idx(b)][d][idx(t)] = n > idx(t) ? static_cast<double>(n - idx(t)) : 0.0;
            }
        }
    }

    auto curve = [&](int b, const Vec& w) {
        Vec C(idx(L + 1), kNaN);
        for (int t = 0; t <= L; ++t) {
            double s = 0, c = 0;
            for (int d = 0; d < n_days; ++d) {
                s += day_weight(w, d) * sums[idx(b)][idx(d)][idx(t)];
                c += day_weight(w, d) * cnts[idx(b)][idx(d)][idx(t)];
            }
            if (c > 0) C[idx(t)] = s / c;
        }
        return C;
    };
    // Per-lag points in the fit range; non-positive estimates are dropped.
    auto fit_gamma = [&](const Vec& C) {
        Vec x, y;
        for (int t = 1; t <= L; ++t) {
            if (t < opts.fit_lo || t > opts.fit_hi || !(C[idx(t)] > 0)) continue;
            x.push_back(t);
            y.push_back(C[idx(t)]);
        }
        auto f = fit_power_law(x, y, opts.fit_lo, opts.fit_hi);
        if (f.ok) {
            f.exponent = -f.exponent;
            const int total = static_cast<int>(std::min<double>(opts.fit_hi, L) - opts.fit_lo + 1);
            f.note = std::to_string(x.size()) + "/" + std::to_string(total) + " positive lags";
        }
        return f;
    };

    AutocorrResult res;
    for (int b = 0; b <= nb; ++b) {
        AutocorrCurve cv;
        cv.edge_lo = b == 0 || b == nb ? -std::numeric_limits<double>::infinity() : interior[idx(b - 1)];
        cv.edge_hi = b >= nb - 1 ? std::numeric_limits<double>::infinity() : interior[idx(b)];
        cv.n_events = n_events[idx(b)];
        cv.C = curve(b, {});
        cv.empty = cv.n_events < opts.min_events;
        if (!cv.empty) {
            cv.fit = fit_gamma(cv.C);
            if (cv.fit.ok) {
                cv.fit.stderr_ = bootstrap_se(n_days, opts.bootstrap_reps, opts.seed + static_cast<std::uint64_t>(b),
                                              [&](const Vec& w) {
                                                  const auto f = fit_gamma(curve(b, w));
                                                  return f.ok ? f.exponent : kNaN;
                                              });
            }
        }
        if (b < nb) res.bins.push_back(std::move(cv));
        else res.unconditional = std::move(cv);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Imbalance grid

std::vector<double> imbalance_windows(std::span<const ChildOrderEvent> events, double a, int T, bool include_partial) {
    if (T < 1) throw std::invalid_argument("imbalance_windows: T must be >= 1");
    Vec out;
    const std::size_t n = events.size();
    const std::size_t t = idx(T);
    for (std::size_t w0 = 0; w0 < n; w0 += t) {
        const std::size_t w1 = std::min(n, w0 + t);
        if (w1 - w0 < t && !include_partial) break;
        double s = 0;
        for (std::size_t k = w0; k < w1; ++k) s += events[k].sign * std::pow(events[k].volume, a);
        out.push_back(s);
    }
    return out;
}

std::vector<double> default_a_grid() {
    Vec a;
    for (int i = 0; i <= 14; ++i) a.push_back(-0.5 + 0.25 * i);
    return a;
}

std::vector<int> default_T_grid() {
    std::vector<int> t;
    for (int T = 8; T <= 8192; T *= 2) t.push_back(T);
    return t;
}

ImbalanceGrid build_imbalance_grid(std::span<const DayRecord> days, const std::vector<double>& a_values,
                                   const std::vector<int>& T_values) {
    ImbalanceGrid g;
    g.a_values = a_values;
    g.T_values = T_values;
    g.n_days = static_cast<int>(days.size());
    const std::size_t na = a_values.size(), nt = T_values.size();
    g.I.assign(na, std::vector<Vec>(nt));
    g.Delta.assign(nt, {});
    g.day.assign(nt, {});
    Vec weight;
    for (std::size_t d = 0; d < days.size(); ++d) {
        const auto& ev = days[d].events;
        const auto& p = days[d].prices;
        const bool priced = !p.empty();
        if (priced && p.size() != ev.size()) throw std::invalid_argument("build_imbalance_grid: price/event size mismatch");
        const std::size_t n = ev.size();
        for (std::size_t ti = 0; ti < nt; ++ti) {
            const std::size_t T = idx(T_values[ti]);
            const std::size_t nw = priced ? (n == 0 ? 0 : (n - 1) / T) : n / T;
            for (std::size_t w = 0; w < nw; ++w) {
                g.day[ti].push_back(static_cast<int>(d));
                if (priced) g.Delta[ti].push_back(p[(w + 1) * T] - p[w * T]);
            }
        }
        for (std::size_t ai = 0; ai < na; ++ai) {
            weight.resize(n);
            for (std::size_t k = 0; k < n; ++k) weight[k] = ev[k].sign * std::pow(ev[k].volume, a_values[ai]);
            for (std::size_t ti = 0; ti < nt; ++ti) {
                const std::size_t T = idx(T_values[ti]);
                const std::size_t nw = priced ? (n == 0 ? 0 : (n - 1) / T) : n / T;
                for (std::size_t w = 0; w < nw; ++w) {
                    double s = 0;
                    for (std::size_t k = w * T; k < (w + 1) * T; ++k) s += weight[k];
                    g.I[ai][ti].push_back(s);
                }
            }
        }
    }
    return g;
}

GridMoments grid_moments(const ImbalanceGrid& g) {
    GridMoments m;
    m.a_values = g.a_values;
    m.T_values = g.T_values;
    m.n_days = g.n_days;
    const std::size_t na = g.a_values.size(), nt = g.T_values.size(), nd = idx(g.n_days);
    m.count.assign(nt, Vec(nd, 0.0));
    m.d_pow.assign(3, std::vector<Vec>(nt, Vec(nd, 0.0)));
    m.i_pow.assign(3, std::vector<std::vector<Vec>>(na, std::vector<Vec>(nt, Vec(nd, 0.0))));
    m.cross.assign(na, std::vector<Vec>(nt, Vec(nd, 0.0)));
    for (std::size_t ti = 0; ti < nt; ++ti) {
        const bool priced = g.Delta[ti].size() == g.day[ti].size();
        for (std::size_t w = 0; w < g.day[ti].size(); ++w) {
            const std::size_t d = idx(g.day[ti][w]);
            m.count[ti][d] += 1;
            if (priced) {
                const double D2 = g.Delta[ti][w] * g.Delta[ti][w];
                m.d_pow[0][ti][d] += D2;
                m.d_pow[1][ti][d] += D2 * D2;
                m.d_pow[2][ti][d] += D2 * D2 * D2;
            }
            for (std::size_t ai = 0; ai < na; ++ai) {
                const double I = g.I[ai][ti][w];
                const double I2 = I * I;
                m.i_pow[0][ai][ti][d] += I2;
                m.i_pow[1][ai][ti][d] += I2 * I2;
                m.i_pow[2][ai][ti][d] += I2 * I2 * I2;
                if (priced) m.cross[ai][ti][d] += g.Delta[ti][w] * I;
            }
        }
    }
    return m;
}

double weighted_mean(const Vec& sums, const Vec& counts, const Vec& w) {
    double s = 0, c = 0;
    for (std::size_t d = 0; d < sums.size(); ++d) {
        const double wd = w.empty() ? 1.0 : w[d];
        s += wd * sums[d];
        c += wd * counts[d];
    }
    return c > 0 ? s / c : kNaN;
}

std::vector<double> imbalance_moments(const GridMoments& gm, int a_index, int n, const Vec& w) {
    if (n < 1 || n > 3) throw std::invalid_argument("imbalance_moments: n must be 1, 2 or 3");
    Vec out;
    for (std::size_t ti = 0; ti < gm.T_values.size(); ++ti)
        out.push_back(weighted_mean(gm.i_pow[idx(n - 1)][idx(a_index)][ti], gm.count[ti], w));
    return out;
}

std::vector<double> delta_moments(const GridMoments& gm, int n, const Vec& w) {
    if (n < 1 || n > 3) throw std::invalid_argument("delta_moments: n must be 1, 2 or 3");
    Vec out;
    for (std::size_t ti = 0; ti < gm.T_values.size(); ++ti)
        out.push_back(weighted_mean(gm.d_pow[idx(n - 1)][ti], gm.count[ti], w));
    return out;
}

std::vector<double> cross_moments(const GridMoments& gm, int a_index, const Vec& w) {
    Vec out;
    for (std::size_t ti = 0; ti < gm.T_values.size(); ++ti)
        out.push_back(weighted_mean(gm.cross[idx(a_index)][ti], gm.count[ti], w));
    return out;
}

ScalingFit moment_scaling(const std::vector<int>& T_values, const Vec& moments, double T_lo, double T_hi) {
    Vec x, y;
    for (std::size_t i = 0; i < T_values.size(); ++i) {
        if (T_values[i] < T_lo || T_values[i] > T_hi) continue;
        if (!(moments[i] > 0)) throw NumericalError("moment_scaling: non-positive moment at T=" + std::to_string(T_values[i]));
        x.push_back(T_values[i]);
        y.push_back(moments[i]);
    }
    if (x.size() < 4 || std::log10(x.back() / x.front()) < 1.5 - 1e-9) {
        throw NumericalError("moment_scaling: need >= 4 values of T spanning >= 1.5 decades");
    }
    auto f = fit_power_law(x, y);
    if (!f.ok) throw NumericalError("moment_scaling: " + f.note);
    return f;
}

ImbalanceScaling imbalance_scaling(const GridMoments& gm, const std::vector<int>& n_list, int reps, std::uint64_t seed) {
    ImbalanceScaling out;
    for (int n : n_list) {
        std::vector<ScalingFit> row;
        for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
            ScalingFit f;
            try {
                f = moment_scaling(gm.T_values, imbalance_moments(gm, static_cast<int>(ai), n), kImbalanceFitLo,
                                   kImbalanceFitHi);
                f.stderr_ = bootstrap_se(gm.n_days, reps, seed + ai, [&](const Vec& w) {
                    try {
                        return moment_scaling(gm.T_values, imbalance_moments(gm, static_cast<int>(ai), n, w),
                                              kImbalanceFitLo, kImbalanceFitHi)
                            .exponent;
                    } catch (const NumericalError&) {
                        return kNaN;
                    }
                });
            } catch (const NumericalError& e) {
                f.note = e.what();
            }
            row.push_back(f);
        }
        out.fits.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Theory

TheoryExponents theory_exponents(const SimulationConfig& cfg, double a, int n) {
    if (n < 1) throw std::invalid_argument("theory_exponents: n must be >= 1");
    TheoryExponents t;
    const double s2 = cfg.sigma_l * cfg.sigma_l;
    const double ls2 = cfg.lambda * s2;
    if (ls2 > 0) {
        t.a_c = (1.0 - cfg.mu_m / (2.0 * n)) / ls2;
        t.imbalance = a < t.a_c ? 2.0 * n + 1.0 - cfg.mu_m - 2.0 * n * a * ls2 : 1.0;
    } else {
        t.a_c = std::numeric_limits<double>::infinity();
        t.imbalance = 2.0 * n + 1.0 - cfg.mu_m;
    }

    const double mu_hat = cfg.mu_m + (a + 0.5) * ls2;
    const double beta_hat = cfg.beta_m - (a + 0.5) * cfg.lambda_p * s2;
    const double left = 2.5 - mu_hat, right = 1.0 - beta_hat;

    // Crossover volume: 5/2 - mu_q = 1 - beta_q with the clamped q-laws, in x = log q.
    if (s2 > 0 && cfg.lambda + cfg.lambda_p > 0) {
        const auto base = calibrate_base_exponents(cfg);
        auto g = [&](double x) {
            const double q = std::exp(x);
            return (2.5 - mu_of_q(q, base.mu_1, cfg.lambda)) - (1.0 - beta_of_q(q, base.beta_1, cfg.lambda_p));
        };
        double lo = 0.0, hi = cfg.m + 40.0 * cfg.sigma_l;
        double glo = g(lo), ghi = g(hi);
        if (glo * ghi <= 0) {
            while (hi - lo > 1e-9) {
                const double mid = 0.5 * (lo + hi);
                const double gm = g(mid);
                if ((gm > 0) == (glo > 0)) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            const double xc = 0.5 * (lo + hi);
            // mu_hat(a) = mu_m + (a + 1/2) lambda s2 matches mu_q at log q = m + (a + 1/2) s2.
            t.a_c_prime = (xc - cfg.m) / s2 - 0.5;
            t.has_crossover = true;
        } else {
            t.note = "no crossover volume in searched range";
        }
    } else {
        t.note = "no volume dependence: single covariance branch";
    }
    if (t.has_crossover) {
        t.covariance = a < t.a_c_prime ? left : right;
    } else {
        t.covariance = std::max(left, right);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Price diagnostics

std::vector<int> default_signature_lags() {
    std::vector<int> lags;
    for (int i = 0; i <= 40; ++i) {
        const int L = static_cast<int>(std::lround(std::pow(10.0, i / 10.0)));
        if (lags.empty() || L != lags.back()) lags.push_back(L);
    }
    return lags;
}

SignaturePlot signature_plot(std::span<const DayRecord> days, const std::vector<int>& lags, int reps, std::uint64_t seed) {
    const std::size_t nd = days.size();
    std::vector<Vec> s(lags.size(), Vec(nd, 0.0)), c = s;
    for (std::size_t d = 0; d < nd; ++d) {
        const auto& p = days[d].prices;
        for (std::size_t li = 0; li < lags.size(); ++li) {
            const std::size_t L = idx(lags[li]);
            double acc = 0;
            for (std::size_t k = 0; k + L < p.size(); ++k) {
                const double dp = p[k + L] - p[k];
                acc += dp * dp;
            }
            s[li][d] = acc;
            c[li][d] = p.size() > L ? static_cast<double>(p.size() - L) : 0.0;
        }
    }
    SignaturePlot out;
    out.lags = lags;
    for (std::size_t li = 0; li < lags.size(); ++li) {
        out.value.push_back(weighted_mean(s[li], c[li]) / lags[li]);
        out.stderr_.push_back(bootstrap_se(static_cast<int>(nd), reps, seed,
                                           [&](const Vec& w) { return weighted_mean(s[li], c[li], w) / lags[li]; }));
    }
    return out;
}

PriceMoments price_moment_scaling(std::span<const DayRecord> days, const std::vector<int>& n_list, int reps,
                                  std::uint64_t seed) {
    PriceMoments out;
    for (int T = 1; T <= 8192; T *= 2) out.T_values.push_back(T);
    const std::size_t nt = out.T_values.size(), nd = days.size();
    // sums[n-1][T][day]
    std::vector<std::vector<Vec>> sums(n_list.size(), std::vector<Vec>(nt, Vec(nd, 0.0)));
    std::vector<Vec> cnt(nt, Vec(nd, 0.0));
    for (std::size_t d = 0; d < nd; ++d) {
        const auto& p = days[d].prices;
        for (std::size_t ti = 0; ti < nt; ++ti) {
            const std::size_t T = idx(out.T_values[ti]);
            const std::size_t nw = p.empty() ? 0 : (p.size() - 1) / T;
            cnt[ti][d] = static_cast<double>(nw);
            for (std::size_t w = 0; w < nw; ++w) {
                const double dp = p[(w + 1) * T] - p[w * T];
                for (std::size_t ni = 0; ni < n_list.size(); ++ni) sums[ni][ti][d] += std::pow(dp * dp, n_list[ni]);
            }
        }
    }
    auto curve = [&](std::size_t ni, const Vec& w) {
        Vec m(nt);
        for (std::size_t ti = 0; ti < nt; ++ti) m[ti] = weighted_mean(sums[ni][ti], cnt[ti], w);
        const double m1 = m[0];
        for (auto& v : m) v /= m1;
        return m;
    };
    const Vec x(out.T_values.begin(), out.T_values.end());
    for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
        const double zmax = 3.0 * n_list[ni];
        out.moment.push_back(curve(ni, {}));
        auto f = fit_offset_power_law(x, out.moment.back(), zmax);
        if (!f.ok && f.note.empty()) f.note = "offset fit did not converge";
        if (f.ok) {
            f.stderr_ = bootstrap_se(static_cast<int>(nd), reps, seed + ni, [&](const Vec& w) {
                const auto g = fit_offset_power_law(x, curve(ni, w), zmax);
                return g.ok ? g.exponent : kNaN;
            });
        }
        out.fits.push_back(f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregated impact

namespace {

struct CollapseData {
    std::vector<int> T;
    std::vector<const Vec*> I;
    std::vector<const Vec*> D;
    std::vector<const std::vector<int>*> day;
};

struct TMoments {
    double sigma_I;
    double sigma_D;
    double slope;
};

TMoments t_moments(const CollapseData& cd, std::size_t k, const Vec& w) {
    const auto& I = *cd.I[k];
    const auto& D = *cd.D[k];
    const auto& dy = *cd.day[k];
    double n = 0, i2 = 0, d2 = 0;
    for (std::size_t j = 0; j < I.size(); ++j) {
        const double wd = day_weight(w, dy[j]);
        n += wd;
        i2 += wd * I[j] * I[j];
        d2 += wd * D[j] * D[j];
    }
    TMoments m{std::sqrt(i2 / n), std::sqrt(d2 / n), kNaN};
    double di = 0, ii = 0;
    for (std::size_t j = 0; j < I.size(); ++j) {
        if (std::abs(I[j]) > m.sigma_I) continue;
        const double wd = day_weight(w, dy[j]);
        di += wd * D[j] * I[j];
        ii += wd * I[j] * I[j];
    }
    m.slope = ii > 0 ? di / ii : kNaN;
    return m;
}

// Binned means of y = Delta / sigma_D against x = I / T^chi on shared edges.
void binned(const CollapseData& cd, std::size_t k, const TMoments& m, double chi, const Vec& edges, const Vec& w,
            Vec& mean, Vec& count) {
    const std::size_t nb = edges.size() - 1;
    mean.assign(nb, 0.0);
    count.assign(nb, 0.0);
    const auto& I = *cd.I[k];
    const auto& D = *cd.D[k];
    const auto& dy = *cd.day[k];
    const double scale = std::pow(static_cast<double>(cd.T[k]), -chi);
    const double lo = edges.front(), width = (edges.back() - edges.front()) / static_cast<double>(nb);
    for (std::size_t j = 0; j < I.size(); ++j) {
        const double x = I[j] * scale;
        if (x < lo || x >= edges.back()) continue;
        const std::size_t b = std::min(nb - 1, static_cast<std::size_t>((x - lo) / width));
        const double wd = day_weight(w, dy[j]);
        mean[b] += wd * D[j] / m.sigma_D;
        count[b] += wd;
    }
    for (std::size_t b = 0; b < nb; ++b) mean[b] = count[b] > 0 ? mean[b] / count[b] : kNaN;
}

Vec shared_edges(const CollapseData& cd, const std::vector<TMoments>& tm, double chi, const CollapseOptions& o) {
    double s = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cd.T.size(); ++k) s = std::min(s, tm[k].sigma_I * std::pow(double(cd.T[k]), -chi));
    Vec e;
    for (int b = 0; b <= o.n_bins; ++b) e.push_back(-o.x_range * s + 2.0 * o.x_range * s * b / o.n_bins);
    return e;
}

// Relative spread of the binned curves for the given T subset; bins populated
// (>= min_per_bin) in fewer than two curves are skipped.
double spread(const std::vector<Vec>& means, const std::vector<Vec>& counts, double min_count, bool require_all) {
    double num = 0, den = 0;
    int used = 0;
    const std::size_t nb = means.empty() ? 0 : means[0].size();
    for (std::size_t b = 0; b < nb; ++b) {
        double s = 0;
        int n = 0;
        for (std::size_t k = 0; k < means.size(); ++k) {
            if (counts[k][b] >= min_count) {
                s += means[k][b];
                ++n;
            }
        }
        if (n < 2 || (require_all && n < static_cast<int>(means.size()))) continue;
        const double mb = s / n;
        for (std::size_t k = 0; k < means.size(); ++k) {
            if (counts[k][b] >= min_count) num += (means[k][b] - mb) * (means[k][b] - mb) / n;
        }
        den += mb * mb;
        ++used;
    }
    return used > 0 && den > 0 ? std::sqrt(num / den) : kNaN;
}

double collapse_distance(const CollapseData& cd, const std::vector<TMoments>& tm, double chi, const Vec& w,
                         const CollapseOptions& o) {
    const Vec edges = shared_edges(cd, tm, chi, o);
    std::vector<Vec> means(cd.T.size()), counts(cd.T.size());
    for (std::size_t k = 0; k < cd.T.size(); ++k) binned(cd, k, tm[k], chi, edges, w, means[k], counts[k]);
    return spread(means, counts, o.min_per_bin, false);
}

double best_chi(const CollapseData& cd, const std::vector<TMoments>& tm, const Vec& w, const CollapseOptions& o,
                double lo, double hi) {
    double best = kNaN, dbest = std::numeric_limits<double>::infinity();
    for (double c = lo; c <= hi + 1e-12; c += o.chi_step) {
        const double d = collapse_distance(cd, tm, c, w, o);
        if (d < dbest) {
            dbest = d;
            best = c;
        }
    }
    return best;
}

double omega_of(const CollapseData& cd, const std::vector<TMoments>& tm) {
    Vec x, y;
    for (std::size_t k = 0; k < cd.T.size(); ++k) {
        x.push_back(cd.T[k]);
        y.push_back(tm[k].slope);
    }
    const auto f = fit_power_law(x, y);
    return f.ok ? -f.exponent : kNaN;
}

}  // namespace

CollapseResult aggregated_impact(const ImbalanceGrid& grid, int a_index, const CollapseOptions& opts) {
    CollapseData cd;
    for (int T : opts.T_values) {
        const auto it = std::find(grid.T_values.begin(), grid.T_values.end(), T);
        if (it == grid.T_values.end()) throw std::invalid_argument("aggregated_impact: T=" + std::to_string(T) + " not in grid");
        const std::size_t ti = idx(static_cast<int>(it - grid.T_values.begin()));
        if (grid.Delta[ti].size() != grid.I[idx(a_index)][ti].size())
            throw std::invalid_argument("aggregated_impact: grid has no price changes");
        cd.T.push_back(T);
        cd.I.push_back(&grid.I[idx(a_index)][ti]);
        cd.D.push_back(&grid.Delta[ti]);
        cd.day.push_back(&grid.day[ti]);
    }
    std::vector<TMoments> tm;
    for (std::size_t k = 0; k < cd.T.size(); ++k) {
        tm.push_back(t_moments(cd, k, {}));
        if (!(tm.back().sigma_D > 0)) throw NumericalError("aggregated_impact: constant price changes");
        if (!(tm.back().sigma_I > 0)) throw NumericalError("aggregated_impact: constant imbalance");
    }

    CollapseResult res;
    res.T_values = cd.T;
    for (const auto& m : tm) res.slope.push_back(m.slope);
    res.omega = omega_of(cd, tm);
    res.chi = best_chi(cd, tm, {}, opts, opts.chi_lo, opts.chi_hi);
    if (!std::isfinite(res.chi)) throw NumericalError("aggregated_impact: collapse search failed");

    res.bin_edges = shared_edges(cd, tm, res.chi, opts);
    // At small T and a = 0 the imbalance lives on a lattice of spacing 2, so
    // single curves can leave bins empty; sufficiency is judged on the pooled curve.
    std::vector<Vec> om, oc;
    Vec pooled(idx(opts.n_bins), 0.0);
    for (std::size_t k = 0; k < cd.T.size(); ++k) {
        MasterCurve mc;
        mc.T = cd.T[k];
        Vec mean, count;
        binned(cd, k, tm[k], res.chi, res.bin_edges, {}, mean, count);
        for (std::size_t b = 0; b + 1 < res.bin_edges.size(); ++b) {
            mc.x.push_back(0.5 * (res.bin_edges[b] + res.bin_edges[b + 1]));
            mc.y.push_back(count[b] >= opts.min_per_bin ? mean[b] : kNaN);
            mc.count.push_back(count[b]);
            pooled[b] += count[b];
        }
        if (std::find(opts.overlap_T.begin(), opts.overlap_T.end(), mc.T) != opts.overlap_T.end()) {
            om.push_back(mean);
            oc.push_back(count);
        }
        res.master_curve.push_back(std::move(mc));
    }
    const auto populated = std::count_if(pooled.begin(), pooled.end(), [&](double c) { return c >= opts.min_per_bin; });
    if (populated < std::min(20, opts.n_bins)) {
        throw NumericalError("aggregated_impact: only " + std::to_string(populated) + " populated imbalance bins");
    }
    res.overlap_T = opts.overlap_T;
    res.rms_overlap = spread(om, oc, opts.min_per_bin, true);

    const double half = 0.15;
    res.chi_stderr = bootstrap_se(grid.n_days, opts.bootstrap_reps, opts.seed, [&](const Vec& w) {
        std::vector<TMoments> tw;
        for (std::size_t k = 0; k < cd.T.size(); ++k) tw.push_back(t_moments(cd, k, w));
        return best_chi(cd, tw, w, opts, std::max(opts.chi_lo, res.chi - half), std::min(opts.chi_hi, res.chi + half));
    });
    res.omega_stderr = bootstrap_se(grid.n_days, opts.bootstrap_reps, opts.seed + 1, [&](const Vec& w) {
        std::vector<TMoments> tw;
        for (std::size_t k = 0; k < cd.T.size(); ++k) tw.push_back(t_moments(cd, k, w));
        return omega_of(cd, tw);
    });
    return res;
}

// ---------------------------------------------------------------------------
// Covariance and correlation

namespace {

ScalingFit covariance_fit(const std::vector<int>& T_values, const Vec& cov) {
    Vec x, y;
    int dropped = 0;
    for (std::size_t i = 0; i < T_values.size(); ++i) {
        if (T_values[i] >= kCovarianceFitHi) continue;
        if (!(cov[i] > 0)) {
            ++dropped;
            continue;
        }
        x.push_back(T_values[i]);
        y.push_back(cov[i]);
    }
    ScalingFit f;
    if (x.size() >= 4) f = fit_power_law(x, y);
    else f.note = "fewer than four positive covariances";
    if (dropped) f.note += (f.note.empty() ? "" : "; ") + std::to_string(dropped) + " non-positive covariance(s) excluded";
    return f;
}

}  // namespace

CovarianceSurface covariance_surface(const GridMoments& gm, int reps, std::uint64_t seed) {
    CovarianceSurface out;
    for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
        out.cov.push_back(cross_moments(gm, static_cast<int>(ai)));
        auto f = covariance_fit(gm.T_values, out.cov.back());
        if (f.ok) {
            f.stderr_ = bootstrap_se(gm.n_days, reps, seed + ai, [&](const Vec& w) {
                const auto g = covariance_fit(gm.T_values, cross_moments(gm, static_cast<int>(ai), w));
                return g.ok ? g.exponent : kNaN;
            });
        }
        out.fits.push_back(f);
    }
    return out;
}

std::vector<std::vector<double>> correlation_R(const GridMoments& gm) {
    std::vector<Vec> R;
    const Vec d2 = delta_moments(gm, 1);
    for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
        const Vec c = cross_moments(gm, static_cast<int>(ai));
        const Vec i2 = imbalance_moments(gm, static_cast<int>(ai), 1);
        Vec row;
        for (std::size_t ti = 0; ti < gm.T_values.size(); ++ti) {
            const double den = std::sqrt(d2[ti] * i2[ti]);
            row.push_back(den > 0 ? std::clamp(c[ti] / den, -1.0, 1.0) : kNaN);
        }
        R.push_back(std::move(row));
    }
    return R;
}

namespace {

struct RaProblem {
    std::vector<Vec> a;      // per fitted T
    std::vector<Vec> r;
    Vec logT;
    RaMode mode;
    int n_values = 0;

    double basis(double s2, double lam, double av, double lt) const {
        const double g = std::exp(-0.5 * s2 * av * av);
        return mode == RaMode::A_only ? g * std::exp(0.5 * s2 * av) : g * std::exp(lam * s2 * av * lt);
    }

    // Residuals with per-T amplitudes profiled out; fills amplitudes if given.
    void residuals(double s2, double lam, Eigen::VectorXd& f, Vec* amp = nullptr) const {
        int k = 0;
        if (amp) amp->clear();
        for (std::size_t j = 0; j < a.size(); ++j) {
            double num = 0, den = 0;
            for (std::size_t i = 0; i < a[j].size(); ++i) {
                const double b = basis(s2, lam, a[j][i], logT[j]);
                num += b * r[j][i];
                den += b * b;
            }
            const double c = den > 0 ? num / den : 0.0;
            if (amp) amp->push_back(c);
            for (std::size_t i = 0; i < a[j].size(); ++i) f[k++] = r[j][i] - c * basis(s2, lam, a[j][i], logT[j]);
        }
    }
};

struct RaFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const RaProblem* p;
    int inputs() const { return p->mode == RaMode::A_only ? 1 : 2; }
    int values() const { return p->n_values; }
    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        p->residuals(x[0], p->mode == RaMode::A_only ? 0.0 : x[1], f);
        return 0;
    }
};

}  // namespace

RaFit fit_Ra(const std::vector<Vec>& R, const Vec& a_values, const std::vector<int>& T_values, RaMode mode) {
    RaFit out;
    out.mode = mode;
    RaProblem prob;
    prob.mode = mode;
    for (std::size_t ti = 0; ti < T_values.size(); ++ti) {
        if (T_values[ti] >= kRaFitMaxT) continue;
        Vec av, rv;
        for (std::size_t ai = 0; ai < a_values.size(); ++ai) {
            if (a_values[ai] >= kRaFitMaxA || !std::isfinite(R[ai][ti])) continue;
            av.push_back(a_values[ai]);
            rv.push_back(R[ai][ti]);
        }
        if (av.size() < 3) continue;
        prob.a.push_back(av);
        prob.r.push_back(rv);
        prob.logT.push_back(std::log(double(T_values[ti])));
        out.T_values.push_back(T_values[ti]);
        prob.n_values += static_cast<int>(av.size());
    }
    const int np = mode == RaMode::A_only ? 1 : 2;
    if (prob.a.empty() || prob.n_values <= np + static_cast<int>(prob.a.size())) {
        out.note = "not enough (a, T) cells to fit";
        return out;
    }

    // Start from the log-linear fit on positive cells:
    // log R = log c_T - s2 a^2/2 + (A: s2 a/2 | B: k a log T), k = lambda s2.
    const int nT = static_cast<int>(prob.a.size());
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    for (int j = 0; j < nT; ++j) {
        for (std::size_t i = 0; i < prob.a[idx(j)].size(); ++i) {
            if (!(prob.r[idx(j)][i] > 0)) continue;
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nT + np);
            const double av = prob.a[idx(j)][i];
            row[j] = 1.0;
            if (mode == RaMode::A_only) {
                row[nT] = -0.5 * av * av + 0.5 * av;
            } else {
                row[nT] = -0.5 * av * av;
                row[nT + 1] = av * prob.logT[idx(j)];
            }
            rows.push_back(row);
            rhs.push_back(std::log(prob.r[idx(j)][i]));
        }
    }
    Eigen::VectorXd x0(np);
    x0[0] = 1.0;
    if (np == 2) x0[1] = 0.1;
    if (static_cast<int>(rows.size()) > nT + np) {
        Eigen::MatrixXd M(rows.size(), nT + np);
        Eigen::VectorXd b(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            M.row(static_cast<Eigen::Index>(i)) = rows[i];
            b[static_cast<Eigen::Index>(i)] = rhs[i];
        }
        const Eigen::VectorXd sol = M.colPivHouseholderQr().solve(b);
        if (sol[nT] > 0 && std::isfinite(sol[nT])) {
            x0[0] = sol[nT];
            if (np == 2) x0[1] = sol[nT + 1] / sol[nT];
        }
    }

    RaFunctor fn{&prob};
    Eigen::NumericalDiff<RaFunctor> nd(fn);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<RaFunctor>> lm(nd);
    Eigen::VectorXd x = x0;
    const auto status = lm.minimize(x);
    Eigen::VectorXd f(prob.n_values);
    Vec amp;
    prob.residuals(x[0], np == 2 ? x[1] : 0.0, f, &amp);
    out.sigma2 = x[0];
    out.lambda = np == 2 ? x[1] : kNaN;
    out.amplitude = amp;
    out.rss = f.squaredNorm();
    out.ok = status > 0 && status <= 4 && std::isfinite(out.rss) && out.sigma2 > 0;
    if (!(out.sigma2 > 0)) out.note = "fit failure: sigma_l^2 <= 0";
    else if (!out.ok) out.note = "fit failure: optimizer status " + std::to_string(static_cast<int>(status));
    return out;
}

}  // namespace metaflow

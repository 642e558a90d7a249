#include "metaflow/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace metaflow {

SignStreams split_by_sign(std::span<const ChildOrderEvent> events) {
    SignStreams s;
    for (std::size_t k = 0; k < events.size(); ++k) {
        auto& dst = events[k].sign > 0 ? s.buy : s.sell;
        dst.events.push_back(events[k]);
        dst.index.push_back(k);
    }
    return s;
}

ProxyAssignment generate_meta_ids(std::span<const double> t, const ProxyParams& params, Rng& rng) {
    if (!(params.phi_hat > 0)) throw std::invalid_argument("generate_meta_ids: phi_hat must be > 0");
    if (!(params.mu_hat > 1)) throw std::invalid_argument("generate_meta_ids: mu_hat must be > 1");
    const std::size_t n = t.size();
    ProxyAssignment out;
    out.params = params;
    out.ids.assign(n, 0);
    if (n == 0) return out;
    const double thr = params.threshold();
    std::exponential_distribution<double> gap(params.phi_hat);

    // next_free[i]: smallest unassigned index >= i (path-compressed), n if none.
    std::vector<std::size_t> next_free(n + 1);
    std::iota(next_free.begin(), next_free.end(), std::size_t{0});
    auto find = [&](std::size_t i) {
        std::size_t r = i;
        while (next_free[r] != r) r = next_free[r];
        while (next_free[i] != r) {
            const std::size_t nx = next_free[i];
            next_free[i] = r;
            i = nx;
        }
        return r;
    };
    auto take = [&](std::size_t i, int id) {
        out.ids[i] = id;
        next_free[i] = i + 1;
    };

    int id = 1;
    for (std::size_t seed = find(0); seed < n; seed = find(seed)) {
        const int size = sample_metaorder_size(rng, params.mu_hat, params.s_max);
        std::size_t cur = seed;
        take(cur, id);
        for (int count = 1; count < size; ++count) {
            const double target = t[cur] + gap(rng);
            const auto lb = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), target) - t.begin());
            const std::size_t nx = find(lb);
            if (nx >= n || t[nx] - target > thr || t[nx] - t[cur] > thr) break;
            cur = nx;
            take(cur, id);
        }
        ++id;
    }
    return out;
}

Grouping ground_truth_grouping(std::span<const ChildOrderEvent> events) {
    Grouping g(events.size(), -1);
    std::unordered_map<double, std::int64_t> label;
    for (std::size_t k = 0; k < events.size(); ++k) {
        const double pid = events[k].parent_id;
        if (std::isnan(pid)) continue;
        const auto it = label.try_emplace(pid, static_cast<std::int64_t>(label.size())).first;
        g[k] = it->second;
    }
    return g;
}

Grouping proxy_grouping(std::span<const ChildOrderEvent> events, const ProxyParams& params, std::uint64_t seed) {
    Grouping g(events.size(), -1);
    const auto streams = split_by_sign(events);
    int side = 0;
    for (const SignStream* s : {&streams.buy, &streams.sell}) {
        std::vector<double> t;
        t.reserve(s->events.size());
        for (const auto& e : s->events) t.push_back(e.timestamp);
        Rng rng(day_seed(seed, side));
        const auto a = generate_meta_ids(t, params, rng);
        for (std::size_t i = 0; i < t.size(); ++i) g[s->index[i]] = 2 * static_cast<std::int64_t>(a.ids[i]) + side;
        ++side;
    }
    return g;
}

std::uint64_t proxy_day_seed(std::uint64_t run_seed, int day) {
    return day_seed(run_seed ^ 0x9e3779b97f4a7c15ull, day);
}

void peak_impacts(std::span<const ChildOrderEvent> events, std::span<const double> prices, const Grouping& grouping,
                  ImpactStats& out) {
    const std::size_t n = events.size();
    if (prices.size() != n || grouping.size() != n) throw std::invalid_argument("peak_impacts: size mismatch");
    if (n < 2) return;
    double vd = 0;
    for (const auto& e : events) vd += e.volume;
    double ss = 0;
    for (std::size_t k = 0; k + 1 < n; ++k) ss += (prices[k + 1] - prices[k]) * (prices[k + 1] - prices[k]);
    const double sigma = std::sqrt(ss / static_cast<double>(n - 1)) * std::sqrt(static_cast<double>(n));
    if (!(sigma > 0)) throw NumericalError("peak_impacts: zero daily volatility");

    struct Acc {
        std::size_t first = 0, last = 0;
        double volume = 0;
        int count = 0;
        int sign = 0;
    };
    std::unordered_map<std::int64_t, Acc> groups;
    std::vector<std::int64_t> order;
    for (std::size_t k = 0; k < n; ++k) {
        if (grouping[k] < 0) continue;
        auto [it, fresh] = groups.try_emplace(grouping[k]);
        auto& a = it->second;
        if (fresh) {
            a.first = k;
            a.sign = events[k].sign;
            order.push_back(grouping[k]);
        }
        a.last = k;
        a.volume += events[k].volume;
        ++a.count;
    }
    for (const auto label : order) {
        const auto& a = groups[label];
        if (a.count < 2) {
            ++out.excluded_small;
            continue;
        }
        std::size_t after = a.last + 1;
        while (after < n && !(events[after].timestamp > events[a.last].timestamp)) ++after;
        if (after >= n) {
            ++out.excluded_close;
            continue;
        }
        MetaorderImpact m;
        m.q_over_vd = a.volume / vd;
        m.impact_over_sigma = a.sign * (prices[after] - prices[a.first]) / sigma;
        m.n_children = a.count;
        out.impacts.push_back(m);
    }
}

ImpactCurve peak_impact_curve(const ImpactStats& stats, const CurveOptions& o) {
    ImpactCurve c;
    c.excluded_small = stats.excluded_small;
    c.excluded_close = stats.excluded_close;
    const double l0 = std::log10(o.x_min), l1 = std::log10(o.x_max);
    const int nb = static_cast<int>(std::lround((l1 - l0) * o.bins_per_decade));
    for (int b = 0; b <= nb; ++b) c.edges.push_back(std::pow(10.0, l0 + (l1 - l0) * b / nb));
    std::vector<double> sx(static_cast<std::size_t>(nb)), sy(sx), syy(sx);
    c.counts.assign(static_cast<std::size_t>(nb), 0);
    for (const auto& m : stats.impacts) {
        if (m.q_over_vd < c.edges.front() || m.q_over_vd >= c.edges.back()) continue;
        const auto b = static_cast<std::size_t>(
            std::upper_bound(c.edges.begin(), c.edges.end(), m.q_over_vd) - c.edges.begin() - 1);
        sx[b] += m.q_over_vd;
        sy[b] += m.impact_over_sigma;
        syy[b] += m.impact_over_sigma * m.impact_over_sigma;
        ++c.counts[b];
    }
    for (std::size_t b = 0; b < sx.size(); ++b) {
        const double n = static_cast<double>(c.counts[b]);
        if (n == 0) {
            c.x.push_back(std::sqrt(c.edges[b] * c.edges[b + 1]));
            c.mean_impact.push_back(kNaN);
            c.stderr_.push_back(kNaN);
            continue;
        }
        const double mean = sy[b] / n;
        c.x.push_back(sx[b] / n);
        c.mean_impact.push_back(mean);
        c.stderr_.push_back(n > 1 ? std::sqrt(std::max(0.0, syy[b] / n - mean * mean) / (n - 1)) : kNaN);
    }
    c.fit = local_slope(c, o.fit_lo, o.fit_hi, o.min_count);

    // Y by least squares of mean = Y sqrt(x) over the fit range, weighted by 1/stderr^2.
    double num = 0, den = 0;
    for (std::size_t b = 0; b < c.x.size(); ++b) {
        if (c.counts[b] < o.min_count || c.x[b] < o.fit_lo || c.x[b] > o.fit_hi || !(c.stderr_[b] > 0)) continue;
        const double w = 1.0 / (c.stderr_[b] * c.stderr_[b]);
        const double g = std::sqrt(c.x[b]);
        num += w * g * c.mean_impact[b];
        den += w * g * g;
    }
    if (den > 0) {
        c.Y = num / den;
        c.Y_stderr = 1.0 / std::sqrt(den);
    }
    return c;
}

ScalingFit local_slope(const ImpactCurve& c, double lo, double hi, long long min_count) {
    std::vector<double> x, y;
    for (std::size_t b = 0; b < c.x.size(); ++b) {
        if (c.counts[b] < min_count || c.x[b] < lo || c.x[b] > hi) continue;
        x.push_back(c.x[b]);
        y.push_back(c.mean_impact[b]);
    }
    auto f = fit_power_law(x, y);
    if (f.ok) {
        f.T_lo = lo;
        f.T_hi = hi;
    }
    return f;
}

CurveComparison compare_curves(const ImpactCurve& truth, const ImpactCurve& proxy, long long min_count) {
    if (truth.edges != proxy.edges) throw std::invalid_argument("compare_curves: bin edges differ");
    CurveComparison out;
    std::vector<std::size_t> shared;
    for (std::size_t b = 0; b + 1 < truth.edges.size(); ++b) {
        if (truth.counts[b] < min_count || proxy.counts[b] < min_count) continue;
        const double r = proxy.mean_impact[b] / truth.mean_impact[b];
        const double e = std::abs(r) * std::hypot(proxy.stderr_[b] / proxy.mean_impact[b],
                                                  truth.stderr_[b] / truth.mean_impact[b]);
        out.x.push_back(truth.x[b]);
        out.ratio.push_back(r);
        out.ratio_err.push_back(e);
        shared.push_back(b);
    }
    if (shared.empty()) throw std::invalid_argument("compare_curves: curves have disjoint supports");
    std::size_t first_ok = shared.size();
    for (std::size_t i = shared.size(); i-- > 0;) {
        if (!(std::abs(out.ratio[i] - 1.0) < kCrossoverTolerance)) break;
        first_ok = i;
    }
    if (first_ok < shared.size()) {
        out.has_crossover = true;
        out.crossover = truth.edges[shared[first_ok]];
    } else {
        out.note = "no persistent agreement within tolerance";
    }
    return out;
}

}  // namespace metaflow

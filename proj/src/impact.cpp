#include "metaflow/impact.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace metaflow {

namespace {

// Decay factor (tau0 / (lag + tau0))^beta.
inline double decay(double lag, double beta, double tau0) {
    if (beta == 0.0) return 1.0;
    return std::exp(-beta * std::log1p(lag / tau0));
}

constexpr std::size_t kChunk = 8;

struct SourceArrays {
    std::vector<double> t;
    std::vector<double> amp;
    std::vector<double> beta;
};

void price_blocks(const SourceArrays& src, double tau0, const ReconstructionOptions& opts,
                  std::size_t first_block, std::size_t stride, std::vector<double>& out) {
    const std::size_t n = src.t.size();
    const std::size_t B = static_cast<std::size_t>(opts.block_size);
    const int P = opts.order;
    std::vector<double> moments(static_cast<std::size_t>(P));
    std::vector<double> inv(static_cast<std::size_t>(P));
    for (int m = 0; m < P; ++m) inv[static_cast<std::size_t>(m)] = 1.0 / (m + 1.0);

    for (std::size_t b = first_block; b * B < n; b += stride) {
        const std::size_t k0 = b * B;
        const std::size_t k1 = std::min(n, k0 + B);
        const double centre = 0.5 * (src.t[k0] + src.t[k1 - 1]);
        const double half = 0.5 * (src.t[k1 - 1] - src.t[k0]);

        // Sources with half / (centre - t_j + tau0) <= max_ratio form a prefix [0, far_end).
        std::size_t far_end = 0;
        if (half == 0.0) {
            far_end = k0;
        } else {
            const double cutoff = centre + tau0 - half / opts.max_ratio;
            far_end = static_cast<std::size_t>(
                std::upper_bound(src.t.begin(), src.t.begin() + static_cast<std::ptrdiff_t>(k0), cutoff) -
                src.t.begin());
        }

        // Only strictly earlier timestamps contribute.
        const auto block_lo = static_cast<std::size_t>(
            std::lower_bound(src.t.begin(), src.t.begin() + static_cast<std::ptrdiff_t>(k0), src.t[k0]) -
            src.t.begin());
        far_end = std::min(far_end, block_lo);

        // Far-field moments, accumulated over fixed-width chunks of sources.
        std::fill(moments.begin(), moments.end(), 0.0);
        for (std::size_t j0 = 0; j0 < far_end; j0 += kChunk) {
            const std::size_t cnt = std::min(kChunk, far_end - j0);
            double w[kChunk], nb[kChunk], r[kChunk];
            for (std::size_t i = 0; i < kChunk; ++i) {
                if (i < cnt) {
                    const std::size_t j = j0 + i;
                    const double dist = centre - src.t[j] + tau0;
                    nb[i] = -src.beta[j];
                    w[i] = src.amp[j] * (nb[i] == 0.0 ? 1.0 : std::exp(nb[i] * std::log(dist / tau0)));
                    r[i] = half / dist;
                } else {
                    w[i] = nb[i] = r[i] = 0.0;
                }
            }
            for (int m = 0; m < P; ++m) {
                double sum = 0.0;
                for (std::size_t i = 0; i < kChunk; ++i) sum += w[i];
                moments[static_cast<std::size_t>(m)] += sum;
                const double step = inv[static_cast<std::size_t>(m)];
                for (std::size_t i = 0; i < kChunk; ++i) w[i] *= (nb[i] - m) * r[i] * step;
            }
        }

        std::size_t earlier_end = block_lo;
        for (std::size_t k = k0; k < k1; ++k) {
            while (src.t[earlier_end] < src.t[k]) ++earlier_end;
            double far = 0.0;
            if (far_end > 0) {
                const double x = half == 0.0 ? 0.0 : (src.t[k] - centre) / half;
                for (int m = P - 1; m >= 0; --m) far = far * x + moments[static_cast<std::size_t>(m)];
            }
            double near = 0.0;
            for (std::size_t j = far_end; j < earlier_end; ++j) {
                near += src.amp[j] * decay(src.t[k] - src.t[j], src.beta[j], tau0);
            }
            out[k] = far + near;
        }
    }
}

}  // namespace

PropagatorParams propagator_params(const SimulationConfig& cfg) {
    return {cfg.phi, cfg.theta, cfg.n0, effective_tau0(cfg)};
}

double kernel(double q, double t_start, double t_exec, double t_eval, double phi, double beta_q,
              double theta, double n0, double tau0) {
    if (!(t_exec >= t_start) || !(t_eval >= t_exec)) {
        throw std::domain_error("kernel: requires t_eval >= t_exec >= t_start");
    }
    if (!(beta_q >= 0.0 && beta_q < 0.5)) throw std::domain_error("kernel: beta_q must lie in [0, 1/2)");
    if (!(n0 > 0.0) || !(tau0 > 0.0)) throw std::domain_error("kernel: n0 and tau0 must be > 0");
    if (!(q > 0.0) || !(phi > 0.0)) throw std::domain_error("kernel: q and phi must be > 0");
    const double growth = std::pow(phi * (t_exec - t_start) + n0, -(0.5 - beta_q));
    return theta * std::sqrt(q) * growth * std::pow(tau0 / (t_eval - t_exec + tau0), beta_q);
}

std::vector<double> instantaneous_impacts(std::span<const ChildOrderEvent> events,
                                          const PropagatorParams& p) {
    std::vector<double> amp(events.size());
    for (std::size_t j = 0; j < events.size(); ++j) {
        const auto& e = events[j];
        amp[j] = e.sign * kernel(e.volume, e.t_start(), e.timestamp, e.timestamp, p.phi, e.beta_q,
                                 p.theta, p.n0, p.tau0);
    }
    return amp;
}

PriceSeries reconstruct_prices(std::span<const ChildOrderEvent> events, const SimulationConfig& cfg,
                               int day_id, const ReconstructionOptions& opts) {
    if (opts.block_size < 1 || opts.order < 1 || !(opts.max_ratio > 0.0 && opts.max_ratio < 1.0)) {
        throw std::invalid_argument("reconstruct_prices: invalid reconstruction options");
    }
    for (std::size_t k = 1; k < events.size(); ++k) {
        if (events[k].timestamp < events[k - 1].timestamp) {
            throw std::invalid_argument("reconstruct_prices: events are not sorted by timestamp");
        }
    }
    const auto params = propagator_params(cfg);

    SourceArrays src;
    src.amp = instantaneous_impacts(events, params);
    src.t.resize(events.size());
    src.beta.resize(events.size());
    for (std::size_t j = 0; j < events.size(); ++j) {
        src.t[j] = events[j].timestamp;
        src.beta[j] = events[j].beta_q;
    }

    PriceSeries out;
    out.day_id = day_id;
    out.times = src.t;
    out.prices.assign(events.size(), 0.0);

    const unsigned threads = std::max(1u, opts.threads);
    if (threads == 1) {
        price_blocks(src, params.tau0, opts, 0, 1, out.prices);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] { price_blocks(src, params.tau0, opts, w, threads, out.prices); });
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

double price_at(std::span<const ChildOrderEvent> events, double t_eval, const SimulationConfig& cfg) {
    const auto p = propagator_params(cfg);
    double acc = 0.0;
    for (const auto& e : events) {
        if (!(e.timestamp < t_eval)) continue;
        acc += e.sign * kernel(e.volume, e.t_start(), e.timestamp, t_eval, p.phi, e.beta_q, p.theta,
                               p.n0, p.tau0);
    }
    return acc;
}

}  // namespace metaflow

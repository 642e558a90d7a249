#include "metaflow/run.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <thread>

#include "metaflow/impact.hpp"
#include "metaflow/io.hpp"

namespace metaflow {

namespace fs = std::filesystem;

DayRecord simulate_day(const SimulationConfig& cfg, int day, bool price) {
    DayRecord rec;
    rec.day = day;
    rec.events = build_day_flow(cfg, day).events;
    if (price) rec.prices = reconstruct_prices(rec.events, cfg, day).prices;
    return rec;
}

void parallel_for(int n, unsigned jobs, const std::function<void(int)>& f) {
    if (n <= 0) return;
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < jobs; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::vector<DayRecord> simulate_days(const SimulationConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const std::string hash = config_hash(cfg);
    fs::path dir;
    if (!opts.cache_dir.empty()) {
        dir = fs::path(opts.cache_dir) / hash;
        fs::create_directories(dir);
    }
    std::vector<DayRecord> days(static_cast<std::size_t>(cfg.n_days));
    parallel_for(cfg.n_days, opts.jobs, [&](int d) {
        auto& rec = days[static_cast<std::size_t>(d)];
        if (dir.empty()) {
            rec = simulate_day(cfg, d, opts.price);
            return;
        }
        const auto file = (dir / ("day_" + std::to_string(d) + ".bin")).string();
        rec.day = d;
        if (read_day_cache(file, hash, rec.events, rec.prices) &&
            (!opts.price || rec.prices.size() == rec.events.size())) {
            if (!opts.price) rec.prices.clear();
            return;
        }
        rec = simulate_day(cfg, d, true);
        write_day_cache(file, hash, rec.events, rec.prices);
        if (!opts.price) rec.prices.clear();
    });
    return days;
}

}  // namespace metaflow

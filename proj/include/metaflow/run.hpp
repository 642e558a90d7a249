#pragma once

#include <functional>
#include <string>
#include <vector>

#include "metaflow/config.hpp"
#include "metaflow/flowgen.hpp"

namespace metaflow {

/// One simulated day: merged flow and the reconstructed price before each event.
struct DayRecord {
    int day = 0;
    std::vector<ChildOrderEvent> events;
    std::vector<double> prices;   // empty when pricing was skipped
};

DayRecord simulate_day(const SimulationConfig& cfg, int day, bool price = true);

struct RunOptions {
    unsigned jobs = 1;
    bool price = true;
    std::string cache_dir;   // per-day binary cache under <cache_dir>/<config hash>/; empty disables
};

/// Days 0 .. cfg.n_days - 1, computed on `jobs` threads and returned in day
/// order. The result does not depend on `jobs`.
std::vector<DayRecord> simulate_days(const SimulationConfig& cfg, const RunOptions& opts = {});

/// Runs f(i) for i in [0, n) on up to `jobs` threads. Exceptions are rethrown
/// (the one from the lowest index wins).
void parallel_for(int n, unsigned jobs, const std::function<void(int)>& f);

}  // namespace metaflow

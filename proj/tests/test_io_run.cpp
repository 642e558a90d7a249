#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "metaflow/io.hpp"
#include "metaflow/run.hpp"

using namespace metaflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("metaflow_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SimulationConfig small_config() {
    auto cfg = preset(Scenario::C_VD_VF, 2000);
    cfg.n_days = 3;
    return cfg;
}

bool same_events(const std::vector<ChildOrderEvent>& a, const std::vector<ChildOrderEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].timestamp != b[k].timestamp || a[k].volume != b[k].volume || a[k].sign != b[k].sign ||
            a[k].rank != b[k].rank || a[k].beta_q != b[k].beta_q)
            return false;
        if (!(a[k].parent_id == b[k].parent_id || (std::isnan(a[k].parent_id) && std::isnan(b[k].parent_id))))
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("fmt round-trips doubles", "[io]") {
    for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 6.02214076e23, 5e-324, -1e-300}) CHECK(std::strtod(fmt(v).c_str(), nullptr) == v);
    CHECK(fmt(std::nan("")) == "nan");
    CHECK(fmt(1.0) == "1");
}

TEST_CASE("flow and price CSV round trip", "[io]") {
    const auto dir = scratch("csv");
    const auto day = simulate_day(small_config(), 0);
    const std::string hash = config_hash(small_config());

    const auto flow = (dir / "flow.csv").string();
    write_flow_csv(flow, day.events, hash);
    CHECK(read_csv_hash(flow) == hash);
    std::ifstream in(flow);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    CHECK(l1 == "# config_hash=" + hash);
    CHECK(l2 == "timestamp,volume,sign,rank,parent_id,beta_q");

    bool has_parent = false;
    const auto back = read_flow_csv(flow, &has_parent);
    CHECK(has_parent);
    REQUIRE(back.size() == day.events.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        CHECK(back[k].volume == day.events[k].volume);
        CHECK(back[k].sign == day.events[k].sign);
        CHECK(back[k].timestamp == Catch::Approx(day.events[k].timestamp).margin(1e-6));
    }

    const auto blind = (dir / "blind.csv").string();
    write_flow_csv(blind, day.events, hash, false);
    const auto nb = read_flow_csv(blind, &has_parent);
    CHECK_FALSE(has_parent);
    CHECK(std::isnan(nb.at(0).parent_id));

    const auto price = (dir / "price.csv").string();
    std::vector<double> t;
    for (const auto& e : day.events) t.push_back(e.timestamp);
    write_price_csv(price, t, day.prices, hash);
    std::vector<double> t2, p2;
    read_price_csv(price, t2, p2);
    CHECK(p2 == day.prices);

    CHECK_THROWS_AS(read_flow_csv((dir / "missing.csv").string()), IoError);
}

TEST_CASE("day cache round trip and validation", "[io]") {
    const auto dir = scratch("cache");
    const auto day = simulate_day(small_config(), 1);
    const auto path = (dir / "d.bin").string();
    write_day_cache(path, "abc", day.events, day.prices);

    std::vector<ChildOrderEvent> ev;
    std::vector<double> p;
    REQUIRE(read_day_cache(path, "abc", ev, p));
    CHECK(same_events(ev, day.events));
    CHECK(p == day.prices);
    CHECK_FALSE(read_day_cache(path, "abd", ev, p));
    CHECK_FALSE(read_day_cache((dir / "none.bin").string(), "abc", ev, p));

    fs::resize_file(path, fs::file_size(path) - 3);
    CHECK_FALSE(read_day_cache(path, "abc", ev, p));
}

TEST_CASE("runs do not depend on thread count or cache state", "[run]") {
    const auto cfg = small_config();
    const auto dir = scratch("run");
    RunOptions one{1, true, ""};
    RunOptions three{3, true, dir.string()};
    const auto a = simulate_days(cfg, one);
    const auto b = simulate_days(cfg, three);
    const auto c = simulate_days(cfg, three);   // served from the cache
    REQUIRE(a.size() == 3);
    for (std::size_t d = 0; d < a.size(); ++d) {
        CHECK(a[d].day == static_cast<int>(d));
        CHECK(same_events(a[d].events, b[d].events));
        CHECK(same_events(a[d].events, c[d].events));
        CHECK(a[d].prices == b[d].prices);
        CHECK(a[d].prices == c[d].prices);
    }
    CHECK(fs::exists(dir / config_hash(cfg) / "day_0.bin"));

    RunOptions unpriced{2, false, dir.string()};
    const auto u = simulate_days(cfg, unpriced);
    CHECK(u[0].prices.empty());
    CHECK(same_events(u[2].events, a[2].events));

    // Days are independent of how many days the run has.
    auto longer = cfg;
    longer.n_days = 5;
    CHECK(same_events(simulate_days(longer, one)[2].events, a[2].events));
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure", "[run]") {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, 4, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
    for (const auto& h : hits) CHECK(h == 1);

    try {
        parallel_for(50, 3, [](int i) {
            if (i % 10 == 7) throw std::runtime_error(std::to_string(i));
        });
        FAIL("no exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "7");
    }
}

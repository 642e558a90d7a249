#include "metaflow/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "metaflow/config.hpp"
#include "metaflow/impact.hpp"
#include "metaflow/io.hpp"
#include "metaflow/proxy.hpp"
#include "metaflow/run.hpp"
#include "metaflow/stats.hpp"

namespace metaflow {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Vec = std::vector<double>;

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path output_root() {
    const char* env = std::getenv(kOutputRootEnv);
    return env && *env ? fs::path(env) : fs::path("runs");
}

std::string day_file(int d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "day_%04d.csv", d);
    return buf;
}

// ---------------------------------------------------------------------------
// Configuration

struct ConfigArgs {
    std::string preset;
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    int days = 0;
    double target_events = 5e4;
};

/// Preset (or defaults) <- config file <- --set <- --seed/--days, then the
/// scenario switches. day_length is recalibrated unless given explicitly.
SimulationConfig resolve_config(const ConfigArgs& a) {
    SimulationConfig cfg;
    if (!a.preset.empty()) cfg = preset(parse_scenario(a.preset), a.target_events);
    bool explicit_length = false;
    if (!a.config_file.empty()) {
        std::string text;
        try {
            text = read_text_file(a.config_file);
        } catch (const IoError& e) {
            throw ConfigError(e.what());
        }
        SimulationConfig probe = cfg;
        probe.day_length = -1;
        explicit_length = parse_config(text, probe).day_length != -1;
        cfg = parse_config(text, cfg);
    }
    for (const auto& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        std::string key = s.substr(0, eq);
        key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char c) { return std::isspace(c); }), key.end());
        if (key == "day_length") explicit_length = true;
        set_field(cfg, key, s.substr(eq + 1));
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.days > 0) cfg.n_days = a.days;
    cfg = apply_scenario(cfg);
    if (!explicit_length) cfg = calibrate_day_length(cfg, a.target_events);
    cfg.validate();
    return cfg;
}

json config_json(const SimulationConfig& cfg) {
    json j = json::object();
    std::istringstream in(serialize(cfg));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

void write_json(const fs::path& p, const json& j) { write_text_file(p.string(), j.dump(2) + "\n"); }

json read_manifest(const fs::path& dir) {
    const auto p = dir / "manifest.json";
    if (!fs::exists(p)) return json::object();
    try {
        return json::parse(read_text_file(p.string()));
    } catch (const json::exception&) {
        return json::object();
    }
}

void record_stage(const fs::path& run_dir, const std::string& stage, double seconds,
                  const std::vector<std::string>& outputs, const json& extra = json::object()) {
    json m = read_manifest(run_dir);
    m["stages"][stage] = {{"seconds", seconds}, {"outputs", outputs}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m["stages"][stage][it.key()] = it.value();
    write_json(run_dir / "manifest.json", m);
}

// ---------------------------------------------------------------------------
// Run directories

struct LoadedRun {
    SimulationConfig cfg;
    std::string hash;
    std::vector<DayRecord> days;
    bool has_parent = true;
};

LoadedRun load_run(const fs::path& dir, bool need_prices, unsigned jobs) {
    LoadedRun run;
    const auto cfg_path = dir / "config.txt";
    if (!fs::exists(cfg_path)) throw ConfigError("not a run directory (no config.txt): " + dir.string());
    run.cfg = parse_config(read_text_file(cfg_path.string()));
    run.hash = config_hash(run.cfg);

    std::vector<std::pair<int, fs::path>> files;
    const std::regex pat("day_([0-9]+)\\.csv");
    if (fs::is_directory(dir / "flow")) {
        for (const auto& e : fs::directory_iterator(dir / "flow")) {
            std::smatch m;
            const std::string name = e.path().filename().string();
            if (std::regex_match(name, m, pat)) files.emplace_back(std::stoi(m[1]), e.path());
        }
    }
    if (files.empty()) throw ConfigError("no flow files under " + (dir / "flow").string());
    std::sort(files.begin(), files.end());

    run.days.resize(files.size());
    std::vector<char> parent(files.size(), 1), recomputed(files.size(), 0);
    parallel_for(static_cast<int>(files.size()), jobs, [&](int i) {
        const auto& [d, path] = files[static_cast<std::size_t>(i)];
        if (read_csv_hash(path.string()) != run.hash)
            throw ConfigError(path.string() + " was produced by a different configuration");
        auto& rec = run.days[static_cast<std::size_t>(i)];
        rec.day = d;
        bool hp = true;
        rec.events = read_flow_csv(path.string(), &hp);
        parent[static_cast<std::size_t>(i)] = hp;
        if (!need_prices) return;
        const auto price_path = dir / "price" / day_file(d);
        if (fs::exists(price_path)) {
            Vec t;
            read_price_csv(price_path.string(), t, rec.prices);
            if (rec.prices.size() != rec.events.size()) throw IoError(price_path.string() + ": length mismatch");
            return;
        }
        if (!hp) throw IoError("cannot reconstruct prices for " + path.string() + " without parent_id");
        rec.prices = reconstruct_prices(rec.events, run.cfg, d).prices;
        recomputed[static_cast<std::size_t>(i)] = 1;
    });
    run.has_parent = std::all_of(parent.begin(), parent.end(), [](char c) { return c != 0; });
    const auto n_re = std::count(recomputed.begin(), recomputed.end(), 1);
    if (n_re > 0) std::cerr << "warning: price files missing for " << n_re << " day(s); prices recomputed\n";
    return run;
}

// ---------------------------------------------------------------------------
// Output helpers

std::string opt(double v) { return std::isfinite(v) ? fmt(v) : (std::isnan(v) ? "" : fmt(v)); }

std::string clean(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

struct SummaryRow {
    explicit SummaryRow(std::string d, double a_ = kNaN, int n_ = 0) : diagnostic(std::move(d)), a(a_), n(n_) {}

    std::string diagnostic;
    double a;
    int n;
    int T = 0;
    int bin = -1;
    double value = kNaN;
    double stderr_ = kNaN;
    double theory = kNaN;
    std::string note;
};

constexpr const char* kSummaryHeader = "diagnostic,scenario,a,n,T,bin,value,stderr,theory,note";

class Outputs {
public:
    Outputs(fs::path dir, std::string hash, std::string scenario, bool svg)
        : dir_(std::move(dir)), hash_(std::move(hash)), scenario_(std::move(scenario)), svg_(svg) {}

    CsvWriter csv(const std::string& name, const std::string& header) {
        written_.push_back(name);
        return CsvWriter((dir_ / name).string(), hash_, header);
    }

    void tidy(const std::string& diag, double a, double T, double value, double se) {
        tidy_.push_back(diag + ',' + scenario_ + ',' + opt(a) + ',' + opt(T) + ',' + fmt(value) + ',' + fmt(se));
    }

    void summary(const SummaryRow& r) {
        summary_.push_back(r.diagnostic + ',' + scenario_ + ',' + opt(r.a) + ',' + (r.n ? std::to_string(r.n) : "") +
                           ',' + (r.T ? std::to_string(r.T) : "") + ',' + (r.bin >= 0 ? std::to_string(r.bin) : "") +
                           ',' + fmt(r.value) + ',' + fmt(r.stderr_) + ',' + opt(r.theory) + ',' + clean(r.note));
    }

    void chart(const std::string& name, const std::string& title, const std::vector<SvgSeries>& s, bool lx, bool ly) {
        if (!svg_) return;
        write_text_file((dir_ / name).string(), svg_chart(title, s, lx, ly));
        written_.push_back(name);
    }

    void finish(const std::string& tidy_name, const std::string& summary_name) {
        if (!tidy_name.empty()) {
            auto w = csv(tidy_name, "diagnostic,scenario,a,T,value,stderr");
            for (const auto& l : tidy_) w.row(l);
            w.close();
        }
        auto w = csv(summary_name, kSummaryHeader);
        for (const auto& l : summary_) w.row(l);
        w.close();
    }

    const std::vector<std::string>& written() const { return written_; }

private:
    fs::path dir_;
    std::string hash_, scenario_;
    bool svg_;
    std::vector<std::string> tidy_, summary_, written_;
};

/// Per-point bootstrap standard errors of a vector statistic of day weights.
Vec point_stderr(int n_days, int reps, std::uint64_t seed, std::size_t n_points,
                 const std::function<Vec(const Vec&)>& stat) {
    Vec se(n_points, kNaN);
    if (reps < 2) return se;
    std::vector<Vec> draws(n_points);
    for (const auto& w : bootstrap_weights(n_days, reps, seed)) {
        const Vec v = stat(w);
        for (std::size_t i = 0; i < n_points; ++i)
            if (std::isfinite(v[i])) draws[i].push_back(v[i]);
    }
    for (std::size_t i = 0; i < n_points; ++i)
        if (draws[i].size() >= 2) se[i] = sample_stddev(draws[i]);
    return se;
}

Vec weighted_R(const GridMoments& gm, int ai, const Vec& w) {
    const Vec d2 = delta_moments(gm, 1, w), c = cross_moments(gm, ai, w), i2 = imbalance_moments(gm, ai, 1, w);
    Vec r;
    for (std::size_t t = 0; t < c.size(); ++t) {
        const double den = std::sqrt(d2[t] * i2[t]);
        r.push_back(den > 0 ? std::clamp(c[t] / den, -1.0, 1.0) : kNaN);
    }
    return r;
}

std::string a_label(double a) {
    char b[32];
    std::snprintf(b, sizeof b, "a=%g", a);
    return b;
}

// ---------------------------------------------------------------------------
// analyze

const std::vector<std::string> kDiagnostics = {"autocorr", "imbalance", "signature", "moments",
                                               "covariance", "collapse", "correlation", "fit"};

std::set<std::string> parse_only(const std::string& only) {
    std::set<std::string> out;
    if (only.empty()) return {kDiagnostics.begin(), kDiagnostics.end()};
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        if (std::find(kDiagnostics.begin(), kDiagnostics.end(), item) == kDiagnostics.end()) {
            std::string msg = "unknown diagnostic '" + item + "'; valid options:";
            for (const auto& d : kDiagnostics) msg += " " + d;
            throw ConfigError(msg);
        }
        out.insert(item);
    }
    if (out.empty()) throw ConfigError("--only selects no diagnostic");
    return out;
}

struct AnalyzeArgs {
    std::string run_dir;
    std::string out_dir;
    std::string only;
    int reps = kBootstrapReps;
    double collapse_a = 0.0;
    bool svg = false;
    unsigned jobs = 1;
};

void analyze_autocorr(const LoadedRun& run, Outputs& out, int reps) {
    AutocorrOptions o;
    o.bootstrap_reps = reps;
    const auto r = sign_autocorr_by_volume(run.days, o);
    auto w = out.csv("fig1_autocorr.csv", "bin,edge_lo,edge_hi,n_events,tau,C");
    std::vector<SvgSeries> chart;
    for (std::size_t b = 0; b <= r.bins.size(); ++b) {
        const auto& c = b < r.bins.size() ? r.bins[b] : r.unconditional;
        const int bin = b < r.bins.size() ? static_cast<int>(b) : -1;
        SvgSeries s{bin >= 0 ? "bin " + std::to_string(bin) : "all", {}, {}};
        for (std::size_t t = 1; t < c.C.size(); ++t) {
            w.row(std::to_string(bin) + ',' + fmt(c.edge_lo) + ',' + fmt(c.edge_hi) + ',' + std::to_string(c.n_events) +
                  ',' + std::to_string(t) + ',' + fmt(c.C[t]));
            out.tidy(bin >= 0 ? "autocorr_bin" + std::to_string(bin) : "autocorr_all", kNaN, double(t), c.C[t], kNaN);
            s.x.push_back(double(t));
            s.y.push_back(c.C[t]);
        }
        chart.push_back(std::move(s));
        SummaryRow row{"autocorr_gamma"};
        row.bin = bin;
        row.value = c.fit.exponent;
        row.stderr_ = c.fit.stderr_;
        row.note = c.empty ? "fewer than " + std::to_string(o.min_events) + " events" : c.fit.note;
        if (bin < 0) row.diagnostic = "autocorr_gamma_all";
        out.summary(row);
    }
    w.close();
    out.chart("fig1_autocorr.svg", "sign autocorrelation by volume bin", chart, true, true);
}

void analyze_imbalance(const LoadedRun& run, const GridMoments& gm, Outputs& out, int reps) {
    const auto sc = imbalance_scaling(gm, {1, 2, 3}, reps);
    auto w = out.csv("fig2_imbalance.csv", "a,n,T,moment,stderr");
    std::vector<SvgSeries> chart;
    for (int n = 1; n <= 3; ++n) {
        for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
            const double a = gm.a_values[ai];
            const int ia = static_cast<int>(ai);
            const Vec m = imbalance_moments(gm, ia, n);
            const Vec se = point_stderr(gm.n_days, reps, 100 + 20 * n + ai, m.size(),
                                        [&](const Vec& wt) { return imbalance_moments(gm, ia, n, wt); });
            for (std::size_t t = 0; t < m.size(); ++t) {
                w.row(fmt(a) + ',' + std::to_string(n) + ',' + std::to_string(gm.T_values[t]) + ',' + fmt(m[t]) + ',' +
                      fmt(se[t]));
                out.tidy("imbalance_n" + std::to_string(n), a, gm.T_values[t], m[t], se[t]);
            }
            if (n == 1 && ai % 2 == 0) chart.push_back({a_label(a), Vec(gm.T_values.begin(), gm.T_values.end()), m});
            const auto& f = sc.fits[static_cast<std::size_t>(n - 1)][ai];
            const auto th = theory_exponents(run.cfg, a, n);
            SummaryRow row{"imbalance_exponent", a, n};
            row.value = f.exponent;
            row.stderr_ = f.stderr_;
            row.theory = th.imbalance;
            row.note = "a_c=" + fmt(th.a_c) + (f.note.empty() ? "" : "; " + f.note);
            out.summary(row);
        }
    }
    w.close();
    out.chart("fig2_imbalance.svg", "second moment of the imbalance", chart, true, true);
}

void analyze_signature(const LoadedRun& run, Outputs& out, int reps) {
    const auto sp = signature_plot(run.days, default_signature_lags(), reps);
    auto w = out.csv("fig3_signature.csv", "tau,value,stderr");
    for (std::size_t i = 0; i < sp.lags.size(); ++i) {
        w.row(std::to_string(sp.lags[i]) + ',' + fmt(sp.value[i]) + ',' + fmt(sp.stderr_[i]));
        out.tidy("signature", kNaN, sp.lags[i], sp.value[i], sp.stderr_[i]);
    }
    w.close();
    const Vec x(sp.lags.begin(), sp.lags.end());
    const auto f = fit_power_law(x, sp.value, 10, 1000);
    SummaryRow row{"signature_slope"};
    row.value = f.exponent;
    row.stderr_ = f.stderr_;
    row.theory = 0.0;
    row.note = "log-log slope over tau in [10; 1000]";
    out.summary(row);
    out.chart("fig3_signature.svg", "signature plot", {{"D(tau)/tau", x, sp.value}}, true, false);
}

void analyze_moments(const LoadedRun& run, Outputs& out, int reps) {
    const auto pm = price_moment_scaling(run.days, {1, 2, 3}, reps);
    auto w = out.csv("fig4_moments.csv", "n,T,moment,fit");
    std::vector<SvgSeries> chart;
    const Vec x(pm.T_values.begin(), pm.T_values.end());
    for (int n = 1; n <= 3; ++n) {
        const auto& m = pm.moment[static_cast<std::size_t>(n - 1)];
        const auto& f = pm.fits[static_cast<std::size_t>(n - 1)];
        for (std::size_t t = 0; t < x.size(); ++t) {
            const double fit = f.ok ? f.offset + f.prefactor * std::pow(x[t], f.exponent) : kNaN;
            w.row(std::to_string(n) + ',' + std::to_string(pm.T_values[t]) + ',' + fmt(m[t]) + ',' + fmt(fit));
            out.tidy("price_moment_n" + std::to_string(n), kNaN, x[t], m[t], kNaN);
        }
        chart.push_back({"n=" + std::to_string(n), x, m});
        SummaryRow row{"price_moment_zeta", kNaN, n};
        row.value = f.exponent;
        row.stderr_ = f.stderr_;
        row.theory = n;
        row.note = f.note;
        out.summary(row);
    }
    w.close();
    out.chart("fig4_moments.svg", "price-change moments", chart, true, true);
}

void analyze_covariance(const LoadedRun& run, const GridMoments& gm, Outputs& out, int reps) {
    const auto cs = covariance_surface(gm, reps);
    auto w = out.csv("fig5_cov.csv", "a,T,cov,stderr");
    std::vector<SvgSeries> chart;
    Vec ex;
    for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
        const double a = gm.a_values[ai];
        const int ia = static_cast<int>(ai);
        const Vec se = point_stderr(gm.n_days, reps, 200 + ai, gm.T_values.size(),
                                    [&](const Vec& wt) { return cross_moments(gm, ia, wt); });
        for (std::size_t t = 0; t < gm.T_values.size(); ++t) {
            w.row(fmt(a) + ',' + std::to_string(gm.T_values[t]) + ',' + fmt(cs.cov[ai][t]) + ',' + fmt(se[t]));
            out.tidy("covariance", a, gm.T_values[t], cs.cov[ai][t], se[t]);
        }
        const auto& f = cs.fits[ai];
        ex.push_back(f.exponent);
        const auto th = theory_exponents(run.cfg, a, 1);
        SummaryRow row{"covariance_exponent", a};
        row.value = f.exponent;
        row.stderr_ = f.stderr_;
        row.theory = th.covariance;
        row.note = (th.has_crossover ? "a_c'=" + fmt(th.a_c_prime) : th.note) + (f.note.empty() ? "" : "; " + f.note);
        out.summary(row);
    }
    w.close();
    chart.push_back({"exponent", gm.a_values, ex});
    out.chart("fig5_cov.svg", "covariance exponent vs a", chart, false, false);
}

void analyze_collapse(const ImbalanceGrid& grid, double a, Outputs& out, int reps) {
    const auto it = std::find_if(grid.a_values.begin(), grid.a_values.end(),
                                 [&](double v) { return std::abs(v - a) < 1e-12; });
    if (it == grid.a_values.end()) throw ConfigError("--collapse-a " + fmt(a) + " is not on the a grid");
    CollapseOptions o;
    o.bootstrap_reps = reps;
    const auto c = aggregated_impact(grid, static_cast<int>(it - grid.a_values.begin()), o);
    auto w = out.csv("fig6_collapse.csv", "T,x,y,count");
    std::vector<SvgSeries> chart;
    for (const auto& mc : c.master_curve) {
        for (std::size_t b = 0; b < mc.x.size(); ++b) {
            w.row(std::to_string(mc.T) + ',' + fmt(mc.x[b]) + ',' + fmt(mc.y[b]) + ',' + fmt(mc.count[b]));
            out.tidy("collapse_T" + std::to_string(mc.T), a, mc.x[b], mc.y[b], kNaN);
        }
        chart.push_back({"T=" + std::to_string(mc.T), mc.x, mc.y});
    }
    w.close();
    out.chart("fig6_collapse.svg", "aggregated impact master curves", chart, false, false);

    SummaryRow chi{"collapse_chi", a};
    chi.value = c.chi;
    chi.stderr_ = c.chi_stderr;
    chi.note = "1/mu_m=" + fmt(1.0 / 1.5);
    out.summary(chi);
    SummaryRow omega{"collapse_omega", a};
    omega.value = c.omega;
    omega.stderr_ = c.omega_stderr;
    out.summary(omega);
    SummaryRow rms{"collapse_rms_overlap", a};
    rms.value = c.rms_overlap;
    rms.note = "relative RMS spread over T in {64; 256; 1024}";
    out.summary(rms);
}

std::vector<Vec> analyze_correlation(const GridMoments& gm, Outputs& out, int reps, bool write) {
    const auto R = correlation_R(gm);
    if (!write) return R;
    auto w = out.csv("fig7_corr.csv", "a,T,R,stderr");
    std::vector<Vec> se;
    for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
        const int ia = static_cast<int>(ai);
        se.push_back(point_stderr(gm.n_days, reps, 300 + ai, gm.T_values.size(),
                                  [&](const Vec& wt) { return weighted_R(gm, ia, wt); }));
    }
    for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai)
        for (std::size_t t = 0; t < gm.T_values.size(); ++t) {
            w.row(fmt(gm.a_values[ai]) + ',' + std::to_string(gm.T_values[t]) + ',' + fmt(R[ai][t]) + ',' +
                  fmt(se[ai][t]));
            out.tidy("correlation", gm.a_values[ai], gm.T_values[t], R[ai][t], se[ai][t]);
        }
    w.close();
    std::vector<SvgSeries> chart;
    for (std::size_t t = 0; t < gm.T_values.size(); ++t) {
        SvgSeries s{"T=" + std::to_string(gm.T_values[t]), gm.a_values, {}};
        std::size_t best = 0;
        for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
            s.y.push_back(R[ai][t]);
            if (R[ai][t] > R[best][t]) best = ai;
        }
        if (t % 2 == 0) chart.push_back(std::move(s));
        SummaryRow row{"correlation_peak_a"};
        row.T = gm.T_values[t];
        row.value = gm.a_values[best];
        row.note = "R=" + fmt(R[best][t]);
        out.summary(row);
    }
    out.chart("fig7_corr.svg", "correlation R_a(T) vs a", chart, false, false);
    return R;
}

void analyze_fit(const LoadedRun& run, const GridMoments& gm, const std::vector<Vec>& R, Outputs& out) {
    auto w = out.csv("fig8_fit.csv", "mode,a,T,R,fitted");
    std::vector<SvgSeries> chart;
    for (const auto mode : {RaMode::A_only, RaMode::B_only}) {
        const auto f = fit_Ra(R, gm.a_values, gm.T_values, mode);
        const std::string name = mode == RaMode::A_only ? "A" : "B";
        for (std::size_t j = 0; j < f.T_values.size() && f.ok; ++j) {
            const int T = f.T_values[j];
            const auto ti = static_cast<std::size_t>(
                std::find(gm.T_values.begin(), gm.T_values.end(), T) - gm.T_values.begin());
            SvgSeries s{name + " T=" + std::to_string(T), {}, {}};
            for (std::size_t ai = 0; ai < gm.a_values.size(); ++ai) {
                const double a = gm.a_values[ai];
                if (a >= kRaFitMaxA) continue;
                const double g = std::exp(-0.5 * f.sigma2 * a * a);
                const double fit = f.amplitude[j] * g *
                                   (mode == RaMode::A_only ? std::exp(0.5 * f.sigma2 * a)
                                                           : std::exp(f.lambda * f.sigma2 * a * std::log(double(T))));
                w.row(name + ',' + fmt(a) + ',' + std::to_string(T) + ',' + fmt(R[ai][ti]) + ',' + fmt(fit));
                out.tidy("Ra_fit_" + name, a, T, fit, kNaN);
                s.x.push_back(a);
                s.y.push_back(fit);
            }
            if (j % 3 == 0) chart.push_back(std::move(s));
        }
        SummaryRow s2{"Ra_fit_" + name + "_sigma2"};
        s2.value = f.sigma2;
        s2.theory = run.cfg.sigma_l * run.cfg.sigma_l;
        s2.note = f.ok ? "" : f.note;
        out.summary(s2);
        if (mode == RaMode::B_only) {
            SummaryRow lam{"Ra_fit_B_lambda"};
            lam.value = f.lambda;
            lam.theory = run.cfg.lambda;
            out.summary(lam);
        }
        SummaryRow rss{"Ra_fit_" + name + "_rss"};
        rss.value = f.rss;
        out.summary(rss);
    }
    w.close();
    out.chart("fig8_fit.svg", "R_a(T) fits", chart, false, false);
}

int cmd_analyze(const AnalyzeArgs& a) {
    Stopwatch sw;
    const auto only = parse_only(a.only);
    if (a.reps < 0) throw ConfigError("--reps must be >= 0");
    const bool need_prices = only != std::set<std::string>{"autocorr"};
    const fs::path run_dir(a.run_dir);
    const auto run = load_run(run_dir, need_prices, a.jobs);
    const fs::path out_dir = a.out_dir.empty() ? run_dir : fs::path(a.out_dir);
    fs::create_directories(out_dir);
    Outputs out(out_dir, run.hash, to_string(run.cfg.scenario), a.svg);

    const bool need_grid = only.count("imbalance") || only.count("covariance") || only.count("collapse") ||
                           only.count("correlation") || only.count("fit");
    std::optional<ImbalanceGrid> grid;
    std::optional<GridMoments> gm;
    if (need_grid) {
        grid = build_imbalance_grid(run.days, default_a_grid(), default_T_grid());
        gm = grid_moments(*grid);
    }
    if (only.count("autocorr")) analyze_autocorr(run, out, a.reps);
    if (only.count("imbalance")) analyze_imbalance(run, *gm, out, a.reps);
    if (only.count("signature")) analyze_signature(run, out, a.reps);
    if (only.count("moments")) analyze_moments(run, out, a.reps);
    if (only.count("covariance")) analyze_covariance(run, *gm, out, a.reps);
    if (only.count("collapse")) analyze_collapse(*grid, a.collapse_a, out, a.reps);
    if (only.count("correlation") || only.count("fit")) {
        const auto R = analyze_correlation(*gm, out, a.reps, only.count("correlation") > 0);
        if (only.count("fit")) analyze_fit(run, *gm, R, out);
    }
    out.finish("tidy.csv", "summary.csv");
    if (fs::exists(run_dir / "manifest.json") || out_dir == run_dir) {
        std::vector<std::string> paths;
        for (const auto& f : out.written()) paths.push_back((out_dir / f).lexically_relative(run_dir).string());
        record_stage(run_dir, "analyze", sw.seconds(), paths, {{"bootstrap_reps", a.reps}});
    }
    std::cout << "analyze: " << out.written().size() << " files in " << out_dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// proxy

struct ProxyArgs {
    std::string run_dir;
    std::string out_dir;
    double C = 4.0;
    double phi_hat = kNaN;
    double mu_hat = kNaN;
    bool literal = false;
    bool svg = false;
    unsigned jobs = 1;
};

void write_curve(CsvWriter& w, const std::string& grouping, const ImpactCurve& c) {
    for (std::size_t b = 0; b < c.x.size(); ++b) {
        if (c.counts[b] == 0) continue;
        w.row(grouping + ',' + fmt(c.x[b]) + ',' + fmt(c.mean_impact[b]) + ',' + std::to_string(c.counts[b]) + ',' +
              fmt(c.stderr_[b]));
    }
}

SvgSeries curve_series(const std::string& label, const ImpactCurve& c) {
    SvgSeries s{label, {}, {}};
    for (std::size_t b = 0; b < c.x.size(); ++b) {
        if (c.counts[b] < 30) continue;
        s.x.push_back(c.x[b]);
        s.y.push_back(c.mean_impact[b]);
    }
    return s;
}

void curve_summary(Outputs& out, const std::string& name, const ImpactCurve& c) {
    SummaryRow slope{name + "_slope"};
    slope.value = c.fit.exponent;
    slope.stderr_ = c.fit.stderr_;
    slope.theory = 0.5;
    slope.note = "Q/V_D in [1e-3; 1e-1]; excluded s<2: " + std::to_string(c.excluded_small) +
                 "; excluded at day end: " + std::to_string(c.excluded_close);
    out.summary(slope);
    SummaryRow y{name + "_Y"};
    y.value = c.Y;
    y.stderr_ = c.Y_stderr;
    out.summary(y);
}

int cmd_proxy(const ProxyArgs& a) {
    Stopwatch sw;
    const fs::path run_dir(a.run_dir);
    const auto run = load_run(run_dir, true, a.jobs);
    ProxyParams p;
    p.phi_hat = std::isnan(a.phi_hat) ? run.cfg.phi : a.phi_hat;
    p.mu_hat = std::isnan(a.mu_hat) ? run.cfg.mu_m : a.mu_hat;
    p.s_max = run.cfg.s_max;
    p.C = a.C;
    p.literal_threshold = a.literal;
    if (!(p.phi_hat > 0) || !(p.mu_hat > 1) || !(p.C > 0))
        throw ConfigError("proxy needs phi_hat > 0, mu_hat > 1 and C > 0");
    if (run.cfg.lambda != 0 || run.cfg.lambda_p != 0)
        std::cerr << "warning: run has volume-dependent exponents; the reference comparison uses lambda = lambda' = 0\n";
    if (!run.has_parent) std::cerr << "notice: flow has no parent_id column; ground-truth comparison skipped\n";

    const std::size_t nd = run.days.size();
    std::vector<ImpactStats> truth(nd), proxy(nd);
    parallel_for(static_cast<int>(nd), a.jobs, [&](int i) {
        const auto& d = run.days[static_cast<std::size_t>(i)];
        if (run.has_parent) peak_impacts(d.events, d.prices, ground_truth_grouping(d.events), truth[static_cast<std::size_t>(i)]);
        peak_impacts(d.events, d.prices, proxy_grouping(d.events, p, proxy_day_seed(run.cfg.seed, d.day)),
                     proxy[static_cast<std::size_t>(i)]);
    });
    auto merge = [](std::vector<ImpactStats>& v) {
        ImpactStats all;
        for (auto& s : v) {
            all.impacts.insert(all.impacts.end(), s.impacts.begin(), s.impacts.end());
            all.excluded_small += s.excluded_small;
            all.excluded_close += s.excluded_close;
        }
        return all;
    };
    const auto pc = peak_impact_curve(merge(proxy));

    const fs::path out_dir = a.out_dir.empty() ? run_dir : fs::path(a.out_dir);
    fs::create_directories(out_dir);
    Outputs out(out_dir, run.hash, to_string(run.cfg.scenario), a.svg);
    auto w = out.csv("proxy_impact.csv", "grouping,Q_over_VD,impact_over_sigma,count,stderr");
    std::vector<SvgSeries> chart;
    if (run.has_parent) {
        const auto all_truth = merge(truth);
        const auto tc = peak_impact_curve(all_truth);
        write_curve(w, "true", tc);
        write_curve(w, "proxy", pc);
        w.close();
        curve_summary(out, "proxy_true", tc);
        curve_summary(out, "proxy_proxy", pc);
        chart.push_back(curve_series("true", tc));
        const auto cmp = compare_curves(tc, pc);
        auto r = out.csv("proxy_ratio.csv", "Q_over_VD,ratio,ratio_err");
        for (std::size_t i = 0; i < cmp.x.size(); ++i) r.row(fmt(cmp.x[i]) + ',' + fmt(cmp.ratio[i]) + ',' + fmt(cmp.ratio_err[i]));
        r.close();
        SummaryRow cx{"proxy_crossover"};
        cx.value = cmp.crossover;
        cx.theory = 1e-3;
        cx.note = cmp.has_crossover ? "first Q/V_D from which |proxy/true - 1| < 0.15 persists" : cmp.note;
        out.summary(cx);
        SummaryRow cnt{"proxy_true_metaorders"};
        cnt.value = static_cast<double>(all_truth.impacts.size());
        out.summary(cnt);
        std::cout << "crossover: "
                  << (cmp.has_crossover ? "Q/V_D = " + fmt(cmp.crossover) : std::string("none (") + cmp.note + ")")
                  << "\ntrue slope " << fmt(tc.fit.exponent) << ", proxy slope " << fmt(pc.fit.exponent) << "\n";
    } else {
        write_curve(w, "proxy", pc);
        w.close();
        curve_summary(out, "proxy_proxy", pc);
    }
    chart.push_back(curve_series("proxy", pc));
    out.chart("fig9_proxy.svg", "peak impact vs Q/V_D", chart, true, true);
    out.finish("", "proxy_summary.csv");
    std::vector<std::string> paths;
    for (const auto& f : out.written()) paths.push_back((out_dir / f).lexically_relative(run_dir).string());
    record_stage(run_dir, "proxy", sw.seconds(), paths,
                 {{"C", p.C}, {"phi_hat", p.phi_hat}, {"mu_hat", p.mu_hat}, {"literal_threshold", p.literal_threshold}});
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
    ConfigArgs config;
    std::string out_dir;
    bool anonymize = false;
    unsigned jobs = 1;
};

int cmd_simulate(const SimulateArgs& a) {
    const auto cfg = resolve_config(a.config);
    const std::string hash = config_hash(cfg);
    const fs::path dir = a.out_dir.empty()
                             ? output_root() / (to_string(cfg.scenario) + "_seed" + std::to_string(cfg.seed))
                             : fs::path(a.out_dir);
    // Fail on an unwritable destination before any compute.
    try {
        fs::create_directories(dir / "flow");
        fs::create_directories(dir / "price");
        write_text_file((dir / "config.txt").string(), serialize(cfg));
    } catch (const std::exception& e) {
        throw ConfigError("cannot write to output directory " + dir.string() + ": " + e.what());
    }
    Stopwatch sw;
    parallel_for(cfg.n_days, a.jobs, [&](int d) {
        const auto rec = simulate_day(cfg, d, true);
        write_flow_csv((dir / "flow" / day_file(d)).string(), rec.events, hash, !a.anonymize);
        Vec t;
        t.reserve(rec.events.size());
        for (const auto& e : rec.events) t.push_back(e.timestamp);
        write_price_csv((dir / "price" / day_file(d)).string(), t, rec.prices, hash);
    });

    json m;
    m["code_version"] = kCodeVersion;
    m["scenario"] = to_string(cfg.scenario);
    m["seed"] = cfg.seed;
    m["n_days"] = cfg.n_days;
    m["config_hash"] = hash;
    m["config"] = config_json(cfg);
    m["anonymized"] = a.anonymize;
    json seeds = json::array(), outputs = json::array({"config.txt"});
    for (int d = 0; d < cfg.n_days; ++d) {
        seeds.push_back(day_seed(cfg.seed, d));
        outputs.push_back("flow/" + day_file(d));
        outputs.push_back("price/" + day_file(d));
    }
    m["day_seeds"] = seeds;
    m["outputs"] = outputs;
    m["stages"]["simulate"] = {{"seconds", sw.seconds()}, {"jobs", a.jobs}};
    write_json(dir / "manifest.json", m);
    std::cout << "simulate: " << cfg.n_days << " day(s) of " << to_string(cfg.scenario) << " in " << dir.string()
              << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::vector<std::string>& dirs_in, const std::string& out_path) {
    std::vector<fs::path> dirs(dirs_in.begin(), dirs_in.end());
    if (dirs.empty()) {
        const auto root = output_root();
        if (fs::is_directory(root))
            for (const auto& e : fs::directory_iterator(root))
                if (e.is_directory()) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
    }
    std::string text = std::string("run,") + kSummaryHeader + "\n";
    int found = 0;
    for (const auto& d : dirs) {
        for (const char* name : {"summary.csv", "proxy_summary.csv"}) {
            const auto p = d / name;
            if (!fs::exists(p)) continue;
            ++found;
            std::istringstream in(read_text_file(p.string()));
            std::string line;
            bool header = true;
            while (std::getline(in, line)) {
                if (line.empty() || line[0] == '#') continue;
                if (header) {
                    header = false;
                    continue;
                }
                text += d.filename().string() + ',' + line + '\n';
            }
        }
    }
    if (found == 0) throw ConfigError("report: no summary files found");
    if (out_path.empty()) std::cout << text;
    else write_text_file(out_path, text);
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string svg_chart(const std::string& title, const std::vector<SvgSeries>& series, bool log_x, bool log_y) {
    const double W = 640, H = 420, L = 70, R = 150, Tm = 40, B = 50;
    auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
    auto usable = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!log_x || x > 0) && (!log_y || y > 0);
    };
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    if (!(x1 >= x0)) x0 = 0, x1 = 1;
    if (!(y1 >= y0)) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - Tm - B); };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) o += c == '<' ? "&lt;" : c == '>' ? "&gt;" : c == '&' ? "&amp;" : std::string(1, c);
        return o;
    };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.3g", v);
        return std::string(b);
    };
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << L << "\" y=\"22\" font-size=\"14\">" << esc(title) << "</text>\n";
    o << "<rect x=\"" << L << "\" y=\"" << Tm << "\" width=\"" << W - L - R << "\" height=\"" << H - Tm - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    const auto xl = [&](double v) { return log_x ? "1e" + num(v) : num(v); };
    const auto yl = [&](double v) { return log_y ? "1e" + num(v) : num(v); };
    o << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\">" << xl(x0) << "</text>\n";
    o << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"end\">" << xl(x1) << "</text>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\">" << yl(y0) << "</text>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << Tm + 10 << "\" text-anchor=\"end\">" << yl(y1) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* col = palette[k % 10];
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (usable(s.x[i], s.y[i])) o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << W - R + 10 << "\" y=\"" << Tm + 14 * (k + 1) << "\" fill=\"" << col << "\">"
          << esc(s.label) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Simulate metaorder order flow, reconstruct prices and analyze scaling laws."};
    app.require_subcommand(1);
    unsigned jobs = 1;
    app.add_option("-j,--jobs", jobs, "worker threads for day-level parallelism")->check(CLI::PositiveNumber);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "simulate days of order flow and prices");
    s->add_option("--preset", sim.config.preset, "scenario preset (NC-NVD-NVF, NC-NVD-VF, NC-VD-VF, C-NVD-VF, C-VD-VF)");
    s->add_option("--config", sim.config.config_file, "flat key = value config file");
    s->add_option("--set", sim.config.sets, "override one config field, key=value (repeatable)");
    std::uint64_t seed = 0;
    auto* seed_opt = s->add_option("--seed", seed, "run seed");
    s->add_option("--days", sim.config.days, "number of days")->check(CLI::PositiveNumber);
    s->add_option("--events", sim.config.target_events, "target child orders per day when calibrating day_length")
        ->check(CLI::PositiveNumber);
    s->add_option("-o,--out", sim.out_dir, std::string("output directory (default: $") + kOutputRootEnv +
                                                "/<scenario>_seed<seed>, root defaults to ./runs)");
    s->add_flag("--anonymize", sim.anonymize, "omit the parent_id column from flow files");

    AnalyzeArgs an;
    auto* a = app.add_subcommand("analyze", "compute diagnostics and figure data for a run");
    a->add_option("run_dir", an.run_dir, "run directory written by simulate")->required();
    a->add_option("-o,--out", an.out_dir, "output directory (default: the run directory)");
    a->add_option("--only", an.only, "comma-separated subset of: autocorr,imbalance,signature,moments,covariance,"
                                     "collapse,correlation,fit");
    a->add_option("--reps", an.reps, "bootstrap replicates over days");
    a->add_option("--collapse-a", an.collapse_a, "imbalance exponent a used for the collapse");
    a->add_flag("--svg", an.svg, "also write SVG line charts");

    ProxyArgs px;
    auto* p = app.add_subcommand("proxy", "group anonymous flow into proxy metaorders and compare impact curves");
    p->add_option("run_dir", px.run_dir, "run directory written by simulate")->required();
    p->add_option("-o,--out", px.out_dir, "output directory (default: the run directory)");
    p->add_option("--C", px.C, "threshold constant: threshold = C / phi_hat");
    p->add_option("--phi-hat", px.phi_hat, "child rate used by the proxy (default: the run's phi)");
    p->add_option("--mu-hat", px.mu_hat, "size exponent used by the proxy (default: the run's mu_m)");
    p->add_flag("--literal-threshold", px.literal, "use threshold = C time units");
    p->add_flag("--svg", px.svg, "also write an SVG chart");

    std::vector<std::string> report_dirs;
    std::string report_out;
    auto* r = app.add_subcommand("report", "concatenate summaries of several runs");
    r->add_option("dirs", report_dirs, "run or analysis directories (default: every run under the output root)");
    r->add_option("-o,--out", report_out, "write to a file instead of stdout");

    std::vector<std::string> argv_s = {"metaflow"};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& x : argv_s) argv.push_back(x.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (s->parsed()) {
            if (*seed_opt) sim.config.seed = seed;
            sim.jobs = jobs;
            return cmd_simulate(sim);
        }
        if (a->parsed()) {
            an.jobs = jobs;
            return cmd_analyze(an);
        }
        if (p->parsed()) {
            px.jobs = jobs;
            return cmd_proxy(px);
        }
        return cmd_report(report_dirs, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace metaflow

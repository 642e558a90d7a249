#include "metaflow/io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace metaflow {

namespace {

constexpr char kCacheMagic[8] = {'M', 'F', 'D', 'A', 'Y', '0', '0', '1'};

std::FILE* open_or_throw(const std::string& path, const char* mode) {
    std::FILE* f = std::fopen(path.c_str(), mode);
    if (!f) throw IoError("cannot open " + path);
    return f;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double to_double(const std::string& s, const std::string& path) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0;
    const auto* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) throw IoError(path + ": bad number '" + s + "'");
    return v;
}

// Yields data lines, skipping "#" comments; the first data line is the header.
template <class F>
void for_each_line(const std::string& path, F&& f) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        f(line);
    }
}

template <class T>
void put(std::FILE* f, const T* data, std::size_t n) {
    if (n && std::fwrite(data, sizeof(T), n, f) != n) throw IoError("short write");
}

template <class T>
bool get(std::FILE* f, T* data, std::size_t n) {
    return n == 0 || std::fread(data, sizeof(T), n, f) == n;
}

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::string& hash, const std::string& header)
    : f_(open_or_throw(path, "wb")), path_(path) {
    std::fprintf(f_, "# config_hash=%s\n%s\n", hash.c_str(), header.c_str());
}

CsvWriter::~CsvWriter() {
    if (f_) std::fclose(f_);
}

void CsvWriter::row(const std::string& line) {
    std::fputs(line.c_str(), f_);
    std::fputc('\n', f_);
}

void CsvWriter::close() {
    if (f_ && std::fclose(f_) != 0) {
        f_ = nullptr;
        throw IoError("error writing " + path_);
    }
    f_ = nullptr;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_flow_csv(const std::string& path, const std::vector<ChildOrderEvent>& events,
                    const std::string& hash, bool with_parent) {
    CsvWriter w(path, hash,
                with_parent ? "timestamp,volume,sign,rank,parent_id,beta_q" : "timestamp,volume,sign,rank,beta_q");
    char buf[64];
    for (const auto& e : events) {
        std::string line;
        std::snprintf(buf, sizeof buf, "%.6f,", e.timestamp);
        line += buf;
        line += fmt(e.volume) + ',' + std::to_string(e.sign) + ',' + std::to_string(e.rank) + ',';
        if (with_parent) {
            std::snprintf(buf, sizeof buf, "%.6f,", e.parent_id);
            line += buf;
        }
        line += fmt(e.beta_q);
        w.row(line);
    }
    w.close();
}

std::vector<ChildOrderEvent> read_flow_csv(const std::string& path, bool* has_parent) {
    std::vector<ChildOrderEvent> out;
    int cols = 0;
    int i_time = -1, i_vol = -1, i_sign = -1, i_rank = -1, i_parent = -1, i_beta = -1;
    for_each_line(path, [&](const std::string& line) {
        auto f = split(line, ',');
        if (cols == 0) {
            cols = static_cast<int>(f.size());
            for (int i = 0; i < cols; ++i) {
                const auto& h = f[static_cast<std::size_t>(i)];
                if (h == "timestamp") i_time = i;
                else if (h == "volume") i_vol = i;
                else if (h == "sign") i_sign = i;
                else if (h == "rank") i_rank = i;
                else if (h == "parent_id") i_parent = i;
                else if (h == "beta_q") i_beta = i;
            }
            if (i_time < 0 || i_vol < 0 || i_sign < 0) throw IoError(path + ": missing flow columns");
            return;
        }
        if (static_cast<int>(f.size()) != cols) throw IoError(path + ": ragged row");
        ChildOrderEvent e;
        e.timestamp = to_double(f[static_cast<std::size_t>(i_time)], path);
        e.volume = to_double(f[static_cast<std::size_t>(i_vol)], path);
        e.sign = static_cast<int>(to_double(f[static_cast<std::size_t>(i_sign)], path));
        e.rank = i_rank >= 0 ? static_cast<int>(to_double(f[static_cast<std::size_t>(i_rank)], path)) : 0;
        e.parent_id = i_parent >= 0 ? to_double(f[static_cast<std::size_t>(i_parent)], path)
                                    : std::numeric_limits<double>::quiet_NaN();
        e.beta_q = i_beta >= 0 ? to_double(f[static_cast<std::size_t>(i_beta)], path) : 0.0;
        out.push_back(e);
    });
    if (has_parent) *has_parent = i_parent >= 0;
    return out;
}

void write_price_csv(const std::string& path, const std::vector<double>& times,
                     const std::vector<double>& prices, const std::string& hash) {
    CsvWriter w(path, hash, "timestamp,price");
    char buf[96];
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.6f,", times[k]);
        w.row(buf + fmt(prices[k]));
    }
    w.close();
}

void read_price_csv(const std::string& path, std::vector<double>& times, std::vector<double>& prices) {
    times.clear();
    prices.clear();
    bool header = true;
    for_each_line(path, [&](const std::string& line) {
        if (header) {
            header = false;
            return;
        }
        const auto f = split(line, ',');
        if (f.size() != 2) throw IoError(path + ": expected timestamp,price");
        times.push_back(to_double(f[0], path));
        prices.push_back(to_double(f[1], path));
    });
}

std::string read_csv_hash(const std::string& path) {
    std::ifstream in(path);
    std::string line;
    if (!in || !std::getline(in, line)) return "";
    const std::string key = "# config_hash=";
    return line.rfind(key, 0) == 0 ? line.substr(key.size()) : "";
}

void write_day_cache(const std::string& path, const std::string& hash,
                     const std::vector<ChildOrderEvent>& events, const std::vector<double>& prices) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = open_or_throw(tmp, "wb");
    try {
        put(f, kCacheMagic, sizeof kCacheMagic);
        const std::uint64_t hlen = hash.size(), n = events.size(), np = prices.size();
        put(f, &hlen, 1);
        put(f, hash.data(), hash.size());
        put(f, &n, 1);
        put(f, &np, 1);
        for (const auto& e : events) {
            const double d[4] = {e.timestamp, e.volume, e.parent_id, e.beta_q};
            const std::int32_t i[3] = {e.sign, e.rank, e.parent};
            put(f, d, 4);
            put(f, i, 3);
        }
        put(f, prices.data(), prices.size());
    } catch (...) {
        std::fclose(f);
        std::remove(tmp.c_str());
        throw;
    }
    if (std::fclose(f) != 0 || std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("error writing " + path);
    }
}

bool read_day_cache(const std::string& path, const std::string& hash,
                    std::vector<ChildOrderEvent>& events, std::vector<double>& prices) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return false;
    bool ok = false;
    char magic[sizeof kCacheMagic];
    std::uint64_t hlen = 0, n = 0, np = 0;
    if (get(f, magic, sizeof magic) && std::memcmp(magic, kCacheMagic, sizeof magic) == 0 && get(f, &hlen, 1) &&
        hlen < 256) {
        std::string h(hlen, '\0');
        if (get(f, h.data(), hlen) && h == hash && get(f, &n, 1) && get(f, &np, 1) && n < (1ull << 32) &&
            np <= n) {
            events.resize(n);
            prices.resize(np);
            ok = true;
            for (auto& e : events) {
                double d[4];
                std::int32_t i[3];
                if (!get(f, d, 4) || !get(f, i, 3)) {
                    ok = false;
                    break;
                }
                e = ChildOrderEvent{d[0], d[1], i[0], i[1], d[2], d[3], i[2]};
            }
            ok = ok && get(f, prices.data(), np) && std::fgetc(f) == EOF;
        }
    }
    std::fclose(f);
    return ok;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = open_or_throw(path, "wb");
    put(f, text.data(), text.size());
    if (std::fclose(f) != 0) throw IoError("error writing " + path);
}

}  // namespace metaflow

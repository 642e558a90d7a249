#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "metaflow/config.hpp"
#include "metaflow/flowgen.hpp"

namespace metaflow {

/// Thrown when a file cannot be opened, written or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Line-oriented CSV writer. The first line is always "# config_hash=<hash>".
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& hash, const std::string& header);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::string& line);
    void close();

private:
    std::FILE* f_ = nullptr;
    std::string path_;
};

/// Shortest round-trip decimal form of a double ("nan" for NaN).
std::string fmt(double v);

void write_flow_csv(const std::string& path, const std::vector<ChildOrderEvent>& events,
                    const std::string& hash, bool with_parent = true);
/// Reads flows written with or without the parent_id column. Without it,
/// parent_id is NaN and has_parent is set to false.
std::vector<ChildOrderEvent> read_flow_csv(const std::string& path, bool* has_parent = nullptr);

void write_price_csv(const std::string& path, const std::vector<double>& times,
                     const std::vector<double>& prices, const std::string& hash);
void read_price_csv(const std::string& path, std::vector<double>& times, std::vector<double>& prices);

/// Hash recorded in the comment header of a CSV, or "" if absent.
std::string read_csv_hash(const std::string& path);

/// Binary per-day cache of (events, prices). Returns false if the file is
/// missing, truncated or was written for a different config hash.
void write_day_cache(const std::string& path, const std::string& hash,
                     const std::vector<ChildOrderEvent>& events, const std::vector<double>& prices);
bool read_day_cache(const std::string& path, const std::string& hash,
                    std::vector<ChildOrderEvent>& events, std::vector<double>& prices);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace metaflow

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "k2abc/abc.hpp"
#include "k2abc/common.hpp"

namespace k2abc {

/// Raised for malformed input files and bad configuration; the CLI maps
/// this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_cell(const std::string& cell, const std::string& path, std::size_t line_no) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
    double value;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell +
                          "'");
    return value;
}

}  // namespace detail

/// Reads a CSV of uniform-width numeric rows: one observation per row,
/// columns are coordinates. Time series are single-column files.
inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_dataset: cannot open '" + path + "'");

    std::vector<double> values;
    std::size_t dim = 0;
    std::size_t line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::stringstream row(line);
        std::string cell;
        std::size_t cols = 0;
        while (std::getline(row, cell, ',')) {
            values.push_back(detail::parse_cell(cell, path, line_no));
            ++cols;
        }
        if (dim == 0)
            dim = cols;
        else if (cols != dim)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(dim) + " columns, got " + std::to_string(cols));
    }
    if (dim == 0) throw ConfigError(path + ":1: empty dataset file");
    return Dataset(dim, std::move(values));
}

inline void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot write '" + path + "'");
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto row = data.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out << ',';
            out << detail::format_double(row[k]);
        }
        out << '\n';
    }
}

/// Posterior CSV: header theta1..thetad,weight, then one row per sample.
inline void save_posterior(const std::string& path, const WeightedPosterior& p) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_posterior: cannot write '" + path + "'");
    std::size_t d = p.params.empty() ? 0 : p.params.front().size();
    for (std::size_t k = 0; k < d; ++k) out << "theta" << (k + 1) << ',';
    out << "weight\n";
    for (std::size_t i = 0; i < p.params.size(); ++i) {
        for (double v : p.params[i]) out << detail::format_double(v) << ',';
        out << detail::format_double(p.weights[i]) << '\n';
    }
}

inline WeightedPosterior load_posterior(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_posterior: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw ConfigError(path + ":1: empty posterior file");

    WeightedPosterior p;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<double> cells;
        while (std::getline(row, cell, ','))
            cells.push_back(detail::parse_cell(cell, path, line_no));
        if (cells.size() < 2)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": need parameters + weight");
        p.weights.push_back(cells.back());
        cells.pop_back();
        p.params.push_back(std::move(cells));
    }
    if (p.params.empty()) throw ConfigError(path + ":2: posterior has no samples");
    return p;
}

}  // namespace k2abc

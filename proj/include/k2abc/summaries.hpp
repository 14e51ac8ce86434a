#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "k2abc/common.hpp"

namespace k2abc {

/// Maps a dataset to a fixed-length statistic vector.
using SummaryFn = std::function<std::vector<double>(const Dataset&)>;

/// (sample mean, unbiased sample variance), computed two-pass.
inline std::vector<double> mean_var_stats(const Dataset& y) {
    if (y.dim() != 1) throw std::invalid_argument("mean_var_stats: expects scalar observations");
    std::size_t n = y.size();
    if (n < 2) throw std::invalid_argument("mean_var_stats: need at least 2 observations");
    CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) s.add(y.scalar(i));
    double mean = s.value() / static_cast<double>(n);
    CompensatedSum sq;
    for (std::size_t i = 0; i < n; ++i) {
        double d = y.scalar(i) - mean;
        sq.add(d * d);
    }
    return {mean, sq.value() / static_cast<double>(n - 1)};
}

/// Settings for the 10 hand-crafted population-series statistics. The
/// smoothing window and the two peak thresholds are not pinned down by any
/// published source; these defaults ship in the experiment config and are
/// echoed in every run report.
struct BlowflyStatsConfig {
    int smoothing_window = 5;        // centered moving average, odd
    double threshold1_factor = 0.5;  // relative to the raw-series mean...
    double threshold2_factor = 1.0;
    std::optional<double> threshold1_abs;  // ...unless absolute values are given
    std::optional<double> threshold2_abs;
    double log_floor = 1e-8;  // replaces nonpositive quartile means before log

    void validate() const {
        if (smoothing_window < 1 || smoothing_window % 2 == 0)
            throw std::invalid_argument("BlowflyStatsConfig: smoothing window must be odd and >= 1");
        if (!(log_floor > 0.0))
            throw std::invalid_argument("BlowflyStatsConfig: log floor must be positive");
    }
};

namespace detail {

// Means of the four equal-count groups of the sorted values; group i covers
// sorted indices [floor(i*n/4), floor((i+1)*n/4)).
inline std::array<double, 4> quartile_segment_means(std::vector<double> values, const char* what) {
    std::size_t n = values.size();
    std::sort(values.begin(), values.end());
    std::array<double, 4> means{};
    for (std::size_t g = 0; g < 4; ++g) {
        std::size_t lo = g * n / 4;
        std::size_t hi = (g + 1) * n / 4;
        if (hi <= lo)
            throw std::invalid_argument(std::string("blowfly_stats: ") + what +
                                        " series too short for quartile segments");
        CompensatedSum s;
        for (std::size_t i = lo; i < hi; ++i) s.add(values[i]);
        means[g] = s.value() / static_cast<double>(hi - lo);
    }
    return means;
}

inline std::vector<double> moving_average(const std::vector<double>& v, int window) {
    int half = window / 2;
    int n = static_cast<int>(v.size());
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i) {
        int lo = std::max(0, i - half);
        int hi = std::min(n - 1, i + half);
        double s = 0.0;
        for (int j = lo; j <= hi; ++j) s += v[j];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

inline int count_peaks_above(const std::vector<double>& smoothed, double threshold) {
    int count = 0;
    for (std::size_t i = 1; i + 1 < smoothed.size(); ++i)
        if (smoothed[i] > smoothed[i - 1] && smoothed[i] > smoothed[i + 1] &&
            smoothed[i] > threshold)
            ++count;
    return count;
}

}  // namespace detail

/// The 10 custom statistics of a population time series N_1..N_T:
/// 1-4  log of the mean of each quartile segment of sorted N_t/1000,
/// 5-8  quartile-segment means of the first differences, scaled by 1/1000,
/// 9-10 counts of strict local maxima of the smoothed series above the two
///      thresholds.
inline std::vector<double> blowfly_stats(const Dataset& y, const BlowflyStatsConfig& cfg = {}) {
    cfg.validate();
    if (y.dim() != 1) throw std::invalid_argument("blowfly_stats: expects a scalar time series");
    std::size_t T = y.size();
    if (T < 5) throw std::invalid_argument("blowfly_stats: series length must be >= 5");

    std::vector<double> scaled(T);
    for (std::size_t t = 0; t < T; ++t) scaled[t] = y.scalar(t) / 1000.0;

    std::vector<double> diffs(T - 1);
    for (std::size_t t = 0; t + 1 < T; ++t) diffs[t] = scaled[t + 1] - scaled[t];

    std::array<double, 4> level_means = detail::quartile_segment_means(scaled, "level");
    std::array<double, 4> diff_means = detail::quartile_segment_means(diffs, "difference");

    std::vector<double> raw(y.values());
    std::vector<double> smoothed = detail::moving_average(raw, cfg.smoothing_window);
    double series_mean = 0.0;
    for (double v : raw) series_mean += v;
    series_mean /= static_cast<double>(T);
    double thr1 = cfg.threshold1_abs.value_or(cfg.threshold1_factor * series_mean);
    double thr2 = cfg.threshold2_abs.value_or(cfg.threshold2_factor * series_mean);

    std::vector<double> stats(10);
    for (std::size_t g = 0; g < 4; ++g)
        stats[g] = std::log(level_means[g] > 0.0 ? level_means[g] : cfg.log_floor);
    for (std::size_t g = 0; g < 4; ++g) stats[4 + g] = diff_means[g];
    stats[8] = static_cast<double>(detail::count_peaks_above(smoothed, thr1));
    stats[9] = static_cast<double>(detail::count_peaks_above(smoothed, thr2));
    return stats;
}

/// Concatenation (y_1..y_T, y_1^2..y_T^2).
inline std::vector<double> raw_quadratic_stats(const Dataset& y) {
    if (y.dim() != 1)
        throw std::invalid_argument("raw_quadratic_stats: expects a scalar time series");
    std::size_t T = y.size();
    std::vector<double> out(2 * T);
    for (std::size_t t = 0; t < T; ++t) {
        out[t] = y.scalar(t);
        out[T + t] = y.scalar(t) * y.scalar(t);
    }
    return out;
}

/// Euclidean distance between the proportion histograms of two scalar
/// datasets, binned over the min..max of their union with equal widths.
/// A degenerate shared range (all values identical) scores 0.
inline double histogram_distance(const Dataset& a, const Dataset& b, std::size_t bins) {
    if (bins < 1) throw std::invalid_argument("histogram_distance: bins must be >= 1");
    if (a.empty() || b.empty()) throw std::invalid_argument("histogram_distance: empty dataset");
    if (a.dim() != 1 || b.dim() != 1)
        throw std::invalid_argument("histogram_distance: expects scalar datasets");

    double lo = kInf, hi = -kInf;
    for (std::size_t i = 0; i < a.size(); ++i) {
        lo = std::min(lo, a.scalar(i));
        hi = std::max(hi, a.scalar(i));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        lo = std::min(lo, b.scalar(i));
        hi = std::max(hi, b.scalar(i));
    }
    if (!(hi > lo)) return 0.0;

    auto histogram = [&](const Dataset& d) {
        std::vector<double> h(bins, 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) {
            double frac = (d.scalar(i) - lo) / (hi - lo);
            std::size_t bin = std::min(bins - 1, static_cast<std::size_t>(frac * static_cast<double>(bins)));
            h[bin] += 1.0;
        }
        for (double& v : h) v /= static_cast<double>(d.size());
        return h;
    };

    std::vector<double> ha = histogram(a), hb = histogram(b);
    double s = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
        double d = ha[k] - hb[k];
        s += d * d;
    }
    return std::sqrt(s);
}

/// Named statistic menu for config files.
enum class SummaryVariant { mean_var, blowfly10, raw_quadratic };

struct SummarySpec {
    SummaryVariant variant = SummaryVariant::mean_var;
    BlowflyStatsConfig blowfly;

    SummaryFn make() const {
        switch (variant) {
            case SummaryVariant::mean_var:
                return [](const Dataset& y) { return mean_var_stats(y); };
            case SummaryVariant::blowfly10:
                return [cfg = blowfly](const Dataset& y) { return blowfly_stats(y, cfg); };
            case SummaryVariant::raw_quadratic:
                return [](const Dataset& y) { return raw_quadratic_stats(y); };
        }
        throw std::logic_error("SummarySpec: unreachable");
    }
};

}  // namespace k2abc

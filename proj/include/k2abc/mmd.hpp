#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "k2abc/common.hpp"
#include "k2abc/kernels.hpp"

namespace k2abc {

namespace detail {

// (1/(n(n-1))) sum_{i != j} k(y_i, y_j), accumulated i<j and doubled.
inline double mmd_self_term(const Dataset& y, const KernelConfig& cfg) {
    std::size_t n = y.size();
    CompensatedSum acc;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) acc.add(gaussian_kernel(y.row(i), y.row(j), cfg));
    return 2.0 * acc.value() / (static_cast<double>(n) * static_cast<double>(n - 1));
}

// (1/(nx ny)) sum_{i,j} k(x_i, y_j)
inline double mmd_cross_term(const Dataset& x, const Dataset& y, const KernelConfig& cfg) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) acc.add(gaussian_kernel(x.row(i), y.row(j), cfg));
    return acc.value() / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

inline std::vector<double> mean_rff_features(const Dataset& x, const RffFeatureMap& map) {
    std::vector<CompensatedSum> acc(map.num_features);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> phi = rff_features(x.row(i), map);
        for (std::size_t j = 0; j < map.num_features; ++j) acc[j].add(phi[j]);
    }
    std::vector<double> mean(map.num_features);
    for (std::size_t j = 0; j < map.num_features; ++j)
        mean[j] = acc[j].value() / static_cast<double>(x.size());
    return mean;
}

inline void require_two_each(const Dataset& x, const Dataset& y, const char* where) {
    if (x.size() < 2 || y.size() < 2)
        throw std::invalid_argument(std::string(where) + ": each dataset needs >= 2 observations");
    require_same_dim(x, y, where);
}

}  // namespace detail

/// Unbiased quadratic-time estimator of squared MMD. May be negative.
inline double mmd2_unbiased(const Dataset& x, const Dataset& y, const KernelConfig& cfg) {
    detail::require_two_each(x, y, "mmd2_unbiased");
    return (detail::mmd_self_term(x, cfg) + detail::mmd_self_term(y, cfg)) -
           2.0 * detail::mmd_cross_term(x, y, cfg);
}

/// Unbiased linear-time estimator: consecutive-pair self terms plus a
/// cross term that pairs x_i with y_i, cycling through the smaller
/// dataset. Arguments are relabelled so the smaller one plays x (ties keep
/// the given order); cross pairing follows dataset order, so callers
/// wanting exchangeability shuffle first.
inline double mmd2_linear(const Dataset& x_in, const Dataset& y_in, const KernelConfig& cfg) {
    detail::require_two_each(x_in, y_in, "mmd2_linear");
    const Dataset& x = (x_in.size() <= y_in.size()) ? x_in : y_in;
    const Dataset& y = (x_in.size() <= y_in.size()) ? y_in : x_in;
    std::size_t nx = x.size(), ny = y.size();

    CompensatedSum self_x;
    for (std::size_t i = 0; i + 1 < nx; ++i)
        self_x.add(gaussian_kernel(x.row(i), x.row(i + 1), cfg));
    CompensatedSum self_y;
    for (std::size_t i = 0; i + 1 < ny; ++i)
        self_y.add(gaussian_kernel(y.row(i), y.row(i + 1), cfg));
    CompensatedSum cross;
    for (std::size_t i = 0; i < ny; ++i)
        cross.add(gaussian_kernel(x.row(i % nx), y.row(i), cfg));

    return (self_x.value() / static_cast<double>(nx - 1) +
            self_y.value() / static_cast<double>(ny - 1)) -
           2.0 * cross.value() / static_cast<double>(ny);
}

/// Biased random-feature estimator: squared distance between mean feature
/// vectors. Always >= 0; zero exactly when the datasets are identical.
inline double mmd2_rff(const Dataset& x, const Dataset& y, const RffFeatureMap& map) {
    if (x.empty() || y.empty()) throw std::invalid_argument("mmd2_rff: empty dataset");
    require_same_dim(x, y, "mmd2_rff");
    std::vector<double> mx = detail::mean_rff_features(x, map);
    std::vector<double> my = detail::mean_rff_features(y, map);
    double s = 0.0;
    for (std::size_t j = 0; j < map.num_features; ++j) {
        double d = mx[j] - my[j];
        s += d * d;
    }
    return s;
}

/// Similarity kernel on distributions: exp(-mmd2 / epsilon). Negative
/// inputs from the unbiased estimator pass through unclamped; downstream
/// weight normalization absorbs values above 1.
inline double kappa_epsilon(double mmd2, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("kappa_epsilon: epsilon must be positive");
    return std::exp(-mmd2 / epsilon);
}

enum class MmdVariant { quadratic_unbiased, linear_cyclic, random_features };

struct MmdEstimatorChoice {
    MmdVariant variant = MmdVariant::quadratic_unbiased;
    std::optional<RffFeatureMap> rff_map;  // present exactly when variant == random_features

    void validate() const {
        bool need_map = variant == MmdVariant::random_features;
        if (need_map != rff_map.has_value())
            throw std::invalid_argument(
                "MmdEstimatorChoice: rff_map must be present exactly when variant is "
                "random_features");
        if (rff_map) rff_map->validate();
    }
};

inline double mmd2(const Dataset& x, const Dataset& y, const KernelConfig& cfg,
                   const MmdEstimatorChoice& choice) {
    choice.validate();
    switch (choice.variant) {
        case MmdVariant::quadratic_unbiased: return mmd2_unbiased(x, y, cfg);
        case MmdVariant::linear_cyclic: return mmd2_linear(x, y, cfg);
        case MmdVariant::random_features: return mmd2_rff(x, y, *choice.rff_map);
    }
    throw std::logic_error("mmd2: unreachable");
}

/// Repeated-query form of mmd2 against one fixed dataset. Precomputes the
/// observed-side self term (quadratic) or mean features (rff) once;
/// score(x) matches the corresponding free function bit for bit.
class MmdScorer {
public:
    MmdScorer(const Dataset& observed, const KernelConfig& cfg, MmdEstimatorChoice choice)
        : observed_(observed), cfg_(cfg), choice_(std::move(choice)) {
        choice_.validate();
        cfg_.validate();
        if (choice_.variant == MmdVariant::quadratic_unbiased) {
            if (observed_.size() < 2)
                throw std::invalid_argument("MmdScorer: observed dataset needs >= 2 observations");
            observed_self_ = detail::mmd_self_term(observed_, cfg_);
        } else if (choice_.variant == MmdVariant::random_features) {
            if (observed_.empty()) throw std::invalid_argument("MmdScorer: observed dataset empty");
            observed_mean_phi_ = detail::mean_rff_features(observed_, *choice_.rff_map);
        }
    }

    double score(const Dataset& x) const {
        switch (choice_.variant) {
            case MmdVariant::quadratic_unbiased: {
                detail::require_two_each(x, observed_, "mmd2_unbiased");
                return (detail::mmd_self_term(x, cfg_) + observed_self_) -
                       2.0 * detail::mmd_cross_term(x, observed_, cfg_);
            }
            case MmdVariant::linear_cyclic: return mmd2_linear(x, observed_, cfg_);
            case MmdVariant::random_features: {
                if (x.empty()) throw std::invalid_argument("mmd2_rff: empty dataset");
                require_same_dim(x, observed_, "mmd2_rff");
                std::vector<double> mx = detail::mean_rff_features(x, *choice_.rff_map);
                double s = 0.0;
                for (std::size_t j = 0; j < mx.size(); ++j) {
                    double d = mx[j] - observed_mean_phi_[j];
                    s += d * d;
                }
                return s;
            }
        }
        throw std::logic_error("MmdScorer: unreachable");
    }

    const Dataset& observed() const { return observed_; }
    const KernelConfig& kernel() const { return cfg_; }

private:
    Dataset observed_;
    KernelConfig cfg_;
    MmdEstimatorChoice choice_;
    double observed_self_ = 0.0;
    std::vector<double> observed_mean_phi_;
};

}  // namespace k2abc

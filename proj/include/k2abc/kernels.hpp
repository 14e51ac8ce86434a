#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "k2abc/common.hpp"
#include "k2abc/random.hpp"

namespace k2abc {

/// Gaussian RBF bandwidth. k(a, b) = exp(-||a - b||^2 / (2 gamma^2)).
struct KernelConfig {
    double gamma = 1.0;

    void validate() const {
        if (!(gamma > 0.0) || !std::isfinite(gamma))
            throw std::invalid_argument("KernelConfig: gamma must be positive and finite");
    }
};

inline double gaussian_kernel(std::span<const double> a, std::span<const double> b,
                              const KernelConfig& cfg) {
    if (a.size() != b.size())
        throw std::invalid_argument("gaussian_kernel: dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                    ")");
    cfg.validate();
    return std::exp(-squared_distance(a, b) / (2.0 * cfg.gamma * cfg.gamma));
}

/// Median of all pairwise Euclidean distances ||y_i - y_j||, i < j. Zero
/// distances from duplicate points stay in the pool, but an all-zero pool
/// is an error (the bandwidth would collapse). Datasets above
/// `subsample_limit` points are thinned to that many rows, chosen without
/// replacement from a stream seeded by `subsample_seed`, so the result
/// stays reproducible.
inline double median_heuristic(const Dataset& y, std::size_t subsample_limit = 5000,
                               std::uint64_t subsample_seed = 0) {
    std::size_t n = y.size();
    if (n < 2) throw std::invalid_argument("median_heuristic: need at least 2 observations");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > subsample_limit) {
        Rng rng(derive_seed(subsample_seed, "median_heuristic.subsample"));
        // partial Fisher-Yates: first subsample_limit entries form the sample
        for (std::size_t i = 0; i < subsample_limit; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(subsample_limit);
        n = subsample_limit;
    }

    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dists.push_back(std::sqrt(squared_distance(y.row(idx[i]), y.row(idx[j]))));

    std::sort(dists.begin(), dists.end());
    double med;
    std::size_t m = dists.size();
    if (m % 2 == 1)
        med = dists[m / 2];
    else
        med = 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    if (!(med > 0.0))
        throw std::invalid_argument("median_heuristic: all pairwise distances are zero");
    return med;
}

/// Random Fourier feature map for the Gaussian RBF kernel: D frequency
/// vectors drawn from the kernel's spectral measure plus D phases.
struct RffFeatureMap {
    std::size_t num_features = 0;
    std::size_t dim = 0;
    std::vector<double> frequencies;  // row-major, num_features x dim
    std::vector<double> phases;       // each in [0, 2*pi)

    void validate() const {
        if (num_features == 0) throw std::invalid_argument("RffFeatureMap: D must be >= 1");
        if (frequencies.size() != num_features * dim || phases.size() != num_features)
            throw std::invalid_argument("RffFeatureMap: inconsistent sizes");
    }
};

/// Draw a feature map: frequency coordinates i.i.d. N(0, 1/gamma^2) (the
/// spectral measure of the RBF kernel), phases uniform on [0, 2*pi).
inline RffFeatureMap sample_rff(const KernelConfig& cfg, std::size_t dim, std::size_t num_features,
                                Rng& rng) {
    cfg.validate();
    if (dim == 0 || num_features == 0)
        throw std::invalid_argument("sample_rff: dim and D must be >= 1");
    RffFeatureMap map;
    map.num_features = num_features;
    map.dim = dim;
    map.frequencies.resize(num_features * dim);
    map.phases.resize(num_features);
    double freq_sd = 1.0 / cfg.gamma;
    for (std::size_t j = 0; j < num_features; ++j) {
        for (std::size_t k = 0; k < dim; ++k)
            map.frequencies[j * dim + k] = freq_sd * rng.normal();
        map.phases[j] = rng.uniform(0.0, 2.0 * M_PI);
    }
    return map;
}

/// Feature j of x is sqrt(2/D) * cos(w_j . x + b_j).
inline std::vector<double> rff_features(std::span<const double> x, const RffFeatureMap& map) {
    map.validate();
    if (x.size() != map.dim)
        throw std::invalid_argument("rff_features: input dimension " + std::to_string(x.size()) +
                                    " != map dimension " + std::to_string(map.dim));
    std::vector<double> phi(map.num_features);
    double amp = std::sqrt(2.0 / static_cast<double>(map.num_features));
    for (std::size_t j = 0; j < map.num_features; ++j) {
        double dot = 0.0;
        const double* w = map.frequencies.data() + j * map.dim;
        for (std::size_t k = 0; k < map.dim; ++k) dot += w[k] * x[k];
        phi[j] = amp * std::cos(dot + map.phases[j]);
    }
    return phi;
}

}  // namespace k2abc

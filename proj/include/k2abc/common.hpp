#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace k2abc {

/// Thrown when a simulator blows past its configured overflow cap. ABC
/// loops catch this and assign the draw zero weight.
class SimulationDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ordered collection of n observations, each a d-dimensional real vector.
/// Stored row-major. Time series are dim()==1 with row order meaningful.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::size_t dim) : dim_(dim) {
        if (dim == 0) throw std::invalid_argument("Dataset: dimension must be >= 1");
    }
    Dataset(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
        if (dim == 0) throw std::invalid_argument("Dataset: dimension must be >= 1");
        if (values_.size() % dim_ != 0)
            throw std::invalid_argument("Dataset: value count not a multiple of dimension");
    }

    /// One-dimensional dataset from a flat list of scalars.
    static Dataset scalars(std::vector<double> v) { return Dataset(1, std::move(v)); }

    std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
    std::size_t dim() const { return dim_; }
    bool empty() const { return values_.empty(); }

    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * dim_, dim_};
    }
    double scalar(std::size_t i) const { return values_[i * dim_]; }

    void push_back(std::span<const double> obs) {
        if (obs.size() != dim_)
            throw std::invalid_argument("Dataset: observation dimension " +
                                        std::to_string(obs.size()) + " != dataset dimension " +
                                        std::to_string(dim_));
        values_.insert(values_.end(), obs.begin(), obs.end());
    }
    void push_back(double x) {
        if (dim_ != 1) throw std::invalid_argument("Dataset: scalar push into non-scalar dataset");
        values_.push_back(x);
    }
    void reserve(std::size_t n) { values_.reserve(n * dim_); }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

private:
    std::size_t dim_ = 1;
    std::vector<double> values_;
};

inline void require_same_dim(const Dataset& x, const Dataset& y, const char* where) {
    if (x.dim() != y.dim())
        throw std::invalid_argument(std::string(where) + ": dimension mismatch (" +
                                    std::to_string(x.dim()) + " vs " + std::to_string(y.dim()) +
                                    ")");
}

/// Neumaier compensated accumulator. The MMD double sums add millions of
/// near-unit kernel values; plain accumulation loses digits there.
class CompensatedSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("euclidean_distance: dimension mismatch (" +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                    ")");
    return std::sqrt(squared_distance(a, b));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace k2abc

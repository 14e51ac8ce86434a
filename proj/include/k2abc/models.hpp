#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "k2abc/common.hpp"
#include "k2abc/random.hpp"

namespace k2abc {

/// Parameter vector sampled from a prior and fed to a simulator.
using ParamVector = std::vector<double>;

/// Draws one parameter vector from the prior.
using PriorSampler = std::function<ParamVector(Rng&)>;

/// Generates a pseudo dataset at the given parameters. Throws
/// SimulationDiverged when the trajectory blows up; ABC treats such draws
/// as maximally distant.
using SimulatorFn = std::function<Dataset(const ParamVector&, Rng&)>;

// ---------------------------------------------------------------------------
// Uniform-mixture model: p(y|theta) = sum_i theta_i Uniform(y; [i-1, i])
// ---------------------------------------------------------------------------

struct MixtureParams {
    static constexpr std::size_t kComponents = 5;
    std::array<double, kComponents> theta{};

    void validate() const {
        double sum = 0.0;
        for (double t : theta) {
            if (!(t >= 0.0) || !std::isfinite(t))
                throw std::invalid_argument("MixtureParams: proportions must be nonnegative");
            sum += t;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("MixtureParams: proportions must sum to 1");
    }

    ParamVector as_vector() const { return ParamVector(theta.begin(), theta.end()); }
    static MixtureParams from_vector(const ParamVector& v) {
        if (v.size() != kComponents)
            throw std::invalid_argument("MixtureParams: expected 5 proportions, got " +
                                        std::to_string(v.size()));
        MixtureParams p;
        std::copy(v.begin(), v.end(), p.theta.begin());
        return p;
    }
};

/// Standard Gamma-ratio construction; the result is renormalized so the
/// simplex constraint holds to rounding.
inline std::vector<double> sample_dirichlet(const std::vector<double>& concentration, Rng& rng) {
    if (concentration.empty())
        throw std::invalid_argument("sample_dirichlet: empty concentration vector");
    std::vector<double> draw(concentration.size());
    double total = 0.0;
    for (std::size_t i = 0; i < concentration.size(); ++i) {
        if (!(concentration[i] > 0.0))
            throw std::invalid_argument("sample_dirichlet: concentrations must be positive");
        draw[i] = rng.gamma(concentration[i], 1.0);
        total += draw[i];
    }
    for (double& d : draw) d /= total;
    return draw;
}

inline Dataset simulate_mixture(const MixtureParams& params, std::size_t n, Rng& rng) {
    params.validate();
    if (n == 0) throw std::invalid_argument("simulate_mixture: n must be >= 1");
    Dataset out(1);
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        double u = rng.uniform();
        double cum = 0.0;
        std::size_t comp = MixtureParams::kComponents - 1;
        for (std::size_t i = 0; i < MixtureParams::kComponents; ++i) {
            cum += params.theta[i];
            if (u < cum) {
                comp = i;
                break;
            }
        }
        out.push_back(static_cast<double>(comp) + rng.uniform());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Blowfly population dynamics:
//   N_{t+1} = P N_{t-L} exp(-N_{t-L}/N0) e_t + N_t exp(-delta eps_t)
// with e_t ~ Gam(1/sigma_p^2, sigma_p^2), eps_t ~ Gam(1/sigma_d^2, sigma_d^2)
// ---------------------------------------------------------------------------

struct BlowflyParams {
    double P = 0.0;        // production rate
    double N0 = 1.0;       // population scale
    double sigma_d = 0.0;  // death-noise scale
    double sigma_p = 0.0;  // production-noise scale
    double tau = 1.0;      // delay, discretized to lag max(1, round(tau))
    double delta = 0.0;    // death rate

    // Prior draws are strictly positive (exp of normals). The simulator
    // itself accepts the deterministic boundary: sigma == 0 means the
    // noise factor is exactly 1, and P == 0 or delta == 0 are valid
    // closed-form regimes exercised by tests.
    void validate() const {
        auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
        if (bad(P) || bad(sigma_d) || bad(sigma_p) || bad(delta) || bad(tau) || !(N0 > 0.0) ||
            !std::isfinite(N0))
            throw std::invalid_argument("BlowflyParams: parameters must be finite, nonnegative, N0 > 0");
    }

    std::size_t lag() const {
        double r = std::round(tau);
        return static_cast<std::size_t>(r < 1.0 ? 1.0 : r);
    }

    ParamVector as_vector() const { return {P, N0, sigma_d, sigma_p, tau, delta}; }
    static BlowflyParams from_vector(const ParamVector& v) {
        if (v.size() != 6)
            throw std::invalid_argument("BlowflyParams: expected 6 parameters, got " +
                                        std::to_string(v.size()));
        return BlowflyParams{v[0], v[1], v[2], v[3], v[4], v[5]};
    }
};

/// Independent normals on the log of each parameter, in the field order
/// {P, N0, sigma_d, sigma_p, tau, delta}.
struct BlowflyPriorSpec {
    struct LogNormal {
        double log_mean = 0.0;
        double log_std = 1.0;
    };
    std::array<LogNormal, 6> params{};

    void validate() const {
        for (const auto& p : params)
            if (!(p.log_std >= 0.0) || !std::isfinite(p.log_mean) || !std::isfinite(p.log_std))
                throw std::invalid_argument("BlowflyPriorSpec: stds must be >= 0 and finite");
    }
};

inline BlowflyParams sample_blowfly_prior(const BlowflyPriorSpec& spec, Rng& rng) {
    spec.validate();
    ParamVector v(6);
    for (std::size_t i = 0; i < 6; ++i)
        v[i] = std::exp(spec.params[i].log_mean + spec.params[i].log_std * rng.normal());
    return BlowflyParams::from_vector(v);
}

/// Gamma draw with mean shape*scale. Gam(1/s^2, s^2) has mean 1 and
/// variance s^2, which is the blowfly noise convention.
inline double sample_gamma(double shape, double scale, Rng& rng) { return rng.gamma(shape, scale); }

/// History initialization for the lagged recursion: either a constant
/// level, or the first L+1 values of a supplied series (fitting real data).
struct BlowflyInit {
    enum class Mode { constant, from_series };
    Mode mode = Mode::constant;
    double value = 180.0;
    std::vector<double> series;

    static BlowflyInit constant(double v) { return {Mode::constant, v, {}}; }
    static BlowflyInit from_series(std::vector<double> s) {
        return {Mode::from_series, 0.0, std::move(s)};
    }
};

/// Iterates the delayed recursion for T steps and returns N_1..N_T. Noise
/// draws per step are ordered e_t then eps_t from the one stream. Any
/// state above `overflow_cap` (default 1e12) or non-finite aborts the run
/// via SimulationDiverged.
inline Dataset simulate_blowfly(const BlowflyParams& params, std::size_t T, const BlowflyInit& init,
                                Rng& rng, double overflow_cap = 1e12) {
    params.validate();
    if (T == 0) throw std::invalid_argument("simulate_blowfly: T must be >= 1");
    std::size_t lag = params.lag();
    if (lag >= T)
        throw std::invalid_argument("simulate_blowfly: lag " + std::to_string(lag) +
                                    " must be < T = " + std::to_string(T));

    // history[0..lag] = N_{-L}..N_0
    std::vector<double> history(lag + 1);
    if (init.mode == BlowflyInit::Mode::constant) {
        if (!(init.value >= 0.0)) throw std::invalid_argument("BlowflyInit: negative level");
        std::fill(history.begin(), history.end(), init.value);
    } else {
        if (init.series.size() < lag + 1)
            throw std::invalid_argument("BlowflyInit: series shorter than lag + 1 = " +
                                        std::to_string(lag + 1));
        std::copy(init.series.begin(), init.series.begin() + static_cast<std::ptrdiff_t>(lag + 1),
                  history.begin());
    }

    Dataset out(1);
    out.reserve(T);
    // ring buffer over the last lag+1 states; head indexes N_{t-L}
    std::size_t head = 0;
    for (std::size_t t = 0; t < T; ++t) {
        double lagged = history[head];
        double current = history[(head + lag) % (lag + 1)];
        double e_t = params.sigma_p == 0.0
                         ? 1.0
                         : rng.gamma(1.0 / (params.sigma_p * params.sigma_p),
                                     params.sigma_p * params.sigma_p);
        double eps_t = params.sigma_d == 0.0
                           ? 1.0
                           : rng.gamma(1.0 / (params.sigma_d * params.sigma_d),
                                       params.sigma_d * params.sigma_d);
        double next = params.P * lagged * std::exp(-lagged / params.N0) * e_t +
                      current * std::exp(-params.delta * eps_t);
        if (!std::isfinite(next) || next > overflow_cap)
            throw SimulationDiverged("simulate_blowfly: population exceeded cap at step " +
                                     std::to_string(t + 1));
        history[head] = next;  // overwrite N_{t-L}, no longer needed
        head = (head + 1) % (lag + 1);
        out.push_back(next);
    }
    return out;
}

}  // namespace k2abc

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "k2abc/common.hpp"
#include "k2abc/kernels.hpp"
#include "k2abc/mmd.hpp"
#include "k2abc/models.hpp"
#include "k2abc/random.hpp"
#include "k2abc/summaries.hpp"

namespace k2abc {

enum class WeightKind { normalized, signed_weights };

/// Empirical posterior: M parameter vectors with weights. Normalized
/// weights are nonnegative and sum to 1; signed weights come from the
/// kernel-regression solve and are used as-is.
struct WeightedPosterior {
    std::vector<ParamVector> params;
    std::vector<double> weights;
    WeightKind kind = WeightKind::normalized;

    std::size_t size() const { return params.size(); }
};

inline ParamVector posterior_mean(const WeightedPosterior& p) {
    if (p.params.empty()) throw std::invalid_argument("posterior_mean: empty posterior");
    std::size_t d = p.params.front().size();
    std::vector<CompensatedSum> acc(d);
    for (std::size_t i = 0; i < p.params.size(); ++i)
        for (std::size_t k = 0; k < d; ++k) acc[k].add(p.weights[i] * p.params[i][k]);
    ParamVector mean(d);
    for (std::size_t k = 0; k < d; ++k) mean[k] = acc[k].value();
    return mean;
}

/// 1 / sum w_i^2 for normalized weights; in [1, M]. Undefined for signed
/// weights, which is reported as an error rather than guessed around.
inline double effective_sample_size(const WeightedPosterior& p) {
    if (p.kind != WeightKind::normalized)
        throw std::invalid_argument("effective_sample_size: undefined for signed weights");
    double s = 0.0;
    for (double w : p.weights) s += w * w;
    return 1.0 / s;
}

/// Normalize exp(logw) with max-subtraction, so uniformly tiny weights
/// cannot underflow into 0/0. Entries of -inf become weight zero; all
/// entries -inf is an error (epsilon too small for every draw).
inline std::vector<double> normalize_log_weights(const std::vector<double>& logw) {
    if (logw.empty()) throw std::invalid_argument("normalize_log_weights: no weights");
    double mx = -kInf;
    for (double lw : logw) mx = std::max(mx, lw);
    if (mx == -kInf)
        throw std::runtime_error(
            "normalize_log_weights: all weights are zero; increase epsilon");
    std::vector<double> w(logw.size());
    CompensatedSum total;
    for (std::size_t i = 0; i < logw.size(); ++i) {
        w[i] = std::exp(logw[i] - mx);
        total.add(w[i]);
    }
    double z = total.value();
    for (double& wi : w) wi /= z;
    return w;
}

/// Per-draw diagnostics shared by the weighting algorithms.
struct AbcDiagnostics {
    std::size_t total_draws = 0;
    std::size_t divergent_draws = 0;
    std::size_t accepted = 0;         // rejection ABC only
    double acceptance_rate = 0.0;     // MCMC only
    double ess = 0.0;
};

/// Prior draws scored against the observed data. The discrepancy is
/// whatever the algorithm divides by epsilon (MMD^2 for the embedding
/// algorithms, ||s(y)-s(y*)||^q for soft ABC) or thresholds (rejection);
/// +inf marks a divergent simulation. Computing the pool once and
/// reweighting at many epsilon values gives results identical to rerunning
/// the full algorithm, because draw i always uses substream (seed, tag, i).
struct ScoredDraws {
    std::vector<ParamVector> thetas;
    std::vector<double> discrepancies;
    std::size_t divergent = 0;
};

/// Discrepancy between one pseudo dataset and the observed data.
using DiscrepancyFn = std::function<double(const Dataset&)>;

inline ScoredDraws score_prior_draws(const PriorSampler& prior, const SimulatorFn& simulator,
                                     const DiscrepancyFn& discrepancy, std::size_t M, Rng& rng) {
    if (M == 0) throw std::invalid_argument("score_prior_draws: M must be >= 1");
    ScoredDraws out;
    out.thetas.reserve(M);
    out.discrepancies.reserve(M);
    std::uint64_t pool_seed = rng.next_u64();
    for (std::size_t i = 0; i < M; ++i) {
        Rng draw_rng = substream(pool_seed, "abc.draw", i);
        ParamVector theta = prior(draw_rng);
        double disc;
        try {
            Dataset pseudo = simulator(theta, draw_rng);
            disc = discrepancy(pseudo);
        } catch (const SimulationDiverged&) {
            disc = kInf;
            ++out.divergent;
        }
        out.thetas.push_back(std::move(theta));
        out.discrepancies.push_back(disc);
    }
    return out;
}

/// Softmax weights exp(-disc_i / epsilon), computed in log space.
inline WeightedPosterior posterior_from_discrepancies(const ScoredDraws& draws, double epsilon) {
    if (!(epsilon > 0.0))
        throw std::invalid_argument("posterior_from_discrepancies: epsilon must be positive");
    std::vector<double> logw(draws.discrepancies.size());
    for (std::size_t i = 0; i < logw.size(); ++i) logw[i] = -draws.discrepancies[i] / epsilon;
    WeightedPosterior p;
    p.params = draws.thetas;
    p.weights = normalize_log_weights(logw);
    p.kind = WeightKind::normalized;
    return p;
}

// ---------------------------------------------------------------------------
// K2-ABC: weight prior draws by exp(-MMD^2(pseudo, observed) / epsilon)
// ---------------------------------------------------------------------------

inline ScoredDraws k2_abc_draws(const Dataset& observed, const PriorSampler& prior,
                                const SimulatorFn& simulator, const KernelConfig& kernel,
                                const MmdEstimatorChoice& estimator, std::size_t M, Rng& rng) {
    MmdScorer scorer(observed, kernel, estimator);
    return score_prior_draws(
        prior, simulator, [&](const Dataset& pseudo) { return scorer.score(pseudo); }, M, rng);
}

inline WeightedPosterior k2_abc(const Dataset& observed, const PriorSampler& prior,
                                const SimulatorFn& simulator, const KernelConfig& kernel,
                                const MmdEstimatorChoice& estimator, double epsilon, std::size_t M,
                                Rng& rng, AbcDiagnostics* diag = nullptr) {
    ScoredDraws draws = k2_abc_draws(observed, prior, simulator, kernel, estimator, M, rng);
    WeightedPosterior p = posterior_from_discrepancies(draws, epsilon);
    if (diag) {
        diag->total_draws = M;
        diag->divergent_draws = draws.divergent;
        diag->ess = effective_sample_size(p);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Rejection and soft ABC on summary statistics
// ---------------------------------------------------------------------------

inline ScoredDraws summary_distance_draws(const Dataset& observed, const PriorSampler& prior,
                                          const SimulatorFn& simulator, const SummaryFn& summary,
                                          std::size_t M, Rng& rng) {
    std::vector<double> s_star = summary(observed);
    return score_prior_draws(
        prior, simulator,
        [&](const Dataset& pseudo) {
            return euclidean_distance(summary(pseudo), s_star);
        },
        M, rng);
}

/// Accepts draws with ||s(y) - s(y*)|| < epsilon, uniform weights.
inline WeightedPosterior rejection_posterior(const ScoredDraws& draws, double epsilon,
                                             AbcDiagnostics* diag = nullptr) {
    if (!(epsilon > 0.0))
        throw std::invalid_argument("rejection_abc: epsilon must be positive");
    WeightedPosterior p;
    for (std::size_t i = 0; i < draws.thetas.size(); ++i)
        if (draws.discrepancies[i] < epsilon) p.params.push_back(draws.thetas[i]);
    if (p.params.empty())
        throw std::runtime_error("rejection_abc: no draws accepted; increase epsilon");
    p.weights.assign(p.params.size(), 1.0 / static_cast<double>(p.params.size()));
    p.kind = WeightKind::normalized;
    if (diag) {
        diag->total_draws = draws.thetas.size();
        diag->divergent_draws = draws.divergent;
        diag->accepted = p.params.size();
        diag->ess = effective_sample_size(p);
    }
    return p;
}

inline WeightedPosterior rejection_abc(const Dataset& observed, const PriorSampler& prior,
                                       const SimulatorFn& simulator, const SummaryFn& summary,
                                       double epsilon, std::size_t M, Rng& rng,
                                       AbcDiagnostics* diag = nullptr) {
    ScoredDraws draws = summary_distance_draws(observed, prior, simulator, summary, M, rng);
    return rejection_posterior(draws, epsilon, diag);
}

/// Soft ABC with kernel exp(-rho^q / epsilon), rho the summary distance.
inline WeightedPosterior soft_abc(const Dataset& observed, const PriorSampler& prior,
                                  const SimulatorFn& simulator, const SummaryFn& summary,
                                  double epsilon, std::size_t M, Rng& rng, double q = 2.0,
                                  AbcDiagnostics* diag = nullptr) {
    if (!(q > 0.0)) throw std::invalid_argument("soft_abc: q must be positive");
    ScoredDraws draws = summary_distance_draws(observed, prior, simulator, summary, M, rng);
    for (double& d : draws.discrepancies)
        if (d != kInf) d = std::pow(d, q);
    WeightedPosterior p = posterior_from_discrepancies(draws, epsilon);
    if (diag) {
        diag->total_draws = M;
        diag->divergent_draws = draws.divergent;
        diag->ess = effective_sample_size(p);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Synthetic-likelihood ABC: Gaussian model of summary statistics plus
// random-walk Metropolis-Hastings
// ---------------------------------------------------------------------------

/// log N(s*; mu_hat, Sigma_hat + eps^2 I) from inner_M simulations at
/// theta. Divergent inner draws are dropped; too few survivors for a
/// covariance gives -inf. Cholesky failures escalate a diagonal jitter
/// from 1e-9.
inline double synthetic_likelihood(const std::vector<double>& s_star, const ParamVector& theta,
                                   const SimulatorFn& simulator, const SummaryFn& summary,
                                   std::size_t inner_M, double epsilon, Rng& rng) {
    if (!(epsilon >= 0.0))
        throw std::invalid_argument("synthetic_likelihood: epsilon must be >= 0");
    std::size_t s_dim = s_star.size();
    if (inner_M < s_dim + 2)
        throw std::invalid_argument("synthetic_likelihood: inner_M must be >= stat dimension + 2");

    std::vector<std::vector<double>> stats;
    stats.reserve(inner_M);
    for (std::size_t i = 0; i < inner_M; ++i) {
        try {
            Dataset pseudo = simulator(theta, rng);
            std::vector<double> s = summary(pseudo);
            if (s.size() != s_dim)
                throw std::invalid_argument("synthetic_likelihood: summary dimension mismatch");
            stats.push_back(std::move(s));
        } catch (const SimulationDiverged&) {
        }
    }
    if (stats.size() < s_dim + 2) return -kInf;

    std::size_t m = stats.size();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s_dim));
    for (const auto& s : stats)
        mu += Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s_dim));
    mu /= static_cast<double>(m);

    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s_dim),
                                                  static_cast<Eigen::Index>(s_dim));
    for (const auto& s : stats) {
        Eigen::VectorXd d =
            Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s_dim)) - mu;
        sigma += d * d.transpose();
    }
    sigma /= static_cast<double>(m - 1);
    sigma.diagonal().array() += epsilon * epsilon;

    Eigen::VectorXd resid =
        Eigen::Map<const Eigen::VectorXd>(s_star.data(), static_cast<Eigen::Index>(s_dim)) - mu;

    double jitter = 1e-9;
    for (int attempt = 0; attempt < 7; ++attempt) {
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        if (llt.info() == Eigen::Success) {
            Eigen::VectorXd alpha = llt.solve(resid);
            double log_det = 0.0;
            for (Eigen::Index i = 0; i < sigma.rows(); ++i)
                log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
            double sd = static_cast<double>(s_dim);
            return -0.5 * (resid.dot(alpha) + log_det + sd * std::log(2.0 * M_PI));
        }
        sigma.diagonal().array() += jitter;
        jitter *= 10.0;
    }
    return -kInf;
}

/// Log Metropolis-Hastings acceptance ratio under a symmetric proposal:
/// log target(proposal) - log target(current), with zero-density states
/// resolved so a zero-density proposal is never taken and any finite
/// proposal escapes a zero-density state. Swapping the arguments negates
/// the ratio exactly.
inline double mh_log_ratio(double cur_target, double prop_target) {
    if (prop_target == -kInf) return -kInf;
    if (cur_target == -kInf) return kInf;
    return prop_target - cur_target;
}

/// Log prior density plus a sampler for the chain's initial state. The
/// chain moves in whatever coordinates these two functions use; for the
/// population model that is log-parameters, so positivity is automatic
/// and the Gaussian prior density applies directly.
struct McmcPrior {
    std::function<double(const ParamVector&)> log_density;
    PriorSampler sample;
};

/// Random-walk Metropolis-Hastings on the synthetic likelihood. The
/// proposal is an independent Gaussian step per coordinate (symmetric, so
/// the proposal ratio cancels); the likelihood is re-estimated at the
/// proposed point every step. Returns uniform weights over the
/// post-burn-in states.
inline WeightedPosterior sl_abc_mcmc(const Dataset& observed, const McmcPrior& prior,
                                     const SimulatorFn& simulator, const SummaryFn& summary,
                                     double epsilon, std::size_t inner_M, std::size_t chain_length,
                                     std::size_t burn_in, const std::vector<double>& proposal_scales,
                                     Rng& rng, AbcDiagnostics* diag = nullptr) {
    if (chain_length <= burn_in)
        throw std::invalid_argument("sl_abc_mcmc: chain_length must exceed burn_in");
    std::vector<double> s_star = summary(observed);

    ParamVector theta = prior.sample(rng);
    if (proposal_scales.size() != theta.size())
        throw std::invalid_argument("sl_abc_mcmc: proposal scale count != parameter dimension");
    double log_prior = prior.log_density(theta);
    double log_lik = synthetic_likelihood(s_star, theta, simulator, summary, inner_M, epsilon, rng);

    WeightedPosterior p;
    p.params.reserve(chain_length - burn_in);
    std::size_t accepted = 0;
    for (std::size_t step = 0; step < chain_length; ++step) {
        ParamVector proposal(theta.size());
        for (std::size_t k = 0; k < theta.size(); ++k)
            proposal[k] = theta[k] + proposal_scales[k] * rng.normal();
        double prop_log_prior = prior.log_density(proposal);
        double prop_log_lik =
            synthetic_likelihood(s_star, proposal, simulator, summary, inner_M, epsilon, rng);

        double log_u = std::log(1.0 - rng.uniform());
        bool accept = log_u < mh_log_ratio(log_prior + log_lik, prop_log_prior + prop_log_lik);
        if (accept) {
            theta = std::move(proposal);
            log_prior = prop_log_prior;
            log_lik = prop_log_lik;
            ++accepted;
        }
        if (step >= burn_in) p.params.push_back(theta);
    }
    p.weights.assign(p.params.size(), 1.0 / static_cast<double>(p.params.size()));
    p.kind = WeightKind::normalized;
    if (diag) {
        diag->total_draws = chain_length;
        diag->acceptance_rate = static_cast<double>(accepted) / static_cast<double>(chain_length);
        diag->ess = effective_sample_size(p);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Kernel ABC: conditional-mean-embedding regression weights
// ---------------------------------------------------------------------------

/// Solves (G + M lambda I) w = g(s_., s*) for the regression weights,
/// where G is the Gram matrix of the statistic kernel over training
/// summaries. Weights are signed and need not sum to 1.
inline WeightedPosterior k_abc(const std::vector<std::vector<double>>& train_stats,
                               const std::vector<ParamVector>& train_thetas,
                               const std::vector<double>& s_star, const KernelConfig& stat_kernel,
                               double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("k_abc: lambda must be positive");
    std::size_t M = train_stats.size();
    if (M == 0 || train_thetas.size() != M)
        throw std::invalid_argument("k_abc: training stats and parameters must pair up");

    Eigen::MatrixXd G(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = i; j < M; ++j) {
            double g = gaussian_kernel(train_stats[i], train_stats[j], stat_kernel);
            G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g;
            G(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = g;
        }
    G.diagonal().array() += static_cast<double>(M) * lambda;

    Eigen::VectorXd rhs(static_cast<Eigen::Index>(M));
    for (std::size_t j = 0; j < M; ++j)
        rhs(static_cast<Eigen::Index>(j)) = gaussian_kernel(train_stats[j], s_star, stat_kernel);

    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("k_abc: linear system solve failed; increase lambda");
    Eigen::VectorXd w = ldlt.solve(rhs);
    if ((G * w - rhs).norm() > 1e-6 * std::max(1.0, rhs.norm()))
        throw std::runtime_error("k_abc: linear system poorly conditioned; increase lambda");

    WeightedPosterior p;
    p.params = train_thetas;
    p.weights.assign(w.data(), w.data() + w.size());
    p.kind = WeightKind::signed_weights;
    return p;
}

// ---------------------------------------------------------------------------
// Semi-automatic ABC: regression-constructed summary statistics
// ---------------------------------------------------------------------------

/// Candidate statistics for the regression stage.
using CandidateStatsFn = std::function<std::vector<double>(const Dataset&)>;

/// Least-squares fit theta = B g(y) + intercept from pilot simulations.
/// The learned summary s(y) = B g(y) + intercept estimates E[theta | y].
struct SaRegression {
    Eigen::MatrixXd coefficients;  // d x r
    Eigen::VectorXd intercept;     // d
    bool used_ridge_fallback = false;

    std::vector<double> apply(const std::vector<double>& g) const {
        Eigen::VectorXd s =
            coefficients * Eigen::Map<const Eigen::VectorXd>(g.data(),
                                                             static_cast<Eigen::Index>(g.size())) +
            intercept;
        return std::vector<double>(s.data(), s.data() + s.size());
    }
};

inline SaRegression sa_fit(const std::vector<std::vector<double>>& candidate_stats,
                           const std::vector<ParamVector>& thetas,
                           double ridge_fallback = 1e-8) {
    std::size_t M = candidate_stats.size();
    if (M == 0 || thetas.size() != M)
        throw std::invalid_argument("sa_fit: pilot stats and parameters must pair up");
    std::size_t r = candidate_stats.front().size();
    std::size_t d = thetas.front().size();
    if (M <= r + 1)
        throw std::invalid_argument("sa_fit: need more pilot samples than regressors (M > r + 1)");

    Eigen::MatrixXd X(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(r + 1));
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < M; ++i) {
        if (candidate_stats[i].size() != r || thetas[i].size() != d)
            throw std::invalid_argument("sa_fit: ragged pilot rows");
        X(static_cast<Eigen::Index>(i), 0) = 1.0;
        for (std::size_t j = 0; j < r; ++j)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) =
                candidate_stats[i][j];
        for (std::size_t k = 0; k < d; ++k)
            Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = thetas[i][k];
    }

    SaRegression reg;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::MatrixXd coef;  // (r+1) x d
    if (qr.rank() == static_cast<Eigen::Index>(r + 1)) {
        coef = qr.solve(Y);
    } else {
        // rank-deficient design: fall back to a small ridge penalty
        Eigen::MatrixXd XtX = X.transpose() * X;
        XtX.diagonal().array() += ridge_fallback;
        coef = XtX.ldlt().solve(X.transpose() * Y);
        reg.used_ridge_fallback = true;
    }
    reg.intercept = coef.row(0).transpose();
    reg.coefficients = coef.bottomRows(static_cast<Eigen::Index>(r)).transpose();
    return reg;
}

/// Fits the regression on a fresh pilot set, then runs soft ABC (q = 2)
/// with the learned summary.
inline WeightedPosterior sa_abc(const Dataset& observed, const PriorSampler& prior,
                                const SimulatorFn& simulator, const CandidateStatsFn& candidates,
                                std::size_t pilot_M, double epsilon, std::size_t M, Rng& rng,
                                AbcDiagnostics* diag = nullptr, SaRegression* fit_out = nullptr) {
    std::uint64_t pilot_seed = rng.next_u64();
    std::vector<std::vector<double>> pilot_stats;
    std::vector<ParamVector> pilot_thetas;
    pilot_stats.reserve(pilot_M);
    pilot_thetas.reserve(pilot_M);
    for (std::size_t i = 0; i < pilot_M; ++i) {
        Rng draw_rng = substream(pilot_seed, "sa.pilot", i);
        ParamVector theta = prior(draw_rng);
        try {
            Dataset pseudo = simulator(theta, draw_rng);
            pilot_stats.push_back(candidates(pseudo));
            pilot_thetas.push_back(std::move(theta));
        } catch (const SimulationDiverged&) {
        }
    }
    SaRegression reg = sa_fit(pilot_stats, pilot_thetas);
    if (fit_out) *fit_out = reg;

    SummaryFn learned = [reg, candidates](const Dataset& y) { return reg.apply(candidates(y)); };
    return soft_abc(observed, prior, simulator, learned, epsilon, M, rng, 2.0, diag);
}

}  // namespace k2abc

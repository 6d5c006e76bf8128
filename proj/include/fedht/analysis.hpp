#pragma once

// Contraction factors, round bounds, dissimilarity and recovery metrics.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedht/objectives.hpp"
#include "fedht/sample_batch.hpp"
#include "fedht/tensor.hpp"

namespace fedht {

enum class TheoryVariant { fed_ht, fediter_ht };

std::string to_string(TheoryVariant v);

/// 2 sqrt(tau*) / sqrt(tau - tau*).
double compute_alpha(std::size_t tau, std::size_t tau_star);

struct TheoryFactors {
    TheoryVariant variant = TheoryVariant::fed_ht;
    double alpha = 0.0;
    double kappa = 1.0;    // kappa_d
    double kappa_s = 1.0;  // restricted condition number (FedIter-HT)
    std::size_t K = 1;
    /// fed_ht: (1+2a)(1-1/(12k))^K.
    /// fediter_ht: (1+2a)^2 (1-1/(12k_s)), no K exponent.
    double theta = 0.0;
    /// fediter_ht: (1+2a)^2 (1-1/(12k_s))^K.
    /// Equal to theta for fed_ht.
    double theta_k = 0.0;
    double psi = 0.0;
    double xi = 0.0;     // nan unless a smoothness constant was supplied
    double delta = 0.0;
    bool valid = false;    // theta < 1
    bool valid_k = false;  // theta_k < 1
    /// Required tau / tau*, and whether the given tau meets it.
    double sparsity_multiplier = 0.0;
    bool sparsity_ok = false;
};

/// `kappa_s` defaults to `kappa`; `smoothness` (l_d or l_s) is needed for xi.
TheoryFactors compute_theory_factors(TheoryVariant variant, std::size_t tau, std::size_t tau_star,
                                     double kappa, std::size_t K,
                                     std::optional<double> kappa_s = std::nullopt,
                                     std::optional<double> smoothness = std::nullopt);

/// ceil(ln(dist/eps) / -ln(theta)), at least 0.
std::size_t rounds_for_epsilon(double theta, double initial_dist, double epsilon);

/// xi * sum p_i sigma_i^2 / (delta * ||x0 - x*||^2).
double batch_gamma_lower_bound(const TheoryFactors& f, double weighted_variance,
                               double initial_dist_sq);

/// xi B^2 / (1 - psi) * grad_norm_sq; infinite when psi >= 1.
double bias_term(const TheoryFactors& f, double dissimilarity, double grad_norm_sq);

/// ||pi_I grad||^2 with I = supp(H_{min(2 N tau, d)}(grad)) united with supp(x*).
double restricted_gradient_norm_sq(const ParameterVector& grad, const ParameterVector& x_star,
                                   std::size_t num_clients, std::size_t tau);

struct DissimilarityReport {
    double b_estimate = 1.0;
    std::size_t num_probe_points = 0;  // probes that contributed
    std::size_t skipped_probes = 0;    // denominator below 1e-12
    std::size_t support_size_probed = 0;
};

/// max over probes of sqrt(sum p_i ||pi_I grad f_i||^2 / ||pi_I grad f||^2)
/// with I the top-`support_size` coordinates of grad f at the probe.
DissimilarityReport estimate_dissimilarity(std::span<const ClientDataset> clients,
                                           const ObjectiveModel& model,
                                           std::span<const double> weights,
                                           std::span<const ParameterVector> probe_points,
                                           std::size_t support_size);

struct ConditionEstimate {
    double smoothness = 0.0;  // largest Rayleigh quotient seen
    double strong_convexity = 0.0;  // smallest Rayleigh quotient seen
    double kappa = 1.0;
    std::size_t probes = 0;
};

/// Empirical curvature of f = sum p_i f_i at x along random unit directions,
/// from central differences of the gradient. `sparsity` = 0 draws dense
/// directions, otherwise directions with that many nonzeros. When
/// `smoothness_override` is given it replaces the largest quotient in kappa.
ConditionEstimate estimate_condition(std::span<const ClientDataset> clients,
                                     const ObjectiveModel& model, std::span<const double> weights,
                                     const ParameterVector& x, std::size_t sparsity,
                                     std::size_t probes = 200, std::uint64_t seed = 0,
                                     std::optional<double> smoothness_override = std::nullopt);

double estimation_error(const ParameterVector& x, const ParameterVector& x_star);

/// F1 between supp(x) and supp(x_star); 1.0 when both are empty.
double support_f1(const ParameterVector& x, const ParameterVector& x_star);

}  // namespace fedht

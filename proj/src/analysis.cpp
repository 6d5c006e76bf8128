#include "fedht/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedht/error.hpp"
#include "fedht/rng.hpp"

namespace fedht {

std::string to_string(TheoryVariant v) {
    return v == TheoryVariant::fed_ht ? "fed_ht" : "fediter_ht";
}

double compute_alpha(std::size_t tau, std::size_t tau_star) {
    if (tau_star == 0) throw DomainError("tau* must be at least 1");
    if (tau <= tau_star) {
        throw DomainError("tau (" + std::to_string(tau) + ") must exceed tau* (" +
                          std::to_string(tau_star) + ")");
    }
    return 2.0 * std::sqrt(static_cast<double>(tau_star)) /
           std::sqrt(static_cast<double>(tau - tau_star));
}

TheoryFactors compute_theory_factors(TheoryVariant variant, std::size_t tau, std::size_t tau_star,
                                     double kappa, std::size_t K, std::optional<double> kappa_s,
                                     std::optional<double> smoothness) {
    TheoryFactors f;
    f.variant = variant;
    f.alpha = compute_alpha(tau, tau_star);
    if (!(kappa >= 1.0) || !std::isfinite(kappa)) throw DomainError("kappa must be finite and >= 1");
    f.kappa = kappa;
    f.kappa_s = kappa_s.value_or(kappa);
    if (!(f.kappa_s >= 1.0) || !std::isfinite(f.kappa_s)) throw DomainError("kappa_s must be finite and >= 1");
    if (K == 0) throw DomainError("K must be >= 1");
    f.K = K;
    if (smoothness && !(*smoothness > 0.0)) throw DomainError("smoothness must be positive");

    const double a = f.alpha;
    const double Kd = static_cast<double>(K);
    const double qd = 1.0 - 1.0 / (12.0 * f.kappa);
    const double qs = 1.0 - 1.0 / (12.0 * f.kappa_s);
    const double nan = std::numeric_limits<double>::quiet_NaN();

    if (variant == TheoryVariant::fed_ht) {
        f.theta = (1.0 + 2.0 * a) * std::pow(qd, Kd);
        f.theta_k = f.theta;
        f.psi = (1.0 + a) * std::pow(qd, Kd);
        f.xi = smoothness ? (1.0 + a) * (1.0 - std::pow(qd, Kd)) * f.kappa / (*smoothness * *smoothness) : nan;
        f.delta = a * std::pow(qd, Kd);
        const double m = 12.0 * f.kappa - 1.0;
        f.sparsity_multiplier = 16.0 * m * m + 1.0;
    } else {
        const double sq = (1.0 + 2.0 * a) * (1.0 + 2.0 * a);
        f.theta = sq * qs;
        f.theta_k = sq * std::pow(qs, Kd);
        f.psi = (1.0 + a) * (1.0 + a) * qs;
        f.xi = smoothness ? (1.0 + a) * (1.0 + a) * (1.0 - std::pow(qs, Kd)) * f.kappa_s /
                                (*smoothness * *smoothness)
                          : nan;
        f.delta = (2.0 * a + 2.0 * a * a) * std::pow(qs, Kd);
        const double r = std::sqrt(12.0 * f.kappa / (12.0 * f.kappa - 1.0)) - 1.0;
        f.sparsity_multiplier = 16.0 / (r * r) + 1.0;
    }
    f.valid = f.theta < 1.0;
    f.valid_k = f.theta_k < 1.0;
    f.sparsity_ok = static_cast<double>(tau) >= f.sparsity_multiplier * static_cast<double>(tau_star);
    return f;
}

std::size_t rounds_for_epsilon(double theta, double initial_dist, double epsilon) {
    if (!(theta < 1.0)) {
        throw TheoryInvalidError("contraction factor " + std::to_string(theta) +
                                 " >= 1; no round bound exists");
    }
    if (!(theta > 0.0)) throw DomainError("contraction factor must be positive");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    if (!(initial_dist >= 0.0)) throw DomainError("initial distance must be >= 0");
    if (initial_dist <= epsilon) return 0;
    const double r = std::log(initial_dist / epsilon) / -std::log(theta);
    auto n = static_cast<std::size_t>(std::ceil(r));
    // Undo a ceil pushed up by rounding in the logarithms.
    if (n > 0 && std::pow(theta, static_cast<double>(n - 1)) * initial_dist <= epsilon * (1.0 + 1e-12)) {
        --n;
    }
    return n;
}

double batch_gamma_lower_bound(const TheoryFactors& f, double weighted_variance,
                               double initial_dist_sq) {
    if (!std::isfinite(f.xi)) throw DomainError("xi needs a smoothness constant");
    if (!(initial_dist_sq > 0.0) || !(f.delta > 0.0)) throw DomainError("bound needs ||x0 - x*|| > 0");
    return f.xi * weighted_variance / (f.delta * initial_dist_sq);
}

double bias_term(const TheoryFactors& f, double dissimilarity, double grad_norm_sq) {
    if (!std::isfinite(f.xi)) throw DomainError("xi needs a smoothness constant");
    if (!(f.psi < 1.0)) return std::numeric_limits<double>::infinity();
    return f.xi * dissimilarity * dissimilarity / (1.0 - f.psi) * grad_norm_sq;
}

double restricted_gradient_norm_sq(const ParameterVector& grad, const ParameterVector& x_star,
                                   std::size_t num_clients, std::size_t tau) {
    if (grad.dim() != x_star.dim()) throw DimensionError("gradient and x* differ in dimension");
    const std::size_t d = grad.dim();
    const std::size_t width = std::min(d, 2 * num_clients * tau);
    SupportSet top = width == 0 ? SupportSet{} : top_magnitude_support(grad.values(), width);
    const auto set = support_union({top, x_star.support()});
    double s = 0.0;
    for (std::size_t i : set.indices()) s += grad[i] * grad[i];
    return s;
}

DissimilarityReport estimate_dissimilarity(std::span<const ClientDataset> clients,
                                           const ObjectiveModel& model,
                                           std::span<const double> weights,
                                           std::span<const ParameterVector> probe_points,
                                           std::size_t support_size) {
    if (probe_points.empty()) throw EstimationError("no probe points");
    if (clients.size() != weights.size()) throw DimensionError("one weight per client required");
    DissimilarityReport rep;
    rep.support_size_probed = support_size;
    double best = 0.0;
    for (const auto& x : probe_points) {
        if (support_size == 0 || support_size > x.dim()) {
            throw ConfigError("probe support size must lie in [1, " + std::to_string(x.dim()) + "]");
        }
        std::vector<ParameterVector> local;
        local.reserve(clients.size());
        ParameterVector g(x.dim());
        for (std::size_t i = 0; i < clients.size(); ++i) {
            local.push_back(gradient(model, x, clients[i].batch));
            axpy(weights[i], local.back().values(), g.values());
        }
        const auto I = top_magnitude_support(g.values(), support_size);
        double den = 0.0;
        for (std::size_t k : I.indices()) den += g[k] * g[k];
        if (den < 1e-12) {
            ++rep.skipped_probes;
            continue;
        }
        double num = 0.0;
        for (std::size_t i = 0; i < clients.size(); ++i) {
            double s = 0.0;
            for (std::size_t k : I.indices()) s += local[i][k] * local[i][k];
            num += weights[i] * s;
        }
        best = std::max(best, std::sqrt(num / den));
        ++rep.num_probe_points;
    }
    if (rep.num_probe_points == 0) {
        throw EstimationError("all " + std::to_string(rep.skipped_probes) +
                              " probes had a vanishing restricted gradient");
    }
    rep.b_estimate = best;
    return rep;
}

ConditionEstimate estimate_condition(std::span<const ClientDataset> clients,
                                     const ObjectiveModel& model, std::span<const double> weights,
                                     const ParameterVector& x, std::size_t sparsity,
                                     std::size_t probes, std::uint64_t seed,
                                     std::optional<double> smoothness_override) {
    if (probes == 0) throw ConfigError("condition estimate needs probes");
    const std::size_t d = x.dim();
    if (sparsity > d) throw ConfigError("direction sparsity exceeds dimension");
    Rng rng = make_stream(seed, kProbeStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double h = 1e-4 * std::max(1.0, std::sqrt(squared_norm(x.values())));

    ConditionEstimate est;
    est.smoothness = 0.0;
    est.strong_convexity = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> coords(d);
    for (std::size_t p = 0; p < probes; ++p) {
        ParameterVector v(d);
        if (sparsity == 0) {
            for (std::size_t k = 0; k < d; ++k) v[k] = normal(rng);
        } else {
            std::iota(coords.begin(), coords.end(), std::size_t{0});
            for (std::size_t k = 0; k < sparsity; ++k) {
                std::uniform_int_distribution<std::size_t> pick(k, d - 1);
                std::swap(coords[k], coords[pick(rng)]);
                v[coords[k]] = normal(rng);
            }
        }
        const double n = std::sqrt(squared_norm(v.values()));
        if (!(n > 0.0)) continue;
        for (std::size_t k = 0; k < d; ++k) v[k] /= n;
        ParameterVector xp = x, xm = x;
        axpy(h, v.values(), xp.values());
        axpy(-h, v.values(), xm.values());
        const auto gp = weighted_gradient(model, xp, clients, weights);
        const auto gm = weighted_gradient(model, xm, clients, weights);
        double q = 0.0;
        for (std::size_t k = 0; k < d; ++k) q += v[k] * (gp[k] - gm[k]);
        q /= 2.0 * h;
        est.smoothness = std::max(est.smoothness, q);
        est.strong_convexity = std::min(est.strong_convexity, q);
        ++est.probes;
    }
    if (smoothness_override) est.smoothness = *smoothness_override;
    if (!(est.strong_convexity > 0.0)) {
        throw EstimationError("no positive curvature found along the probed directions");
    }
    est.kappa = std::max(1.0, est.smoothness / est.strong_convexity);
    return est;
}

double estimation_error(const ParameterVector& x, const ParameterVector& x_star) {
    return squared_distance(x.values(), x_star.values());
}

double support_f1(const ParameterVector& x, const ParameterVector& x_star) {
    if (x.dim() != x_star.dim()) throw DimensionError("support_f1 needs equal dimensions");
    std::size_t tp = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < x.dim(); ++i) {
        const bool in_x = x[i] != 0.0;
        const bool in_s = x_star[i] != 0.0;
        a += in_x;
        b += in_s;
        tp += in_x && in_s;
    }
    if (a == 0 && b == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(a + b);
}

}  // namespace fedht

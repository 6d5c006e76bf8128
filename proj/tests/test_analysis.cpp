#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fedht/analysis.hpp"
#include "fedht/datagen.hpp"
#include "fedht/error.hpp"
#include "test_util.hpp"

using namespace fedht;
using namespace fedht::testing;

TEST_CASE("alpha") {
    CHECK(compute_alpha(8, 4) == 2.0);
    CHECK(compute_alpha(500, 100) == 1.0);
    CHECK(compute_alpha(5, 4) == 4.0);
    CHECK_THROWS_AS(compute_alpha(4, 4), DomainError);
    CHECK_THROWS_AS(compute_alpha(3, 4), DomainError);
    CHECK_THROWS_AS(compute_alpha(3, 0), DomainError);
}

TEST_CASE("Fed-HT contraction factor") {
    // 1 + 2a = 1.2 needs a = 0.1, i.e. tau - tau* = 400 tau*
    const auto f = compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 1.0, 5);
    CHECK(f.alpha == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(std::fabs(f.theta - 1.2 * std::pow(11.0 / 12.0, 5)) < 1e-12);
    CHECK(f.theta == doctest::Approx(0.7767).epsilon(1e-4));
    CHECK(f.valid);
    CHECK(f.theta_k == f.theta);
    CHECK(f.sparsity_multiplier == 1937.0);
    CHECK_FALSE(f.sparsity_ok);
    CHECK(compute_theory_factors(TheoryVariant::fed_ht, 1938, 1, 1.0, 5).sparsity_ok);
    CHECK(compute_theory_factors(TheoryVariant::fed_ht, 1937, 1, 1.0, 5).sparsity_ok);
    CHECK(std::isnan(f.xi));
    CHECK(f.psi == doctest::Approx(1.1 * std::pow(11.0 / 12.0, 5)));
    CHECK(f.delta == doctest::Approx(0.1 * std::pow(11.0 / 12.0, 5)));

    const auto g = compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 1.0, 5, std::nullopt, 2.0);
    CHECK(g.xi == doctest::Approx(1.1 * (1.0 - std::pow(11.0 / 12.0, 5)) / 4.0));

    CHECK_FALSE(compute_theory_factors(TheoryVariant::fed_ht, 2, 1, 1.0, 1).valid);
    CHECK_THROWS_AS(compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 0.5, 5), DomainError);
    CHECK_THROWS_AS(compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 1.0, 0), DomainError);
}

TEST_CASE("contraction decreases with local steps") {
    for (double kappa : {1.0, 3.0, 20.0}) {
        double prev = std::numeric_limits<double>::infinity();
        double prev_k = prev;
        for (std::size_t K = 1; K <= 50; ++K) {
            const auto f = compute_theory_factors(TheoryVariant::fed_ht, 300, 3, kappa, K);
            CHECK(f.theta < prev);
            prev = f.theta;
            const auto g = compute_theory_factors(TheoryVariant::fediter_ht, 300, 3, kappa, K);
            CHECK(g.theta_k < prev_k);
            prev_k = g.theta_k;
        }
    }
}

TEST_CASE("FedIter-HT factors carry both readings") {
    const auto f = compute_theory_factors(TheoryVariant::fediter_ht, 401, 1, 2.0, 4, 1.5);
    const double a = 0.1, qs = 1.0 - 1.0 / 18.0;
    CHECK(f.theta == doctest::Approx(1.44 * qs).epsilon(1e-14));
    CHECK(f.theta_k == doctest::Approx(1.44 * std::pow(qs, 4)).epsilon(1e-14));
    CHECK(f.psi == doctest::Approx((1 + a) * (1 + a) * qs).epsilon(1e-14));
    CHECK(f.delta == doctest::Approx((2 * a + 2 * a * a) * std::pow(qs, 4)).epsilon(1e-14));
    CHECK(f.kappa_s == 1.5);
    const double r = std::sqrt(24.0 / 23.0) - 1.0;
    CHECK(f.sparsity_multiplier == doctest::Approx(16.0 / (r * r) + 1.0));
}

TEST_CASE("FedIter-HT beats Fed-HT exactly when the local-step gain covers alpha") {
    std::size_t agree = 0, strict_cases = 0;
    for (std::size_t tau_star : {1u, 4u, 10u}) {
        for (std::size_t mult : {2u, 5u, 50u, 1000u, 100000u}) {
            const std::size_t tau = tau_star * mult;
            for (double kd : {1.0, 2.0, 10.0, 100.0}) {
                for (double ratio : {1.0, 0.5, 0.1}) {
                    const double ks = std::max(1.0, kd * ratio);
                    for (std::size_t K : {1u, 5u, 20u, 200u}) {
                        const auto f1 = compute_theory_factors(TheoryVariant::fed_ht, tau, tau_star, kd, K);
                        const auto f2 = compute_theory_factors(TheoryVariant::fediter_ht, tau, tau_star,
                                                               kd, K, ks);
                        const double gain = std::pow((1 - 1 / (12 * kd)) / (1 - 1 / (12 * ks)),
                                                     static_cast<double>(K)) - 1.0;
                        const double two_a = 2.0 * f1.alpha;
                        if (std::fabs(two_a - gain) < 1e-9) continue;  // boundary
                        const bool predicted = two_a < gain;
                        strict_cases += predicted;
                        agree += predicted == (f2.theta_k < f1.theta);
                        CHECK(predicted == (f2.theta_k < f1.theta));
                    }
                }
            }
        }
    }
    CHECK(strict_cases > 0);
    CHECK(agree > 0);
}

TEST_CASE("rounds for epsilon") {
    CHECK(rounds_for_epsilon(0.5, 1.0, std::ldexp(1.0, -10)) == 10);
    CHECK(rounds_for_epsilon(0.5, 1.0, 1.0) == 0);
    CHECK(rounds_for_epsilon(0.5, 1.0, 3.0) == 0);
    CHECK(rounds_for_epsilon(0.9, 1.0, 1e-3) == 66);
    CHECK_THROWS_AS(rounds_for_epsilon(1.0, 1.0, 0.1), TheoryInvalidError);
    CHECK_THROWS_AS(rounds_for_epsilon(1.3, 1.0, 0.1), TheoryInvalidError);
    CHECK_THROWS_AS(rounds_for_epsilon(0.0, 1.0, 0.1), DomainError);
    CHECK_THROWS_AS(rounds_for_epsilon(0.5, 1.0, 0.0), DomainError);
    CHECK_THROWS_AS(rounds_for_epsilon(0.5, -1.0, 0.1), DomainError);

    // oracle: iterate the recursion e_{t+1} = theta e_t
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> th(0.05, 0.995), lg(-8.0, 3.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double theta = th(rng);
        const double dist = std::pow(10.0, lg(rng));
        const double eps = std::pow(10.0, lg(rng));
        std::size_t t = 0;
        double e = dist;
        while (e > eps * (1.0 + 1e-12)) {
            e *= theta;
            ++t;
        }
        CAPTURE(theta);
        CAPTURE(dist);
        CAPTURE(eps);
        CHECK(rounds_for_epsilon(theta, dist, eps) == t);
    }
}

TEST_CASE("rounds are monotone") {
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double eps = 1e-9; eps < 10.0; eps *= 1.7) {
        const auto n = rounds_for_epsilon(0.8, 2.0, eps);
        CHECK(n <= prev);
        prev = n;
    }
    std::size_t last = 0;
    for (double theta = 0.01; theta < 1.0; theta += 0.01) {
        const auto n = rounds_for_epsilon(theta, 2.0, 1e-4);
        CHECK(n >= last);
        last = n;
    }
}

TEST_CASE("bias and batch diagnostics") {
    const auto f = compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 1.0, 5, std::nullopt, 2.0);
    CHECK(bias_term(f, 2.0, 3.0) == doctest::Approx(f.xi * 4.0 / (1.0 - f.psi) * 3.0));
    CHECK(batch_gamma_lower_bound(f, 6.0, 4.0) == doctest::Approx(f.xi * 6.0 / (f.delta * 4.0)));
    const auto bad = compute_theory_factors(TheoryVariant::fed_ht, 2, 1, 1.0, 1, std::nullopt, 2.0);
    CHECK(std::isinf(bias_term(bad, 1.0, 1.0)));
    const auto no_l = compute_theory_factors(TheoryVariant::fed_ht, 401, 1, 1.0, 5);
    CHECK_THROWS_AS(bias_term(no_l, 1.0, 1.0), DomainError);
    CHECK_THROWS_AS(batch_gamma_lower_bound(f, 1.0, 0.0), DomainError);

    const ParameterVector g{0.5, -3.0, 0.1, 2.0, 0.0};
    const ParameterVector xs{1.0, 0.0, 0.0, 0.0, 0.0};
    // width min(5, 2*1*1) = 2 -> {1, 3} plus supp(x*) = {0}
    CHECK(restricted_gradient_norm_sq(g, xs, 1, 1) == 0.25 + 9.0 + 4.0);
    CHECK(restricted_gradient_norm_sq(g, xs, 10, 10) == squared_norm(g.values()));
}

TEST_CASE("dissimilarity of identical clients is one") {
    std::mt19937_64 rng(2);
    const auto m = ObjectiveModel::least_squares();
    const auto b = random_batch(m, 10, 6, rng);
    const auto clients = as_clients({b, b, b});
    const std::vector<double> w(3, 1.0 / 3.0);
    std::vector<ParameterVector> probes{ParameterVector(6), random_vector(6, rng)};
    const auto rep = estimate_dissimilarity(clients, m, w, probes, 3);
    CHECK(std::fabs(rep.b_estimate - 1.0) < 1e-9);
    CHECK(rep.num_probe_points == 2);
    CHECK(rep.skipped_probes == 0);
    CHECK(rep.support_size_probed == 3);
}

TEST_CASE("opposed gradients are skipped") {
    const auto m = ObjectiveModel::least_squares();
    const auto clients = as_clients({SampleBatch::dense(2, {1.0, 0.0}, {1.0}),
                                     SampleBatch::dense(2, {1.0, 0.0}, {-1.0})});
    const std::vector<double> w{0.5, 0.5};
    const std::vector<ParameterVector> zero{ParameterVector(2)};
    CHECK_THROWS_AS(estimate_dissimilarity(clients, m, w, zero, 1), EstimationError);
    const std::vector<ParameterVector> both{ParameterVector(2), ParameterVector{1.0, 0.0}};
    const auto rep = estimate_dissimilarity(clients, m, w, both, 1);
    CHECK(rep.skipped_probes == 1);
    CHECK(rep.num_probe_points == 1);
    CHECK(rep.b_estimate == doctest::Approx(std::sqrt(2.0)));
    CHECK_THROWS_AS(estimate_dissimilarity(clients, m, w, both, 0), ConfigError);
    CHECK_THROWS_AS(estimate_dissimilarity(clients, m, w, both, 3), ConfigError);
    CHECK_THROWS_AS(estimate_dissimilarity(clients, m, w, {}, 1), EstimationError);
}

TEST_CASE("dissimilarity is at least one and grows with heterogeneity") {
    auto spec = SyntheticSpec::sim1();
    spec.num_clients = 20;
    spec.samples_per_client = 50;
    spec.dim = 100;
    spec.true_support_size = 10;
    spec.seed = 3;
    auto estimate = [&](double ab) {
        auto s = spec;
        s.alpha = s.beta = ab;
        const auto data = generate_sim1(s);
        const std::vector<double> w(20, 0.05);
        std::vector<ParameterVector> probes{ParameterVector(100), data.truth.pooled};
        return estimate_dissimilarity(data.clients, ObjectiveModel::least_squares(), w, probes, 20)
            .b_estimate;
    };
    const double lo = estimate(0.01), hi = estimate(1.0);
    CHECK(lo >= 1.0);
    CHECK(hi > lo);
}

TEST_CASE("empirical condition number of a known quadratic") {
    // (1/2)||y - Zx||^2 * 2 with Z = diag(2, 1): Hessian diag(4, 1)
    const auto clients = as_clients({SampleBatch::dense(2, {2.0, 0.0, 0.0, 1.0}, {1.0, 1.0})});
    const std::vector<double> w{1.0};
    const auto est = estimate_condition(clients, ObjectiveModel::least_squares(), w,
                                        ParameterVector{0.3, -0.2}, 0, 200, 1);
    CHECK(est.probes == 200);
    CHECK(est.smoothness <= 4.0 + 1e-6);
    CHECK(est.smoothness > 3.9);
    CHECK(est.strong_convexity >= 1.0 - 1e-6);
    CHECK(est.strong_convexity < 1.1);
    CHECK(est.kappa == doctest::Approx(est.smoothness / est.strong_convexity));
    const auto sparse = estimate_condition(clients, ObjectiveModel::least_squares(), w,
                                           ParameterVector(2), 1, 50, 1);
    CHECK(sparse.smoothness == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(sparse.strong_convexity == doctest::Approx(1.0).epsilon(1e-6));
    const auto flat = as_clients({SampleBatch::dense(2, {1.0, 0.0}, {1.0})});
    CHECK_THROWS_AS(estimate_condition(flat, ObjectiveModel::least_squares(), w, ParameterVector(2),
                                       1, 50, 1),
                    EstimationError);
}

TEST_CASE("estimation error and support F1") {
    const ParameterVector xs{3.0, 4.0};
    CHECK(estimation_error(xs, xs) == 0.0);
    CHECK(estimation_error(ParameterVector(2), xs) == 25.0);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        const auto a = random_vector(17, rng), b = random_vector(17, rng);
        double s = 0.0;
        for (std::size_t i = 0; i < 17; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(estimation_error(a, b) == doctest::Approx(s).epsilon(1e-14));
    }

    CHECK(support_f1(ParameterVector{1, 2, 0}, ParameterVector{5, 6, 0}) == 1.0);
    CHECK(support_f1(ParameterVector{1, 0, 0}, ParameterVector{0, 6, 0}) == 0.0);
    CHECK(support_f1(ParameterVector{0, 1, 1, 1, 0}, ParameterVector{0, 0, 1, 1, 1}) ==
          doctest::Approx(2.0 / 3.0));
    CHECK(support_f1(ParameterVector(4), ParameterVector(4)) == 1.0);
    CHECK(support_f1(ParameterVector(4), ParameterVector{0, 1, 0, 0}) == 0.0);
    CHECK_THROWS_AS(support_f1(ParameterVector(3), ParameterVector(4)), DimensionError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedht/error.hpp"
#include "fedht/objectives.hpp"
#include "test_util.hpp"

using namespace fedht;
using namespace fedht::testing;

TEST_CASE("loss values at zero") {
    const auto one = SampleBatch::dense(2, {1.0, 0.0}, {2.0});
    CHECK(loss_value(ObjectiveModel::least_squares(), ParameterVector(2), one) == 4.0);

    const auto pos = SampleBatch::dense(2, {0.3, -7.0}, {1.0});
    const auto neg = SampleBatch::dense(2, {0.3, -7.0}, {0.0});
    CHECK(loss_value(ObjectiveModel::logistic(0.0), ParameterVector(2), pos) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(loss_value(ObjectiveModel::logistic(0.0), ParameterVector(2), neg) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));

    const auto s = SampleBatch::dense(3, {1.0, 2.0, 3.0}, {4.0});
    CHECK(loss_value(ObjectiveModel::softmax(10, 0.0), ParameterVector(30), s) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-15));
}

TEST_CASE("regularization adds half lambda times the squared norm") {
    const auto b = SampleBatch::dense(2, {1.0, 0.0}, {0.0});
    const ParameterVector x{0.0, 3.0};
    CHECK(loss_value(ObjectiveModel::least_squares(0.5), x, b) == doctest::Approx(0.25 * 9.0));
    const auto g = gradient(ObjectiveModel::least_squares(0.5), x, b);
    CHECK(g[0] == doctest::Approx(0.0));
    CHECK(g[1] == doctest::Approx(1.5));
}

TEST_CASE("closed-form gradients at zero") {
    const auto one = SampleBatch::dense(2, {1.0, 0.0}, {2.0});
    CHECK(gradient(ObjectiveModel::least_squares(), ParameterVector(2), one) ==
          ParameterVector{-4.0, 0.0});
    const auto b = SampleBatch::dense(2, {1.0, 1.0}, {1.0});
    CHECK(gradient(ObjectiveModel::logistic(0.0), ParameterVector(2), b) ==
          ParameterVector{-0.5, -0.5});
}

TEST_CASE("gradients agree with central differences") {
    std::mt19937_64 rng(11);
    const ObjectiveModel models[] = {ObjectiveModel::least_squares(),
                                     ObjectiveModel::logistic(1e-3),
                                     ObjectiveModel::softmax(4, 1e-3)};
    for (const auto& m : models) {
        CAPTURE(to_string(m.kind));
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t d = 1 + rng() % 6;
            const std::size_t rows = 1 + rng() % 8;
            const auto batch = random_batch(m, rows, d, rng);
            const auto x = random_vector(m.parameter_dim(d), rng, 0.7);
            const auto g = gradient(m, x, batch);
            const auto fd = numeric_gradient(m, x, batch);
            CHECK(relative_error(g.values(), fd.values()) < 1e-5);
        }
    }
}

TEST_CASE("gradients on a sparse iterate match the dense path") {
    std::mt19937_64 rng(5);
    const auto m = ObjectiveModel::softmax(3, 1e-3);
    const auto batch = random_batch(m, 40, 20, rng);
    auto x = hard_threshold_blocks(random_vector(60, rng), 2, 3);
    // same rows in sparse storage
    std::vector<std::size_t> off{0};
    std::vector<std::uint32_t> cols;
    std::vector<double> vals, ys(batch.targets().begin(), batch.targets().end());
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        for (std::uint32_t c = 0; c < 20; ++c) {
            cols.push_back(c);
            vals.push_back(batch.at(r, c));
        }
        off.push_back(cols.size());
    }
    const auto sp = SampleBatch::sparse(20, off, cols, vals, ys);
    CHECK(relative_error(gradient(m, x, batch).values(), gradient(m, x, sp).values()) < 1e-13);
    CHECK(loss_value(m, x, batch) == doctest::Approx(loss_value(m, x, sp)).epsilon(1e-13));
}

TEST_CASE("large margins stay finite") {
    const auto b = SampleBatch::dense(1, {1.0, -1.0}, {0.0, 1.0});
    const ParameterVector x{800.0};
    CHECK(std::isfinite(loss_value(ObjectiveModel::logistic(0.0), x, b)));
    CHECK(gradient(ObjectiveModel::logistic(0.0), x, b).all_finite());
    const auto c = SampleBatch::dense(1, {1.0}, {1.0});
    const ParameterVector xs{900.0, -900.0};
    CHECK(std::isfinite(loss_value(ObjectiveModel::softmax(2, 0.0), xs, c)));
}

TEST_CASE("softmax rejects labels out of range") {
    const auto m = ObjectiveModel::softmax(3, 0.0);
    CHECK_THROWS_AS(loss_value(m, ParameterVector(6), SampleBatch::dense(2, {1, 1}, {3.0})),
                    ConfigError);
    CHECK_THROWS_AS(loss_value(m, ParameterVector(6), SampleBatch::dense(2, {1, 1}, {0.5})),
                    ConfigError);
    CHECK_THROWS_AS(loss_value(m, ParameterVector(4), SampleBatch::dense(2, {1, 1}, {0.0})),
                    DimensionError);
    CHECK_THROWS_AS(ObjectiveModel::softmax(1).validate(), ConfigError);
    CHECK_THROWS_AS(ObjectiveModel::least_squares(-1.0).validate(), ConfigError);
}

TEST_CASE("loss is invariant under row permutation") {
    std::mt19937_64 rng(3);
    const auto m = ObjectiveModel::logistic(1e-4);
    const auto batch = random_batch(m, 50, 7, rng);
    const auto x = random_vector(7, rng);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const double base = loss_value(m, x, batch);
    const double shuffled = loss_value(m, x, batch.select(perm));
    CHECK(std::fabs(base - shuffled) <= 1e-12 * std::fabs(base));
    std::vector<std::size_t> inverse(50);
    for (std::size_t k = 0; k < 50; ++k) inverse[perm[k]] = k;
    CHECK(loss_value(m, x, batch.select(perm).select(inverse)) == base);
}

TEST_CASE("midpoint convexity") {
    std::mt19937_64 rng(8);
    const ObjectiveModel models[] = {ObjectiveModel::least_squares(),
                                     ObjectiveModel::logistic(0.0),
                                     ObjectiveModel::softmax(3, 0.0)};
    for (const auto& m : models) {
        for (int t = 0; t < 50; ++t) {
            const auto batch = random_batch(m, 10, 4, rng);
            const auto a = random_vector(m.parameter_dim(4), rng, 2.0);
            const auto b = random_vector(m.parameter_dim(4), rng, 2.0);
            ParameterVector mid(a.dim());
            for (std::size_t i = 0; i < a.dim(); ++i) mid[i] = 0.5 * (a[i] + b[i]);
            CHECK(loss_value(m, mid, batch) <=
                  0.5 * loss_value(m, a, batch) + 0.5 * loss_value(m, b, batch) + 1e-12);
        }
    }
}

TEST_CASE("full-batch minibatch without replacement equals the exact gradient") {
    std::mt19937_64 rng(2);
    const auto m = ObjectiveModel::least_squares();
    const ClientDataset c{0, random_batch(m, 12, 5, rng)};
    const auto x = random_vector(5, rng);
    Rng stream = make_stream(1, 0);
    CHECK(minibatch_gradient(m, x, c, 12, stream, Sampling::without_replacement) ==
          gradient(m, x, c.batch));
    CHECK(minibatch_gradient(m, x, c, 50, stream, Sampling::without_replacement) ==
          gradient(m, x, c.batch));
}

TEST_CASE("sampling is deterministic per stream") {
    Rng a = make_stream(42, 3), b = make_stream(42, 3), other = make_stream(42, 4);
    const auto ra = sample_rows(100, 20, a);
    CHECK(ra == sample_rows(100, 20, b));
    CHECK(ra != sample_rows(100, 20, other));
    for (auto r : ra) CHECK(r < 100);
    Rng w = make_stream(1, 1);
    auto distinct = sample_rows(30, 30 - 1, w, Sampling::without_replacement);
    std::sort(distinct.begin(), distinct.end());
    CHECK(std::adjacent_find(distinct.begin(), distinct.end()) == distinct.end());
    CHECK_THROWS_AS(sample_rows(0, 1, w), ConfigError);
    CHECK_THROWS_AS(sample_rows(5, 0, w), ConfigError);
    const ClientDataset empty{7, SampleBatch::dense(2, {}, {})};
    CHECK_THROWS_AS(minibatch_gradient(ObjectiveModel::least_squares(), ParameterVector(2), empty,
                                       1, w),
                    ConfigError);
}

TEST_CASE("minibatch gradients are unbiased") {
    std::mt19937_64 rng(17);
    const auto m = ObjectiveModel::logistic(1e-4);
    const ClientDataset c{0, random_batch(m, 30, 5, rng)};
    const auto x = random_vector(5, rng);
    const auto full = gradient(m, x, c.batch);
    const int draws = 10000;
    std::vector<double> mean(5, 0.0), sq(5, 0.0);
    Rng stream = make_stream(9, 0);
    for (int k = 0; k < draws; ++k) {
        const auto g = minibatch_gradient(m, x, c, 3, stream);
        for (std::size_t j = 0; j < 5; ++j) {
            mean[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    for (std::size_t j = 0; j < 5; ++j) {
        const double mu = mean[j] / draws;
        const double sigma = std::sqrt(std::max(0.0, sq[j] / draws - mu * mu));
        CAPTURE(j);
        CHECK(std::fabs(mu - full[j]) <= 3.0 * sigma / std::sqrt(static_cast<double>(draws)));
    }
}

TEST_CASE("smoothness estimates") {
    const auto z3 = SampleBatch::dense(3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0});
    CHECK(estimate_smoothness(ObjectiveModel::least_squares(), z3).value ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    const auto row = SampleBatch::dense(2, {3.0, 4.0}, {1.0});
    CHECK(estimate_smoothness(ObjectiveModel::least_squares(), row).value ==
          doctest::Approx(50.0).epsilon(1e-9));
    CHECK(estimate_smoothness(ObjectiveModel::logistic(0.0), row).value ==
          doctest::Approx(12.5).epsilon(1e-9));
    CHECK(estimate_smoothness(ObjectiveModel::softmax(2, 0.0), row).value ==
          doctest::Approx(25.0).epsilon(1e-9));
    CHECK(estimate_smoothness(ObjectiveModel::logistic(0.5), row).value ==
          doctest::Approx(13.0).epsilon(1e-9));

    // diag(9, 1): top eigenvalue 9 of Z^T Z
    const auto diag = SampleBatch::dense(2, {3.0, 0.0, 0.0, 1.0}, {0, 0});
    const auto top = gram_top_eigenvalue(diag);
    CHECK(top.converged);
    CHECK(top.value == doctest::Approx(9.0).epsilon(1e-5));
    CHECK(top.value >= 9.0 * (1.0 - 1e-9));

    std::vector<ClientDataset> shaped;
    shaped.push_back({0, row});
    shaped.push_back({1, SampleBatch::dense(2, {1.0, 0.0}, {0.0})});
    CHECK(estimate_smoothness(ObjectiveModel::least_squares(), shaped).value ==
          doctest::Approx(50.0).epsilon(1e-9));
}

TEST_CASE("variance estimate") {
    const auto m = ObjectiveModel::least_squares();
    const ClientDataset single{0, SampleBatch::dense(2, {1.0, 2.0}, {3.0})};
    CHECK(estimate_variance(m, ParameterVector{0.5, 0.5}, single).sigma_sq == 0.0);
    const ClientDataset dup{0, SampleBatch::dense(2, {1, 2, 1, 2, 1, 2}, {3, 3, 3})};
    CHECK(estimate_variance(m, ParameterVector{0.1, -0.4}, dup).sigma_sq < 1e-20);

    std::mt19937_64 rng(23);
    const ClientDataset c{0, random_batch(m, 20, 5, rng)};
    const auto x = random_vector(5, rng);
    // two passes: mean gradient, then mean squared deviation
    std::vector<std::vector<double>> per(20, std::vector<double>(5));
    std::vector<double> mean(5, 0.0);
    for (std::size_t r = 0; r < 20; ++r) {
        double resid = c.batch.target(r);
        for (std::size_t j = 0; j < 5; ++j) resid -= c.batch.at(r, j) * x[j];
        for (std::size_t j = 0; j < 5; ++j) {
            per[r][j] = -2.0 * resid * c.batch.at(r, j);
            mean[j] += per[r][j] / 20.0;
        }
    }
    double expect = 0.0;
    for (std::size_t r = 0; r < 20; ++r) {
        for (std::size_t j = 0; j < 5; ++j) expect += (per[r][j] - mean[j]) * (per[r][j] - mean[j]);
    }
    expect /= 20.0;
    CHECK(estimate_variance(m, x, c).sigma_sq == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("weighted objective and gradient") {
    std::mt19937_64 rng(4);
    const auto m = ObjectiveModel::least_squares();
    auto clients = as_clients({random_batch(m, 5, 3, rng), random_batch(m, 9, 3, rng)});
    const auto x = random_vector(3, rng);
    const std::vector<double> w{0.25, 0.75};
    const double f = 0.25 * loss_value(m, x, clients[0].batch) +
                     0.75 * loss_value(m, x, clients[1].batch);
    CHECK(weighted_objective(m, x, clients, w) == doctest::Approx(f).epsilon(1e-14));
    const auto g = weighted_gradient(m, x, clients, w);
    const auto g0 = gradient(m, x, clients[0].batch), g1 = gradient(m, x, clients[1].batch);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(g[j] == doctest::Approx(0.25 * g0[j] + 0.75 * g1[j]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(weighted_objective(m, x, clients, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("project_sparse thresholds each class block") {
    const auto m = ObjectiveModel::softmax(2, 0.0);
    const ParameterVector x{1, -3, 2, 0.5, 4, -1};
    CHECK(project_sparse(m, x, 1) == ParameterVector{0, -3, 0, 0, 4, 0});
    CHECK(project_sparse(m, x, 10) == x);
    CHECK(project_sparse(ObjectiveModel::least_squares(), x, 2) ==
          ParameterVector{0, -3, 0, 0, 4, 0});
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fedht/error.hpp"
#include "fedht/tensor.hpp"

using namespace fedht;

namespace {

// Closest tau-sparse vector by trying every support of size tau.
ParameterVector brute_force_ht(const ParameterVector& x, std::size_t tau) {
    const std::size_t d = x.dim();
    double best_drop = -1.0;
    std::vector<bool> best_mask;
    std::vector<bool> mask(d, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(tau), true);
    // prev_permutation over a mask starting with ones enumerates in lexicographic
    // order of the kept index sets, so the first maximiser is the lowest-index one.
    do {
        double kept = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (mask[i]) kept += x[i] * x[i];
        }
        if (kept > best_drop) {
            best_drop = kept;
            best_mask = mask;
        }
    } while (std::prev_permutation(mask.begin(), mask.end()));
    ParameterVector out(d);
    for (std::size_t i = 0; i < d; ++i) {
        if (best_mask[i]) out[i] = x[i];
    }
    return out;
}

}  // namespace

TEST_CASE("hard threshold keeps the largest magnitudes") {
    const ParameterVector x{3.0, -5.0, 1.0, 4.0};
    CHECK(hard_threshold(x, 2) == ParameterVector{0.0, -5.0, 0.0, 4.0});
    CHECK(hard_threshold(x, 4) == x);
    CHECK(hard_threshold(x, 1) == ParameterVector{0.0, -5.0, 0.0, 0.0});
}

TEST_CASE("hard threshold ties go to the lower index") {
    const ParameterVector x{1.0, -1.0, 1.0, 1.0};
    CHECK(hard_threshold(x, 2) == ParameterVector{1.0, -1.0, 0.0, 0.0});
    CHECK(hard_threshold(ParameterVector{0.0, 0.0, 0.0}, 2) == ParameterVector{0.0, 0.0, 0.0});
    CHECK(top_magnitude_support(std::vector<double>{2.0, 2.0}, 1) == SupportSet{0});
    CHECK(top_magnitude_support(std::vector<double>{0.0, 7.0, -7.0, 7.0}, 2) == SupportSet{1, 2});
}

TEST_CASE("hard threshold rejects out-of-range budgets") {
    const ParameterVector x{1.0, 2.0};
    CHECK_THROWS_AS(hard_threshold(x, 0), ConfigError);
    CHECK_THROWS_AS(hard_threshold(x, 3), ConfigError);
}

TEST_CASE("hard threshold is idempotent and never increases the support") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        ParameterVector x(30);
        for (std::size_t i = 0; i < 30; ++i) x[i] = n(rng);
        const auto h = hard_threshold(x, 7);
        CHECK(h.nonzeros() == 7);
        CHECK(hard_threshold(h, 7) == h);
    }
}

TEST_CASE("hard threshold agrees with exhaustive support search") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> small(-2, 2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + static_cast<std::size_t>(trial % 10);
        ParameterVector x(d);
        // Integer draws produce plenty of exact magnitude ties.
        for (std::size_t i = 0; i < d; ++i) x[i] = trial % 2 ? n(rng) : small(rng);
        for (std::size_t tau = 1; tau <= d; ++tau) {
            REQUIRE(hard_threshold(x, tau) == brute_force_ht(x, tau));
        }
    }
}

TEST_CASE("block thresholding treats each block independently") {
    const ParameterVector x{1.0, 3.0, 2.0, -9.0, 0.5, 0.25};
    CHECK(hard_threshold_blocks(x, 1, 2) == ParameterVector{0.0, 3.0, 0.0, -9.0, 0.0, 0.0});
    CHECK(hard_threshold_blocks(x, 2, 1) == hard_threshold(x, 2));
    CHECK_THROWS_AS(hard_threshold_blocks(x, 1, 4), DimensionError);
}

TEST_CASE("support sets") {
    const auto s = SupportSet::from_unsorted({5, 1, 5, 3});
    CHECK(s.indices() == std::vector<std::size_t>{1, 3, 5});
    CHECK(s.contains(3));
    CHECK_FALSE(s.contains(4));
    CHECK_NOTHROW(s.validate(6));
    CHECK_THROWS_AS(s.validate(5), DimensionError);
    CHECK(support_union({SupportSet{1, 2}, SupportSet{2, 7}, SupportSet{}}) == SupportSet{1, 2, 7});
    CHECK(SupportSet{}.empty());
    CHECK(ParameterVector{0.0, 2.0, 0.0, -1.0}.support() == SupportSet{1, 3});
}

TEST_CASE("restriction zeroes coordinates outside the set") {
    const ParameterVector x{1.0, 2.0, 3.0};
    CHECK(restrict_to(x, SupportSet{0, 2}) == ParameterVector{1.0, 0.0, 3.0});
    CHECK(restrict_to(x, SupportSet{}) == ParameterVector{0.0, 0.0, 0.0});
    CHECK_THROWS_AS(restrict_to(x, SupportSet{3}), DimensionError);
}

TEST_CASE("vector helpers") {
    const std::vector<double> a{1.0, 2.0, 2.0};
    const std::vector<double> b{0.0, 0.0, 0.0};
    CHECK(squared_norm(a) == 9.0);
    CHECK(squared_distance(a, b) == 9.0);
    CHECK(dot(a, a) == 9.0);
    std::vector<double> y{1.0, 1.0, 1.0};
    axpy(2.0, a, y);
    CHECK(y == std::vector<double>{3.0, 5.0, 5.0});
    CHECK_THROWS_AS(dot(a, std::vector<double>{1.0}), DimensionError);
    CHECK_THROWS_AS(axpy(1.0, a, std::span<double>(y).first(2)), DimensionError);
}

TEST_CASE("finiteness and sparsity budget checks") {
    CHECK(ParameterVector{1.0, 2.0}.all_finite());
    CHECK_FALSE((ParameterVector{1.0, std::nan("")}.all_finite()));
    CHECK_FALSE(ParameterVector{HUGE_VAL}.all_finite());
    CHECK_NOTHROW((SparsityBudget{4, 2}.validate(10)));
    CHECK_THROWS_AS((SparsityBudget{0, 0}.validate(10)), ConfigError);
    CHECK_THROWS_AS((SparsityBudget{11, 0}.validate(10)), ConfigError);
}

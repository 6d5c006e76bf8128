#pragma once

// Dense parameter vectors, support sets and the hard-thresholding operator.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fedht {

/// Strictly increasing coordinate indices.
class SupportSet {
public:
    SupportSet() = default;
    SupportSet(std::initializer_list<std::size_t> indices);

    /// Sorts and deduplicates `indices`.
    static SupportSet from_unsorted(std::vector<std::size_t> indices);

    const std::vector<std::size_t>& indices() const noexcept { return indices_; }
    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    bool contains(std::size_t index) const;

    /// Throws DimensionError if any index is >= dim.
    void validate(std::size_t dim) const;

    bool operator==(const SupportSet&) const = default;

private:
    std::vector<std::size_t> indices_;
};

class ParameterVector {
public:
    ParameterVector() = default;
    explicit ParameterVector(std::size_t dim) : values_(dim, 0.0) {}
    explicit ParameterVector(std::vector<double> values) : values_(std::move(values)) {}
    ParameterVector(std::initializer_list<double> values) : values_(values) {}

    std::size_t dim() const noexcept { return values_.size(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const std::vector<double>& data() const noexcept { return values_; }

    /// Coordinates that are not exactly 0.0.
    SupportSet support() const;
    std::size_t nonzeros() const;
    bool all_finite() const;

    bool operator==(const ParameterVector&) const = default;

private:
    std::vector<double> values_;
};

/// Sparsity level with optional known true sparsity.
struct SparsityBudget {
    std::size_t tau = 1;
    std::size_t tau_star = 0;  // 0 = unknown

    void validate(std::size_t dim) const;
};

/// Keeps the `tau` largest-magnitude entries, zeroes the rest. Equal
/// magnitudes are resolved in favour of the lower index.
ParameterVector hard_threshold(const ParameterVector& x, std::size_t tau);

/// Applies hard_threshold independently to `blocks` equal contiguous slices
/// (one per class vector for multi-class parameters).
ParameterVector hard_threshold_blocks(const ParameterVector& x, std::size_t tau,
                                      std::size_t blocks);

/// Indices kept by hard_threshold, ascending.
SupportSet top_magnitude_support(std::span<const double> x, std::size_t tau);

/// x on the indices in `s`, zero elsewhere.
ParameterVector restrict_to(const ParameterVector& x, const SupportSet& s);

SupportSet support_union(std::span<const SupportSet> parts);
SupportSet support_union(std::initializer_list<SupportSet> parts);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

}  // namespace fedht

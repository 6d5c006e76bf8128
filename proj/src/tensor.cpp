#include "fedht/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedht/error.hpp"

namespace fedht {

SupportSet::SupportSet(std::initializer_list<std::size_t> indices)
    : SupportSet(from_unsorted(std::vector<std::size_t>(indices))) {}

SupportSet SupportSet::from_unsorted(std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    SupportSet s;
    s.indices_ = std::move(indices);
    return s;
}

bool SupportSet::contains(std::size_t index) const {
    return std::binary_search(indices_.begin(), indices_.end(), index);
}

void SupportSet::validate(std::size_t dim) const {
    if (!indices_.empty() && indices_.back() >= dim) {
        throw DimensionError("support index " + std::to_string(indices_.back()) +
                             " out of range for dimension " + std::to_string(dim));
    }
}

SupportSet ParameterVector::support() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] != 0.0) idx.push_back(i);
    }
    return SupportSet::from_unsorted(std::move(idx));
}

std::size_t ParameterVector::nonzeros() const {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [](double v) { return v != 0.0; }));
}

bool ParameterVector::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void SparsityBudget::validate(std::size_t dim) const {
    if (tau < 1 || tau > dim) {
        throw ConfigError("sparsity tau=" + std::to_string(tau) + " must lie in [1, " +
                          std::to_string(dim) + "]");
    }
    if (tau_star > tau) {
        throw ConfigError("true sparsity tau_star=" + std::to_string(tau_star) +
                          " exceeds tau=" + std::to_string(tau));
    }
}

SupportSet top_magnitude_support(std::span<const double> x, std::size_t tau) {
    const std::size_t d = x.size();
    if (tau == 0 || tau > d) {
        throw ConfigError("hard threshold budget " + std::to_string(tau) + " outside [1, " +
                          std::to_string(d) + "]");
    }
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (tau < d) {
        // Strict total order: larger magnitude first, then lower index.
        auto before = [&](std::size_t a, std::size_t b) {
            const double ma = std::fabs(x[a]);
            const double mb = std::fabs(x[b]);
            return ma > mb || (ma == mb && a < b);
        };
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tau - 1),
                         order.end(), before);
        order.resize(tau);
    }
    return SupportSet::from_unsorted(std::move(order));
}

ParameterVector hard_threshold(const ParameterVector& x, std::size_t tau) {
    const auto keep = top_magnitude_support(x.values(), tau);
    return restrict_to(x, keep);
}

ParameterVector hard_threshold_blocks(const ParameterVector& x, std::size_t tau,
                                      std::size_t blocks) {
    if (blocks <= 1) return hard_threshold(x, tau);
    if (x.dim() % blocks != 0) {
        throw DimensionError("parameter length " + std::to_string(x.dim()) +
                             " not divisible into " + std::to_string(blocks) + " blocks");
    }
    const std::size_t width = x.dim() / blocks;
    ParameterVector out(x.dim());
    for (std::size_t b = 0; b < blocks; ++b) {
        const auto slice = x.values().subspan(b * width, width);
        const auto keep = top_magnitude_support(slice, tau);
        for (std::size_t i : keep.indices()) {
            out[b * width + i] = slice[i];
        }
    }
    return out;
}

ParameterVector restrict_to(const ParameterVector& x, const SupportSet& s) {
    s.validate(x.dim());
    ParameterVector out(x.dim());
    for (std::size_t i : s.indices()) out[i] = x[i];
    return out;
}

SupportSet support_union(std::span<const SupportSet> parts) {
    std::vector<std::size_t> all;
    for (const auto& p : parts) all.insert(all.end(), p.indices().begin(), p.indices().end());
    return SupportSet::from_unsorted(std::move(all));
}

SupportSet support_union(std::initializer_list<SupportSet> parts) {
    return support_union(std::span<const SupportSet>(parts.begin(), parts.size()));
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace fedht

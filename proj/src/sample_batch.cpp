#include "fedht/sample_batch.hpp"

#include <algorithm>
#include <string>

#include "fedht/error.hpp"

namespace fedht {

SampleBatch SampleBatch::dense(std::size_t dim, std::vector<double> row_major,
                               std::vector<double> targets) {
    if (dim == 0) throw DimensionError("sample batch dimension must be positive");
    if (row_major.size() != dim * targets.size()) {
        throw DimensionError("dense batch holds " + std::to_string(row_major.size()) +
                             " values, expected " + std::to_string(dim * targets.size()));
    }
    SampleBatch b;
    b.dim_ = dim;
    b.values_ = std::move(row_major);
    b.targets_ = std::move(targets);
    const std::size_t n = b.targets_.size();
    b.by_column_.resize(b.values_.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim; ++c) b.by_column_[c * n + r] = b.values_[r * dim + c];
    }
    return b;
}

SampleBatch SampleBatch::sparse(std::size_t dim, std::vector<std::size_t> row_offsets,
                                std::vector<std::uint32_t> columns, std::vector<double> values,
                                std::vector<double> targets) {
    if (dim == 0) throw DimensionError("sample batch dimension must be positive");
    if (row_offsets.size() != targets.size() + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != values.size() || columns.size() != values.size()) {
        throw DimensionError("inconsistent sparse batch layout");
    }
    for (std::size_t r = 0; r + 1 < row_offsets.size(); ++r) {
        if (row_offsets[r] > row_offsets[r + 1]) throw DimensionError("row offsets decrease");
        for (std::size_t k = row_offsets[r]; k < row_offsets[r + 1]; ++k) {
            if (columns[k] >= dim) throw DimensionError("column index out of range");
            if (k > row_offsets[r] && columns[k] <= columns[k - 1]) {
                throw DimensionError("columns within a row must be strictly increasing");
            }
        }
    }
    SampleBatch b;
    b.dim_ = dim;
    b.sparse_ = true;
    b.offsets_ = std::move(row_offsets);
    b.columns_ = std::move(columns);
    b.values_ = std::move(values);
    b.targets_ = std::move(targets);
    return b;
}

void SampleBatch::set_targets(std::vector<double> targets) {
    if (targets.size() != targets_.size()) throw DimensionError("target count mismatch");
    targets_ = std::move(targets);
}

double SampleBatch::dot_row(std::size_t r, std::span<const double> x) const {
    double s = 0.0;
    if (sparse_) {
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) s += values_[k] * x[columns_[k]];
    } else {
        const double* row = values_.data() + r * dim_;
        for (std::size_t c = 0; c < dim_; ++c) s += row[c] * x[c];
    }
    return s;
}

double SampleBatch::dot_row_on(std::size_t r, std::span<const double> x,
                               std::span<const std::size_t> support) const {
    if (sparse_) return dot_row(r, x);
    const double* row = values_.data() + r * dim_;
    double s = 0.0;
    for (std::size_t c : support) s += row[c] * x[c];
    return s;
}

void SampleBatch::margins_on(std::span<const double> x, std::span<const std::size_t> support,
                             std::span<double> out) const {
    const std::size_t n = rows();
    if (out.size() != n) throw DimensionError("margin buffer must hold one value per row");
    if (sparse_) {
        for (std::size_t r = 0; r < n; ++r) out[r] = dot_row(r, x);
        return;
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t c : support) {
        const double xc = x[c];
        const double* col = by_column_.data() + c * n;
        for (std::size_t r = 0; r < n; ++r) out[r] += col[r] * xc;
    }
}

void SampleBatch::add_row(std::size_t r, double a, std::span<double> out) const {
    if (sparse_) {
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) out[columns_[k]] += a * values_[k];
    } else {
        const double* row = values_.data() + r * dim_;
        double* o = out.data();
        for (std::size_t c = 0; c < dim_; ++c) o[c] += a * row[c];
    }
}

double SampleBatch::row_squared_norm(std::size_t r) const {
    double s = 0.0;
    for_each_entry(r, [&](std::size_t, double v) { s += v * v; });
    return s;
}

double SampleBatch::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= dim_) throw DimensionError("sample index out of range");
    if (!sparse_) return values_[r * dim_ + c];
    const auto first = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[r]);
    const auto last = columns_.begin() + static_cast<std::ptrdiff_t>(offsets_[r + 1]);
    const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(c));
    return (it != last && *it == c) ? values_[static_cast<std::size_t>(it - columns_.begin())] : 0.0;
}

std::vector<double> SampleBatch::dense_row(std::size_t r) const {
    if (r >= rows()) throw DimensionError("row index out of range");
    std::vector<double> out(dim_, 0.0);
    for_each_entry(r, [&](std::size_t c, double v) { out[c] = v; });
    return out;
}

SampleBatch SampleBatch::select(std::span<const std::size_t> rows) const {
    std::vector<double> targets;
    targets.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= this->rows()) throw DimensionError("row index out of range");
        targets.push_back(targets_[r]);
    }
    if (!sparse_) {
        std::vector<double> vals;
        vals.reserve(rows.size() * dim_);
        for (std::size_t r : rows) {
            const auto first = values_.begin() + static_cast<std::ptrdiff_t>(r * dim_);
            vals.insert(vals.end(), first, first + static_cast<std::ptrdiff_t>(dim_));
        }
        return dense(dim_, std::move(vals), std::move(targets));
    }
    std::vector<std::size_t> offs{0};
    std::vector<std::uint32_t> cols;
    std::vector<double> vals;
    for (std::size_t r : rows) {
        for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) {
            cols.push_back(columns_[k]);
            vals.push_back(values_[k]);
        }
        offs.push_back(vals.size());
    }
    return sparse(dim_, std::move(offs), std::move(cols), std::move(vals), std::move(targets));
}

SampleBatch SampleBatch::concat(std::span<const SampleBatch> parts) {
    if (parts.empty()) throw DimensionError("cannot concatenate zero batches");
    const std::size_t dim = parts.front().dim();
    const bool sp = parts.front().is_sparse();
    std::vector<double> targets;
    std::vector<double> vals;
    std::vector<std::uint32_t> cols;
    std::vector<std::size_t> offs{0};
    for (const auto& p : parts) {
        if (p.dim() != dim || p.is_sparse() != sp) {
            throw DimensionError("concatenated batches differ in dimension or layout");
        }
        targets.insert(targets.end(), p.targets_.begin(), p.targets_.end());
        const std::size_t base = vals.size();
        vals.insert(vals.end(), p.values_.begin(), p.values_.end());
        if (sp) {
            cols.insert(cols.end(), p.columns_.begin(), p.columns_.end());
            for (std::size_t r = 1; r < p.offsets_.size(); ++r) offs.push_back(base + p.offsets_[r]);
        }
    }
    if (!sp) return dense(dim, std::move(vals), std::move(targets));
    return sparse(dim, std::move(offs), std::move(cols), std::move(vals), std::move(targets));
}

}  // namespace fedht

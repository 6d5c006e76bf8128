#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fedht {

/// Design matrix rows plus one target per row.
///
/// Rows are stored either densely (row-major) or in compressed sparse row
/// form; the accessors below hide the difference so the objectives work on
/// both. Generated data is dense, LibSVM input is sparse.
class SampleBatch {
public:
    SampleBatch() = default;

    static SampleBatch dense(std::size_t dim, std::vector<double> row_major,
                             std::vector<double> targets);
    static SampleBatch sparse(std::size_t dim, std::vector<std::size_t> row_offsets,
                              std::vector<std::uint32_t> columns, std::vector<double> values,
                              std::vector<double> targets);

    std::size_t rows() const noexcept { return targets_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    bool is_sparse() const noexcept { return sparse_; }
    std::size_t stored_entries() const noexcept { return values_.size(); }

    std::span<const double> targets() const noexcept { return targets_; }
    double target(std::size_t r) const { return targets_[r]; }
    void set_targets(std::vector<double> targets);

    /// z_r . x over a dim()-length x.
    double dot_row(std::size_t r, std::span<const double> x) const;
    /// z_r . x where x is known to vanish outside `support`.
    double dot_row_on(std::size_t r, std::span<const double> x,
                      std::span<const std::size_t> support) const;
    /// out[r] = z_r . x for every row, where x vanishes outside `support`.
    /// Dense batches read a column-major copy, touching only the listed columns.
    void margins_on(std::span<const double> x, std::span<const std::size_t> support,
                    std::span<double> out) const;

    /// out += a * z_r
    void add_row(std::size_t r, double a, std::span<double> out) const;
    double row_squared_norm(std::size_t r) const;

    double at(std::size_t r, std::size_t c) const;
    std::vector<double> dense_row(std::size_t r) const;

    /// Calls f(column, value) for every stored entry of row r.
    template <typename F>
    void for_each_entry(std::size_t r, F&& f) const {
        if (sparse_) {
            for (std::size_t k = offsets_[r]; k < offsets_[r + 1]; ++k) f(columns_[k], values_[k]);
        } else {
            const double* row = values_.data() + r * dim_;
            for (std::size_t c = 0; c < dim_; ++c) f(c, row[c]);
        }
    }

    /// Copies the listed rows (in the given order) into a new batch with the
    /// same storage layout.
    SampleBatch select(std::span<const std::size_t> rows) const;

    static SampleBatch concat(std::span<const SampleBatch> parts);

    bool operator==(const SampleBatch&) const = default;

private:
    std::size_t dim_ = 0;
    bool sparse_ = false;
    std::vector<double> values_;
    std::vector<double> by_column_;        // dense only, column-major copy of values_
    std::vector<std::uint32_t> columns_;   // sparse only
    std::vector<std::size_t> offsets_;     // sparse only, rows()+1 entries
    std::vector<double> targets_;
};

/// One client's local data. The weight hint is its sample count n_i.
struct ClientDataset {
    std::size_t client_id = 0;
    SampleBatch batch;

    std::size_t sample_count() const noexcept { return batch.rows(); }
};

}  // namespace fedht

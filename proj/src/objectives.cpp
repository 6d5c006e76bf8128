#include "fedht/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedht/error.hpp"

namespace fedht {

std::string to_string(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::least_squares: return "least_squares";
        case ObjectiveKind::logistic: return "logistic";
        case ObjectiveKind::softmax: return "softmax";
    }
    return "unknown";
}

ObjectiveKind parse_objective_kind(const std::string& name) {
    if (name == "least_squares") return ObjectiveKind::least_squares;
    if (name == "logistic") return ObjectiveKind::logistic;
    if (name == "softmax") return ObjectiveKind::softmax;
    throw ConfigError("unknown objective '" + name + "'");
}

ObjectiveModel ObjectiveModel::least_squares(double lambda) {
    return {ObjectiveKind::least_squares, lambda, 1};
}

ObjectiveModel ObjectiveModel::logistic(double lambda) {
    return {ObjectiveKind::logistic, lambda, 1};
}

ObjectiveModel ObjectiveModel::softmax(std::size_t classes, double lambda) {
    return {ObjectiveKind::softmax, lambda, classes};
}

void ObjectiveModel::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("regularization lambda must be finite and >= 0");
    }
    if (kind == ObjectiveKind::softmax && num_classes < 2) {
        throw ConfigError("softmax needs at least 2 classes");
    }
    if (kind != ObjectiveKind::softmax && num_classes != 1) {
        throw ConfigError("num_classes applies to softmax only");
    }
}

namespace {

double softplus(double s) {
    return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

struct Evaluation {
    double loss = 0.0;
    ParameterVector grad;
};

// Per-block nonzero lists, used to shortcut dense row products when x is sparse.
struct SparseHint {
    bool active = false;
    std::vector<std::vector<std::size_t>> per_block;
};

SparseHint make_hint(const ParameterVector& x, const SampleBatch& batch, std::size_t blocks) {
    SparseHint hint;
    if (batch.is_sparse()) return hint;
    const std::size_t d = batch.dim();
    hint.per_block.resize(blocks);
    std::size_t total = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t j = 0; j < d; ++j) {
            if (x[b * d + j] != 0.0) hint.per_block[b].push_back(j);
        }
        total += hint.per_block[b].size();
    }
    hint.active = total * 4 <= x.dim();
    return hint;
}

template <typename RowAt>
Evaluation evaluate(const ObjectiveModel& model, const ParameterVector& x,
                    const SampleBatch& batch, std::size_t count, RowAt row_at, bool want_grad,
                    bool all_rows) {
    model.validate();
    const std::size_t d = batch.dim();
    const std::size_t blocks = model.blocks();
    if (x.dim() != model.parameter_dim(d)) {
        throw DimensionError("parameter length " + std::to_string(x.dim()) + " does not match " +
                             std::to_string(model.parameter_dim(d)) + " for the batch");
    }
    if (count == 0) throw ConfigError("cannot evaluate an objective on zero rows");

    const SparseHint hint = make_hint(x, batch, blocks);
    // Whole-batch passes over a sparse x precompute every margin column-wise.
    std::vector<double> cached;
    const std::size_t n = batch.rows();
    if (hint.active && all_rows) {
        cached.resize(blocks * n);
        for (std::size_t b = 0; b < blocks; ++b) {
            batch.margins_on(x.values().subspan(b * d, d), hint.per_block[b],
                             std::span<double>(cached).subspan(b * n, n));
        }
    }
    auto margin = [&](std::size_t r, std::size_t b) {
        if (!cached.empty()) return cached[b * n + r];
        const auto xb = x.values().subspan(b * d, d);
        return hint.active ? batch.dot_row_on(r, xb, hint.per_block[b]) : batch.dot_row(r, xb);
    };

    Evaluation ev;
    if (want_grad) ev.grad = ParameterVector(x.dim());
    auto grad_block = [&](std::size_t b) { return ev.grad.values().subspan(b * d, d); };

    double total = 0.0;
    std::vector<double> logits(blocks);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t r = row_at(k);
        const double y = batch.target(r);
        switch (model.kind) {
            case ObjectiveKind::least_squares: {
                const double resid = y - margin(r, 0);
                total += resid * resid;
                if (want_grad) batch.add_row(r, -2.0 * resid, grad_block(0));
                break;
            }
            case ObjectiveKind::logistic: {
                const double s = margin(r, 0);
                total += softplus(s) - y * s;
                if (want_grad) batch.add_row(r, sigmoid(s) - y, grad_block(0));
                break;
            }
            case ObjectiveKind::softmax: {
                const double label = std::floor(y);
                if (label != y || y < 0.0 || y >= static_cast<double>(blocks)) {
                    throw ConfigError("softmax label " + std::to_string(y) + " outside [0, " +
                                      std::to_string(blocks) + ")");
                }
                const auto cls = static_cast<std::size_t>(label);
                for (std::size_t b = 0; b < blocks; ++b) logits[b] = margin(r, b);
                const double peak = *std::max_element(logits.begin(), logits.end());
                double sum = 0.0;
                for (double s : logits) sum += std::exp(s - peak);
                const double lse = peak + std::log(sum);
                total += lse - logits[cls];
                if (want_grad) {
                    for (std::size_t b = 0; b < blocks; ++b) {
                        const double coef = std::exp(logits[b] - lse) - (b == cls ? 1.0 : 0.0);
                        if (coef != 0.0) batch.add_row(r, coef, grad_block(b));
                    }
                }
                break;
            }
        }
    }

    const double inv = 1.0 / static_cast<double>(count);
    ev.loss = total * inv;
    if (model.lambda > 0.0) ev.loss += 0.5 * model.lambda * squared_norm(x.values());
    if (!std::isfinite(ev.loss)) throw NumericError("objective value is not finite");
    if (want_grad) {
        auto g = ev.grad.values();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = g[j] * inv + model.lambda * x[j];
        if (!ev.grad.all_finite()) throw NumericError("gradient is not finite");
    }
    return ev;
}

Evaluation evaluate_all(const ObjectiveModel& model, const ParameterVector& x,
                        const SampleBatch& batch, bool want_grad) {
    return evaluate(model, x, batch, batch.rows(), [](std::size_t k) { return k; }, want_grad, true);
}

Evaluation evaluate_rows(const ObjectiveModel& model, const ParameterVector& x,
                         const SampleBatch& batch, std::span<const std::size_t> rows,
                         bool want_grad) {
    for (std::size_t r : rows) {
        if (r >= batch.rows()) throw DimensionError("row index out of range");
    }
    return evaluate(model, x, batch, rows.size(), [&](std::size_t k) { return rows[k]; }, want_grad,
                    false);
}

}  // namespace

double loss_value(const ObjectiveModel& model, const ParameterVector& x, const SampleBatch& batch) {
    return evaluate_all(model, x, batch, false).loss;
}

double loss_value(const ObjectiveModel& model, const ParameterVector& x, const SampleBatch& batch,
                  std::span<const std::size_t> rows) {
    return evaluate_rows(model, x, batch, rows, false).loss;
}

ParameterVector gradient(const ObjectiveModel& model, const ParameterVector& x,
                         const SampleBatch& batch) {
    return std::move(evaluate_all(model, x, batch, true).grad);
}

ParameterVector gradient(const ObjectiveModel& model, const ParameterVector& x,
                         const SampleBatch& batch, std::span<const std::size_t> rows) {
    return std::move(evaluate_rows(model, x, batch, rows, true).grad);
}

std::vector<std::size_t> sample_rows(std::size_t row_count, std::size_t batch_size, Rng& rng,
                                     Sampling sampling) {
    if (row_count == 0) throw ConfigError("cannot sample from an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> rows;
    if (sampling == Sampling::with_replacement) {
        std::uniform_int_distribution<std::size_t> pick(0, row_count - 1);
        rows.reserve(batch_size);
        for (std::size_t k = 0; k < batch_size; ++k) rows.push_back(pick(rng));
        return rows;
    }
    rows.resize(row_count);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (batch_size >= row_count) return rows;
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < batch_size; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, row_count - 1);
        std::swap(rows[k], rows[pick(rng)]);
    }
    rows.resize(batch_size);
    return rows;
}

ParameterVector minibatch_gradient(const ObjectiveModel& model, const ParameterVector& x,
                                   const ClientDataset& client, std::size_t batch_size, Rng& rng,
                                   Sampling sampling) {
    if (client.sample_count() == 0) {
        throw ConfigError("client " + std::to_string(client.client_id) + " has no samples");
    }
    const auto rows = sample_rows(client.sample_count(), batch_size, rng, sampling);
    return gradient(model, x, client.batch, rows);
}

SmoothnessEstimate gram_top_eigenvalue(const SampleBatch& batch, std::size_t max_iters,
                                       double tolerance) {
    if (batch.rows() == 0) throw ConfigError("cannot estimate smoothness of an empty dataset");
    const std::size_t d = batch.dim();
    Rng rng(0x5A5A'0F0F'1234'5678ULL);
    std::uniform_real_distribution<double> start(0.5, 1.5);
    std::vector<double> v(d);
    for (double& e : v) e = start(rng);
    double norm = std::sqrt(squared_norm(v));
    for (double& e : v) e /= norm;

    std::vector<double> w(d);
    double estimate = 0.0;
    SmoothnessEstimate out{0.0, false};
    for (std::size_t it = 0; it < max_iters; ++it) {
        std::fill(w.begin(), w.end(), 0.0);
        double rayleigh = 0.0;
        for (std::size_t r = 0; r < batch.rows(); ++r) {
            const double s = batch.dot_row(r, v);
            rayleigh += s * s;
            batch.add_row(r, s, w);
        }
        const double prev = estimate;
        estimate = rayleigh;
        norm = std::sqrt(squared_norm(w));
        if (norm == 0.0) {
            out = {0.0, true};
            return out;
        }
        for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / norm;
        if (it > 0 && std::fabs(estimate - prev) <= tolerance * std::max(estimate, 1e-300)) {
            // ||Z^T Z v|| bounds the Rayleigh quotient from above once converged.
            return {std::max(estimate, norm), true};
        }
    }
    return {std::max(estimate, norm), false};
}

SmoothnessEstimate estimate_smoothness(const ObjectiveModel& model, const SampleBatch& batch) {
    model.validate();
    const auto top = gram_top_eigenvalue(batch);
    const double ls_bound = 2.0 * top.value / static_cast<double>(batch.rows());
    double factor = 1.0;
    if (model.kind == ObjectiveKind::logistic) factor = 0.25;
    if (model.kind == ObjectiveKind::softmax) factor = 0.5;
    return {factor * ls_bound + model.lambda, top.converged};
}

SmoothnessEstimate estimate_smoothness(const ObjectiveModel& model,
                                       std::span<const ClientDataset> clients) {
    if (clients.empty()) throw ConfigError("no clients to estimate smoothness on");
    SmoothnessEstimate worst{0.0, true};
    for (const auto& c : clients) {
        const auto e = estimate_smoothness(model, c.batch);
        worst.value = std::max(worst.value, e.value);
        worst.converged = worst.converged && e.converged;
    }
    return worst;
}

VarianceEstimate estimate_variance(const ObjectiveModel& model, const ParameterVector& x,
                                   const ClientDataset& client) {
    const std::size_t n = client.sample_count();
    if (n == 0) throw ConfigError("cannot estimate variance of an empty client");
    const ParameterVector full = gradient(model, x, client.batch);
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t row[1] = {r};
        const ParameterVector single = gradient(model, x, client.batch, row);
        acc += squared_distance(single.values(), full.values());
    }
    return {acc / static_cast<double>(n)};
}

double weighted_objective(const ObjectiveModel& model, const ParameterVector& x,
                          std::span<const ClientDataset> clients, std::span<const double> weights) {
    if (clients.size() != weights.size()) throw DimensionError("one weight per client required");
    double f = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (weights[i] != 0.0) f += weights[i] * loss_value(model, x, clients[i].batch);
    }
    return f;
}

ParameterVector weighted_gradient(const ObjectiveModel& model, const ParameterVector& x,
                                  std::span<const ClientDataset> clients,
                                  std::span<const double> weights) {
    if (clients.size() != weights.size()) throw DimensionError("one weight per client required");
    ParameterVector g(x.dim());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const auto gi = gradient(model, x, clients[i].batch);
        axpy(weights[i], gi.values(), g.values());
    }
    return g;
}

ParameterVector project_sparse(const ObjectiveModel& model, const ParameterVector& x,
                               std::size_t tau) {
    if (tau >= x.dim() / model.blocks()) return x;
    return hard_threshold_blocks(x, tau, model.blocks());
}

}  // namespace fedht

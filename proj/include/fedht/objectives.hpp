#pragma once

// Loss/gradient evaluation for least squares, logistic and softmax regression,
// minibatch sampling, and empirical smoothness/variance estimates.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedht/rng.hpp"
#include "fedht/sample_batch.hpp"
#include "fedht/tensor.hpp"

namespace fedht {

enum class ObjectiveKind { least_squares, logistic, softmax };

std::string to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(const std::string& name);

inline constexpr double kDefaultRegularization = 1e-4;

/// Loss family plus l2 weight. For softmax the parameter is `num_classes`
/// stacked class vectors, class r occupying [r*d, (r+1)*d).
struct ObjectiveModel {
    ObjectiveKind kind = ObjectiveKind::least_squares;
    double lambda = 0.0;
    std::size_t num_classes = 1;

    static ObjectiveModel least_squares(double lambda = 0.0);
    static ObjectiveModel logistic(double lambda = kDefaultRegularization);
    static ObjectiveModel softmax(std::size_t classes, double lambda = kDefaultRegularization);

    void validate() const;
    /// Number of independently thresholded parameter blocks.
    std::size_t blocks() const noexcept {
        return kind == ObjectiveKind::softmax ? num_classes : 1;
    }
    std::size_t parameter_dim(std::size_t feature_dim) const noexcept {
        return blocks() * feature_dim;
    }
};

/// Mean loss over the batch plus (lambda/2)||x||^2.
double loss_value(const ObjectiveModel& model, const ParameterVector& x, const SampleBatch& batch);
/// Same over the listed rows (repeats allowed).
double loss_value(const ObjectiveModel& model, const ParameterVector& x, const SampleBatch& batch,
                  std::span<const std::size_t> rows);

ParameterVector gradient(const ObjectiveModel& model, const ParameterVector& x,
                         const SampleBatch& batch);
ParameterVector gradient(const ObjectiveModel& model, const ParameterVector& x,
                         const SampleBatch& batch, std::span<const std::size_t> rows);

enum class Sampling {
    with_replacement,
    /// Distinct rows; a batch covering the client yields every row in order.
    without_replacement,
};

/// Row indices for one minibatch. Consumes draws from `rng` except in the
/// full-coverage without-replacement case.
std::vector<std::size_t> sample_rows(std::size_t row_count, std::size_t batch_size, Rng& rng,
                                     Sampling sampling = Sampling::with_replacement);

ParameterVector minibatch_gradient(const ObjectiveModel& model, const ParameterVector& x,
                                   const ClientDataset& client, std::size_t batch_size, Rng& rng,
                                   Sampling sampling = Sampling::with_replacement);

struct SmoothnessEstimate {
    double value = 0.0;
    bool converged = true;  // false: power iteration hit its cap, value is the last iterate
};

/// Upper estimate of the smoothness constant from the top eigenvalue of
/// Z^T Z / B: 2x for least squares, 1/4 of that for logistic, 1/2 for softmax,
/// plus lambda.
SmoothnessEstimate estimate_smoothness(const ObjectiveModel& model, const SampleBatch& batch);

/// Largest per-client estimate; each local update must be stable on its own data.
SmoothnessEstimate estimate_smoothness(const ObjectiveModel& model,
                                       std::span<const ClientDataset> clients);

/// Top eigenvalue of Z^T Z by power iteration.
SmoothnessEstimate gram_top_eigenvalue(const SampleBatch& batch, std::size_t max_iters = 50,
                                       double tolerance = 1e-6);

struct VarianceEstimate {
    double sigma_sq = 0.0;
};

/// Mean of ||grad f_{i,z}(x) - grad f_i(x)||^2 over the client's samples.
VarianceEstimate estimate_variance(const ObjectiveModel& model, const ParameterVector& x,
                                   const ClientDataset& client);

/// f(x) = sum_i p_i f_i(x).
double weighted_objective(const ObjectiveModel& model, const ParameterVector& x,
                          std::span<const ClientDataset> clients, std::span<const double> weights);

ParameterVector weighted_gradient(const ObjectiveModel& model, const ParameterVector& x,
                                  std::span<const ClientDataset> clients,
                                  std::span<const double> weights);

/// Thresholds each class block of a parameter vector to `tau` nonzeros.
ParameterVector project_sparse(const ObjectiveModel& model, const ParameterVector& x,
                               std::size_t tau);

}  // namespace fedht

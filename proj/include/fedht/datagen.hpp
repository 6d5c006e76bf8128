#pragma once

// Synthetic non-IID generators, LibSVM I/O, and client partitioning.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedht/sample_batch.hpp"
#include "fedht/tensor.hpp"

namespace fedht {

enum class SyntheticTask { regression, classification };

struct SyntheticSpec {
    std::size_t num_clients = 100;
    std::size_t samples_per_client = 100;
    std::size_t dim = 1000;
    std::size_t true_support_size = 100;
    double alpha = 0.1;  // stdev of the per-client model mean u_i
    double beta = 0.1;   // stdev of the per-client feature mean B_i
    SyntheticTask task = SyntheticTask::regression;
    std::uint64_t seed = 0;
    /// Every client uses one model x (drawn from a dedicated stream).
    bool shared_model = false;

    static SyntheticSpec sim1();
    static SyntheticSpec sim2();

    void validate() const;
};

struct GroundTruth {
    std::vector<ParameterVector> per_client_x;
    SupportSet shared_support;
    /// Uniform mean of per-client models restricted to the shared support;
    /// used as x* for error and support metrics on the pooled problem.
    ParameterVector pooled;
    /// Classification only: per-client logits z^T x_i + b used for labeling.
    std::vector<std::vector<double>> label_scores;
};

struct SyntheticData {
    std::vector<ClientDataset> clients;
    GroundTruth truth;
};

/// y = z^T x_i + b with u_i ~ N(0.1, alpha), x_i[:tau*] ~ N(u_i, 1),
/// b ~ N(u_i, 1), B_i ~ N(0, beta), v_i ~ N(B_i, 1), z ~ N(v_i, diag(k^-1.2)).
SyntheticData generate_sim1(const SyntheticSpec& spec);

/// Same draws as generate_sim1; per client the top tenth of scores is labeled 1.
SyntheticData generate_sim2(const SyntheticSpec& spec);

/// Labels the `positives` highest scores 1 and the rest 0; equal scores
/// go to the lower index first.
std::vector<double> label_top_scores(std::span<const double> scores, std::size_t positives);

enum class LabelMode { regression, classification };

struct LibsvmData {
    SampleBatch batch;
    /// Classification: original label of each class id (ascending).
    std::vector<double> class_values;
};

/// Parses `<label> <index>:<value> ...` lines with 1-based strictly
/// ascending indices. Width is max(dim_hint, largest index).
LibsvmData parse_libsvm(const std::filesystem::path& path,
                        std::optional<std::size_t> dim_hint = std::nullopt,
                        LabelMode mode = LabelMode::regression);
LibsvmData parse_libsvm(std::istream& in, const std::string& source_name,
                        std::optional<std::size_t> dim_hint = std::nullopt,
                        LabelMode mode = LabelMode::regression);

/// Writes rows in LibSVM form (stored nonzeros only, shortest round-trip
/// decimals). `labels` overrides the batch targets when given.
void write_libsvm(std::ostream& out, const SampleBatch& batch,
                  std::span<const double> labels = {});

/// One line per client: `<client_id> <index>:<value> ...` over the shared
/// support, 1-based indices.
void write_ground_truth(std::ostream& out, const GroundTruth& truth);
std::vector<ParameterVector> read_ground_truth(std::istream& in, std::size_t dim,
                                               const std::string& source_name);

/// Category-wise shard partition: each category is split into
/// `shards_per_category` near-equal shards and each client takes one shard
/// from each of `categories_per_client` distinct categories.
std::vector<ClientDataset> partition_label_shards(const SampleBatch& batch,
                                                  std::span<const std::size_t> categories,
                                                  std::size_t num_clients,
                                                  std::size_t shards_per_category,
                                                  std::size_t categories_per_client,
                                                  std::uint64_t seed);
/// Uses the batch targets (class ids) as categories.
std::vector<ClientDataset> partition_label_shards(const SampleBatch& batch,
                                                  std::size_t num_clients,
                                                  std::size_t shards_per_category,
                                                  std::size_t categories_per_client,
                                                  std::uint64_t seed);

struct KMeansResult {
    std::vector<std::size_t> labels;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

/// Lloyd iterations from farthest-point seeding (first centre drawn from
/// `seed`). Stops at `max_iters` or when no centre moves more than 1e-6.
KMeansResult kmeans_labels(const SampleBatch& batch, std::size_t k, std::size_t max_iters = 100,
                           std::uint64_t seed = 0);

}  // namespace fedht

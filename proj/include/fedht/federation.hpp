#pragma once

// Round-synchronous engine for Fed-HT, FedIter-HT and Distributed-IHT.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedht/objectives.hpp"
#include "fedht/rng.hpp"
#include "fedht/sample_batch.hpp"
#include "fedht/tensor.hpp"

namespace fedht {

enum class Algorithm { fed_ht, fediter_ht, distributed_iht };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

struct BatchSchedule {
    enum class Kind { constant, geometric };
    Kind kind = Kind::constant;
    std::size_t size = 32;  // constant
    double gamma = 1.0;     // geometric: ceil(gamma / omega^t)
    double omega = 0.5;

    static BatchSchedule constant(std::size_t b);
    static BatchSchedule geometric(double gamma, double omega);
    void validate() const;
};

/// Round-t minibatch size for a client holding n_i samples, clipped to [1, n_i].
std::size_t batch_size_at(const BatchSchedule& schedule, std::size_t t, std::size_t client_size);

struct WeightSpec {
    enum class Mode { uniform, proportional, explicit_list };
    Mode mode = Mode::uniform;
    std::vector<double> values;  // explicit_list only
};

std::vector<double> measure_client_weights(std::span<const ClientDataset> clients,
                                           const WeightSpec& spec);

/// How RoundTrace::wall_ms is produced. The simulated clock charges a fixed
/// network latency per round plus a per-step compute cost, which keeps traces
/// reproducible; the measured clock reports real elapsed time.
enum class ClockModel { simulated, measured };

struct RunConfig {
    Algorithm algorithm = Algorithm::fed_ht;
    std::size_t tau = 1;
    std::size_t local_steps = 1;
    std::size_t rounds = 1;
    std::optional<double> stepsize;  // nullopt: 1/(6 l) from estimate_smoothness
    BatchSchedule batch;
    Sampling sampling = Sampling::with_replacement;
    WeightSpec weights;
    std::uint64_t seed = 0;
    std::size_t record_every = 1;
    std::size_t threads = 1;  // 0: hardware concurrency
    ClockModel clock = ClockModel::simulated;
    double latency_ms = 150.0;
    double step_ms = 0.02;
    bool keep_iterates = false;

    /// K, or 1 for distributed_iht.
    std::size_t effective_local_steps() const noexcept {
        return algorithm == Algorithm::distributed_iht ? 1 : local_steps;
    }
    void validate() const;
};

/// K minibatch SGD steps from x_start without thresholding. `round` is the
/// 0-based round index fed to the batch schedule; divergence diagnostics name
/// round + 1, the trace row the update would have produced.
ParameterVector local_update_fed_ht(const ParameterVector& x_start, const ClientDataset& client,
                                    const ObjectiveModel& model, const RunConfig& config,
                                    std::size_t round, double stepsize, Rng& rng);

/// K minibatch SGD steps, each followed by hard thresholding to tau per block
/// (identity once tau reaches the block width).
ParameterVector local_update_fediter_ht(const ParameterVector& x_start,
                                        const ClientDataset& client, const ObjectiveModel& model,
                                        const RunConfig& config, std::size_t round,
                                        double stepsize, Rng& rng);

/// H_tau(sum_i p_i x_i), summed in list order.
ParameterVector server_aggregate(std::span<const ParameterVector> locals,
                                 std::span<const double> weights, std::size_t tau,
                                 std::size_t blocks = 1);

struct RoundTrace {
    std::size_t round = 0;
    std::size_t iteration = 0;  // round * K
    double objective = 0.0;
    double est_error_sq = 0.0;  // nan without ground truth
    double support_f1 = 0.0;    // nan without ground truth
    std::uint64_t upload_scalars = 0;
    std::uint64_t download_scalars = 0;
    double wall_ms = 0.0;

    bool operator==(const RoundTrace&) const = default;
};

struct RunResult {
    std::vector<RoundTrace> trace;
    ParameterVector final_x;
    double stepsize = 0.0;
    std::vector<ParameterVector> iterates;  // one per trace row when keep_iterates
};

/// Parameter scalars one client uploads per round.
std::uint64_t upload_per_client(const RunConfig& config, const ObjectiveModel& model,
                                std::size_t feature_dim);
/// Parameter scalars for broadcasting x: index/value pairs, capped at dense size.
std::uint64_t broadcast_cost(const ParameterVector& x);

/// 1/(6 l) with l the largest per-client smoothness estimate.
double auto_stepsize(const ObjectiveModel& model, std::span<const ClientDataset> clients);

/// Runs T rounds from x_0 = 0. Trace rows are recorded at round 0, every
/// record_every rounds and at round T.
RunResult run(const RunConfig& config, std::span<const ClientDataset> clients,
              const ObjectiveModel& model,
              const std::optional<ParameterVector>& ground_truth = std::nullopt);

}  // namespace fedht

#pragma once

// Experiment configuration, dataset loading and the generate/run/compare/theory
// commands behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedht/analysis.hpp"
#include "fedht/datagen.hpp"
#include "fedht/federation.hpp"
#include "fedht/objectives.hpp"

namespace fedht {

struct DatasetConfig {
    enum class Kind { sim1, sim2, libsvm, clients };
    enum class Partition { shards, kmeans };
    Kind kind = Kind::sim1;
    SyntheticSpec synthetic = SyntheticSpec::sim1();
    std::filesystem::path path;  // libsvm file or directory written by generate
    LabelMode task = LabelMode::regression;
    std::optional<std::size_t> dim;
    Partition partition = Partition::shards;
    std::size_t num_clients = 100;
    std::size_t shards_per_category = 20;
    std::size_t categories_per_client = 2;
    std::size_t kmeans_clusters = 10;
    std::uint64_t seed = 0;  // partitioning / k-means
};

struct SweepConfig {
    std::vector<double> stepsizes;
    std::vector<std::size_t> local_steps;
    std::vector<Algorithm> algorithms;
    std::optional<Algorithm> baseline;
    bool oracle = false;  // extra distributed_iht run with 10x rounds for f*
    std::size_t jobs = 1;
};

struct TheoryConfig {
    double epsilon = 1e-3;
    std::size_t probes = 200;
    std::optional<double> kappa;
    std::optional<double> kappa_s;
    std::optional<std::size_t> tau_star;
    std::optional<double> initial_dist;
    std::size_t max_dissimilarity_probes = 20;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ObjectiveModel model;
    bool num_classes_set = false;
    RunConfig run;
    std::optional<SweepConfig> sweep;
    TheoryConfig theory;
    std::filesystem::path output_dir = "out";
    std::string source = "<config>";
};

/// INI-style `key = value` lines grouped under [dataset] [model] [run]
/// [sweep] [theory]; `output_dir` may appear before the first section.
/// Unknown sections or keys are errors.
ExperimentConfig parse_config(std::istream& in, const std::string& source_name);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Replaces every seed (data generation, partitioning, run) with `seed`.
void override_seed(ExperimentConfig& config, std::uint64_t seed);

struct LoadedData {
    std::vector<ClientDataset> clients;
    std::optional<ParameterVector> x_star;  // pooled reference when known
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;  // classification data only
};

LoadedData load_dataset(const ExperimentConfig& config);

/// Model after filling softmax class count from the data when unset.
ObjectiveModel resolve_model(const ExperimentConfig& config, const LoadedData& data);

void write_trace_csv(std::ostream& out, const std::vector<RoundTrace>& trace);
std::vector<RoundTrace> read_trace_csv(std::istream& in, const std::string& source_name);

inline constexpr const char* kTraceHeader =
    "round,iteration,objective,est_error_sq,support_f1,upload_scalars,download_scalars,wall_ms";

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Each returns the process exit status; progress and errors go to `log`.
int cmd_generate(const ExperimentConfig& config, std::ostream& log);
int cmd_run(const ExperimentConfig& config, std::ostream& log);
int cmd_compare(const ExperimentConfig& config, std::ostream& log);
int cmd_theory(const ExperimentConfig& config, std::ostream& log);

}  // namespace fedht

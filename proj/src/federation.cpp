#include "fedht/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "fedht/analysis.hpp"
#include "fedht/error.hpp"
#include "fedht/parallel.hpp"

namespace fedht {

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::fed_ht: return "fed_ht";
        case Algorithm::fediter_ht: return "fediter_ht";
        case Algorithm::distributed_iht: return "distributed_iht";
    }
    return "?";
}

Algorithm parse_algorithm(const std::string& name) {
    if (name == "fed_ht") return Algorithm::fed_ht;
    if (name == "fediter_ht") return Algorithm::fediter_ht;
    if (name == "distributed_iht") return Algorithm::distributed_iht;
    throw ConfigError("unknown algorithm '" + name + "' (fed_ht, fediter_ht, distributed_iht)");
}

BatchSchedule BatchSchedule::constant(std::size_t b) {
    BatchSchedule s;
    s.kind = Kind::constant;
    s.size = b;
    return s;
}

BatchSchedule BatchSchedule::geometric(double gamma, double omega) {
    BatchSchedule s;
    s.kind = Kind::geometric;
    s.gamma = gamma;
    s.omega = omega;
    return s;
}

void BatchSchedule::validate() const {
    if (kind == Kind::constant) {
        if (size == 0) throw ConfigError("constant batch size must be positive");
        return;
    }
    if (!(omega > 0.0 && omega < 1.0)) throw ConfigError("geometric batch omega must lie in (0, 1)");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("geometric batch gamma must be positive");
}

std::size_t batch_size_at(const BatchSchedule& schedule, std::size_t t, std::size_t client_size) {
    schedule.validate();
    if (client_size == 0) throw ConfigError("client has no samples");
    double b = 0.0;
    if (schedule.kind == BatchSchedule::Kind::constant) {
        b = static_cast<double>(schedule.size);
    } else {
        b = std::ceil(schedule.gamma / std::pow(schedule.omega, static_cast<double>(t)));
    }
    if (!(b < static_cast<double>(client_size))) return client_size;
    return std::max<std::size_t>(1, static_cast<std::size_t>(b));
}

std::vector<double> measure_client_weights(std::span<const ClientDataset> clients,
                                           const WeightSpec& spec) {
    if (clients.empty()) throw ConfigError("no clients");
    const std::size_t n = clients.size();
    std::vector<double> p(n);
    switch (spec.mode) {
        case WeightSpec::Mode::uniform:
            std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
            break;
        case WeightSpec::Mode::proportional: {
            double total = 0.0;
            for (const auto& c : clients) total += static_cast<double>(c.sample_count());
            if (!(total > 0.0)) throw ConfigError("proportional weights need samples");
            for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(clients[i].sample_count()) / total;
            break;
        }
        case WeightSpec::Mode::explicit_list: {
            if (spec.values.size() != n) {
                throw ConfigError("got " + std::to_string(spec.values.size()) + " explicit weights for " +
                                  std::to_string(n) + " clients");
            }
            double total = 0.0;
            for (double w : spec.values) {
                if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("explicit weights must lie in [0, 1]");
                total += w;
            }
            if (std::abs(total - 1.0) > 1e-9) throw ConfigError("explicit weights must sum to 1");
            p = spec.values;
            break;
        }
    }
    return p;
}

void RunConfig::validate() const {
    if (tau == 0) throw ConfigError("tau must be positive");
    if (local_steps == 0) throw ConfigError("local_steps must be >= 1");
    if (record_every == 0) throw ConfigError("record_every must be >= 1");
    if (stepsize && (!(*stepsize >= 0.0) || !std::isfinite(*stepsize))) {
        throw ConfigError("stepsize must be finite and >= 0");
    }
    if (!(latency_ms >= 0.0) || !(step_ms >= 0.0)) throw ConfigError("clock costs must be >= 0");
    batch.validate();
}

namespace {

void check_finite(const ParameterVector& x, std::size_t round, std::size_t client, std::size_t step) {
    if (!x.all_finite()) throw DivergenceError(round + 1, client, step);
}

template <typename Project>
ParameterVector local_sgd(const ParameterVector& x_start, const ClientDataset& client,
                          const ObjectiveModel& model, const RunConfig& config, std::size_t round,
                          double stepsize, Rng& rng, Project&& project) {
    const std::size_t b = batch_size_at(config.batch, round, client.sample_count());
    ParameterVector x = x_start;
    const std::size_t steps = config.effective_local_steps();
    for (std::size_t k = 0; k < steps; ++k) {
        ParameterVector g;
        try {
            g = minibatch_gradient(model, x, client, b, rng, config.sampling);
        } catch (const NumericError&) {
            throw DivergenceError(round + 1, client.client_id, k + 1);
        }
        axpy(-stepsize, g.values(), x.values());
        project(x);
        check_finite(x, round, client.client_id, k + 1);
    }
    return x;
}

}  // namespace

ParameterVector local_update_fed_ht(const ParameterVector& x_start, const ClientDataset& client,
                                    const ObjectiveModel& model, const RunConfig& config,
                                    std::size_t round, double stepsize, Rng& rng) {
    return local_sgd(x_start, client, model, config, round, stepsize, rng, [](ParameterVector&) {});
}

ParameterVector local_update_fediter_ht(const ParameterVector& x_start,
                                        const ClientDataset& client, const ObjectiveModel& model,
                                        const RunConfig& config, std::size_t round,
                                        double stepsize, Rng& rng) {
    return local_sgd(x_start, client, model, config, round, stepsize, rng, [&](ParameterVector& x) {
        x = project_sparse(model, x, config.tau);
    });
}

ParameterVector server_aggregate(std::span<const ParameterVector> locals,
                                 std::span<const double> weights, std::size_t tau,
                                 std::size_t blocks) {
    if (locals.empty()) throw DimensionError("nothing to aggregate");
    if (locals.size() != weights.size()) {
        throw DimensionError("aggregating " + std::to_string(locals.size()) + " iterates with " +
                             std::to_string(weights.size()) + " weights");
    }
    const std::size_t d = locals.front().dim();
    ParameterVector sum(d);
    double total = 0.0;
    for (std::size_t i = 0; i < locals.size(); ++i) {
        if (locals[i].dim() != d) throw DimensionError("local iterates differ in dimension");
        axpy(weights[i], locals[i].values(), sum.values());
        total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("aggregation weights must sum to 1");
    if (tau >= d / blocks) return sum;
    return hard_threshold_blocks(sum, tau, blocks);
}

std::uint64_t upload_per_client(const RunConfig& config, const ObjectiveModel& model,
                                std::size_t feature_dim) {
    if (config.algorithm == Algorithm::fediter_ht) {
        return model.blocks() * std::min<std::uint64_t>(2 * config.tau, feature_dim);
    }
    return model.parameter_dim(feature_dim);
}

std::uint64_t broadcast_cost(const ParameterVector& x) {
    return std::min<std::uint64_t>(2 * x.nonzeros(), x.dim());
}

double auto_stepsize(const ObjectiveModel& model, std::span<const ClientDataset> clients) {
    const auto l = estimate_smoothness(model, clients);
    if (!(l.value > 0.0)) throw NumericError("smoothness estimate is not positive");
    return 1.0 / (6.0 * l.value);
}

RunResult run(const RunConfig& config, std::span<const ClientDataset> clients,
              const ObjectiveModel& model, const std::optional<ParameterVector>& ground_truth) {
    config.validate();
    model.validate();
    if (clients.empty()) throw ConfigError("no clients");
    const std::size_t feature_dim = clients.front().batch.dim();
    for (const auto& c : clients) {
        if (c.batch.dim() != feature_dim) throw DimensionError("clients differ in feature dimension");
        if (c.sample_count() == 0) {
            throw ConfigError("client " + std::to_string(c.client_id) + " has no samples");
        }
    }
    const std::size_t d = model.parameter_dim(feature_dim);
    if (ground_truth && ground_truth->dim() != d) throw DimensionError("ground truth dimension mismatch");

    const auto weights = measure_client_weights(clients, config.weights);
    RunResult result;
    result.stepsize = config.stepsize ? *config.stepsize : auto_stepsize(model, clients);

    std::vector<Rng> streams;
    streams.reserve(clients.size());
    for (const auto& c : clients) streams.push_back(make_stream(config.seed, c.client_id));

    const std::size_t K = config.effective_local_steps();
    const auto start = std::chrono::steady_clock::now();
    ParameterVector x(d);
    std::uint64_t uploaded = 0;
    std::uint64_t downloaded = 0;

    auto record = [&](std::size_t t) {
        RoundTrace row;
        row.round = t;
        row.iteration = t * K;
        try {
            row.objective = weighted_objective(model, x, clients, weights);
        } catch (const NumericError&) {
            throw NumericError("non-finite objective at round " + std::to_string(t));
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.est_error_sq = ground_truth ? estimation_error(x, *ground_truth) : nan;
        row.support_f1 = ground_truth ? support_f1(x, *ground_truth) : nan;
        row.upload_scalars = uploaded;
        row.download_scalars = downloaded;
        if (config.clock == ClockModel::simulated) {
            row.wall_ms = static_cast<double>(t) *
                          (config.latency_ms + static_cast<double>(K) * config.step_ms);
        } else {
            row.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start).count();
        }
        result.trace.push_back(row);
        if (config.keep_iterates) result.iterates.push_back(x);
    };

    record(0);
    const std::uint64_t upload_round = upload_per_client(config, model, feature_dim) * clients.size();
    std::vector<ParameterVector> locals(clients.size());
    for (std::size_t t = 1; t <= config.rounds; ++t) {
        downloaded += broadcast_cost(x) * clients.size();
        // Batch schedules are indexed from the 0-based round being executed.
        const std::size_t round_index = t - 1;
        parallel_for(clients.size(), config.threads, [&](std::size_t i) {
            if (config.algorithm == Algorithm::fediter_ht) {
                locals[i] = local_update_fediter_ht(x, clients[i], model, config, round_index,
                                                    result.stepsize, streams[i]);
            } else {
                locals[i] = local_update_fed_ht(x, clients[i], model, config, round_index,
                                                result.stepsize, streams[i]);
            }
        });
        uploaded += upload_round;
        x = server_aggregate(locals, weights, config.tau, model.blocks());
        if (t % config.record_every == 0 || t == config.rounds) record(t);
    }
    result.final_x = x;
    return result;
}

}  // namespace fedht

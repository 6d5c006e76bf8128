#include "fedht/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fedht/error.hpp"
#include "fedht/format.hpp"
#include "fedht/parallel.hpp"
#include "fedht/rng.hpp"

namespace fedht {

SyntheticSpec SyntheticSpec::sim1() {
    SyntheticSpec s;
    s.samples_per_client = 100;
    s.alpha = 0.1;
    s.beta = 0.1;
    s.task = SyntheticTask::regression;
    return s;
}

SyntheticSpec SyntheticSpec::sim2() {
    SyntheticSpec s;
    s.samples_per_client = 1000;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.task = SyntheticTask::classification;
    return s;
}

void SyntheticSpec::validate() const {
    if (num_clients == 0 || samples_per_client == 0 || dim == 0) {
        throw ConfigError("synthetic spec needs positive clients, samples and dimension");
    }
    if (true_support_size == 0 || true_support_size > dim) {
        throw ConfigError("true support size must lie in [1, dim]");
    }
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
}

namespace {

struct ClientModel {
    double u = 0.0;
    std::vector<double> x;  // first tau* coordinates
};

ClientModel draw_model(Rng& rng, const SyntheticSpec& spec) {
    std::normal_distribution<double> std_normal(0.0, 1.0);
    ClientModel m;
    m.u = 0.1 + spec.alpha * std_normal(rng);
    m.x.resize(spec.true_support_size);
    for (double& v : m.x) v = m.u + std_normal(rng);
    return m;
}

struct ClientDraw {
    ClientDataset data;
    ParameterVector x;
    std::vector<double> scores;  // z^T x + b per sample
};

ClientDraw draw_client(const SyntheticSpec& spec, std::size_t id,
                       const std::optional<ClientModel>& shared) {
    Rng rng = make_stream(spec.seed, id);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    ClientModel model = draw_model(rng, spec);
    if (shared) model = *shared;

    const std::size_t d = spec.dim;
    const double mean_shift = spec.beta * std_normal(rng);
    std::vector<double> v(d);
    for (double& e : v) e = mean_shift + std_normal(rng);
    std::vector<double> scale(d);
    for (std::size_t k = 0; k < d; ++k) {
        scale[k] = std::sqrt(std::pow(static_cast<double>(k + 1), -1.2));
    }

    const std::size_t n = spec.samples_per_client;
    std::vector<double> features(n * d);
    std::vector<double> scores(n);
    for (std::size_t j = 0; j < n; ++j) {
        double* row = features.data() + j * d;
        for (std::size_t k = 0; k < d; ++k) row[k] = v[k] + scale[k] * std_normal(rng);
        const double noise = model.u + std_normal(rng);
        double s = noise;
        for (std::size_t k = 0; k < spec.true_support_size; ++k) s += row[k] * model.x[k];
        scores[j] = s;
    }

    ClientDraw out;
    out.x = ParameterVector(d);
    std::copy(model.x.begin(), model.x.end(), out.x.values().begin());
    out.data.client_id = id;
    out.data.batch = SampleBatch::dense(d, std::move(features), scores);
    out.scores = std::move(scores);
    return out;
}

SyntheticData generate(const SyntheticSpec& spec) {
    spec.validate();
    std::optional<ClientModel> shared;
    if (spec.shared_model) {
        Rng rng = make_stream(spec.seed, kSharedModelStream);
        shared = draw_model(rng, spec);
    }
    std::vector<ClientDraw> draws(spec.num_clients);
    parallel_for(spec.num_clients, 0, [&](std::size_t i) { draws[i] = draw_client(spec, i, shared); });

    SyntheticData out;
    std::vector<std::size_t> support(spec.true_support_size);
    std::iota(support.begin(), support.end(), std::size_t{0});
    out.truth.shared_support = SupportSet::from_unsorted(std::move(support));
    out.truth.pooled = ParameterVector(spec.dim);
    const double w = 1.0 / static_cast<double>(spec.num_clients);
    for (auto& dr : draws) {
        for (std::size_t k : out.truth.shared_support.indices()) out.truth.pooled[k] += w * dr.x[k];
        out.truth.per_client_x.push_back(std::move(dr.x));
        out.truth.label_scores.push_back(std::move(dr.scores));
        out.clients.push_back(std::move(dr.data));
    }
    return out;
}

}  // namespace

SyntheticData generate_sim1(const SyntheticSpec& spec) {
    if (spec.task != SyntheticTask::regression) {
        throw ConfigError("simulation I generates regression data");
    }
    auto data = generate(spec);
    data.truth.label_scores.clear();
    return data;
}

std::vector<double> label_top_scores(std::span<const double> scores, std::size_t positives) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    positives = std::min(positives, scores.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(positives),
                      order.end(), [&](std::size_t a, std::size_t b) {
                          return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                      });
    std::vector<double> labels(scores.size(), 0.0);
    for (std::size_t k = 0; k < positives; ++k) labels[order[k]] = 1.0;
    return labels;
}

SyntheticData generate_sim2(const SyntheticSpec& spec) {
    if (spec.task != SyntheticTask::classification) {
        throw ConfigError("simulation II generates classification data");
    }
    auto data = generate(spec);
    // Ranking the logits equals ranking the sigmoid scores, without the
    // ties the sigmoid produces once it saturates at 1.0.
    const std::size_t positives = spec.samples_per_client / 10;
    for (std::size_t i = 0; i < data.clients.size(); ++i) {
        data.clients[i].batch.set_targets(label_top_scores(data.truth.label_scores[i], positives));
    }
    return data;
}

// ---------------------------------------------------------------------------
// LibSVM

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

}  // namespace

LibsvmData parse_libsvm(std::istream& in, const std::string& source_name,
                        std::optional<std::size_t> dim_hint, LabelMode mode) {
    std::vector<double> labels;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> columns;
    std::vector<double> values;
    std::size_t max_index = 0;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto tokens = split_ws(line);
        if (tokens.empty()) continue;

        const auto label = parse_double(tokens[0]);
        if (!label) {
            throw ParseError(source_name, line_no, "non-numeric label '" + std::string(tokens[0]) + "'");
        }
        std::size_t prev = 0;
        for (std::size_t t = 1; t < tokens.size(); ++t) {
            const auto tok = tokens[t];
            const auto colon = tok.find(':');
            if (colon == std::string_view::npos) {
                throw ParseError(source_name, line_no, "expected index:value, got '" + std::string(tok) + "'");
            }
            const auto idx = parse_unsigned(tok.substr(0, colon));
            const auto val = parse_double(tok.substr(colon + 1));
            if (!idx || *idx == 0 || *idx > std::numeric_limits<std::uint32_t>::max()) {
                throw ParseError(source_name, line_no, "invalid feature index in '" + std::string(tok) + "'");
            }
            if (!val) {
                throw ParseError(source_name, line_no, "non-numeric feature value in '" + std::string(tok) + "'");
            }
            if (*idx <= prev) {
                throw ParseError(source_name, line_no,
                                 *idx == prev ? "duplicate feature index " + std::to_string(*idx)
                                              : "feature index " + std::to_string(*idx) +
                                                    " not ascending after " + std::to_string(prev));
            }
            prev = static_cast<std::size_t>(*idx);
            columns.push_back(static_cast<std::uint32_t>(*idx - 1));
            values.push_back(*val);
        }
        max_index = std::max(max_index, prev);
        labels.push_back(*label);
        offsets.push_back(values.size());
    }

    const std::size_t dim = std::max<std::size_t>({dim_hint.value_or(0), max_index, 1});
    LibsvmData out;
    if (mode == LabelMode::classification) {
        std::vector<double> distinct = labels;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        for (double& y : labels) {
            y = static_cast<double>(std::lower_bound(distinct.begin(), distinct.end(), y) - distinct.begin());
        }
        out.class_values = std::move(distinct);
    }
    out.batch = SampleBatch::sparse(dim, std::move(offsets), std::move(columns), std::move(values),
                                    std::move(labels));
    return out;
}

LibsvmData parse_libsvm(const std::filesystem::path& path, std::optional<std::size_t> dim_hint,
                        LabelMode mode) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open LibSVM file " + path.string());
    return parse_libsvm(in, path.string(), dim_hint, mode);
}

void write_libsvm(std::ostream& out, const SampleBatch& batch, std::span<const double> labels) {
    if (!labels.empty() && labels.size() != batch.rows()) {
        throw DimensionError("label override count does not match rows");
    }
    std::string line;
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        line = format_double(labels.empty() ? batch.target(r) : labels[r]);
        batch.for_each_entry(r, [&](std::size_t c, double v) {
            if (!batch.is_sparse() && v == 0.0) return;
            line += ' ';
            line += std::to_string(c + 1);
            line += ':';
            line += format_double(v);
        });
        line += '\n';
        out << line;
    }
}

void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
    for (std::size_t i = 0; i < truth.per_client_x.size(); ++i) {
        out << i;
        for (std::size_t k : truth.shared_support.indices()) {
            out << ' ' << (k + 1) << ':' << format_double(truth.per_client_x[i][k]);
        }
        out << '\n';
    }
}

std::vector<ParameterVector> read_ground_truth(std::istream& in, std::size_t dim,
                                               const std::string& source_name) {
    std::vector<ParameterVector> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        const auto id = parse_unsigned(tokens[0]);
        if (!id || *id != out.size()) {
            throw ParseError(source_name, line_no, "expected client id " + std::to_string(out.size()));
        }
        ParameterVector x(dim);
        for (std::size_t t = 1; t < tokens.size(); ++t) {
            const auto colon = tokens[t].find(':');
            const auto idx = colon == std::string_view::npos ? std::nullopt : parse_unsigned(tokens[t].substr(0, colon));
            const auto val = colon == std::string_view::npos ? std::nullopt : parse_double(tokens[t].substr(colon + 1));
            if (!idx || !val || *idx == 0 || *idx > dim) {
                throw ParseError(source_name, line_no, "malformed entry '" + std::string(tokens[t]) + "'");
            }
            x[static_cast<std::size_t>(*idx - 1)] = *val;
        }
        out.push_back(std::move(x));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partitioning

std::vector<ClientDataset> partition_label_shards(const SampleBatch& batch,
                                                  std::span<const std::size_t> categories,
                                                  std::size_t num_clients,
                                                  std::size_t shards_per_category,
                                                  std::size_t categories_per_client,
                                                  std::uint64_t seed) {
    if (categories.size() != batch.rows()) throw DimensionError("one category per row required");
    if (num_clients == 0 || shards_per_category == 0 || categories_per_client == 0) {
        throw ConfigError("partition needs positive clients, shards and categories per client");
    }
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t r = 0; r < categories.size(); ++r) members[categories[r]].push_back(r);
    const std::size_t num_categories = members.size();
    if (categories_per_client > num_categories) {
        throw ConfigError("each client needs " + std::to_string(categories_per_client) +
                          " distinct categories but only " + std::to_string(num_categories) + " exist");
    }
    for (const auto& [cat, rows] : members) {
        if (rows.size() < shards_per_category) {
            throw ConfigError("category " + std::to_string(cat) + " has " + std::to_string(rows.size()) +
                              " samples, fewer than " + std::to_string(shards_per_category) + " shards");
        }
    }
    // A client takes at most one shard per category.
    const std::size_t usable_per_category = std::min(shards_per_category, num_clients);
    const std::size_t demand = num_clients * categories_per_client;
    const std::size_t supply = usable_per_category * num_categories;
    if (supply < demand) {
        throw ConfigError("shard demand " + std::to_string(demand) + " exceeds usable supply " +
                          std::to_string(supply) + " (deficit " + std::to_string(demand - supply) + ")");
    }

    Rng rng = make_stream(seed, kPartitionStream);
    std::vector<std::vector<std::vector<std::size_t>>> shards;  // [category][shard] -> rows
    for (auto& [cat, rows] : members) {
        std::shuffle(rows.begin(), rows.end(), rng);
        std::vector<std::vector<std::size_t>> parts(shards_per_category);
        const std::size_t base = rows.size() / shards_per_category;
        const std::size_t extra = rows.size() % shards_per_category;
        std::size_t pos = 0;
        for (std::size_t s = 0; s < shards_per_category; ++s) {
            const std::size_t len = base + (s < extra ? 1 : 0);
            parts[s].assign(rows.begin() + static_cast<std::ptrdiff_t>(pos),
                            rows.begin() + static_cast<std::ptrdiff_t>(pos + len));
            pos += len;
        }
        std::shuffle(parts.begin(), parts.end(), rng);
        shards.push_back(std::move(parts));
    }

    // Per-category quota of assigned shards, summing exactly to demand.
    std::vector<std::size_t> quota(num_categories, usable_per_category);
    for (std::size_t surplus = supply - demand; surplus > 0; --surplus) {
        std::vector<std::size_t> open;
        for (std::size_t c = 0; c < num_categories; ++c) {
            if (quota[c] > 0) open.push_back(c);
        }
        std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
        --quota[open[pick(rng)]];
    }

    // Clients draw categories weighted by remaining quota; a category whose
    // quota equals the number of clients still to serve is forced, which
    // keeps every remaining step feasible.
    std::vector<std::size_t> client_order(num_clients);
    std::iota(client_order.begin(), client_order.end(), std::size_t{0});
    std::shuffle(client_order.begin(), client_order.end(), rng);
    std::vector<std::size_t> next_shard(num_categories, 0);
    std::vector<std::vector<std::size_t>> client_rows(num_clients);
    std::vector<std::size_t> remaining = quota;
    std::size_t clients_left = num_clients;
    for (std::size_t client : client_order) {
        std::vector<std::size_t> chosen;
        for (std::size_t c = 0; c < num_categories; ++c) {
            if (remaining[c] == clients_left) chosen.push_back(c);
        }
        while (chosen.size() < categories_per_client) {
            std::vector<double> w(num_categories, 0.0);
            for (std::size_t c = 0; c < num_categories; ++c) {
                if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) {
                    w[c] = static_cast<double>(remaining[c]);
                }
            }
            std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
            chosen.push_back(pick(rng));
        }
        for (std::size_t c : chosen) {
            --remaining[c];
            const auto& shard = shards[c][next_shard[c]++];
            client_rows[client].insert(client_rows[client].end(), shard.begin(), shard.end());
        }
        --clients_left;
    }
    // Surplus shards go round-robin by client id so every sample is assigned.
    std::size_t rr = 0;
    for (std::size_t c = 0; c < num_categories; ++c) {
        for (std::size_t s = next_shard[c]; s < shards_per_category; ++s) {
            const auto& shard = shards[c][s];
            client_rows[rr].insert(client_rows[rr].end(), shard.begin(), shard.end());
            rr = (rr + 1) % num_clients;
        }
    }

    std::vector<ClientDataset> out(num_clients);
    for (std::size_t i = 0; i < num_clients; ++i) {
        std::sort(client_rows[i].begin(), client_rows[i].end());
        out[i].client_id = i;
        out[i].batch = batch.select(client_rows[i]);
    }
    return out;
}

std::vector<ClientDataset> partition_label_shards(const SampleBatch& batch,
                                                  std::size_t num_clients,
                                                  std::size_t shards_per_category,
                                                  std::size_t categories_per_client,
                                                  std::uint64_t seed) {
    std::vector<std::size_t> cats(batch.rows());
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        const double y = batch.target(r);
        if (y < 0.0 || std::floor(y) != y) {
            throw ConfigError("row " + std::to_string(r) + " has non-class label " + format_double(y));
        }
        cats[r] = static_cast<std::size_t>(y);
    }
    return partition_label_shards(batch, cats, num_clients, shards_per_category,
                                  categories_per_client, seed);
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double distance_sq(const SampleBatch& batch, std::size_t r, std::span<const double> centre,
                   double centre_norm) {
    if (!batch.is_sparse()) {
        double s = 0.0;
        batch.for_each_entry(r, [&](std::size_t c, double v) {
            const double diff = v - centre[c];
            s += diff * diff;
        });
        return s;
    }
    double s = centre_norm;
    batch.for_each_entry(r, [&](std::size_t c, double v) {
        const double diff = v - centre[c];
        s += diff * diff - centre[c] * centre[c];
    });
    return std::max(s, 0.0);
}

}  // namespace

KMeansResult kmeans_labels(const SampleBatch& batch, std::size_t k, std::size_t max_iters,
                           std::uint64_t seed) {
    const std::size_t n = batch.rows();
    const std::size_t d = batch.dim();
    if (k < 2) throw ConfigError("k-means needs k >= 2");
    if (k > n) throw ConfigError("k-means asked for more clusters than rows");

    std::vector<std::vector<double>> centres;
    std::vector<double> norms;
    auto add_centre_at = [&](std::size_t r) {
        centres.push_back(batch.dense_row(r));
        norms.push_back(squared_norm(centres.back()));
    };

    Rng rng = make_stream(seed, 0);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    add_centre_at(first(rng));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (centres.size() < k) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t r = 0; r < n; ++r) {
            nearest[r] = std::min(nearest[r], distance_sq(batch, r, centres.back(), norms.back()));
            if (nearest[r] > far_d) {
                far_d = nearest[r];
                far = r;
            }
        }
        add_centre_at(far);
    }

    KMeansResult res;
    res.labels.assign(n, 0);
    std::vector<double> dist(n, 0.0);
    for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
        res.iterations = it + 1;
        for (std::size_t r = 0; r < n; ++r) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dc = distance_sq(batch, r, centres[c], norms[c]);
                if (dc < best) {
                    best = dc;
                    res.labels[r] = c;
                }
            }
            dist[r] = best;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t r = 0; r < n; ++r) {
            batch.add_row(r, 1.0, sums[res.labels[r]]);
            ++counts[res.labels[r]];
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed at the point farthest from its own centre.
                const auto far = static_cast<std::size_t>(
                    std::max_element(dist.begin(), dist.end()) - dist.begin());
                sums[c] = batch.dense_row(far);
                dist[far] = 0.0;
                moved = std::numeric_limits<double>::infinity();
            } else {
                for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
                moved = std::max(moved, std::sqrt(squared_distance(sums[c], centres[c])));
            }
            centres[c] = std::move(sums[c]);
            norms[c] = squared_norm(centres[c]);
        }
        if (moved <= 1e-6) break;
    }
    res.inertia = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dc = distance_sq(batch, r, centres[c], norms[c]);
            if (dc < best) {
                best = dc;
                res.labels[r] = c;
            }
        }
        res.inertia += best;
    }
    return res;
}

}  // namespace fedht

#include "fedht/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fedht/error.hpp"
#include "fedht/format.hpp"
#include "fedht/parallel.hpp"

namespace fedht {

namespace pt = boost::property_tree;

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

class Section {
public:
    Section(const std::string& source, std::string name, const pt::ptree* tree)
        : source_(source), name_(std::move(name)), tree_(tree) {}

    bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

    std::string str(const std::string& key) const { return trim(tree_->get<std::string>(key)); }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        throw ConfigError(source_ + ": [" + name_ + "] " + key + ": " + what);
    }

    double real(const std::string& key) const {
        const auto v = parse_double(str(key));
        if (!v || !std::isfinite(*v)) fail(key, "expected a number, got '" + str(key) + "'");
        return *v;
    }

    std::uint64_t count(const std::string& key) const {
        const auto v = parse_unsigned(str(key));
        if (!v) fail(key, "expected a nonnegative integer, got '" + str(key) + "'");
        return *v;
    }

    bool flag(const std::string& key) const {
        const auto v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        fail(key, "expected true or false, got '" + v + "'");
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : split_list(str(key))) {
            const auto v = parse_double(item);
            if (!v || !std::isfinite(*v)) fail(key, "bad number '" + item + "'");
            out.push_back(*v);
        }
        if (out.empty()) fail(key, "list must not be empty");
        return out;
    }

    std::vector<std::size_t> counts(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const auto& item : split_list(str(key))) {
            const auto v = parse_unsigned(item);
            if (!v) fail(key, "bad integer '" + item + "'");
            out.push_back(static_cast<std::size_t>(*v));
        }
        if (out.empty()) fail(key, "list must not be empty");
        return out;
    }

    /// Rejects keys outside `allowed`.
    void check_keys(const std::set<std::string>& allowed) const {
        if (!tree_) return;
        for (const auto& [key, child] : *tree_) {
            if (!allowed.count(key)) throw ConfigError(source_ + ": [" + name_ + "] unknown key '" + key + "'");
        }
    }

private:
    const std::string& source_;
    std::string name_;
    const pt::ptree* tree_;
};

template <typename F>
auto wrap(const Section& s, const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        s.fail(key, e.what());
    }
}

void parse_dataset(const Section& s, ExperimentConfig& cfg) {
    s.check_keys({"kind", "num_clients", "samples_per_client", "dim", "true_support_size", "alpha",
                  "beta", "seed", "shared_model", "path", "task", "partition",
                  "shards_per_category", "categories_per_client", "kmeans_clusters"});
    auto& d = cfg.dataset;
    if (s.has("kind")) {
        const auto k = s.str("kind");
        if (k == "sim1") d.kind = DatasetConfig::Kind::sim1;
        else if (k == "sim2") d.kind = DatasetConfig::Kind::sim2;
        else if (k == "libsvm") d.kind = DatasetConfig::Kind::libsvm;
        else if (k == "clients") d.kind = DatasetConfig::Kind::clients;
        else s.fail("kind", "expected sim1, sim2, libsvm or clients");
    }
    d.synthetic = d.kind == DatasetConfig::Kind::sim2 ? SyntheticSpec::sim2() : SyntheticSpec::sim1();
    auto& sp = d.synthetic;
    if (s.has("num_clients")) d.num_clients = sp.num_clients = s.count("num_clients");
    if (s.has("samples_per_client")) sp.samples_per_client = s.count("samples_per_client");
    if (s.has("dim")) {
        sp.dim = s.count("dim");
        d.dim = sp.dim;
    }
    if (s.has("true_support_size")) sp.true_support_size = s.count("true_support_size");
    if (s.has("alpha")) sp.alpha = s.real("alpha");
    if (s.has("beta")) sp.beta = s.real("beta");
    if (s.has("seed")) d.seed = sp.seed = s.count("seed");
    if (s.has("shared_model")) sp.shared_model = s.flag("shared_model");
    if (s.has("path")) d.path = s.str("path");
    if (s.has("task")) {
        const auto t = s.str("task");
        if (t == "regression") d.task = LabelMode::regression;
        else if (t == "classification") d.task = LabelMode::classification;
        else s.fail("task", "expected regression or classification");
    }
    if (s.has("partition")) {
        const auto p = s.str("partition");
        if (p == "shards") d.partition = DatasetConfig::Partition::shards;
        else if (p == "kmeans") d.partition = DatasetConfig::Partition::kmeans;
        else s.fail("partition", "expected shards or kmeans");
    }
    if (s.has("shards_per_category")) d.shards_per_category = s.count("shards_per_category");
    if (s.has("categories_per_client")) d.categories_per_client = s.count("categories_per_client");
    if (s.has("kmeans_clusters")) d.kmeans_clusters = s.count("kmeans_clusters");

    const bool synthetic = d.kind == DatasetConfig::Kind::sim1 || d.kind == DatasetConfig::Kind::sim2;
    if (synthetic) {
        wrap(s, "kind", [&] { sp.validate(); return 0; });
    } else {
        if (d.path.empty()) s.fail("path", "required for kind = libsvm or clients");
    }
}

void parse_model(const Section& s, ExperimentConfig& cfg) {
    s.check_keys({"objective", "lambda", "num_classes"});
    const auto& d = cfg.dataset;
    ObjectiveKind kind = d.kind == DatasetConfig::Kind::sim2 ||
                                 (d.kind != DatasetConfig::Kind::sim1 && d.task == LabelMode::classification)
                             ? ObjectiveKind::logistic
                             : ObjectiveKind::least_squares;
    if (s.has("objective")) kind = wrap(s, "objective", [&] { return parse_objective_kind(s.str("objective")); });
    switch (kind) {
        case ObjectiveKind::least_squares: cfg.model = ObjectiveModel::least_squares(); break;
        case ObjectiveKind::logistic: cfg.model = ObjectiveModel::logistic(); break;
        case ObjectiveKind::softmax: cfg.model = ObjectiveModel::softmax(2); break;
    }
    if (s.has("lambda")) cfg.model.lambda = s.real("lambda");
    if (s.has("num_classes")) {
        if (kind != ObjectiveKind::softmax) s.fail("num_classes", "only used by the softmax objective");
        cfg.model.num_classes = s.count("num_classes");
        cfg.num_classes_set = true;
    }
    wrap(s, "objective", [&] { cfg.model.validate(); return 0; });
}

void parse_run(const Section& s, ExperimentConfig& cfg) {
    s.check_keys({"algorithm", "tau", "local_steps", "rounds", "stepsize", "batch", "batch_size",
                  "batch_gamma", "batch_omega", "sampling", "weights", "seed", "record_every",
                  "threads", "clock", "latency_ms", "step_ms"});
    auto& r = cfg.run;
    r.tau = 200;
    r.local_steps = 5;
    r.rounds = 100;
    r.stepsize = std::nullopt;
    r.batch = BatchSchedule::constant(10);
    if (s.has("algorithm")) r.algorithm = wrap(s, "algorithm", [&] { return parse_algorithm(s.str("algorithm")); });
    if (s.has("tau")) r.tau = s.count("tau");
    if (s.has("local_steps")) r.local_steps = s.count("local_steps");
    if (s.has("rounds")) r.rounds = s.count("rounds");
    if (s.has("stepsize") && s.str("stepsize") != "auto") r.stepsize = s.real("stepsize");
    if (s.has("batch")) {
        const auto b = s.str("batch");
        if (b == "constant") r.batch.kind = BatchSchedule::Kind::constant;
        else if (b == "geometric") r.batch.kind = BatchSchedule::Kind::geometric;
        else s.fail("batch", "expected constant or geometric");
    }
    if (s.has("batch_size")) r.batch.size = s.count("batch_size");
    if (s.has("batch_gamma")) r.batch.gamma = s.real("batch_gamma");
    if (s.has("batch_omega")) r.batch.omega = s.real("batch_omega");
    if (s.has("sampling")) {
        const auto v = s.str("sampling");
        if (v == "with_replacement") r.sampling = Sampling::with_replacement;
        else if (v == "without_replacement") r.sampling = Sampling::without_replacement;
        else s.fail("sampling", "expected with_replacement or without_replacement");
    }
    if (s.has("weights")) {
        const auto v = s.str("weights");
        if (v == "uniform") {
            r.weights.mode = WeightSpec::Mode::uniform;
        } else if (v == "proportional") {
            r.weights.mode = WeightSpec::Mode::proportional;
        } else {
            r.weights.mode = WeightSpec::Mode::explicit_list;
            r.weights.values = s.reals("weights");
        }
    }
    if (s.has("seed")) r.seed = s.count("seed");
    if (s.has("record_every")) r.record_every = s.count("record_every");
    if (s.has("threads")) r.threads = s.count("threads");
    if (s.has("clock")) {
        const auto v = s.str("clock");
        if (v == "simulated") r.clock = ClockModel::simulated;
        else if (v == "measured") r.clock = ClockModel::measured;
        else s.fail("clock", "expected simulated or measured");
    }
    if (s.has("latency_ms")) r.latency_ms = s.real("latency_ms");
    if (s.has("step_ms")) r.step_ms = s.real("step_ms");
    wrap(s, "algorithm", [&] { r.validate(); return 0; });
}

void parse_sweep(const Section& s, ExperimentConfig& cfg) {
    s.check_keys({"stepsizes", "local_steps", "algorithms", "baseline", "oracle", "jobs"});
    SweepConfig sw;
    sw.stepsizes = s.has("stepsizes") ? s.reals("stepsizes")
                                      : std::vector<double>{10, 1, 0.6, 0.3, 0.1, 0.06, 0.03, 0.01, 0.001};
    sw.local_steps = s.has("local_steps") ? s.counts("local_steps")
                                          : std::vector<std::size_t>{cfg.run.local_steps};
    if (s.has("algorithms")) {
        for (const auto& name : split_list(s.str("algorithms"))) {
            sw.algorithms.push_back(wrap(s, "algorithms", [&] { return parse_algorithm(name); }));
        }
        if (sw.algorithms.empty()) s.fail("algorithms", "list must not be empty");
    } else {
        sw.algorithms = {cfg.run.algorithm};
    }
    for (double g : sw.stepsizes) {
        if (g < 0.0) s.fail("stepsizes", "stepsizes must be >= 0");
    }
    for (std::size_t k : sw.local_steps) {
        if (k == 0) s.fail("local_steps", "K must be >= 1");
    }
    if (s.has("baseline")) sw.baseline = wrap(s, "baseline", [&] { return parse_algorithm(s.str("baseline")); });
    if (s.has("oracle")) sw.oracle = s.flag("oracle");
    if (s.has("jobs")) sw.jobs = s.count("jobs");
    cfg.sweep = sw;
}

void parse_theory(const Section& s, ExperimentConfig& cfg) {
    s.check_keys({"epsilon", "probes", "kappa", "kappa_s", "tau_star", "initial_dist",
                  "dissimilarity_probes"});
    auto& t = cfg.theory;
    if (s.has("epsilon")) t.epsilon = s.real("epsilon");
    if (!(t.epsilon > 0.0)) s.fail("epsilon", "must be positive");
    if (s.has("probes")) t.probes = s.count("probes");
    if (s.has("kappa")) t.kappa = s.real("kappa");
    if (s.has("kappa_s")) t.kappa_s = s.real("kappa_s");
    if (s.has("tau_star")) t.tau_star = s.count("tau_star");
    if (s.has("initial_dist")) t.initial_dist = s.real("initial_dist");
    if (s.has("dissimilarity_probes")) t.max_dissimilarity_probes = s.count("dissimilarity_probes");
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, const std::string& source_name) {
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    pt::ptree tree;
    try {
        std::istringstream body(text);
        pt::read_ini(body, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(source_name, e.line(), e.message());
    }
    ExperimentConfig cfg;
    cfg.source = source_name;
    static const std::set<std::string> sections{"dataset", "model", "run", "sweep", "theory"};
    // read_ini drops sections without keys; an empty [sweep] still asks for the default grid.
    std::set<std::string> declared;
    {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            line = trim(line);
            if (line.size() > 1 && line.front() == '[' && line.find(']') != std::string::npos) {
                declared.insert(trim(line.substr(1, line.find(']') - 1)));
            }
        }
    }
    for (const auto& name : declared) {
        if (!sections.count(name)) throw ConfigError(source_name + ": unknown section [" + name + "]");
    }
    for (const auto& [key, child] : tree) {
        if (child.empty() && !sections.count(key)) {
            if (key != "output_dir") throw ConfigError(source_name + ": unknown top-level key '" + key + "'");
            cfg.output_dir = trim(child.data());
        } else if (!sections.count(key)) {
            throw ConfigError(source_name + ": unknown section [" + key + "]");
        }
    }
    auto section = [&](const std::string& name) {
        const auto it = tree.find(name);
        return Section(source_name, name, it == tree.not_found() ? nullptr : &it->second);
    };
    parse_dataset(section("dataset"), cfg);
    parse_model(section("model"), cfg);
    parse_run(section("run"), cfg);
    if (declared.count("sweep")) parse_sweep(section("sweep"), cfg);
    parse_theory(section("theory"), cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    auto cfg = parse_config(in, path.string());
    // Relative data paths resolve against the config file's directory.
    auto& p = cfg.dataset.path;
    if (!p.empty() && p.is_relative()) p = path.parent_path() / p;
    if (!p.empty() && !std::filesystem::exists(p)) {
        throw ConfigError(path.string() + ": [dataset] path: '" + p.string() + "' does not exist");
    }
    return cfg;
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) {
    config.dataset.seed = seed;
    config.dataset.synthetic.seed = seed;
    config.run.seed = seed;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

ParameterVector uniform_mean(const std::vector<ParameterVector>& xs, std::size_t dim) {
    ParameterVector m(dim);
    if (xs.empty()) return m;
    const double w = 1.0 / static_cast<double>(xs.size());
    for (const auto& x : xs) axpy(w, x.values(), m.values());
    return m;
}

struct Manifest {
    std::size_t num_clients = 0;
    std::size_t dim = 0;
    std::size_t true_support_size = 0;
    std::string task = "regression";
    std::vector<std::pair<std::string, std::size_t>> files;
};

Manifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.txt";
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    Manifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto eq = line.find('=');
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        if (eq == std::string::npos) throw ParseError(path.string(), line_no, "expected key = value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        auto number = [&] {
            const auto v = parse_unsigned(value);
            if (!v) throw ParseError(path.string(), line_no, "expected an integer for " + key);
            return static_cast<std::size_t>(*v);
        };
        if (key == "num_clients") m.num_clients = number();
        else if (key == "dim") m.dim = number();
        else if (key == "true_support_size") m.true_support_size = number();
        else if (key == "task") m.task = value;
        else if (key == "client") {
            std::istringstream ss(value);
            std::string file;
            std::size_t n = 0;
            if (!(ss >> file >> n)) throw ParseError(path.string(), line_no, "expected '<file> <samples>'");
            m.files.emplace_back(file, n);
        }
    }
    if (m.files.size() != m.num_clients) {
        throw ConfigError(path.string() + ": lists " + std::to_string(m.files.size()) + " client files for " +
                          std::to_string(m.num_clients) + " clients");
    }
    return m;
}

}  // namespace

LoadedData load_dataset(const ExperimentConfig& config) {
    const auto& d = config.dataset;
    LoadedData out;
    switch (d.kind) {
        case DatasetConfig::Kind::sim1:
        case DatasetConfig::Kind::sim2: {
            auto data = d.kind == DatasetConfig::Kind::sim1 ? generate_sim1(d.synthetic)
                                                            : generate_sim2(d.synthetic);
            out.clients = std::move(data.clients);
            out.x_star = std::move(data.truth.pooled);
            out.feature_dim = d.synthetic.dim;
            if (d.kind == DatasetConfig::Kind::sim2) out.num_classes = 2;
            break;
        }
        case DatasetConfig::Kind::libsvm: {
            auto parsed = parse_libsvm(d.path, d.dim, d.task);
            out.feature_dim = parsed.batch.dim();
            if (d.task == LabelMode::classification) {
                out.num_classes = parsed.class_values.size();
                out.clients = partition_label_shards(parsed.batch, d.num_clients, d.shards_per_category,
                                                     d.categories_per_client, d.seed);
            } else {
                if (d.partition != DatasetConfig::Partition::kmeans) {
                    throw ConfigError("regression data has no categories; use partition = kmeans");
                }
                const auto km = kmeans_labels(parsed.batch, d.kmeans_clusters, 100, d.seed);
                out.clients = partition_label_shards(parsed.batch, km.labels, d.num_clients,
                                                     d.shards_per_category, d.categories_per_client, d.seed);
            }
            break;
        }
        case DatasetConfig::Kind::clients: {
            const auto m = read_manifest(d.path);
            const LabelMode mode = m.task == "classification" ? LabelMode::classification
                                                              : LabelMode::regression;
            std::size_t dim = std::max(m.dim, d.dim.value_or(0));
            for (std::size_t i = 0; i < m.files.size(); ++i) {
                // Labels are kept verbatim; generated class labels are already 0/1.
                auto parsed = parse_libsvm(d.path / m.files[i].first, dim, LabelMode::regression);
                dim = std::max(dim, parsed.batch.dim());
                out.clients.push_back(ClientDataset{i, std::move(parsed.batch)});
            }
            for (auto& c : out.clients) {
                if (c.batch.dim() != dim) throw DimensionError("client files differ in width; set dim in manifest");
            }
            if (mode == LabelMode::classification) out.num_classes = 2;
            out.feature_dim = dim;
            const auto gt = d.path / "ground_truth.txt";
            if (std::filesystem::exists(gt)) {
                std::ifstream in(gt);
                out.x_star = uniform_mean(read_ground_truth(in, dim, gt.string()), dim);
            }
            break;
        }
    }
    return out;
}

ObjectiveModel resolve_model(const ExperimentConfig& config, const LoadedData& data) {
    ObjectiveModel m = config.model;
    if (m.kind == ObjectiveKind::softmax && !config.num_classes_set) {
        if (data.num_classes < 2) throw ConfigError("softmax needs num_classes or classification data");
        m.num_classes = data.num_classes;
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// CSV and files

void write_trace_csv(std::ostream& out, const std::vector<RoundTrace>& trace) {
    out << kTraceHeader << '\n';
    for (const auto& r : trace) {
        out << r.round << ',' << r.iteration << ',' << format_double(r.objective) << ','
            << format_double(r.est_error_sq) << ',' << format_double(r.support_f1) << ','
            << r.upload_scalars << ',' << r.download_scalars << ',' << format_double(r.wall_ms) << '\n';
    }
}

std::vector<RoundTrace> read_trace_csv(std::istream& in, const std::string& source_name) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line.rfind(kTraceHeader, 0) != 0) {
        throw ParseError(source_name, 1, "missing trace header");
    }
    std::vector<RoundTrace> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_list(line);
        if (cells.size() < 8) throw ParseError(source_name, line_no, "expected 8 columns");
        auto num = [&](std::size_t i) {
            const auto v = parse_double(cells[i]);
            if (!v) throw ParseError(source_name, line_no, "bad number '" + cells[i] + "'");
            return *v;
        };
        auto whole = [&](std::size_t i) {
            const auto v = parse_unsigned(cells[i]);
            if (!v) throw ParseError(source_name, line_no, "bad integer '" + cells[i] + "'");
            return *v;
        };
        RoundTrace r;
        r.round = whole(0);
        r.iteration = whole(1);
        r.objective = num(2);
        r.est_error_sq = num(3);
        r.support_f1 = num(4);
        r.upload_scalars = whole(5);
        r.download_scalars = whole(6);
        r.wall_ms = num(7);
        out.push_back(r);
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << contents;
        out.flush();
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ConfigError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw ConfigError("cannot create output directory " + dir.string());
    }
}

std::string kv(const std::string& key, const std::string& value) { return key + " = " + value + "\n"; }
std::string kv(const std::string& key, double value) { return kv(key, format_double(value)); }
std::string kv_n(const std::string& key, std::uint64_t value) { return kv(key, std::to_string(value)); }

/// Up to `limit` recorded iterates, evenly spaced, always including the last.
std::vector<ParameterVector> pick_probes(const std::vector<ParameterVector>& iterates, std::size_t limit) {
    std::vector<ParameterVector> out;
    if (iterates.empty() || limit == 0) return out;
    const std::size_t n = iterates.size();
    const std::size_t take = std::min(limit, n);
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t idx = take == 1 ? n - 1 : (k * (n - 1)) / (take - 1);
        out.push_back(iterates[idx]);
    }
    return out;
}

std::string dissimilarity_lines(const LoadedData& data, const ObjectiveModel& model,
                                const std::vector<double>& weights,
                                const std::vector<ParameterVector>& probes, std::size_t support) {
    try {
        const auto rep = estimate_dissimilarity(data.clients, model, weights, probes, support);
        return kv("dissimilarity_b", rep.b_estimate) + kv_n("dissimilarity_probes", rep.num_probe_points) +
               kv_n("dissimilarity_skipped", rep.skipped_probes) +
               kv_n("dissimilarity_support", rep.support_size_probed);
    } catch (const EstimationError& e) {
        return kv("dissimilarity_b", std::string("n/a (") + e.what() + ")");
    }
}

std::string final_metrics(const RunResult& r) {
    const auto& last = r.trace.back();
    return kv_n("final_round", last.round) + kv("final_objective", last.objective) +
           kv("final_est_error_sq", last.est_error_sq) + kv("final_support_f1", last.support_f1) +
           kv_n("final_nonzeros", r.final_x.nonzeros()) + kv_n("upload_scalars", last.upload_scalars) +
           kv_n("download_scalars", last.download_scalars) + kv("wall_ms", last.wall_ms) +
           kv("stepsize", r.stepsize);
}

std::size_t probe_support(const RunConfig& run, std::size_t dim) { return std::min(run.tau, dim); }

}  // namespace

int cmd_generate(const ExperimentConfig& config, std::ostream& log) {
    const auto& d = config.dataset;
    if (d.kind != DatasetConfig::Kind::sim1 && d.kind != DatasetConfig::Kind::sim2) {
        throw ConfigError("generate needs dataset kind sim1 or sim2");
    }
    const bool sim1 = d.kind == DatasetConfig::Kind::sim1;
    const auto data = sim1 ? generate_sim1(d.synthetic) : generate_sim2(d.synthetic);
    ensure_dir(config.output_dir);

    const std::size_t width = std::max<std::size_t>(3, std::to_string(data.clients.size() - 1).size());
    std::ostringstream manifest;
    manifest << kv("kind", sim1 ? "sim1" : "sim2") << kv_n("num_clients", data.clients.size())
             << kv_n("dim", d.synthetic.dim) << kv_n("true_support_size", d.synthetic.true_support_size)
             << kv_n("seed", d.synthetic.seed) << kv("alpha", d.synthetic.alpha)
             << kv("beta", d.synthetic.beta) << kv("task", sim1 ? "regression" : "classification")
             << kv_n("samples_per_client", d.synthetic.samples_per_client);
    std::size_t total = 0;
    for (const auto& c : data.clients) {
        std::ostringstream name;
        name << "client_" << std::setw(static_cast<int>(width)) << std::setfill('0') << c.client_id << ".libsvm";
        std::ostringstream body;
        write_libsvm(body, c.batch);
        write_file_atomic(config.output_dir / name.str(), body.str());
        manifest << "client = " << name.str() << ' ' << c.sample_count() << '\n';
        total += c.sample_count();
    }
    manifest << kv_n("total_samples", total);
    std::ostringstream gt;
    write_ground_truth(gt, data.truth);
    write_file_atomic(config.output_dir / "ground_truth.txt", gt.str());
    write_file_atomic(config.output_dir / "manifest.txt", manifest.str());
    log << "wrote " << data.clients.size() << " client files to " << config.output_dir.string() << '\n';
    return 0;
}

int cmd_run(const ExperimentConfig& config, std::ostream& log) {
    const auto data = load_dataset(config);
    const auto model = resolve_model(config, data);
    ensure_dir(config.output_dir);
    RunConfig run = config.run;
    run.keep_iterates = true;

    std::string report = kv("algorithm", to_string(run.algorithm)) + kv_n("tau", run.tau) +
                         kv_n("local_steps", run.effective_local_steps()) + kv_n("rounds", run.rounds) +
                         kv_n("seed", run.seed) + kv("objective", to_string(model.kind)) +
                         kv_n("num_clients", data.clients.size()) + kv_n("feature_dim", data.feature_dim);
    RunResult result;
    try {
        result = fedht::run(run, data.clients, model, data.x_star);
    } catch (const Error& e) {
        report += kv("status", std::string("failed: ") + e.what());
        write_file_atomic(config.output_dir / "report.txt", report);
        log << "run failed: " << e.what() << '\n';
        return 2;
    }
    std::ostringstream csv;
    write_trace_csv(csv, result.trace);
    write_file_atomic(config.output_dir / "trace.csv", csv.str());

    report += kv("status", "ok") + final_metrics(result);
    const auto weights = measure_client_weights(data.clients, run.weights);
    const auto smooth = estimate_smoothness(model, data.clients);
    report += kv("smoothness_max_client", smooth.value) +
              kv("smoothness_converged", smooth.converged ? "true" : "false");
    report += dissimilarity_lines(data, model, weights,
                                  pick_probes(result.iterates, config.theory.max_dissimilarity_probes),
                                  probe_support(run, model.parameter_dim(data.feature_dim)));
    if (data.x_star) {
        const auto g = weighted_gradient(model, *data.x_star, data.clients, weights);
        report += kv("grad_norm_sq_at_reference", squared_norm(g.values())) +
                  kv("restricted_grad_norm_sq_at_reference",
                     restricted_gradient_norm_sq(g, *data.x_star, data.clients.size(), run.tau));
    }
    write_file_atomic(config.output_dir / "report.txt", report);
    log << "run finished: " << result.trace.size() << " trace rows, final objective "
        << format_double(result.trace.back().objective) << '\n';
    return 0;
}

int cmd_compare(const ExperimentConfig& config, std::ostream& log) {
    if (!config.sweep) throw ConfigError("compare needs a [sweep] section");
    const auto& sw = *config.sweep;
    const auto data = load_dataset(config);
    const auto model = resolve_model(config, data);
    ensure_dir(config.output_dir);

    struct Child {
        RunConfig run;
        std::optional<RunResult> result;
        std::string error;
    };
    std::vector<Child> children;
    for (Algorithm a : sw.algorithms) {
        for (double g : sw.stepsizes) {
            std::vector<std::size_t> ks = sw.local_steps;
            if (a == Algorithm::distributed_iht) ks = {1};
            for (std::size_t k : ks) {
                Child c;
                c.run = config.run;
                c.run.algorithm = a;
                c.run.stepsize = g;
                c.run.local_steps = k;
                children.push_back(std::move(c));
            }
        }
    }
    parallel_for(children.size(), sw.jobs, [&](std::size_t i) {
        try {
            children[i].result = fedht::run(children[i].run, data.clients, model, data.x_star);
        } catch (const Error& e) {
            children[i].error = e.what();
        }
    });

    const Algorithm baseline_alg =
        sw.baseline ? *sw.baseline
                    : (std::count(sw.algorithms.begin(), sw.algorithms.end(), Algorithm::distributed_iht)
                           ? Algorithm::distributed_iht
                           : sw.algorithms.front());
    std::optional<std::size_t> baseline;
    for (std::size_t i = 0; i < children.size(); ++i) {
        const auto& c = children[i];
        if (c.run.algorithm != baseline_alg || !c.result) continue;
        if (!baseline || c.result->trace.back().objective < children[*baseline].result->trace.back().objective) {
            baseline = i;
        }
    }

    std::ostringstream csv;
    csv << kTraceHeader << ",algorithm,stepsize,K\n";
    for (const auto& c : children) {
        if (!c.result) continue;
        std::ostringstream rows;
        write_trace_csv(rows, c.result->trace);
        std::string line;
        std::istringstream in(rows.str());
        std::getline(in, line);
        while (std::getline(in, line)) {
            csv << line << ',' << to_string(c.run.algorithm) << ',' << format_double(*c.run.stepsize) << ','
                << c.run.effective_local_steps() << '\n';
        }
    }
    write_file_atomic(config.output_dir / "compare.csv", csv.str());

    const double target = baseline ? children[*baseline].result->trace.back().objective
                                   : std::numeric_limits<double>::quiet_NaN();
    std::ostringstream summary;
    summary << "algorithm,stepsize,K,status,final_round,final_objective,rounds_to_target,upload_at_target\n";
    bool all_ok = true;
    for (const auto& c : children) {
        summary << to_string(c.run.algorithm) << ',' << format_double(*c.run.stepsize) << ','
                << c.run.effective_local_steps() << ',';
        if (!c.result) {
            all_ok = false;
            std::string msg = c.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            summary << "failed: " << msg << ",,,,\n";
            continue;
        }
        const auto& tr = c.result->trace;
        summary << "ok," << tr.back().round << ',' << format_double(tr.back().objective) << ',';
        const auto hit = std::find_if(tr.begin(), tr.end(), [&](const RoundTrace& r) { return r.objective <= target; });
        if (hit != tr.end()) summary << hit->round << ',' << hit->upload_scalars << '\n';
        else summary << ",\n";
    }
    write_file_atomic(config.output_dir / "summary.csv", summary.str());

    std::string report = kv_n("runs", children.size()) + kv("baseline_algorithm", to_string(baseline_alg));
    if (baseline) {
        report += kv("baseline_stepsize", *children[*baseline].run.stepsize) + kv("target_objective", target);
    } else {
        report += kv("baseline_stepsize", "n/a (no successful baseline run)");
    }
    if (sw.oracle) {
        // Lower reference f*: a long distributed_iht run at the best distributed_iht stepsize.
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < children.size(); ++i) {
            const auto& c = children[i];
            if (c.run.algorithm != Algorithm::distributed_iht || !c.result) continue;
            if (!best || c.result->trace.back().objective < children[*best].result->trace.back().objective) best = i;
        }
        RunConfig oracle = config.run;
        oracle.algorithm = Algorithm::distributed_iht;
        oracle.rounds = config.run.rounds * 10;
        oracle.record_every = oracle.rounds;
        if (best) oracle.stepsize = children[*best].run.stepsize;
        else if (baseline) oracle.stepsize = children[*baseline].run.stepsize;
        try {
            const auto r = fedht::run(oracle, data.clients, model, data.x_star);
            report += kv("f_star_stepsize", r.stepsize) + kv_n("f_star_rounds", oracle.rounds) +
                      kv("f_star", r.trace.back().objective) + kv("f_star_support_f1", r.trace.back().support_f1);
        } catch (const Error& e) {
            all_ok = false;
            report += kv("f_star", std::string("n/a (") + e.what() + ")");
        }
    }
    write_file_atomic(config.output_dir / "report.txt", report);
    log << "compare finished: " << children.size() << " runs\n";
    return all_ok ? 0 : 2;
}

int cmd_theory(const ExperimentConfig& config, std::ostream& log) {
    const auto data = load_dataset(config);
    const auto model = resolve_model(config, data);
    const auto& th = config.theory;
    const RunConfig& run = config.run;
    const std::size_t dim = model.parameter_dim(data.feature_dim);

    std::size_t tau_star = th.tau_star.value_or(0);
    if (!tau_star && data.x_star) tau_star = data.x_star->nonzeros();
    if (!tau_star) throw ConfigError("theory needs tau_star in [theory] or a dataset with ground truth");
    const double alpha = compute_alpha(run.tau, tau_star);

    const auto weights = measure_client_weights(data.clients, run.weights);
    const ParameterVector x_ref = data.x_star ? *data.x_star : ParameterVector(dim);

    std::string report = kv_n("tau", run.tau) + kv_n("tau_star", tau_star) + kv_n("K", run.effective_local_steps()) +
                         kv("alpha", alpha);

    // Smoothness: sum_i p_i l_i bounds the pooled constant from above.
    double l_d = 0.0;
    for (std::size_t i = 0; i < data.clients.size(); ++i) {
        l_d += weights[i] * estimate_smoothness(model, data.clients[i].batch).value;
    }
    double kappa_d = 0.0, kappa_s = 0.0;
    std::optional<double> l_s;
    if (th.kappa) {
        kappa_d = *th.kappa;
        kappa_s = th.kappa_s.value_or(kappa_d);
        report += kv("kappa_source", "configured");
    } else {
        const std::size_t s = std::min(dim, 2 * run.tau + tau_star);
        const auto dense = estimate_condition(data.clients, model, weights, x_ref, 0, th.probes, run.seed, l_d);
        const auto sparse = estimate_condition(data.clients, model, weights, x_ref, s, th.probes, run.seed + 1);
        kappa_d = dense.kappa;
        kappa_s = std::min(sparse.kappa, kappa_d);
        l_s = sparse.smoothness;
        report += kv("kappa_source", "empirical") + kv("rho_d_empirical", dense.strong_convexity) +
                  kv("rho_s_empirical", sparse.strong_convexity) + kv("l_s_empirical", sparse.smoothness) +
                  kv_n("kappa_probes", th.probes) + kv_n("restricted_sparsity", s);
    }
    report += kv("l_d", l_d) + kv("kappa_d", kappa_d) + kv("kappa_s", kappa_s);

    const auto f1 = compute_theory_factors(TheoryVariant::fed_ht, run.tau, tau_star, kappa_d,
                                           run.effective_local_steps(), std::nullopt, l_d);
    const auto f2 = compute_theory_factors(TheoryVariant::fediter_ht, run.tau, tau_star, kappa_d,
                                           run.effective_local_steps(), kappa_s, l_s.value_or(l_d));
    auto factor_lines = [&](const std::string& p, const TheoryFactors& f) {
        std::string s = kv(p + "theta", f.theta) + kv(p + "valid", f.valid ? "true" : "false");
        if (f.variant == TheoryVariant::fediter_ht) {
            s += kv(p + "theta_with_K_exponent", f.theta_k) + kv(p + "valid_with_K_exponent", f.valid_k ? "true" : "false");
        }
        s += kv(p + "psi", f.psi) + kv(p + "xi", f.xi) + kv(p + "delta", f.delta) +
             kv(p + "sparsity_multiplier", f.sparsity_multiplier) +
             kv(p + "required_tau", f.sparsity_multiplier * static_cast<double>(tau_star)) +
             kv(p + "sparsity_ok", f.sparsity_ok ? "true" : "false");
        return s;
    };
    report += factor_lines("fed_ht.", f1) + factor_lines("fediter_ht.", f2);

    const double dist = th.initial_dist ? *th.initial_dist : std::sqrt(squared_norm(x_ref.values()));
    report += kv("initial_dist", dist) + kv("epsilon", th.epsilon);
    auto rounds_line = [&](const std::string& key, double theta) {
        try {
            return kv_n(key, rounds_for_epsilon(theta, dist, th.epsilon));
        } catch (const TheoryInvalidError&) {
            return kv(key, "n/a (theta >= 1)");
        }
    };
    report += rounds_line("fed_ht.rounds_for_epsilon", f1.theta) +
              rounds_line("fediter_ht.rounds_for_epsilon", f2.theta) +
              rounds_line("fediter_ht.rounds_for_epsilon_with_K_exponent", f2.theta_k);

    // Probe the iterates of the configured run; fall back to the reference point.
    std::vector<ParameterVector> probes;
    RunConfig probe_run = run;
    probe_run.keep_iterates = true;
    try {
        probes = pick_probes(fedht::run(probe_run, data.clients, model, data.x_star).iterates,
                             th.max_dissimilarity_probes);
        report += kv("dissimilarity_probe_source", "run iterates");
    } catch (const Error& e) {
        probes = {x_ref};
        report += kv("dissimilarity_probe_source", std::string("reference point (run failed: ") + e.what() + ")");
    }
    report += dissimilarity_lines(data, model, weights, probes, probe_support(run, dim));

    if (data.x_star) {
        const auto g = weighted_gradient(model, *data.x_star, data.clients, weights);
        const double full = squared_norm(g.values());
        const double restricted = restricted_gradient_norm_sq(g, *data.x_star, data.clients.size(), run.tau);
        double b = 1.0;
        try {
            b = estimate_dissimilarity(data.clients, model, weights, probes, probe_support(run, dim)).b_estimate;
        } catch (const EstimationError&) {
        }
        double weighted_var = 0.0;
        for (std::size_t i = 0; i < data.clients.size(); ++i) {
            weighted_var += weights[i] * estimate_variance(model, *data.x_star, data.clients[i]).sigma_sq;
        }
        const double dist_sq = squared_norm(data.x_star->values());
        report += kv("grad_norm_sq_at_reference", full) + kv("restricted_grad_norm_sq_at_reference", restricted) +
                  kv("fed_ht.bias_g1", bias_term(f1, b, full)) + kv("fediter_ht.bias_g3", bias_term(f2, b, restricted)) +
                  kv("weighted_sigma_sq", weighted_var);
        if (dist_sq > 0.0) {
            report += kv("fed_ht.batch_gamma_lower_bound", batch_gamma_lower_bound(f1, weighted_var, dist_sq)) +
                      kv("fediter_ht.batch_gamma_lower_bound", batch_gamma_lower_bound(f2, weighted_var, dist_sq));
        }
        if (run.batch.kind == BatchSchedule::Kind::geometric) report += kv("configured_batch_gamma", run.batch.gamma);
    }

    ensure_dir(config.output_dir);
    write_file_atomic(config.output_dir / "theory.txt", report);
    log << report;
    return 0;
}

}  // namespace fedht

#include "reptree/harness.hpp"

#include "reptree/parallel.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <set>

namespace reptree {

namespace {

constexpr int kDataStream = -1;
constexpr int kFoldStream = -2;

int parse_int(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw std::invalid_argument(what + ": '" + s + "' is not an integer");
    }
    return v;
}

double parse_real(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw std::invalid_argument(what + ": '" + s + "' is not a number");
    }
    return v;
}

void record_round(FederationResult& result, int round, std::vector<AnchorRoundReport> anchors,
                  std::span<const ModelParams> models, std::span<const Dataset> tests) {
    RoundReport report;
    report.round = round + 1;
    report.anchors = std::move(anchors);
    if (!tests.empty()) {
        for (std::size_t i = 0; i < report.anchors.size(); ++i) {
            report.anchors[i].metrics = evaluate(models[i], tests.size() == 1 ? tests[0] : tests[i]);
        }
    }
    result.reports.push_back(std::move(report));
}

// Local-only or FedAvg training; the two differ only in the server step.
FederationResult train_clients(const FederationConfig& config, std::span<const Dataset> datasets,
                               std::span<const ModelSpec> specs, std::span<const Dataset> tests, bool federate) {
    config.validate();
    const auto m = static_cast<std::size_t>(config.num_clients());
    if (datasets.size() != m || specs.size() != m) {
        throw std::invalid_argument("expected " + std::to_string(m) + " datasets and model specs");
    }
    auto models = init_client_models(specs, derive_node_seed(config.seed, {}));
    FederationResult result;
    for (int t = 0; t < config.rounds; ++t) {
        std::vector<AnchorRoundReport> reports(m);
        parallel_for(m, config.parallel, [&](std::size_t i) {
            const NodePath path{static_cast<int>(i)};
            auto trained = train_local(models[i], datasets[i], config, training_seed(config.seed, path, t), path, t);
            models[i] = std::move(trained.params);
            reports[i].anchor = static_cast<int>(i);
            reports[i].losses = std::move(trained.epoch_losses);
        });
        if (federate) {
            const ModelParams global = average_common(models);
            for (auto& model : models) broadcast_common(model, global);
        }
        record_round(result, t, std::move(reports), models, tests);
    }
    result.final_models = std::move(models);
    return result;
}

MetricSet metric_mean(std::span<const MetricSet> values) {
    MetricSet out;
    out.task = values.front().task;
    const double n = static_cast<double>(values.size());
    for (const auto& v : values) {
        out.accuracy += v.accuracy / n;
        out.f1 += v.f1 / n;
        out.sensitivity += v.sensitivity / n;
        out.specificity += v.specificity / n;
        out.mae += v.mae / n;
    }
    return out;
}

}  // namespace

TaskKind DataConfig::task() const {
    if (source == "csv") return csv.task;
    return kind == SyntheticKind::gaussian_blobs ? TaskKind::classification : TaskKind::regression;
}

int ExperimentConfig::num_folds() const { return folds > 0 ? folds : federation.num_clients() + 1; }

void ExperimentConfig::validate() const {
    federation.validate();
    const int m = federation.num_clients();
    if (num_folds() < m + 1) {
        throw std::invalid_argument("folds must be at least clients + 1");
    }
    if (data.source != "synthetic" && data.source != "csv") {
        throw std::invalid_argument("data.source must be 'synthetic' or 'csv'");
    }
    if (data.source == "synthetic" && (data.samples_per_client <= 0 || data.features <= 0)) {
        throw std::invalid_argument("data.samples_per_client and data.features must be positive");
    }
    if (data.source == "csv" && data.csv_path.empty()) {
        throw std::invalid_argument("data.csv_path is required for csv data");
    }
    if (!client_outputs.empty()) {
        if (static_cast<int>(client_outputs.size()) != m) {
            throw std::invalid_argument("client output widths must be given for every client");
        }
        if (data.task() != TaskKind::regression || data.source != "synthetic") {
            throw std::invalid_argument("per-client output widths need synthetic regression data");
        }
        const std::set<int> widths(client_outputs.begin(), client_outputs.end());
        if (widths.size() > 1 && !network.personalize_head) {
            throw std::invalid_argument("clients with different output widths need model.personalize_head = true");
        }
    }
    const auto expected_loss = data.task() == TaskKind::classification ? LossKind::cross_entropy : LossKind::l1;
    if (federation.loss != expected_loss) {
        throw std::invalid_argument("loss " + to_string(federation.loss) + " does not fit the data task");
    }
}

FederationConfig effective_federation(const ExperimentConfig& config) {
    FederationConfig fed = config.federation;
    switch (config.method) {
        case Method::reptreefl:
            break;
        case Method::repfl:
            fed.aggregation = AggregationMode::simple;
            for (auto& c : fed.clients) c.depth = 1;
            break;
        case Method::fedavg:
        case Method::standalone:
        case Method::centralized:
            for (auto& c : fed.clients) c.replicas = 0;
            break;
    }
    return fed;
}

std::vector<ModelSpec> client_specs(const ExperimentConfig& config, int input_features) {
    const int m = config.federation.num_clients();
    std::vector<ModelSpec> specs;
    const bool classification = config.data.task() == TaskKind::classification;
    for (int i = 0; i < m; ++i) {
        ModelSpec spec;
        spec.inputs = input_features;
        spec.hidden = config.network.hidden;
        spec.activations.assign(spec.hidden.size(), config.network.activation);
        spec.head = classification ? HeadKind::classification : HeadKind::regression;
        spec.personalize_head = config.network.personalize_head;
        if (classification) {
            spec.outputs = config.data.source == "csv" ? 0 : config.data.classes;
        } else {
            spec.outputs = config.client_outputs.empty() ? config.data.outputs
                                                         : config.client_outputs[static_cast<std::size_t>(i)];
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<FoldData> prepare_folds(const ExperimentConfig& config) {
    config.validate();
    const int m = config.federation.num_clients();
    const int folds = config.num_folds();
    const std::uint64_t seed = config.federation.seed;
    const std::vector<int> data_stream{kDataStream};
    const std::vector<int> fold_stream{kFoldStream};

    // Datasets keyed by target width; all share features and sample ids.
    std::map<int, Dataset> by_width;
    std::vector<int> widths(static_cast<std::size_t>(m), 0);
    if (config.data.source == "csv") {
        by_width[0] = load_csv(config.data.csv_path, config.data.csv);
    } else {
        const auto n = static_cast<Eigen::Index>(config.data.samples_per_client) * folds;
        const std::uint64_t data_seed = derive_node_seed(seed, data_stream);
        if (config.data.task() == TaskKind::classification) {
            by_width[0] = generate_synthetic(config.data.kind, n, config.data.features, config.data.classes, data_seed,
                                             config.data.synthetic);
        } else {
            for (int i = 0; i < m; ++i) {
                const int w = config.client_outputs.empty() ? config.data.outputs
                                                            : config.client_outputs[static_cast<std::size_t>(i)];
                widths[static_cast<std::size_t>(i)] = w;
                if (!by_width.contains(w)) {
                    by_width[w] = generate_synthetic(config.data.kind, n, config.data.features, w, data_seed,
                                                     config.data.synthetic);
                }
            }
        }
    }
    const Dataset& reference = by_width.begin()->second;
    const bool stratify = config.data.stratified_folds && reference.task() == TaskKind::classification;
    const SplitPlan plan = kfold_assign(reference, folds, derive_node_seed(seed, fold_stream), stratify);

    std::vector<FoldData> out;
    for (int c = 0; c < folds; ++c) {
        const FoldRoles roles = rotate_folds(folds, m, c);
        const auto test_positions = plan.positions_in(roles.test_fold);
        FoldData fold;
        for (int i = 0; i < m; ++i) {
            const Dataset& source = by_width.at(widths[static_cast<std::size_t>(i)]);
            fold.clients.push_back(source.select(plan.positions_in(roles.client_fold[static_cast<std::size_t>(i)])));
            fold.tests.push_back(source.select(test_positions));
        }
        out.push_back(std::move(fold));
    }
    return out;
}

void summarize(ExperimentResult& result) {
    result.mean.clear();
    result.stddev.clear();
    if (result.per_fold.empty()) return;
    const std::size_t clients = result.per_fold[0].size();
    for (std::size_t i = 0; i < clients; ++i) {
        std::vector<MetricSet> column;
        for (const auto& fold : result.per_fold) column.push_back(fold[i]);
        const MetricSet mean = metric_mean(column);
        MetricSet var;
        var.task = mean.task;
        const double n = static_cast<double>(column.size());
        for (const auto& v : column) {
            var.accuracy += (v.accuracy - mean.accuracy) * (v.accuracy - mean.accuracy) / n;
            var.f1 += (v.f1 - mean.f1) * (v.f1 - mean.f1) / n;
            var.sensitivity += (v.sensitivity - mean.sensitivity) * (v.sensitivity - mean.sensitivity) / n;
            var.specificity += (v.specificity - mean.specificity) * (v.specificity - mean.specificity) / n;
            var.mae += (v.mae - mean.mae) * (v.mae - mean.mae) / n;
        }
        var.accuracy = std::sqrt(var.accuracy);
        var.f1 = std::sqrt(var.f1);
        var.sensitivity = std::sqrt(var.sensitivity);
        var.specificity = std::sqrt(var.specificity);
        var.mae = std::sqrt(var.mae);
        result.mean.push_back(mean);
        result.stddev.push_back(var);
    }
}

FederationResult train_standalone(const FederationConfig& config, std::span<const Dataset> datasets,
                                  std::span<const ModelSpec> specs, std::span<const Dataset> tests) {
    return train_clients(config, datasets, specs, tests, false);
}

FederationResult train_fedavg(const FederationConfig& config, std::span<const Dataset> datasets,
                              std::span<const ModelSpec> specs, std::span<const Dataset> tests) {
    return train_clients(config, datasets, specs, tests, true);
}

FederationResult train_centralized(const FederationConfig& config, std::span<const Dataset> datasets,
                                   std::span<const ModelSpec> specs, std::span<const Dataset> tests) {
    if (specs.empty() || datasets.size() != specs.size()) {
        throw std::invalid_argument("centralized training needs one dataset per model spec");
    }
    for (const auto& spec : specs) {
        if (spec.outputs != specs[0].outputs || spec.hidden != specs[0].hidden || spec.inputs != specs[0].inputs) {
            throw std::invalid_argument(
                "centralized training needs one architecture; run each output-head group separately");
        }
    }
    FederationConfig single = config;
    single.clients.resize(1);
    const Dataset pooled = concatenate(datasets);
    const std::vector<Dataset> one{pooled};
    return train_clients(single, one, specs.first(1), tests.empty() ? tests : tests.first(1), false);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    const auto started = std::chrono::steady_clock::now();
    config.validate();
    const auto folds = prepare_folds(config);
    const FederationConfig fed = effective_federation(config);

    ExperimentResult result;
    result.method = to_string(config.method);
    result.config = config;
    result.per_fold.resize(folds.size());
    result.rounds.resize(folds.size());

    // Folds run concurrently when allowed; each federation then runs its anchors serially.
    FederationConfig inner = fed;
    if (folds.size() > 1 && config.federation.parallel > 1) inner.parallel = 1;

    parallel_for(folds.size(), config.federation.parallel, [&](std::size_t c) {
        const auto& fold = folds[c];
        int inputs = static_cast<int>(fold.clients.front().num_features());
        auto specs = client_specs(config, inputs);
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].outputs == 0) specs[i].outputs = fold.clients[i].num_classes;
        }
        FederationResult run;
        try {
            switch (config.method) {
                case Method::reptreefl:
                case Method::repfl:
                    run = run_federation(inner, fold.clients, specs, fold.tests);
                    break;
                case Method::fedavg:
                    run = train_fedavg(inner, fold.clients, specs, fold.tests);
                    break;
                case Method::standalone:
                    run = train_standalone(inner, fold.clients, specs, fold.tests);
                    break;
                case Method::centralized:
                    run = train_centralized(inner, fold.clients, specs, fold.tests);
                    break;
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("fold " + std::to_string(c) + ": " + e.what());
        }
        std::vector<MetricSet> metrics;
        for (const auto& a : run.reports.back().anchors) metrics.push_back(*a.metrics);
        result.per_fold[c] = std::move(metrics);
        result.rounds[c] = std::move(run.reports);
    });
    summarize(result);
    result.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

ExperimentResult run_standalone(ExperimentConfig config) {
    config.method = Method::standalone;
    return run_experiment(config);
}

ExperimentResult run_fedavg(ExperimentConfig config) {
    config.method = Method::fedavg;
    return run_experiment(config);
}

ExperimentResult run_centralized(ExperimentConfig config) {
    config.method = Method::centralized;
    return run_experiment(config);
}

ExperimentResult run_reptreefl(ExperimentConfig config) {
    config.method = Method::reptreefl;
    return run_experiment(config);
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepParam param, const std::string& value) {
    ExperimentConfig config = base;
    const std::string what = "sweep " + to_string(param);
    switch (param) {
        case SweepParam::perturbation_rate: {
            const double p = parse_real(value, what);
            if (!(p > 0.0 && p < 100.0)) throw std::invalid_argument(what + ": rate must lie in (0, 100)");
            for (auto& c : config.federation.clients) c.perturbation = p;
            break;
        }
        case SweepParam::depth: {
            const int d = parse_int(value, what);
            if (d < 0) throw std::invalid_argument(what + ": depth must be >= 0");
            for (auto& c : config.federation.clients) c.depth = d;
            break;
        }
        case SweepParam::aggregation:
            config.federation.aggregation = parse_aggregation(value);
            break;
        case SweepParam::perturbation_mode:
            config.federation.perturbation_mode = parse_perturbation_mode(value);
            if (config.federation.perturbation_mode == PerturbationMode::stratified &&
                config.data.task() != TaskKind::classification) {
                throw std::invalid_argument(what + ": stratified perturbation needs classification data");
            }
            break;
        case SweepParam::client_dataset_size: {
            const int n = parse_int(value, what);
            if (n <= 0) throw std::invalid_argument(what + ": size must be positive");
            if (config.data.source != "synthetic") {
                throw std::invalid_argument(what + ": only synthetic data can be resized");
            }
            config.data.samples_per_client = n;
            break;
        }
    }
    config.validate();
    return config;
}

std::vector<ExperimentResult> run_ablation(const ExperimentConfig& base, const Sweep& sweep) {
    if (sweep.values.empty()) {
        throw std::invalid_argument("sweep has no values");
    }
    std::vector<ExperimentConfig> points;
    for (const auto& v : sweep.values) points.push_back(apply_sweep_value(base, sweep.param, v));
    std::vector<ExperimentResult> results;
    for (const auto& p : points) results.push_back(run_experiment(p));
    return results;
}

std::string to_string(Method m) {
    switch (m) {
        case Method::reptreefl:
            return "reptreefl";
        case Method::repfl:
            return "repfl";
        case Method::fedavg:
            return "fedavg";
        case Method::standalone:
            return "standalone";
        case Method::centralized:
            return "centralized";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    for (Method m : {Method::reptreefl, Method::repfl, Method::fedavg, Method::standalone, Method::centralized}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown method '" + s + "'");
}

std::string to_string(SweepParam p) {
    switch (p) {
        case SweepParam::perturbation_rate:
            return "perturbation_rate";
        case SweepParam::depth:
            return "depth";
        case SweepParam::aggregation:
            return "aggregation";
        case SweepParam::perturbation_mode:
            return "perturbation_mode";
        case SweepParam::client_dataset_size:
            return "client_dataset_size";
    }
    return "?";
}

SweepParam parse_sweep_param(const std::string& s) {
    for (SweepParam p : {SweepParam::perturbation_rate, SweepParam::depth, SweepParam::aggregation,
                         SweepParam::perturbation_mode, SweepParam::client_dataset_size}) {
        if (to_string(p) == s) return p;
    }
    throw std::invalid_argument("unknown sweep parameter '" + s + "'");
}

}  // namespace reptree

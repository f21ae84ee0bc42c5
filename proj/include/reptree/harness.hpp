#pragma once

#include "reptree/federation.hpp"

#include <string>
#include <vector>

namespace reptree {

enum class Method { reptreefl, repfl, fedavg, standalone, centralized };

struct DataConfig {
    std::string source = "synthetic";  // synthetic | csv
    SyntheticKind kind = SyntheticKind::gaussian_blobs;
    int samples_per_client = 200;
    int features = 8;
    int classes = 2;
    int outputs = 1;  // regression target width
    SyntheticOptions synthetic;
    std::string csv_path;
    CsvSchema csv;
    bool stratified_folds = false;

    [[nodiscard]] TaskKind task() const;
};

struct NetworkConfig {
    std::vector<int> hidden{32};
    Activation activation = Activation::relu;
    bool personalize_head = false;
};

struct ExperimentConfig {
    Method method = Method::reptreefl;
    FederationConfig federation = FederationConfig::uniform(3, 3, 10.0, 1);
    int folds = 0;  // 0: clients + 1
    DataConfig data;
    NetworkConfig network;
    std::vector<int> client_outputs;  // per-client regression head width; empty: data.outputs for all

    [[nodiscard]] int num_folds() const;
    void validate() const;
};

/// The federation settings a method actually runs with (e.g. FedAvg is r = 0).
[[nodiscard]] FederationConfig effective_federation(const ExperimentConfig& config);

/// Per-client architectures for an experiment.
[[nodiscard]] std::vector<ModelSpec> client_specs(const ExperimentConfig& config, int input_features);

/// One cross-validation configuration: client training sets and their test sets.
struct FoldData {
    std::vector<Dataset> clients;
    std::vector<Dataset> tests;  // one per client
};

/// Generates or loads the data and assigns folds; returns one FoldData per configuration.
[[nodiscard]] std::vector<FoldData> prepare_folds(const ExperimentConfig& config);

struct ExperimentResult {
    std::string method;
    ExperimentConfig config;
    std::vector<std::vector<MetricSet>> per_fold;  // [fold][client]
    std::vector<MetricSet> mean;                   // per client, across folds
    std::vector<MetricSet> stddev;                 // population standard deviation
    std::vector<std::vector<RoundReport>> rounds;  // [fold][round]
    double duration_seconds = 0.0;

    [[nodiscard]] int num_clients() const { return per_fold.empty() ? 0 : static_cast<int>(per_fold[0].size()); }
};

/// Mean and population standard deviation of each metric across folds, per client.
void summarize(ExperimentResult& result);

[[nodiscard]] FederationResult train_standalone(const FederationConfig& config, std::span<const Dataset> datasets,
                                                std::span<const ModelSpec> specs, std::span<const Dataset> tests = {});
[[nodiscard]] FederationResult train_fedavg(const FederationConfig& config, std::span<const Dataset> datasets,
                                            std::span<const ModelSpec> specs, std::span<const Dataset> tests = {});
/// One model on the union of the client datasets; the result holds a single model.
[[nodiscard]] FederationResult train_centralized(const FederationConfig& config, std::span<const Dataset> datasets,
                                                 std::span<const ModelSpec> specs,
                                                 std::span<const Dataset> tests = {});

/// Cross-validated run of the configured method.
[[nodiscard]] ExperimentResult run_experiment(const ExperimentConfig& config);

[[nodiscard]] ExperimentResult run_standalone(ExperimentConfig config);
[[nodiscard]] ExperimentResult run_fedavg(ExperimentConfig config);
[[nodiscard]] ExperimentResult run_centralized(ExperimentConfig config);
[[nodiscard]] ExperimentResult run_reptreefl(ExperimentConfig config);

enum class SweepParam { perturbation_rate, depth, aggregation, perturbation_mode, client_dataset_size };

struct Sweep {
    SweepParam param = SweepParam::depth;
    std::vector<std::string> values;
};

/// Copy of `base` with one sweep value applied. Throws std::invalid_argument for bad values.
[[nodiscard]] ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepParam param,
                                                 const std::string& value);

/// One result per sweep value; every point shares the base seed.
[[nodiscard]] std::vector<ExperimentResult> run_ablation(const ExperimentConfig& base, const Sweep& sweep);

[[nodiscard]] std::string to_string(Method m);
[[nodiscard]] Method parse_method(const std::string& s);
[[nodiscard]] std::string to_string(SweepParam p);
[[nodiscard]] SweepParam parse_sweep_param(const std::string& s);

}  // namespace reptree

#pragma once

#include "reptree/metrics.hpp"
#include "reptree/replica_tree.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reptree {

/// Non-finite training loss at a node.
class TrainingDiverged : public std::runtime_error {
  public:
    TrainingDiverged(const NodePath& path, int round, double loss);
    NodePath path;
};

/// Normalized replica weights for one parent.
struct AggregationWeights {
    Vector alpha;
};

/// Below this total diversity the weights fall back to uniform.
inline constexpr double kDiversityFloor = 1e-12;

/// alpha_r proportional to divs_r: more distant replicas get larger weights.
[[nodiscard]] AggregationWeights compute_div_aggregation_weights(std::span<const double> divs);

/// Common layers become 0.5 * parent + 0.5 * sum_r alpha_r * child_r; other layers of the
/// parent pass through.
[[nodiscard]] ModelParams aggregate_diversity(const ModelParams& parent, std::span<const ModelParams> children,
                                              const AggregationWeights& weights);

/// Common layers become the uniform mean of the parent and its children.
[[nodiscard]] ModelParams aggregate_simple(const ModelParams& parent, std::span<const ModelParams> children);

/// Server model: the first model's layout with every common layer replaced by the uniform
/// mean across models. Elementwise sums run in sorted value order, which makes the result
/// independent of the model order.
[[nodiscard]] ModelParams average_common(std::span<const ModelParams> models);

/// Copy the common layers of `global` into `target`.
void broadcast_common(ModelParams& target, const ModelParams& global);

struct LocalTrainResult {
    ModelParams params;
    std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

/// E epochs of minibatch training with a per-epoch shuffle drawn from `seed`. Every layer
/// (common and personalized) is updated from the same minibatch gradient.
[[nodiscard]] LocalTrainResult train_local(const ModelParams& params, const Dataset& data,
                                           const FederationConfig& config, std::uint64_t seed,
                                           const NodePath& path = {}, int round = 0);

/// Seed of the training stream of `path` in `round` (0-based).
[[nodiscard]] std::uint64_t training_seed(std::uint64_t root_seed, const NodePath& path, int round);

struct DiversityRecord {
    NodePath parent;
    NodePath child;
    double div = 0.0;
    double alpha = 0.0;
    double child_loss = 0.0;  // last-epoch training loss of the child
};

struct AnchorRoundReport {
    int anchor = 0;
    std::vector<double> losses;
    std::vector<DiversityRecord> diversity;
    std::optional<MetricSet> metrics;
};

struct RoundReport {
    int round = 0;
    std::vector<AnchorRoundReport> anchors;
};

/// Local update of one node (the heterogeneous-model update: common and personalized
/// layers step together). Updates node.params in place and returns them.
ModelParams hetero_local_update(ReplicaNode& node, const FederationConfig& config, int round,
                                std::vector<double>* losses = nullptr);

/// Recursive update: replicas adopt this node's parameters, the node trains, each child
/// subtree updates and aggregates, then the children are blended into this node.
ModelParams client_update(ReplicaNode& node, const FederationConfig& config, int round,
                          AnchorRoundReport* report = nullptr);

/// One round over every anchor followed by server averaging and broadcast of the common
/// layers. Returns the server model.
ModelParams server_round(std::vector<ReplicaNode>& anchors, const FederationConfig& config, int round,
                         std::vector<AnchorRoundReport>* reports = nullptr);

struct FederationResult {
    std::vector<ModelParams> final_models;  // per anchor
    std::vector<RoundReport> reports;
};

/// Full protocol. `tests` is empty (no evaluation), one shared test set, or one per client.
[[nodiscard]] FederationResult run_federation(const FederationConfig& config, std::span<const Dataset> datasets,
                                              std::span<const ModelSpec> specs, std::span<const Dataset> tests = {});

}  // namespace reptree

#pragma once

#include "reptree/data.hpp"
#include "reptree/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace reptree {

/// [anchor] for an anchor, [anchor, replica, replica, ...] below it. Anchors are 0-based,
/// replica indices are 1-based positions under their parent.
using NodePath = std::vector<int>;

[[nodiscard]] std::string format_path(const NodePath& path);

enum class OptimizerKind { sgd, adam };
enum class PerturbationMode { random, stratified };
enum class AggregationMode { diversity, simple };

/// Replica tree shape for one client.
struct ClientTreeConfig {
    int replicas = 3;
    double perturbation = 10.0;  // percent removed per level
    int depth = 1;
};

struct FederationConfig {
    std::vector<ClientTreeConfig> clients;
    int epochs = 10;
    int rounds = 10;
    int batch_size = 20;
    double lr = 0.005;
    OptimizerKind optimizer = OptimizerKind::sgd;
    AdamOptions adam;
    LossKind loss = LossKind::cross_entropy;
    PerturbationMode perturbation_mode = PerturbationMode::random;
    AggregationMode aggregation = AggregationMode::diversity;
    std::uint64_t seed = 0;
    int parallel = 1;  // worker cap; results do not depend on it

    [[nodiscard]] int num_clients() const { return static_cast<int>(clients.size()); }

    /// Uniform tree shape for m clients.
    static FederationConfig uniform(int m, int replicas, double perturbation, int depth);

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct ReplicaNode {
    NodePath path;
    ModelParams params;
    Dataset dataset;
    std::vector<ReplicaNode> children;
    bool is_anchor = false;

    [[nodiscard]] int depth() const { return static_cast<int>(path.size()) - 1; }
};

struct Perturbation {
    PerturbationMode mode = PerturbationMode::random;
    double rate = 10.0;
};

/// Children receive copies of the node's parameters and perturbed copies of its dataset;
/// the child at position l uses replica index l. Recurses until depth reaches zero.
[[nodiscard]] ReplicaNode create_replicas(ReplicaNode node, int replicas, int depth, const Perturbation& perturbation);

/// m + sum_i (r_i + r_i^2 + ... + r_i^{d_i})
[[nodiscard]] std::int64_t total_model_count(const FederationConfig& config);

/// Nodes in the subtree rooted at `node`, including it.
[[nodiscard]] std::int64_t subtree_size(const ReplicaNode& node);

/// Stable 64-bit seed for the node at `path` under `root_seed`.
[[nodiscard]] std::uint64_t derive_node_seed(std::uint64_t root_seed, std::span<const int> path);

/// Shared parameter initialization for a set of client architectures. Every client is
/// initialized from the same seed and then takes client 0's values on the common layers.
[[nodiscard]] std::vector<ModelParams> init_client_models(std::span<const ModelSpec> specs, std::uint64_t seed);

/// Anchors with their replica subtrees, one per client.
[[nodiscard]] std::vector<ReplicaNode> build_forest(const FederationConfig& config, std::span<const Dataset> datasets,
                                                    std::span<const ModelSpec> specs);

[[nodiscard]] std::string to_string(OptimizerKind k);
[[nodiscard]] std::string to_string(PerturbationMode m);
[[nodiscard]] std::string to_string(AggregationMode m);
[[nodiscard]] OptimizerKind parse_optimizer(const std::string& s);
[[nodiscard]] PerturbationMode parse_perturbation_mode(const std::string& s);
[[nodiscard]] AggregationMode parse_aggregation(const std::string& s);

}  // namespace reptree

#include "reptree/replica_tree.hpp"

#include <sstream>

namespace reptree {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Dataset perturb(const Dataset& parent, const Perturbation& perturbation, int replica_index) {
    return perturbation.mode == PerturbationMode::stratified
               ? perturb_stratified(parent, perturbation.rate, replica_index)
               : perturb_random(parent, perturbation.rate, replica_index);
}

}  // namespace

std::string format_path(const NodePath& path) {
    std::ostringstream os;
    for (std::size_t i = 0; i < path.size(); ++i) os << (i ? "." : "") << path[i];
    return os.str();
}

FederationConfig FederationConfig::uniform(int m, int replicas, double perturbation, int depth) {
    FederationConfig config;
    config.clients.assign(static_cast<std::size_t>(m), ClientTreeConfig{replicas, perturbation, depth});
    return config;
}

void FederationConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("federation config: " + what); };
    if (clients.empty()) fail("clients must be at least 1");
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const auto& c = clients[i];
        const std::string who = "client " + std::to_string(i) + " ";
        if (c.replicas < 0) fail(who + "replicas must be >= 0");
        if (c.depth < 0) fail(who + "depth must be >= 0");
        if (!(c.perturbation > 0.0 && c.perturbation < 100.0)) fail(who + "perturbation must lie in (0, 100)");
    }
    if (epochs < 1) fail("epochs must be >= 1");
    if (rounds < 1) fail("rounds must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr >= 0.0)) fail("lr must be >= 0");
    if (parallel < 1) fail("parallel must be >= 1");
}

ReplicaNode create_replicas(ReplicaNode node, int replicas, int depth, const Perturbation& perturbation) {
    if (depth < 0 || replicas < 0) {
        throw std::invalid_argument("create_replicas: negative depth or replica count");
    }
    node.children.clear();
    if (depth == 0) {
        return node;
    }
    node.children.reserve(static_cast<std::size_t>(replicas));
    for (int l = 1; l <= replicas; ++l) {
        ReplicaNode child;
        child.path = node.path;
        child.path.push_back(l);
        child.params = node.params;
        try {
            child.dataset = perturb(node.dataset, perturbation, l);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("replica " + format_path(child.path) + ": " + e.what());
        }
        node.children.push_back(create_replicas(std::move(child), replicas, depth - 1, perturbation));
    }
    return node;
}

std::int64_t total_model_count(const FederationConfig& config) {
    std::int64_t total = config.num_clients();
    for (const auto& c : config.clients) {
        std::int64_t level = 1;
        for (int d = 1; d <= c.depth; ++d) {
            level *= c.replicas;
            total += level;
        }
    }
    return total;
}

std::int64_t subtree_size(const ReplicaNode& node) {
    std::int64_t n = 1;
    for (const auto& child : node.children) n += subtree_size(child);
    return n;
}

std::uint64_t derive_node_seed(std::uint64_t root_seed, std::span<const int> path) {
    std::uint64_t h = splitmix64(root_seed ^ 0x5265705472656546ULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(path.size()));
    for (int element : path) {
        h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(element)));
    }
    return h;
}

std::vector<ModelParams> init_client_models(std::span<const ModelSpec> specs, std::uint64_t seed) {
    std::vector<ModelParams> models;
    models.reserve(specs.size());
    for (const auto& spec : specs) models.push_back(init_params(spec, seed));
    for (std::size_t i = 1; i < models.size(); ++i) {
        if (!models[i].same_common_structure(models[0])) {
            throw ShapeError("client " + std::to_string(i) + " does not share the common layers of client 0");
        }
        for (std::size_t k = 0; k < models[i].layers.size(); ++k) {
            if (models[i].common[k]) models[i].layers[k].values = models[0].layers[k].values;
        }
    }
    return models;
}

std::vector<ReplicaNode> build_forest(const FederationConfig& config, std::span<const Dataset> datasets,
                                      std::span<const ModelSpec> specs) {
    config.validate();
    const auto m = static_cast<std::size_t>(config.num_clients());
    if (datasets.size() != m || specs.size() != m) {
        throw std::invalid_argument("build_forest: expected " + std::to_string(m) + " datasets and model specs");
    }
    auto models = init_client_models(specs, derive_node_seed(config.seed, {}));
    std::vector<ReplicaNode> anchors;
    anchors.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        ReplicaNode anchor;
        anchor.path = {static_cast<int>(i)};
        anchor.params = std::move(models[i]);
        anchor.dataset = datasets[i];
        anchor.is_anchor = true;
        const auto& tree = config.clients[i];
        anchors.push_back(create_replicas(std::move(anchor), tree.replicas, tree.depth,
                                          Perturbation{config.perturbation_mode, tree.perturbation}));
    }
    return anchors;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string to_string(PerturbationMode m) { return m == PerturbationMode::random ? "random" : "stratified"; }
std::string to_string(AggregationMode m) { return m == AggregationMode::diversity ? "diversity" : "simple"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

PerturbationMode parse_perturbation_mode(const std::string& s) {
    if (s == "random") return PerturbationMode::random;
    if (s == "stratified") return PerturbationMode::stratified;
    throw std::invalid_argument("unknown perturbation mode '" + s + "'");
}

AggregationMode parse_aggregation(const std::string& s) {
    if (s == "diversity") return AggregationMode::diversity;
    if (s == "simple") return AggregationMode::simple;
    throw std::invalid_argument("unknown aggregation mode '" + s + "'");
}

}  // namespace reptree

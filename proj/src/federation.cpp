#include "reptree/federation.hpp"

#include "reptree/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace reptree {

namespace {

std::string diverged_message(const NodePath& path, int round, double loss) {
    std::ostringstream os;
    os << "training diverged at node " << format_path(path) << " in round " << round + 1 << " (loss " << loss << ")";
    return os.str();
}

void require_children(const ModelParams& parent, std::span<const ModelParams> children) {
    if (children.empty()) {
        throw std::invalid_argument("aggregation needs at least one child");
    }
    for (const auto& child : children) {
        if (!child.same_common_structure(parent)) {
            throw ShapeError("aggregation: child common layers do not match the parent");
        }
    }
}

Targets batch_targets(const Dataset& data, std::span<const Eigen::Index> rows) {
    if (data.task() == TaskKind::classification) {
        LabelVector y(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = data.labels()[rows[i]];
        return y;
    }
    const Matrix& src = data.regression_targets();
    Matrix y(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    return y;
}

}  // namespace

TrainingDiverged::TrainingDiverged(const NodePath& node_path, int round, double loss)
    : std::runtime_error(diverged_message(node_path, round, loss)), path(node_path) {}

AggregationWeights compute_div_aggregation_weights(std::span<const double> divs) {
    if (divs.empty()) {
        throw std::invalid_argument("compute_div_aggregation_weights: no diversity values");
    }
    const auto n = static_cast<Eigen::Index>(divs.size());
    AggregationWeights w;
    w.alpha.resize(n);
    double total = 0.0;
    for (double d : divs) {
        if (!(d >= 0.0) || !std::isfinite(d)) {
            throw std::invalid_argument("compute_div_aggregation_weights: diversity values must be finite and >= 0");
        }
        total += d;
    }
    if (total <= kDiversityFloor) {
        w.alpha.setConstant(1.0 / static_cast<double>(n));
        return w;
    }
    for (Eigen::Index r = 0; r < n; ++r) w.alpha[r] = divs[static_cast<std::size_t>(r)] / total;
    return w;
}

ModelParams aggregate_diversity(const ModelParams& parent, std::span<const ModelParams> children,
                                const AggregationWeights& weights) {
    require_children(parent, children);
    if (static_cast<std::size_t>(weights.alpha.size()) != children.size()) {
        throw std::invalid_argument("aggregate_diversity: " + std::to_string(weights.alpha.size()) +
                                    " weights for " + std::to_string(children.size()) + " children");
    }
    // 0.5 * a + 0.5 * sum alpha_r r_r in difference form: a + 0.5 * sum alpha_r (r_r - a).
    ModelParams out = parent;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        if (!out.common[k]) continue;
        Vector blend = Vector::Zero(out.layers[k].size());
        for (std::size_t r = 0; r < children.size(); ++r) {
            blend += weights.alpha[static_cast<Eigen::Index>(r)] *
                     (children[r].layers[k].values - parent.layers[k].values);
        }
        out.layers[k].values += 0.5 * blend;
    }
    return out;
}

ModelParams aggregate_simple(const ModelParams& parent, std::span<const ModelParams> children) {
    require_children(parent, children);
    const double share = 1.0 / static_cast<double>(children.size() + 1);
    ModelParams out = parent;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        if (!out.common[k]) continue;
        Vector blend = Vector::Zero(out.layers[k].size());
        for (const auto& child : children) blend += child.layers[k].values - parent.layers[k].values;
        out.layers[k].values += share * blend;
    }
    return out;
}

ModelParams average_common(std::span<const ModelParams> models) {
    if (models.empty()) {
        throw std::invalid_argument("average_common: no models");
    }
    for (std::size_t i = 1; i < models.size(); ++i) {
        if (!models[i].same_common_structure(models[0])) {
            throw ShapeError("average_common: model " + std::to_string(i) + " has different common layers");
        }
    }
    ModelParams out = models[0];
    const double m = static_cast<double>(models.size());
    std::vector<double> column(models.size());
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        if (!out.common[k]) continue;
        auto& values = out.layers[k].values;
        for (Eigen::Index e = 0; e < values.size(); ++e) {
            for (std::size_t i = 0; i < models.size(); ++i) column[i] = models[i].layers[k].values[e];
            std::sort(column.begin(), column.end());
            values[e] = std::accumulate(column.begin(), column.end(), 0.0) / m;
        }
    }
    return out;
}

void broadcast_common(ModelParams& target, const ModelParams& global) {
    if (!target.same_common_structure(global)) {
        throw ShapeError("broadcast_common: common layers differ");
    }
    for (std::size_t k = 0; k < target.layers.size(); ++k) {
        if (target.common[k]) target.layers[k].values = global.layers[k].values;
    }
}

std::uint64_t training_seed(std::uint64_t root_seed, const NodePath& path, int round) {
    // Negative trailing element: never part of a real node path.
    NodePath key = path;
    key.push_back(-1 - round);
    return derive_node_seed(root_seed, key);
}

LocalTrainResult train_local(const ModelParams& params, const Dataset& data, const FederationConfig& config,
                             std::uint64_t seed, const NodePath& path, int round) {
    if (data.size() == 0) {
        throw std::invalid_argument("node " + format_path(path) + " has an empty dataset");
    }
    LocalTrainResult result{params, {}};
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    AdamState adam;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::span<const Eigen::Index> rows(order.data() + start, std::min(batch, order.size() - start));
            Matrix x(static_cast<Eigen::Index>(rows.size()), data.num_features());
            for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = data.features.row(rows[i]);
            auto step = backward_and_loss(result.params, x, batch_targets(data, rows), config.loss);
            if (!std::isfinite(step.loss)) {
                throw TrainingDiverged(path, round, step.loss);
            }
            if (config.optimizer == OptimizerKind::sgd) {
                result.params = sgd_step(result.params, step.gradient, config.lr);
            } else {
                auto updated = adam_step(adam, result.params, step.gradient, config.lr, config.adam);
                result.params = std::move(updated.params);
                adam = std::move(updated.state);
            }
            loss_sum += step.loss;
            ++batches;
        }
        result.epoch_losses.push_back(loss_sum / batches);
    }
    return result;
}

ModelParams hetero_local_update(ReplicaNode& node, const FederationConfig& config, int round,
                                std::vector<double>* losses) {
    auto trained = train_local(node.params, node.dataset, config, training_seed(config.seed, node.path, round),
                               node.path, round);
    node.params = std::move(trained.params);
    if (losses) *losses = std::move(trained.epoch_losses);
    return node.params;
}

ModelParams client_update(ReplicaNode& node, const FederationConfig& config, int round, AnchorRoundReport* report) {
    for (auto& child : node.children) child.params = node.params;

    std::vector<double> losses;
    hetero_local_update(node, config, round, &losses);
    if (report) report->losses = losses;
    if (node.children.empty()) {
        return node.params;
    }

    std::vector<double> child_loss(node.children.size(), 0.0);
    for (std::size_t r = 0; r < node.children.size(); ++r) {
        AnchorRoundReport sub;
        client_update(node.children[r], config, round, report ? &sub : nullptr);
        if (report) {
            report->diversity.insert(report->diversity.end(), sub.diversity.begin(), sub.diversity.end());
            child_loss[r] = sub.losses.empty() ? 0.0 : sub.losses.back();
        }
    }

    std::vector<ModelParams> children;
    std::vector<double> divs;
    children.reserve(node.children.size());
    for (const auto& child : node.children) {
        children.push_back(child.params);
        divs.push_back(model_divergence(node.params, child.params));
    }
    AggregationWeights weights;
    if (config.aggregation == AggregationMode::diversity) {
        weights = compute_div_aggregation_weights(divs);
        node.params = aggregate_diversity(node.params, children, weights);
    } else {
        weights.alpha = Vector::Constant(static_cast<Eigen::Index>(children.size()), 1.0 / children.size());
        node.params = aggregate_simple(node.params, children);
    }
    if (report) {
        for (std::size_t r = 0; r < node.children.size(); ++r) {
            report->diversity.push_back(DiversityRecord{node.path, node.children[r].path, divs[r],
                                                        weights.alpha[static_cast<Eigen::Index>(r)], child_loss[r]});
        }
    }
    return node.params;
}

ModelParams server_round(std::vector<ReplicaNode>& anchors, const FederationConfig& config, int round,
                         std::vector<AnchorRoundReport>* reports) {
    if (anchors.empty()) {
        throw std::invalid_argument("server_round: no anchors");
    }
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        if (!anchors[i].params.same_common_structure(anchors[0].params)) {
            throw ShapeError("server_round: anchor " + format_path(anchors[i].path) +
                             " does not share the common layers of anchor " + format_path(anchors[0].path));
        }
    }
    std::vector<AnchorRoundReport> local(anchors.size());
    parallel_for(anchors.size(), config.parallel, [&](std::size_t i) {
        local[i].anchor = anchors[i].path.front();
        client_update(anchors[i], config, round, &local[i]);
    });

    std::vector<ModelParams> updated;
    updated.reserve(anchors.size());
    for (const auto& a : anchors) updated.push_back(a.params);
    ModelParams global = average_common(updated);
    for (auto& a : anchors) broadcast_common(a.params, global);
    if (reports) *reports = std::move(local);
    return global;
}

FederationResult run_federation(const FederationConfig& config, std::span<const Dataset> datasets,
                                std::span<const ModelSpec> specs, std::span<const Dataset> tests) {
    const auto m = static_cast<std::size_t>(config.num_clients());
    if (!tests.empty() && tests.size() != 1 && tests.size() != m) {
        throw std::invalid_argument("run_federation: expected 0, 1 or " + std::to_string(m) + " test sets");
    }
    for (const auto& spec : specs) {
        if ((spec.head == HeadKind::classification) != (config.loss == LossKind::cross_entropy)) {
            throw std::invalid_argument("run_federation: loss " + to_string(config.loss) + " does not fit a " +
                                        to_string(spec.head) + " head");
        }
    }
    auto anchors = build_forest(config, datasets, specs);

    FederationResult result;
    for (int t = 0; t < config.rounds; ++t) {
        RoundReport report;
        report.round = t + 1;
        try {
            server_round(anchors, config, t, &report.anchors);
        } catch (const TrainingDiverged&) {
            throw;
        } catch (const std::exception& e) {
            throw std::runtime_error("round " + std::to_string(t + 1) + ": " + e.what());
        }
        if (!tests.empty()) {
            for (std::size_t i = 0; i < m; ++i) {
                report.anchors[i].metrics = evaluate(anchors[i].params, tests.size() == 1 ? tests[0] : tests[i]);
            }
        }
        result.reports.push_back(std::move(report));
    }
    for (auto& a : anchors) result.final_models.push_back(std::move(a.params));
    return result;
}

}  // namespace reptree

#include "reptree/federation.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace reptree;
using namespace reptree::testing;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), out.data());
    return out;
}

Dataset blobs(int n, int f, std::uint64_t seed) {
    return generate_synthetic(SyntheticKind::gaussian_blobs, n, f, 2, seed);
}

FederationConfig quick_config(int m, int r, int d) {
    auto config = FederationConfig::uniform(m, r, 10.0, d);
    config.epochs = 2;
    config.rounds = 2;
    config.batch_size = 10;
    config.lr = 0.05;
    config.seed = 11;
    return config;
}

// Bottom-up recomposition of one client update from the public building blocks.
ModelParams oracle_update(const ModelParams& start, const ReplicaNode& node, const FederationConfig& config,
                          int round) {
    const auto trained =
        train_local(start, node.dataset, config, training_seed(config.seed, node.path, round), node.path, round)
            .params;
    if (node.children.empty()) return trained;
    std::vector<ModelParams> children;
    std::vector<double> divs;
    for (const auto& child : node.children) {
        children.push_back(oracle_update(start, child, config, round));
        divs.push_back(model_divergence(trained, children.back()));
    }
    return aggregate_diversity(trained, children, compute_div_aggregation_weights(divs));
}

}  // namespace

TEST_CASE("diversity weights") {
    const std::vector<double> a{1.0, 3.0};
    CHECK(compute_div_aggregation_weights(a).alpha.isApprox(vec({0.25, 0.75}), 1e-15));
    const std::vector<double> zeros{0.0, 0.0, 0.0};
    CHECK(compute_div_aggregation_weights(zeros).alpha == vec({1.0 / 3, 1.0 / 3, 1.0 / 3}));
    const std::vector<double> b{2.0, 2.0, 4.0};
    CHECK(compute_div_aggregation_weights(b).alpha.isApprox(vec({0.25, 0.25, 0.5}), 1e-15));
    const std::vector<double> tiny{1e-14, 0.0};
    CHECK(compute_div_aggregation_weights(tiny).alpha == vec({0.5, 0.5}));

    const std::vector<double> empty;
    CHECK_THROWS_AS((void)compute_div_aggregation_weights(empty), std::invalid_argument);
    const std::vector<double> negative{1.0, -1.0};
    CHECK_THROWS_AS((void)compute_div_aggregation_weights(negative), std::invalid_argument);
}

TEST_CASE("aggregate_diversity blends half parent, half weighted children") {
    const auto parent = raw_model({{0.0, 0.0}, {1.0}});
    const std::vector<ModelParams> children{raw_model({{2.0, 0.0}, {3.0}}), raw_model({{0.0, 4.0}, {5.0}})};
    AggregationWeights w{vec({0.25, 0.75})};
    const auto out = aggregate_diversity(parent, children, w);
    // 0.5 * [0, 0] + 0.5 * (0.25 * [2, 0] + 0.75 * [0, 4]) and 0.5 * 1 + 0.5 * (0.25 * 3 + 0.75 * 5)
    CHECK(out.layers[0].values.isApprox(vec({0.25, 1.5}), 1e-15));
    CHECK(out.layers[1].values[0] == doctest::Approx(2.75).epsilon(1e-15));
}

TEST_CASE("aggregate_diversity leaves personalized layers and fixed points alone") {
    auto parent = raw_model({{1.0, 2.0}, {3.0}});
    parent.common[1] = false;
    auto child = raw_model({{5.0, 6.0}, {7.0}});
    child.common[1] = false;
    const std::vector<ModelParams> children{child};
    const auto out = aggregate_diversity(parent, children, AggregationWeights{vec({1.0})});
    CHECK(out.layers[1].values == parent.layers[1].values);
    CHECK(out.layers[0].values == vec({3.0, 4.0}));

    const auto p = random_raw_model({7, 3}, 4);
    const std::vector<ModelParams> same{p, p, p};
    CHECK(aggregate_diversity(p, same, AggregationWeights{vec({0.2, 0.3, 0.5})}) == p);

    CHECK_THROWS_AS((void)aggregate_diversity(p, same, AggregationWeights{vec({1.0})}), std::invalid_argument);
    const std::vector<ModelParams> wrong{random_raw_model({7, 4}, 1)};
    CHECK_THROWS_AS((void)aggregate_diversity(p, wrong, AggregationWeights{vec({1.0})}), ShapeError);
}

TEST_CASE("aggregate_simple is the uniform mean of parent and children") {
    const auto parent = raw_model({{1.0, 0.0}});
    const std::vector<ModelParams> children{raw_model({{2.0, 3.0}}), raw_model({{3.0, 6.0}})};
    CHECK(aggregate_simple(parent, children).layers[0].values.isApprox(vec({2.0, 3.0}), 1e-15));
}

TEST_CASE("average_common") {
    const std::vector<ModelParams> two{raw_model({{1.0, 3.0}}), raw_model({{3.0, 5.0}})};
    CHECK(average_common(two).layers[0].values == vec({2.0, 4.0}));

    const std::vector<ModelParams> one{random_raw_model({5}, 3)};
    CHECK(average_common(one) == one[0]);

    std::vector<ModelParams> many;
    for (std::uint64_t s = 0; s < 6; ++s) many.push_back(random_raw_model({9, 2}, s));
    const auto forward = average_common(many);
    std::reverse(many.begin(), many.end());
    CHECK(average_common(many) == forward);
    std::shuffle(many.begin(), many.end(), std::mt19937_64(1));
    CHECK(average_common(many) == forward);

    const std::vector<ModelParams> none;
    CHECK_THROWS_AS((void)average_common(none), std::invalid_argument);
}

TEST_CASE("broadcast_common copies only common layers") {
    auto target = raw_model({{1.0}, {2.0}});
    target.common[1] = false;
    auto global = raw_model({{9.0}, {8.0}});
    global.common[1] = false;
    broadcast_common(target, global);
    CHECK(target.layers[0].values[0] == 9.0);
    CHECK(target.layers[1].values[0] == 2.0);
}

TEST_CASE("train_local with one full batch is one gradient step on every layer") {
    const auto spec = small_spec(3, {4}, 2, HeadKind::classification);
    auto start = random_model(spec, 5);
    const auto data = blobs(12, 3, 2);
    auto config = quick_config(1, 0, 0);
    config.epochs = 1;
    config.batch_size = 12;
    config.lr = 0.1;

    const auto step = backward_and_loss(start, data.features, data.targets, config.loss);
    const auto trained = train_local(start, data, config, 99);
    REQUIRE(trained.epoch_losses.size() == 1);
    CHECK(trained.epoch_losses[0] == doctest::Approx(step.loss).epsilon(1e-12));
    for (std::size_t k = 0; k < start.layers.size(); ++k) {
        const Vector expected = start.layers[k].values - 0.1 * step.gradient.layers[k].values;
        CHECK((trained.params.layers[k].values - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("lr = 0 leaves a whole replica tree unchanged") {
    auto config = quick_config(1, 3, 2);
    config.lr = 0.0;
    std::vector<ModelSpec> specs{small_spec(4, {5}, 2, HeadKind::classification)};
    auto anchors = build_forest(config, std::vector<Dataset>{blobs(100, 4, 1)}, specs);
    const auto before = anchors[0].params;
    CHECK(client_update(anchors[0], config, 0) == before);
    for (const auto& child : anchors[0].children) CHECK(child.params == before);
}

TEST_CASE("common-layer gradients do not depend on personalized-layer gradients") {
    // Linear network Y = (X W1 + b1) W2 + b2 with L1 loss; the head is personalized.
    auto spec = small_spec(3, {4}, 2, HeadKind::regression, Activation::linear);
    spec.personalize_head = true;
    const auto params = random_model(spec, 8);
    const Matrix x = random_matrix(6, 3, 1);
    const Matrix t = random_matrix(6, 2, 2);
    const auto step = backward_and_loss(params, x, t, LossKind::l1);

    const Matrix w1 = params.layers[0].as_matrix();
    const Matrix w2 = params.layers[2].as_matrix();
    const Matrix h = (x * w1).rowwise() + params.layers[1].values.transpose();
    const Matrix y = (h * w2).rowwise() + params.layers[3].values.transpose();
    const Matrix dy = (y - t).array().sign().matrix() / static_cast<double>(y.size());
    const Matrix dh = dy * w2.transpose();
    const Matrix dw1 = x.transpose() * dh;
    const Vector db1 = dh.colwise().sum().transpose();
    CHECK((step.gradient.layers[0].as_matrix() - dw1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((step.gradient.layers[1].values - db1).cwiseAbs().maxCoeff() < 1e-12);

    auto frozen = step.gradient;
    for (std::size_t k = 0; k < frozen.layers.size(); ++k) {
        if (!frozen.common[k]) frozen.layers[k].values.setZero();
    }
    const auto full = sgd_step(params, step.gradient, 0.1);
    const auto partial = sgd_step(params, frozen, 0.1);
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        if (params.common[k]) {
            CHECK(partial.layers[k].values == full.layers[k].values);
        } else {
            CHECK(partial.layers[k].values == params.layers[k].values);
        }
    }
}

TEST_CASE("client_update matches a bottom-up recomposition") {
    auto config = quick_config(1, 2, 2);
    std::vector<Dataset> data{blobs(120, 4, 7)};
    std::vector<ModelSpec> specs{small_spec(4, {5}, 2, HeadKind::classification)};
    auto anchors = build_forest(config, data, specs);

    // Make the stored child parameters stale; the round must overwrite them.
    anchors[0].children[1].params = random_model(specs[0], 1234);
    const auto start = anchors[0].params;
    const auto expected = oracle_update(start, anchors[0], config, 1);

    AnchorRoundReport report;
    const auto got = client_update(anchors[0], config, 1, &report);
    CHECK(got == expected);
    CHECK(report.diversity.size() == 6);
    // Children are reported before their parent: depth-2 records precede the anchor's.
    CHECK(report.diversity.front().parent.size() == 2);
    CHECK(report.diversity.back().parent == NodePath{0});
    for (const auto& d : report.diversity) {
        CHECK(d.div > 0.0);
        CHECK(d.child_loss > 0.0);
    }
}

TEST_CASE("replicas with identical data and seeds get uniform weights") {
    auto config = quick_config(1, 3, 1);
    std::vector<ModelSpec> specs{small_spec(4, {5}, 2, HeadKind::classification)};
    auto anchors = build_forest(config, std::vector<Dataset>{blobs(100, 4, 3)}, specs);
    for (auto& child : anchors[0].children) child.dataset = anchors[0].dataset;
    // Same path for every child gives the same training stream.
    for (auto& child : anchors[0].children) child.path = NodePath{0, 1};
    AnchorRoundReport report;
    client_update(anchors[0], config, 0, &report);
    REQUIRE(report.diversity.size() == 3);
    for (const auto& d : report.diversity) CHECK(d.alpha == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("heterogeneous clients share common layers after every round") {
    auto config = quick_config(4, 2, 1);
    config.loss = LossKind::l1;
    std::vector<Dataset> data;
    std::vector<ModelSpec> specs;
    for (int i = 0; i < 4; ++i) {
        data.push_back(generate_synthetic(SyntheticKind::regression_linear, 80, 5, i + 1, 3));
        auto spec = small_spec(5, {6, 4}, i + 1, HeadKind::regression);
        spec.personalize_head = true;
        specs.push_back(spec);
    }
    auto anchors = build_forest(config, data, specs);
    for (int round = 0; round < 2; ++round) {
        const auto global = server_round(anchors, config, round);
        for (const auto& a : anchors) {
            for (std::size_t k = 0; k < a.params.layers.size(); ++k) {
                if (a.params.common[k]) CHECK(a.params.layers[k].values == global.layers[k].values);
            }
        }
    }
    CHECK(anchors[0].params.layers.back().shape != anchors[3].params.layers.back().shape);
    CHECK(anchors[1].params.layers.back().values.size() == 2);
}

TEST_CASE("run_federation is deterministic and independent of the worker count") {
    auto config = quick_config(3, 2, 1);
    std::vector<Dataset> data{blobs(80, 4, 1), blobs(80, 4, 2), blobs(80, 4, 3)};
    std::vector<ModelSpec> specs(3, small_spec(4, {5}, 2, HeadKind::classification));
    const std::vector<Dataset> tests{blobs(40, 4, 9)};
    const auto a = run_federation(config, data, specs, tests);
    config.parallel = 3;
    const auto b = run_federation(config, data, specs, tests);
    REQUIRE(a.final_models.size() == 3);
    CHECK(a.final_models == b.final_models);
    REQUIRE(a.reports.size() == 2);
    CHECK(a.reports[1].anchors[2].metrics.has_value());
    CHECK(a.reports[1].anchors[2].metrics->accuracy == b.reports[1].anchors[2].metrics->accuracy);
}

TEST_CASE("run_federation errors") {
    auto config = quick_config(1, 1, 1);
    std::vector<Dataset> data{blobs(80, 4, 1)};
    std::vector<ModelSpec> specs{small_spec(4, {5}, 2, HeadKind::classification)};
    SUBCASE("loss must fit the head") {
        config.loss = LossKind::l1;
        CHECK_THROWS_AS((void)run_federation(config, data, specs), std::invalid_argument);
    }
    SUBCASE("divergence names the node and the round") {
        config.lr = 1e300;
        try {
            (void)run_federation(config, data, specs);
            FAIL("expected divergence");
        } catch (const TrainingDiverged& e) {
            CHECK(std::string(e.what()).find("round 1") != std::string::npos);
        }
    }
}

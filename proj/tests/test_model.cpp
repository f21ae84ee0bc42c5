#include "test_support.hpp"

#include <doctest.h>

using namespace reptree;
using namespace reptree::testing;

namespace {

// Independent forward pass: explicit loops over the row-major layer storage.
std::vector<std::vector<double>> oracle_forward(const ModelParams& p, const Matrix& x) {
    std::vector<std::vector<double>> act(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) act[static_cast<std::size_t>(i)].push_back(x(i, j));
    }
    const std::size_t n_dense = p.layers.size() / 2;
    for (std::size_t l = 0; l < n_dense; ++l) {
        const auto& w = p.layers[2 * l];
        const auto& b = p.layers[2 * l + 1];
        const int fan_in = w.shape[0];
        const int fan_out = w.shape[1];
        for (auto& row : act) {
            std::vector<double> next(static_cast<std::size_t>(fan_out), 0.0);
            for (int o = 0; o < fan_out; ++o) {
                double s = b.values[o];
                for (int q = 0; q < fan_in; ++q) s += row[static_cast<std::size_t>(q)] * w.values[q * fan_out + o];
                if (l + 1 < n_dense) {
                    switch (p.arch.activations[l]) {
                        case Activation::relu:
                            s = s > 0 ? s : 0;
                            break;
                        case Activation::tanh:
                            s = std::tanh(s);
                            break;
                        case Activation::linear:
                            break;
                    }
                }
                next[static_cast<std::size_t>(o)] = s;
            }
            row = std::move(next);
        }
    }
    return act;
}

double max_rel_error_vs_finite_differences(const ModelParams& p, const Matrix& x, const Targets& y, LossKind loss) {
    const auto analytic = backward_and_loss(p, x, y, loss).gradient.flatten();
    const Vector base = p.flatten();
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        ModelParams plus = p;
        ModelParams minus = p;
        Vector vp = base;
        Vector vm = base;
        vp[i] += h;
        vm[i] -= h;
        plus.assign_flat(vp);
        minus.assign_flat(vm);
        const double numeric =
            (backward_and_loss(plus, x, y, loss).loss - backward_and_loss(minus, x, y, loss).loss) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("init_params is deterministic and shaped by the spec") {
    const auto spec = small_spec(2, {4}, 3, HeadKind::classification);
    const auto a = init_params(spec, 7);
    const auto b = init_params(spec, 7);
    CHECK(a == b);

    REQUIRE(a.layers.size() == 4);
    CHECK(a.layers[0].shape == std::vector<int>{2, 4});
    CHECK(a.layers[1].shape == std::vector<int>{4});
    CHECK(a.layers[2].shape == std::vector<int>{4, 3});
    CHECK(a.layers[3].shape == std::vector<int>{3});
    CHECK(a.layers[1].values.isZero());
    CHECK(a.layers[3].values.isZero());
    CHECK(a.num_common() == 4);

    const auto c = init_params(spec, 8);
    CHECK(c.same_structure(a));
    CHECK_FALSE(c.layers[0].values == a.layers[0].values);
}

TEST_CASE("init_params rejects invalid specs") {
    CHECK_THROWS_AS((void)init_params(small_spec(0, {4}, 2, HeadKind::classification), 1), std::invalid_argument);
    CHECK_THROWS_AS((void)init_params(small_spec(2, {}, 2, HeadKind::classification), 1), std::invalid_argument);
    CHECK_THROWS_AS((void)init_params(small_spec(2, {0}, 2, HeadKind::classification), 1), std::invalid_argument);
    auto spec = small_spec(2, {3}, 2, HeadKind::classification);
    spec.activations.clear();
    CHECK_THROWS_AS((void)init_params(spec, 1), std::invalid_argument);
}

TEST_CASE("personalized heads are excluded from the common mask") {
    auto spec = small_spec(3, {5, 4}, 2, HeadKind::regression);
    spec.personalize_head = true;
    const auto p = init_params(spec, 1);
    CHECK(p.common == std::vector<bool>{true, true, true, true, false, false});
}

TEST_CASE("forward special cases") {
    const auto spec = small_spec(3, {4}, 2, HeadKind::regression);
    auto zero = init_params(spec, 3).zeros_like();
    const Matrix x = random_matrix(5, 3, 11);
    CHECK(forward(zero, x).isZero());

    auto id_spec = small_spec(2, {2}, 2, HeadKind::regression, Activation::linear);
    auto identity = init_params(id_spec, 1);
    identity.layers[0].as_matrix() = Matrix::Identity(2, 2);
    identity.layers[2].as_matrix() = Matrix::Identity(2, 2);
    const Matrix y = random_matrix(4, 2, 5);
    CHECK(forward(identity, y) == y);

    CHECK_THROWS_AS((void)forward(identity, random_matrix(2, 3, 1)), ShapeError);
}

TEST_CASE("forward matches a hand-rolled oracle") {
    for (auto act : {Activation::relu, Activation::tanh, Activation::linear}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto p = random_model(small_spec(4, {6, 5}, 3, HeadKind::classification, act), seed);
            const Matrix x = random_matrix(7, 4, seed + 100);
            const Matrix out = forward(p, x);
            const auto expected = oracle_forward(p, x);
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                for (Eigen::Index j = 0; j < out.cols(); ++j) {
                    CHECK(std::abs(out(i, j) - expected[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
                          1e-10);
                }
            }
        }
    }
}

TEST_CASE("cross-entropy of uniform scores is ln(n)") {
    const int classes = 5;
    const auto p = init_params(small_spec(3, {4}, classes, HeadKind::classification), 2).zeros_like();
    LabelVector y(3);
    y << 0, 2, 4;
    const auto r = backward_and_loss(p, random_matrix(3, 3, 4), y, LossKind::cross_entropy);
    CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("L1 loss at an exact fit is zero with zero gradient") {
    const auto p = random_model(small_spec(3, {4}, 2, HeadKind::regression), 9);
    const Matrix x = random_matrix(6, 3, 10);
    const Matrix target = forward(p, x);
    const auto r = backward_and_loss(p, x, target, LossKind::l1);
    CHECK(r.loss == 0.0);
    CHECK(r.gradient.flatten().isZero());
}

TEST_CASE("loss kind must fit the head") {
    const auto cls = init_params(small_spec(2, {3}, 2, HeadKind::classification), 1);
    const auto reg = init_params(small_spec(2, {3}, 2, HeadKind::regression), 1);
    const Matrix x = random_matrix(2, 2, 1);
    CHECK_THROWS_AS((void)backward_and_loss(cls, x, Matrix(Matrix::Zero(2, 2)), LossKind::l1), std::invalid_argument);
    CHECK_THROWS_AS((void)backward_and_loss(reg, x, LabelVector(LabelVector::Zero(2)), LossKind::cross_entropy),
                    std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        for (auto act : {Activation::relu, Activation::tanh}) {
            const auto cls = random_model(small_spec(3, {5}, 3, HeadKind::classification, act), seed);
            CHECK(cls.num_values() <= 100);
            LabelVector y(6);
            y << 0, 1, 2, 2, 1, 0;
            CHECK(max_rel_error_vs_finite_differences(cls, random_matrix(6, 3, seed + 1), y,
                                                      LossKind::cross_entropy) < 1e-4);

            const auto reg = random_model(small_spec(3, {4, 3}, 2, HeadKind::regression, act), seed + 50);
            CHECK(reg.num_values() <= 100);
            const Matrix target = random_matrix(6, 2, seed + 2, 3.0);
            CHECK(max_rel_error_vs_finite_differences(reg, random_matrix(6, 3, seed + 3), target, LossKind::l1) <
                  1e-4);
        }
    }
}

TEST_CASE("forward and backward are bitwise repeatable") {
    const auto p = random_model(small_spec(4, {8}, 3, HeadKind::classification), 5);
    const Matrix x = random_matrix(10, 4, 6);
    LabelVector y = LabelVector::Zero(10);
    CHECK(forward(p, x) == forward(p, x));
    const auto a = backward_and_loss(p, x, y, LossKind::cross_entropy);
    const auto b = backward_and_loss(p, x, y, LossKind::cross_entropy);
    CHECK(a.loss == b.loss);
    CHECK(a.gradient == b.gradient);
}

TEST_CASE("sgd_step arithmetic") {
    const auto w = raw_model({{1.0, 2.0}});
    const auto g = raw_model({{1.0, 1.0}});
    CHECK(sgd_step(w, g, 0.0) == w);
    CHECK(sgd_step(w, g, 0.5) == raw_model({{0.5, 1.5}}));

    const auto p = random_raw_model({4, 3}, 8);
    CHECK(sgd_step(p, p, 1.0).flatten().isZero());

    CHECK_THROWS_AS((void)sgd_step(w, raw_model({{1.0}}), 0.1), ShapeError);
}

TEST_CASE("adam_step") {
    SUBCASE("zero gradient from a fresh state leaves parameters") {
        const auto p = random_raw_model({5}, 3);
        const auto r = adam_step({}, p, p.zeros_like(), 0.01);
        CHECK(r.params == p);
        CHECK(r.state.step == 1);
    }
    SUBCASE("single scalar matches the hand-computed update") {
        // m1 = 0.1 * 0.5 = 0.05, v1 = 0.001 * 0.25 = 0.00025,
        // m_hat = 0.05 / 0.1 = 0.5, v_hat = 0.00025 / 0.001 = 0.25.
        const auto r = adam_step({}, raw_model({{1.0}}), raw_model({{0.5}}), 0.1);
        const double expected = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
        CHECK(std::abs(r.params.layers[0].values[0] - expected) < 1e-12);
        CHECK(std::abs(r.state.first_moment.layers[0].values[0] - 0.05) < 1e-15);
        CHECK(std::abs(r.state.second_moment.layers[0].values[0] - 0.00025) < 1e-15);

        // Second step with gradient -1: m2 = 0.9*0.05 - 0.1 = -0.055, v2 = 0.999*0.00025 + 0.001.
        const auto r2 = adam_step(r.state, r.params, raw_model({{-1.0}}), 0.1);
        const double m_hat = -0.055 / (1 - 0.81);
        const double v_hat = (0.999 * 0.00025 + 0.001) / (1 - 0.999 * 0.999);
        CHECK(std::abs(r2.params.layers[0].values[0] - (expected - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8))) < 1e-12);
    }
    SUBCASE("identical runs agree") {
        const auto p = random_raw_model({6, 2}, 4);
        const auto g = random_raw_model({6, 2}, 5);
        const auto a = adam_step({}, p, g, 0.01);
        const auto b = adam_step({}, p, g, 0.01);
        CHECK(a.params == b.params);
        CHECK(adam_step(a.state, a.params, g, 0.01).params == adam_step(b.state, b.params, g, 0.01).params);
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS((void)adam_step({}, raw_model({{1.0}}), raw_model({{1.0, 2.0}}), 0.1), ShapeError);
    }
}

TEST_CASE("layer_l2_distance") {
    const auto a = raw_model({{3.0, 0.0}});
    const auto b = raw_model({{0.0, 4.0}});
    CHECK(layer_l2_distance(a.layers[0], a.layers[0]) == 0.0);
    CHECK(layer_l2_distance(a.layers[0], b.layers[0]) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK_THROWS_AS((void)layer_l2_distance(a.layers[0], raw_model({{1.0}}).layers[0]), ShapeError);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = random_raw_model({10}, seed);
        const auto y = random_raw_model({10}, seed + 1000);
        const auto z = random_raw_model({10}, seed + 2000);
        double sum = 0.0;
        for (int l = 0; l < 10; ++l) {
            const double d = x.layers[0].values[l] - y.layers[0].values[l];
            sum += d * d;
        }
        const double dxy = layer_l2_distance(x.layers[0], y.layers[0]);
        CHECK(std::abs(dxy - std::sqrt(sum)) < 1e-12);
        CHECK(dxy == layer_l2_distance(y.layers[0], x.layers[0]));
        CHECK(dxy > 0.0);
        CHECK(dxy <= layer_l2_distance(x.layers[0], z.layers[0]) + layer_l2_distance(z.layers[0], y.layers[0]) + 1e-12);
    }
}

TEST_CASE("model_divergence averages common layers only") {
    const auto a = raw_model({{0.0}, {0.0, 0.0}});
    const auto r = raw_model({{1.0}, {3.0, 0.0}});
    CHECK(model_divergence(a, a) == 0.0);
    CHECK(model_divergence(a, r) == doctest::Approx(2.0));

    auto a2 = raw_model({{0.0}, {0.0}, {5.0}});
    auto r2 = raw_model({{0.0}, {0.0}, {-5.0}});
    a2.common[2] = false;
    r2.common[2] = false;
    CHECK(model_divergence(a2, r2) == 0.0);

    auto none = raw_model({{1.0}});
    none.common[0] = false;
    CHECK_THROWS_AS((void)model_divergence(none, none), std::invalid_argument);
    CHECK_THROWS_AS((void)model_divergence(a, raw_model({{0.0}})), ShapeError);
}

TEST_CASE("model_divergence is nonnegative and ignores personalized layers (property)") {
    auto spec = small_spec(3, {4}, 2, HeadKind::regression);
    spec.personalize_head = true;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto a = random_model(spec, seed);
        auto b = random_model(spec, seed + 500);
        const double d = model_divergence(a, b);
        CHECK(d >= 0.0);
        b.layers[2].values.setRandom();
        b.layers[3].values.setRandom();
        CHECK(model_divergence(a, b) == d);
    }
}

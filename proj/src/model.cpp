#include "reptree/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace reptree {

namespace {

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void require_same_structure(const ModelParams& a, const ModelParams& b, const char* where) {
    if (!a.same_structure(b)) {
        throw ShapeError(std::string(where) + ": model structures differ");
    }
}

Matrix apply_activation(Activation act, const Matrix& z) {
    switch (act) {
        case Activation::relu:
            return z.cwiseMax(0.0);
        case Activation::tanh:
            return z.array().tanh().matrix();
        case Activation::linear:
            return z;
    }
    return z;
}

// Derivative of the activation evaluated from pre-activation z and output a.
Matrix activation_grad(Activation act, const Matrix& z, const Matrix& a) {
    switch (act) {
        case Activation::relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Activation::tanh:
            return (1.0 - a.array().square()).matrix();
        case Activation::linear:
            return Matrix::Ones(z.rows(), z.cols());
    }
    return Matrix::Ones(z.rows(), z.cols());
}

struct ForwardTrace {
    std::vector<Matrix> pre;   // z_l per layer
    std::vector<Matrix> post;  // a_l per layer, post[0] is the input
};

std::size_t dense_count(const ModelParams& p) { return p.layers.size() / 2; }

void check_layout(const ModelParams& params) {
    const auto& arch = params.arch;
    if (params.layers.size() != 2 * (arch.hidden.size() + 1) || params.common.size() != params.layers.size()) {
        throw ShapeError("model layout does not match its architecture");
    }
}

ForwardTrace run_forward(const ModelParams& params, const Matrix& batch) {
    check_layout(params);
    if (batch.cols() != params.arch.inputs) {
        std::ostringstream os;
        os << "forward: batch has " << batch.cols() << " columns, model expects " << params.arch.inputs;
        throw ShapeError(os.str());
    }
    ForwardTrace trace;
    trace.post.push_back(batch);
    const std::size_t n_dense = dense_count(params);
    for (std::size_t l = 0; l < n_dense; ++l) {
        const auto w = params.layers[2 * l].as_matrix();
        const auto& b = params.layers[2 * l + 1].values;
        Matrix z = trace.post.back() * w;
        z.rowwise() += b.transpose();
        const bool is_head = l + 1 == n_dense;
        Matrix a = is_head ? z : apply_activation(params.arch.activations[l], z);
        trace.pre.push_back(std::move(z));
        trace.post.push_back(std::move(a));
    }
    return trace;
}

}  // namespace

Eigen::Map<const Matrix> LayerTensor::as_matrix() const {
    if (shape.size() != 2) {
        throw ShapeError("layer '" + name + "' is not rank 2");
    }
    return {values.data(), shape[0], shape[1]};
}

Eigen::Map<Matrix> LayerTensor::as_matrix() {
    if (shape.size() != 2) {
        throw ShapeError("layer '" + name + "' is not rank 2");
    }
    return {values.data(), shape[0], shape[1]};
}

void ModelSpec::validate() const {
    if (inputs <= 0 || outputs <= 0) {
        throw std::invalid_argument("model spec: inputs and outputs must be positive");
    }
    if (hidden.empty()) {
        throw std::invalid_argument("model spec: at least one hidden layer is required");
    }
    for (int h : hidden) {
        if (h <= 0) {
            throw std::invalid_argument("model spec: hidden sizes must be positive");
        }
    }
    if (activations.size() != hidden.size()) {
        throw std::invalid_argument("model spec: one activation per hidden layer is required");
    }
}

std::size_t ModelParams::num_common() const {
    return static_cast<std::size_t>(std::count(common.begin(), common.end(), true));
}

std::int64_t ModelParams::num_values() const {
    std::int64_t n = 0;
    for (const auto& l : layers) {
        n += l.size();
    }
    return n;
}

bool ModelParams::same_structure(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) {
        return false;
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].name != other.layers[k].name || !layers[k].same_shape(other.layers[k])) {
            return false;
        }
    }
    return common == other.common;
}

bool ModelParams::same_common_structure(const ModelParams& other) const {
    if (layers.size() != other.layers.size() || common != other.common) {
        return false;
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (!common[k]) {
            continue;
        }
        if (layers[k].name != other.layers[k].name || !layers[k].same_shape(other.layers[k])) {
            return false;
        }
    }
    return true;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams out = *this;
    for (auto& l : out.layers) {
        l.values.setZero();
    }
    return out;
}

Vector ModelParams::flatten() const {
    Vector flat(num_values());
    Eigen::Index at = 0;
    for (const auto& l : layers) {
        flat.segment(at, l.size()) = l.values;
        at += l.size();
    }
    return flat;
}

void ModelParams::assign_flat(const Vector& flat) {
    if (flat.size() != num_values()) {
        throw ShapeError("assign_flat: size mismatch");
    }
    Eigen::Index at = 0;
    for (auto& l : layers) {
        l.values = flat.segment(at, l.size());
        at += l.size();
    }
}

bool ModelParams::operator==(const ModelParams& other) const {
    if (!same_structure(other)) {
        return false;
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].values != other.layers[k].values) {
            return false;
        }
    }
    return true;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ModelParams params;
    params.arch = spec;

    std::vector<int> widths;
    widths.push_back(spec.inputs);
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.outputs);

    const std::size_t n_dense = widths.size() - 1;
    for (std::size_t l = 0; l < n_dense; ++l) {
        const bool is_head = l + 1 == n_dense;
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        // He scaling for rectifiers, LeCun scaling otherwise.
        const bool rectified = !is_head && spec.activations[l] == Activation::relu;
        const double stddev = std::sqrt((rectified ? 2.0 : 1.0) / fan_in);
        std::normal_distribution<double> normal(0.0, stddev);

        const std::string prefix = is_head ? std::string("head") : "hidden" + std::to_string(l);
        LayerTensor w{prefix + ".weight", {fan_in, fan_out}, Vector(static_cast<Eigen::Index>(fan_in) * fan_out)};
        for (Eigen::Index i = 0; i < w.values.size(); ++i) {
            w.values[i] = normal(rng);
        }
        LayerTensor b{prefix + ".bias", {fan_out}, Vector::Zero(fan_out)};
        const bool federated = !(is_head && spec.personalize_head);
        params.layers.push_back(std::move(w));
        params.layers.push_back(std::move(b));
        params.common.push_back(federated);
        params.common.push_back(federated);
    }
    return params;
}

Matrix forward(const ModelParams& params, const Matrix& batch) {
    return std::move(run_forward(params, batch).post.back());
}

LossAndGradient backward_and_loss(const ModelParams& params, const Matrix& batch, const Targets& targets,
                                  LossKind loss) {
    const auto& arch = params.arch;
    const bool wants_labels = loss == LossKind::cross_entropy;
    if (wants_labels != (arch.head == HeadKind::classification)) {
        throw std::invalid_argument("loss " + to_string(loss) + " is incompatible with a " + to_string(arch.head) +
                                    " head");
    }
    if (wants_labels != std::holds_alternative<LabelVector>(targets)) {
        throw std::invalid_argument("targets do not match loss " + to_string(loss));
    }

    ForwardTrace trace = run_forward(params, batch);
    const Matrix& out = trace.post.back();
    const auto n = static_cast<double>(batch.rows());
    if (batch.rows() == 0) {
        throw std::invalid_argument("backward_and_loss: empty batch");
    }

    LossAndGradient result;
    Matrix delta;
    if (wants_labels) {
        const auto& labels = std::get<LabelVector>(targets);
        if (labels.size() != batch.rows()) {
            throw ShapeError("backward_and_loss: label count differs from batch rows");
        }
        const Vector row_max = out.rowwise().maxCoeff();
        Matrix shifted = out.colwise() - row_max;
        Matrix probs = shifted.array().exp().matrix();
        const Vector sums = probs.rowwise().sum();
        double total = 0.0;
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const int y = labels[i];
            if (y < 0 || y >= arch.outputs) {
                throw std::invalid_argument("backward_and_loss: label out of range");
            }
            total += std::log(sums[i]) - shifted(i, y);
            probs.row(i) /= sums[i];
            probs(i, y) -= 1.0;
        }
        result.loss = total / n;
        delta = probs / n;
    } else {
        const auto& target = std::get<Matrix>(targets);
        if (target.rows() != out.rows() || target.cols() != out.cols()) {
            throw ShapeError("backward_and_loss: regression target shape differs from output");
        }
        const Matrix diff = out - target;
        const double count = static_cast<double>(diff.size());
        result.loss = diff.cwiseAbs().sum() / count;
        delta = diff.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }) / count;
    }

    result.gradient = params.zeros_like();
    const std::size_t n_dense = dense_count(params);
    for (std::size_t l = n_dense; l-- > 0;) {
        const Matrix& input = trace.post[l];
        result.gradient.layers[2 * l].as_matrix() = input.transpose() * delta;
        result.gradient.layers[2 * l + 1].values = delta.colwise().sum().transpose();
        if (l == 0) {
            break;
        }
        Matrix upstream = delta * params.layers[2 * l].as_matrix().transpose();
        delta = upstream.cwiseProduct(activation_grad(arch.activations[l - 1], trace.pre[l - 1], trace.post[l]));
    }
    return result;
}

ModelParams sgd_step(const ModelParams& params, const ModelParams& gradient, double lr) {
    require_same_structure(params, gradient, "sgd_step");
    ModelParams out = params;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        out.layers[k].values -= lr * gradient.layers[k].values;
    }
    return out;
}

AdamResult adam_step(const AdamState& state, const ModelParams& params, const ModelParams& gradient, double lr,
                     const AdamOptions& opts) {
    require_same_structure(params, gradient, "adam_step");
    AdamResult result{params, state};
    if (state.fresh()) {
        result.state.first_moment = params.zeros_like();
        result.state.second_moment = params.zeros_like();
    } else {
        require_same_structure(params, state.first_moment, "adam_step");
        require_same_structure(params, state.second_moment, "adam_step");
    }
    auto& st = result.state;
    st.step += 1;
    const double correction1 = 1.0 - std::pow(opts.beta1, static_cast<double>(st.step));
    const double correction2 = 1.0 - std::pow(opts.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
        const Vector& g = gradient.layers[k].values;
        Vector& m = st.first_moment.layers[k].values;
        Vector& v = st.second_moment.layers[k].values;
        m = opts.beta1 * m + (1.0 - opts.beta1) * g;
        v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseProduct(g);
        const Vector m_hat = m / correction1;
        const Vector v_hat = v / correction2;
        result.params.layers[k].values.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + opts.epsilon);
    }
    return result;
}

double layer_l2_distance(const LayerTensor& a, const LayerTensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("layer_l2_distance: shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                         " differ");
    }
    return l2_distance(a.values, b.values);
}

double model_divergence(const ModelParams& a, const ModelParams& b) {
    if (!a.same_common_structure(b)) {
        throw ShapeError("model_divergence: common layers differ in structure");
    }
    double total = 0.0;
    std::size_t n_common = 0;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        if (!a.common[k]) {
            continue;
        }
        total += layer_l2_distance(a.layers[k], b.layers[k]);
        ++n_common;
    }
    if (n_common == 0) {
        throw std::invalid_argument("model_divergence: models have no common layers");
    }
    return total / static_cast<double>(n_common);
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu:
            return "relu";
        case Activation::tanh:
            return "tanh";
        case Activation::linear:
            return "linear";
    }
    return "?";
}

std::string to_string(HeadKind h) { return h == HeadKind::classification ? "classification" : "regression"; }

std::string to_string(LossKind l) { return l == LossKind::cross_entropy ? "cross_entropy" : "l1"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "linear") return Activation::linear;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "l1") return LossKind::l1;
    throw std::invalid_argument("unknown loss '" + s + "'");
}

}  // namespace reptree

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace reptree {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using LabelVector = Eigen::VectorXi;

/// Thrown when tensors or models that must line up do not.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

enum class Activation { relu, tanh, linear };
enum class HeadKind { classification, regression };
enum class LossKind { cross_entropy, l1 };

/// One named parameter block. Values are stored flat in row-major order.
struct LayerTensor {
    std::string name;
    std::vector<int> shape;
    Vector values;

    [[nodiscard]] std::int64_t size() const { return values.size(); }
    [[nodiscard]] bool same_shape(const LayerTensor& other) const { return shape == other.shape; }

    /// View a rank-2 tensor as a row-major matrix.
    [[nodiscard]] Eigen::Map<const Matrix> as_matrix() const;
    [[nodiscard]] Eigen::Map<Matrix> as_matrix();
};

/// Dense network architecture: inputs -> hidden... -> head.
struct ModelSpec {
    int inputs = 0;
    std::vector<int> hidden;
    std::vector<Activation> activations;  // one per hidden layer
    HeadKind head = HeadKind::classification;
    int outputs = 0;  // classes for classification, target width for regression
    bool personalize_head = false;  // head layers stay local when federating

    /// Throws std::invalid_argument when sizes are not positive or activations mismatch.
    void validate() const;
};

/// Ordered layers plus a per-layer flag marking the federated (common) layers.
struct ModelParams {
    ModelSpec arch;
    std::vector<LayerTensor> layers;
    std::vector<bool> common;

    [[nodiscard]] std::size_t num_layers() const { return layers.size(); }
    [[nodiscard]] std::size_t num_common() const;
    [[nodiscard]] std::int64_t num_values() const;

    /// Same layer count, names and shapes.
    [[nodiscard]] bool same_structure(const ModelParams& other) const;

    /// Same names/shapes on the common layers (personalized layers may differ).
    [[nodiscard]] bool same_common_structure(const ModelParams& other) const;

    /// A zero-filled copy with identical structure, used for gradients and optimizer moments.
    [[nodiscard]] ModelParams zeros_like() const;

    /// Flatten all layer values in order; inverse of assign_flat.
    [[nodiscard]] Vector flatten() const;
    void assign_flat(const Vector& flat);

    bool operator==(const ModelParams& other) const;
};

/// Classification labels or regression target rows, aligned with a feature matrix.
using Targets = std::variant<LabelVector, Matrix>;

[[nodiscard]] ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Unnormalized class scores (classification) or predicted targets (regression), one row per sample.
[[nodiscard]] Matrix forward(const ModelParams& params, const Matrix& batch);

struct LossAndGradient {
    double loss = 0.0;
    ModelParams gradient;
};

/// Mean loss over the batch and its gradient with respect to every layer.
[[nodiscard]] LossAndGradient backward_and_loss(const ModelParams& params, const Matrix& batch,
                                                const Targets& targets, LossKind loss);

[[nodiscard]] ModelParams sgd_step(const ModelParams& params, const ModelParams& gradient, double lr);

struct AdamState {
    ModelParams first_moment;
    ModelParams second_moment;
    std::int64_t step = 0;

    [[nodiscard]] bool fresh() const { return step == 0 && first_moment.layers.empty(); }
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamResult {
    ModelParams params;
    AdamState state;
};

[[nodiscard]] AdamResult adam_step(const AdamState& state, const ModelParams& params,
                                   const ModelParams& gradient, double lr, const AdamOptions& opts = {});

/// Euclidean distance between two arrays of equal size.
template <typename DerivedA, typename DerivedB>
[[nodiscard]] double l2_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("l2_distance: operand sizes differ");
    }
    return (a - b).norm();
}

[[nodiscard]] double layer_l2_distance(const LayerTensor& a, const LayerTensor& b);

/// Mean layerwise L2 distance over the common layers; personalized layers are ignored.
[[nodiscard]] double model_divergence(const ModelParams& a, const ModelParams& b);

[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] std::string to_string(HeadKind h);
[[nodiscard]] std::string to_string(LossKind l);
[[nodiscard]] Activation parse_activation(const std::string& s);
[[nodiscard]] LossKind parse_loss(const std::string& s);

}  // namespace reptree

#pragma once

#include "reptree/data.hpp"
#include "reptree/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace reptree {

/// Classification metrics are percentages, macro-averaged one-vs-rest over the classes
/// that occur in either the labels or the predictions. Regression reports MAE only.
struct MetricSet {
    TaskKind task = TaskKind::classification;
    double accuracy = 0.0;
    double f1 = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double mae = 0.0;

    /// Accuracy for classification, MAE for regression.
    [[nodiscard]] double headline() const { return task == TaskKind::classification ? accuracy : mae; }

    /// (name, value) pairs in a fixed order.
    [[nodiscard]] std::vector<std::pair<std::string, double>> named() const;
};

[[nodiscard]] MetricSet classification_metrics(const LabelVector& truth, const LabelVector& predicted, int num_classes);

[[nodiscard]] LabelVector predict_labels(const ModelParams& model, const Matrix& features);

[[nodiscard]] MetricSet evaluate(const ModelParams& model, const Dataset& test);

}  // namespace reptree

#include "reptree/metrics.hpp"

namespace reptree {

std::vector<std::pair<std::string, double>> MetricSet::named() const {
    if (task == TaskKind::regression) {
        return {{"mae", mae}};
    }
    return {{"accuracy", accuracy}, {"f1", f1}, {"sensitivity", sensitivity}, {"specificity", specificity}};
}

MetricSet classification_metrics(const LabelVector& truth, const LabelVector& predicted, int num_classes) {
    if (truth.size() != predicted.size()) {
        throw ShapeError("classification_metrics: label and prediction counts differ");
    }
    if (truth.size() == 0) {
        throw std::invalid_argument("classification_metrics: empty test set");
    }
    const auto k = static_cast<Eigen::Index>(num_classes);
    Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(k, k);  // rows: truth, cols: prediction
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k) {
            throw std::invalid_argument("classification_metrics: label out of range");
        }
        confusion(truth[i], predicted[i]) += 1.0;
    }
    const double n = static_cast<double>(truth.size());
    MetricSet m;
    m.task = TaskKind::classification;
    m.accuracy = 100.0 * confusion.trace() / n;

    auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
    double recall_sum = 0.0;
    double specificity_sum = 0.0;
    double f1_sum = 0.0;
    int active = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
        const double tp = confusion(c, c);
        const double actual = confusion.row(c).sum();
        const double called = confusion.col(c).sum();
        if (actual == 0.0 && called == 0.0) continue;
        const double fn = actual - tp;
        const double fp = called - tp;
        const double tn = n - tp - fn - fp;
        const double precision = ratio(tp, tp + fp);
        const double recall = ratio(tp, tp + fn);
        recall_sum += recall;
        specificity_sum += ratio(tn, tn + fp);
        f1_sum += ratio(2.0 * precision * recall, precision + recall);
        ++active;
    }
    m.sensitivity = 100.0 * recall_sum / active;
    m.specificity = 100.0 * specificity_sum / active;
    m.f1 = 100.0 * f1_sum / active;
    return m;
}

LabelVector predict_labels(const ModelParams& model, const Matrix& features) {
    const Matrix scores = forward(model, features);
    LabelVector out(scores.rows());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        out[i] = static_cast<int>(best);
    }
    return out;
}

MetricSet evaluate(const ModelParams& model, const Dataset& test) {
    if (test.size() == 0) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    const bool classifier = model.arch.head == HeadKind::classification;
    if (classifier != (test.task() == TaskKind::classification)) {
        throw std::invalid_argument("evaluate: model head does not match the test set task");
    }
    if (classifier) {
        return classification_metrics(test.labels(), predict_labels(model, test.features), model.arch.outputs);
    }
    const Matrix predicted = forward(model, test.features);
    const Matrix& target = test.regression_targets();
    if (predicted.cols() != target.cols()) {
        throw ShapeError("evaluate: regression head width differs from the test targets");
    }
    MetricSet m;
    m.task = TaskKind::regression;
    m.mae = (predicted - target).cwiseAbs().sum() / static_cast<double>(target.size());
    return m;
}

}  // namespace reptree

#pragma once

#include "reptree/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace reptree {

enum class TaskKind { classification, regression };

/// Features and aligned targets. Rows are samples; sample_ids are strictly increasing.
struct Dataset {
    Matrix features;
    Targets targets = LabelVector{};
    std::vector<std::int64_t> sample_ids;
    int num_classes = 0;  // classification only

    [[nodiscard]] Eigen::Index size() const { return features.rows(); }
    [[nodiscard]] Eigen::Index num_features() const { return features.cols(); }
    [[nodiscard]] TaskKind task() const {
        return std::holds_alternative<LabelVector>(targets) ? TaskKind::classification : TaskKind::regression;
    }
    [[nodiscard]] const LabelVector& labels() const { return std::get<LabelVector>(targets); }
    [[nodiscard]] const Matrix& regression_targets() const { return std::get<Matrix>(targets); }
    /// Target width: class count for classification, column count for regression.
    [[nodiscard]] int output_width() const;

    /// Rows at the given positions, in the given order.
    [[nodiscard]] Dataset select(std::span<const Eigen::Index> positions) const;

    /// Throws std::invalid_argument when sizes disagree or ids are not strictly increasing.
    void validate() const;

    bool operator==(const Dataset& other) const;
};

/// Per-class sample counts for a classification dataset.
[[nodiscard]] std::vector<Eigen::Index> class_counts(const Dataset& data);

/// Union of datasets with disjoint sample ids, rows ordered by sample id.
[[nodiscard]] Dataset concatenate(std::span<const Dataset> parts);

enum class SyntheticKind { gaussian_blobs, regression_linear };

struct SyntheticOptions {
    double separation = 1.5;  // stddev of class centers (blobs)
    double noise = 0.1;       // target noise (regression)
};

/// Deterministic synthetic data. Blobs are class-balanced; regression targets are a
/// fixed random linear map of the features plus noise. Features depend only on the seed,
/// n and f, so datasets of different output widths share them.
[[nodiscard]] Dataset generate_synthetic(SyntheticKind kind, Eigen::Index n, Eigen::Index f, int classes_or_outputs,
                                         std::uint64_t seed, const SyntheticOptions& opts = {});

struct CsvSchema {
    int label_column = 0;              // classification label column
    std::vector<int> feature_columns;  // empty: every column not used as a target
    std::vector<int> target_columns;   // regression only
    bool header = true;
    TaskKind task = TaskKind::classification;
    int num_classes = 0;  // 0: inferred as max label + 1
};

class CsvError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes label (or targets) first, then features. Loading with the default schema for
/// the task round-trips the dataset.
void write_csv(const Dataset& data, const std::filesystem::path& path);

/// Assignment of samples to folds.
struct SplitPlan {
    int folds = 0;
    std::vector<int> fold_of;  // per sample position
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<Eigen::Index> positions_in(int fold) const;
    [[nodiscard]] std::vector<Eigen::Index> fold_sizes() const;
};

/// Fold roles for one cross-validation configuration.
struct FoldRoles {
    std::vector<int> client_fold;
    int test_fold = 0;
};

[[nodiscard]] SplitPlan kfold_assign(const Dataset& data, int folds, std::uint64_t seed, bool stratified);

/// Configuration c assigns fold (i + c) mod folds to client i; the remaining fold is the test set.
[[nodiscard]] FoldRoles rotate_folds(int folds, int clients, int configuration);

/// Number of samples removed from a parent of size n at perturbation rate p percent.
[[nodiscard]] Eigen::Index removal_count(Eigen::Index n, double p);

/// Positions removed by the rotating window of replica `replica_index` (1-based).
[[nodiscard]] std::vector<Eigen::Index> removal_window(Eigen::Index n, Eigen::Index k, int replica_index);

[[nodiscard]] Dataset perturb_random(const Dataset& parent, double p, int replica_index);

/// Per-class removal quotas summing to k, proportional to class counts (largest remainder).
[[nodiscard]] std::vector<Eigen::Index> stratified_quotas(std::span<const Eigen::Index> counts, Eigen::Index k);

[[nodiscard]] Dataset perturb_stratified(const Dataset& parent, double p, int replica_index);

[[nodiscard]] std::string to_string(SyntheticKind k);
[[nodiscard]] SyntheticKind parse_synthetic_kind(const std::string& s);

}  // namespace reptree

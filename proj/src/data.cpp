#include "reptree/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace reptree {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

Dataset keep_positions(const Dataset& parent, const std::vector<bool>& removed) {
    std::vector<Eigen::Index> keep;
    keep.reserve(static_cast<std::size_t>(parent.size()));
    for (Eigen::Index i = 0; i < parent.size(); ++i) {
        if (!removed[static_cast<std::size_t>(i)]) keep.push_back(i);
    }
    return parent.select(keep);
}

void check_rate(double p) {
    if (!(p > 0.0 && p < 100.0)) {
        throw std::invalid_argument("perturbation rate must lie strictly between 0 and 100");
    }
}

}  // namespace

int Dataset::output_width() const {
    return task() == TaskKind::classification ? num_classes : static_cast<int>(regression_targets().cols());
}

Dataset Dataset::select(std::span<const Eigen::Index> positions) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features.resize(static_cast<Eigen::Index>(positions.size()), features.cols());
    out.sample_ids.reserve(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(positions[i]);
        out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(positions[i])]);
    }
    if (task() == TaskKind::classification) {
        const auto& src = labels();
        LabelVector dst(static_cast<Eigen::Index>(positions.size()));
        for (std::size_t i = 0; i < positions.size(); ++i) dst[static_cast<Eigen::Index>(i)] = src[positions[i]];
        out.targets = std::move(dst);
    } else {
        const auto& src = regression_targets();
        Matrix dst(static_cast<Eigen::Index>(positions.size()), src.cols());
        for (std::size_t i = 0; i < positions.size(); ++i) dst.row(static_cast<Eigen::Index>(i)) = src.row(positions[i]);
        out.targets = std::move(dst);
    }
    return out;
}

void Dataset::validate() const {
    const auto n = features.rows();
    const auto n_targets = task() == TaskKind::classification ? labels().size() : regression_targets().rows();
    if (n_targets != n || static_cast<Eigen::Index>(sample_ids.size()) != n) {
        throw std::invalid_argument("dataset: features, targets and sample ids differ in length");
    }
    for (std::size_t i = 1; i < sample_ids.size(); ++i) {
        if (sample_ids[i] <= sample_ids[i - 1]) {
            throw std::invalid_argument("dataset: sample ids must be strictly increasing");
        }
    }
    if (task() == TaskKind::classification) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (labels()[i] < 0 || labels()[i] >= num_classes) {
                throw std::invalid_argument("dataset: label out of class range");
            }
        }
    }
}

bool Dataset::operator==(const Dataset& other) const {
    return features == other.features && targets == other.targets && sample_ids == other.sample_ids &&
           num_classes == other.num_classes;
}

std::vector<Eigen::Index> class_counts(const Dataset& data) {
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(data.num_classes), 0);
    const auto& y = data.labels();
    for (Eigen::Index i = 0; i < y.size(); ++i) ++counts[static_cast<std::size_t>(y[i])];
    return counts;
}

Dataset concatenate(std::span<const Dataset> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concatenate: no datasets");
    }
    const auto task = parts.front().task();
    Eigen::Index rows = 0;
    for (const auto& p : parts) {
        if (p.task() != task || p.num_features() != parts.front().num_features() ||
            p.output_width() != parts.front().output_width()) {
            throw std::invalid_argument("concatenate: datasets differ in task, features or target width");
        }
        rows += p.size();
    }
    Dataset out;
    out.num_classes = parts.front().num_classes;
    out.features.resize(rows, parts.front().num_features());
    LabelVector labels(task == TaskKind::classification ? rows : 0);
    Matrix values(task == TaskKind::regression ? rows : 0, task == TaskKind::regression ? parts.front().output_width() : 0);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.features.middleRows(at, p.size()) = p.features;
        if (task == TaskKind::classification) {
            labels.segment(at, p.size()) = p.labels();
        } else {
            values.middleRows(at, p.size()) = p.regression_targets();
        }
        out.sample_ids.insert(out.sample_ids.end(), p.sample_ids.begin(), p.sample_ids.end());
        at += p.size();
    }
    if (task == TaskKind::classification) {
        out.targets = std::move(labels);
    } else {
        out.targets = std::move(values);
    }
    std::vector<Eigen::Index> order(out.sample_ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return out.sample_ids[static_cast<std::size_t>(a)] < out.sample_ids[static_cast<std::size_t>(b)];
    });
    Dataset merged = out.select(order);
    if (std::adjacent_find(merged.sample_ids.begin(), merged.sample_ids.end()) != merged.sample_ids.end()) {
        throw std::invalid_argument("concatenate: datasets share sample ids");
    }
    return merged;
}

Dataset generate_synthetic(SyntheticKind kind, Eigen::Index n, Eigen::Index f, int classes_or_outputs,
                           std::uint64_t seed, const SyntheticOptions& opts) {
    if (n <= 0 || f <= 0 || classes_or_outputs <= 0) {
        throw std::invalid_argument("generate_synthetic: sizes must be positive");
    }
    std::normal_distribution<double> unit(0.0, 1.0);
    Dataset out;
    out.features.resize(n, f);
    out.sample_ids.resize(static_cast<std::size_t>(n));
    std::iota(out.sample_ids.begin(), out.sample_ids.end(), 0);

    if (kind == SyntheticKind::gaussian_blobs) {
        if (classes_or_outputs < 2) {
            throw std::invalid_argument("generate_synthetic: blobs need at least two classes");
        }
        std::mt19937_64 rng(seed);
        const int k = classes_or_outputs;
        Matrix centers(k, f);
        for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = opts.separation * unit(rng);

        // Round-robin labels, then a shuffle.
        std::vector<int> order(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
        std::shuffle(order.begin(), order.end(), rng);

        LabelVector y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            y[i] = order[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < f; ++j) out.features(i, j) = centers(y[i], j) + unit(rng);
        }
        out.targets = std::move(y);
        out.num_classes = k;
        return out;
    }

    std::mt19937_64 feature_rng(seed);
    for (Eigen::Index i = 0; i < out.features.size(); ++i) out.features.data()[i] = unit(feature_rng);

    std::mt19937_64 map_rng(mix_seed(seed, static_cast<std::uint64_t>(classes_or_outputs)));
    Matrix map(f, classes_or_outputs);
    for (Eigen::Index i = 0; i < map.size(); ++i) map.data()[i] = unit(map_rng) / std::sqrt(static_cast<double>(f));

    std::mt19937_64 noise_rng(mix_seed(seed, 0x6e6f697365ULL + static_cast<std::uint64_t>(classes_or_outputs)));
    Matrix targets = out.features * map;
    for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] += opts.noise * unit(noise_rng);
    out.targets = std::move(targets);
    return out;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) {
        throw CsvError("cannot open CSV file '" + path.string() + "'");
    }
    const bool classification = schema.task == TaskKind::classification;
    if (!classification && schema.target_columns.empty()) {
        throw CsvError("regression CSV schema needs at least one target column");
    }

    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t expected_cells = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && schema.header) continue;
        if (trim(line).empty()) continue;
        const auto cells = split_commas(line);
        const std::size_t data_row = rows.size() + 1;
        if (expected_cells == 0) {
            expected_cells = cells.size();
        } else if (cells.size() != expected_cells) {
            throw CsvError("row " + std::to_string(data_row) + " (line " + std::to_string(line_no) + "): expected " +
                           std::to_string(expected_cells) + " cells, found " + std::to_string(cells.size()));
        }
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto cell = cells[c];
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), values[c]);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
                throw CsvError("row " + std::to_string(data_row) + ", column " + std::to_string(c) + " (line " +
                               std::to_string(line_no) + "): non-numeric cell '" + std::string(cell) + "'");
            }
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) {
        throw CsvError("CSV file '" + path.string() + "' has no data rows");
    }

    const int width = static_cast<int>(expected_cells);
    auto check_col = [&](int c) {
        if (c < 0 || c >= width) {
            throw CsvError("column " + std::to_string(c) + " is outside the " + std::to_string(width) + " columns");
        }
    };
    std::vector<int> target_cols = classification ? std::vector<int>{schema.label_column} : schema.target_columns;
    for (int c : target_cols) check_col(c);
    std::vector<int> feature_cols = schema.feature_columns;
    if (feature_cols.empty()) {
        for (int c = 0; c < width; ++c) {
            if (std::find(target_cols.begin(), target_cols.end(), c) == target_cols.end()) feature_cols.push_back(c);
        }
    }
    for (int c : feature_cols) check_col(c);
    if (feature_cols.empty()) {
        throw CsvError("CSV schema selects no feature columns");
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    Dataset out;
    out.features.resize(n, static_cast<Eigen::Index>(feature_cols.size()));
    out.sample_ids.resize(rows.size());
    std::iota(out.sample_ids.begin(), out.sample_ids.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < feature_cols.size(); ++j) {
            out.features(i, static_cast<Eigen::Index>(j)) = row[static_cast<std::size_t>(feature_cols[j])];
        }
    }

    if (classification) {
        LabelVector y(n);
        int max_label = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(schema.label_column)];
            if (v != std::floor(v) || v < 0) {
                throw CsvError("row " + std::to_string(i + 1) + ": label " + std::to_string(v) +
                               " is not a non-negative integer");
            }
            y[i] = static_cast<int>(v);
            if (schema.num_classes > 0 && y[i] >= schema.num_classes) {
                throw CsvError("row " + std::to_string(i + 1) + ": label " + std::to_string(y[i]) +
                               " is outside the declared " + std::to_string(schema.num_classes) + " classes");
            }
            max_label = std::max(max_label, y[i]);
        }
        out.num_classes = schema.num_classes > 0 ? schema.num_classes : max_label + 1;
        out.targets = std::move(y);
    } else {
        Matrix t(n, static_cast<Eigen::Index>(target_cols.size()));
        for (Eigen::Index i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < target_cols.size(); ++j) {
                t(i, static_cast<Eigen::Index>(j)) =
                    rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(target_cols[j])];
            }
        }
        out.targets = std::move(t);
    }
    return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw CsvError("cannot write CSV file '" + path.string() + "'");
    }
    const bool classification = data.task() == TaskKind::classification;
    const int n_targets = classification ? 1 : data.output_width();
    for (int j = 0; j < n_targets; ++j) out << (j ? "," : "") << (classification ? "label" : "y" + std::to_string(j));
    for (Eigen::Index j = 0; j < data.num_features(); ++j) out << ",x" << j;
    out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (classification) {
            out << data.labels()[i];
        } else {
            for (int j = 0; j < n_targets; ++j) out << (j ? "," : "") << data.regression_targets()(i, j);
        }
        for (Eigen::Index j = 0; j < data.num_features(); ++j) out << ',' << data.features(i, j);
        out << '\n';
    }
}

std::vector<Eigen::Index> SplitPlan::positions_in(int fold) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == fold) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

std::vector<Eigen::Index> SplitPlan::fold_sizes() const {
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(folds), 0);
    for (int f : fold_of) ++sizes[static_cast<std::size_t>(f)];
    return sizes;
}

SplitPlan kfold_assign(const Dataset& data, int folds, std::uint64_t seed, bool stratified) {
    if (folds < 2) {
        throw std::invalid_argument("kfold_assign: at least two folds are required");
    }
    if (data.size() < folds) {
        throw std::invalid_argument("kfold_assign: " + std::to_string(data.size()) + " samples cannot fill " +
                                    std::to_string(folds) + " folds");
    }
    if (stratified && data.task() != TaskKind::classification) {
        throw std::invalid_argument("kfold_assign: stratification needs class labels");
    }
    std::mt19937_64 rng(seed);
    std::vector<Eigen::Index> order;
    if (stratified) {
        // Shuffle within each class, then lay the classes end to end and deal round-robin.
        std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(data.num_classes));
        for (Eigen::Index i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels()[i])].push_back(i);
        for (auto& members : by_class) {
            std::shuffle(members.begin(), members.end(), rng);
            order.insert(order.end(), members.begin(), members.end());
        }
    } else {
        order.resize(static_cast<std::size_t>(data.size()));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
    }
    SplitPlan plan;
    plan.folds = folds;
    plan.seed = seed;
    plan.fold_of.assign(static_cast<std::size_t>(data.size()), 0);
    for (std::size_t j = 0; j < order.size(); ++j) {
        plan.fold_of[static_cast<std::size_t>(order[j])] = static_cast<int>(j % static_cast<std::size_t>(folds));
    }
    return plan;
}

FoldRoles rotate_folds(int folds, int clients, int configuration) {
    if (clients < 1 || folds < clients + 1) {
        throw std::invalid_argument("rotate_folds: need at least clients + 1 folds");
    }
    if (configuration < 0 || configuration >= folds) {
        throw std::invalid_argument("rotate_folds: configuration index out of range");
    }
    FoldRoles roles;
    for (int i = 0; i < clients; ++i) roles.client_fold.push_back((i + configuration) % folds);
    roles.test_fold = (clients + configuration) % folds;
    return roles;
}

Eigen::Index removal_count(Eigen::Index n, double p) {
    check_rate(p);
    return static_cast<Eigen::Index>(std::floor(p * static_cast<double>(n) / 100.0));
}

std::vector<Eigen::Index> removal_window(Eigen::Index n, Eigen::Index k, int replica_index) {
    if (replica_index < 1) {
        throw std::invalid_argument("replica index must be at least 1");
    }
    if (k <= 0 || k >= n) {
        throw std::invalid_argument("removal window of " + std::to_string(k) + " samples is invalid for " +
                                    std::to_string(n) + " samples");
    }
    const Eigen::Index start = ((static_cast<Eigen::Index>(replica_index) - 1) * k) % n;
    std::vector<Eigen::Index> window;
    window.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) window.push_back((start + j) % n);
    return window;
}

Dataset perturb_random(const Dataset& parent, double p, int replica_index) {
    const Eigen::Index n = parent.size();
    const Eigen::Index k = removal_count(n, p);
    if (k == 0) {
        throw std::invalid_argument("perturbation of " + std::to_string(p) + "% removes no samples from " +
                                    std::to_string(n));
    }
    if (k >= n) {
        throw std::invalid_argument("perturbation would remove all " + std::to_string(n) + " samples");
    }
    std::vector<bool> removed(static_cast<std::size_t>(n), false);
    for (auto pos : removal_window(n, k, replica_index)) removed[static_cast<std::size_t>(pos)] = true;
    return keep_positions(parent, removed);
}

std::vector<Eigen::Index> stratified_quotas(std::span<const Eigen::Index> counts, Eigen::Index k) {
    const Eigen::Index n = std::accumulate(counts.begin(), counts.end(), Eigen::Index{0});
    if (n <= 0 || k < 0 || k > n) {
        throw std::invalid_argument("stratified_quotas: invalid totals");
    }
    std::vector<Eigen::Index> quotas(counts.size());
    std::vector<Eigen::Index> remainders(counts.size());
    Eigen::Index assigned = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        quotas[c] = k * counts[c] / n;
        remainders[c] = k * counts[c] % n;
        assigned += quotas[c];
    }
    // Largest remainder first; ties go to the lower class index.
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t j = 0; assigned < k; ++j) {
        ++quotas[order[j]];
        ++assigned;
    }
    return quotas;
}

Dataset perturb_stratified(const Dataset& parent, double p, int replica_index) {
    if (parent.task() != TaskKind::classification) {
        throw std::invalid_argument("stratified perturbation needs a classification dataset");
    }
    const Eigen::Index n = parent.size();
    const Eigen::Index k = removal_count(n, p);
    if (k == 0) {
        throw std::invalid_argument("perturbation of " + std::to_string(p) + "% removes no samples from " +
                                    std::to_string(n));
    }
    const auto counts = class_counts(parent);
    const auto quotas = stratified_quotas(counts, k);

    std::vector<std::vector<Eigen::Index>> members(counts.size());
    for (Eigen::Index i = 0; i < n; ++i) members[static_cast<std::size_t>(parent.labels()[i])].push_back(i);

    std::vector<bool> removed(static_cast<std::size_t>(n), false);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (quotas[c] == 0) continue;
        if (quotas[c] >= counts[c]) {
            throw std::invalid_argument("stratified perturbation would empty class " + std::to_string(c));
        }
        for (auto local : removal_window(counts[c], quotas[c], replica_index)) {
            removed[static_cast<std::size_t>(members[c][static_cast<std::size_t>(local)])] = true;
        }
    }
    return keep_positions(parent, removed);
}

std::string to_string(SyntheticKind k) {
    return k == SyntheticKind::gaussian_blobs ? "gaussian_blobs" : "regression_linear";
}

SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "gaussian_blobs") return SyntheticKind::gaussian_blobs;
    if (s == "regression_linear") return SyntheticKind::regression_linear;
    throw std::invalid_argument("unknown synthetic dataset kind '" + s + "'");
}

}  // namespace reptree

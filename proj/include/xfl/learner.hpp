#pragma once

#include "xfl/featurizer.hpp"
#include "xfl/labelspace.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xfl {

struct HyperParams {
    std::size_t trees = 50;
    std::size_t max_leaf = 10;
    std::size_t k = 5;
    double alpha = 0.8;
    double gamma = 1.0;
    std::size_t max_split_iters = 20;
    std::uint64_t rarity_cutoff = 5;
    std::uint64_t seed = 0;
    std::size_t leaf_top_k = 100;
    double l1 = 1.0;
    std::size_t separator_epochs = 100;
    double separator_tol = 1e-6;
    std::size_t threads = 0; // 0: hardware concurrency; never affects results

    void validate() const;
    /// "trees=10,alpha=0.5,..." applied on top of `base`. Unknown keys throw.
    static HyperParams parse(std::string_view text, HyperParams base);
    static HyperParams parse(std::string_view text) { return parse(text, HyperParams{}); }
    std::string to_string() const;
    bool operator==(const HyperParams&) const = default;
};

/// Dense row-major design matrix with ground truth.
struct Dataset {
    std::size_t width = 0;
    std::vector<double> x;
    std::vector<LabelIds> y;
    std::vector<std::string> ids;

    std::size_t size() const noexcept { return y.size(); }
    std::span<const double> row(std::size_t i) const { return {x.data() + i * width, width}; }
    void add(std::string id, std::span<const double> features, LabelIds labels);
};

/// Joins embeddings with ground truth by function id. Throws when a function
/// of the ground truth has no embedding.
Dataset make_dataset(const EmbeddingTable& embeddings, const GroundTruth& truth);

struct SparseLinear {
    std::vector<std::uint32_t> index;
    std::vector<double> weight;
    double bias = 0.0;

    double margin(std::span<const double> x) const;
    bool operator==(const SparseLinear&) const = default;
};

struct LinearFitOptions {
    double l1 = 1.0;
    std::size_t epochs = 100;
    double tol = 1e-6;
};

/// L1-regularized weighted logistic regression by cyclic coordinate descent:
/// min sum_i c_i log(1 + exp(-y_i (w.x_i + b))) + l1 |w|_1. `columns` holds
/// one vector of length n per feature; labels are +1/-1.
SparseLinear fit_l1_logistic(const std::vector<std::vector<double>>& columns, std::span<const signed char> labels,
                             std::span<const double> costs, const LinearFitOptions& options);

struct LabelScore {
    LabelId label = 0;
    double score = 0.0;
    bool operator==(const LabelScore&) const = default;
};

/// Full descending ranking over the label space; ties by ascending id.
using LabelRanking = std::vector<LabelScore>;

struct TreeNode {
    SparseLinear separator;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<LabelScore> leaf; // descending score, ties ascending id

    bool is_leaf() const noexcept { return left < 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Node 0 is the root. margin > 0 routes right.
struct Tree {
    std::vector<TreeNode> nodes;

    std::size_t leaf_for(std::span<const double> x) const;
    bool operator==(const Tree&) const = default;
};

struct RareLabelScorer {
    LabelId label = 0;
    SparseLinear scorer;
    bool operator==(const RareLabelScorer&) const = default;
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelHeader {
    std::uint32_t format_version = 0;
    std::uint32_t feature_layout_version = 0;
    std::string label_space_digest;
};

struct XflModel {
    HyperParams hp;
    std::size_t width = 0;
    std::size_t num_labels = 0;
    std::string label_space_digest;
    std::vector<Tree> trees;
    std::vector<RareLabelScorer> rare;
    double threshold = 0.5;
    bool calibrated = false;

    /// Mean leaf score over the trees, dense over the label space.
    std::vector<double> tree_scores(std::span<const double> x) const;
    /// Tree scores mixed with the rare-label scorers.
    std::vector<double> scores(std::span<const double> x) const;
    LabelRanking predict(std::span<const double> x) const;
    LabelIds predict_set(std::span<const double> x) const { return predict_set(x, threshold); }
    LabelIds predict_set(std::span<const double> x, double p_t) const;

    void save(const std::filesystem::path& path) const;
    std::string serialize() const;
    /// Throws FormatError on a bad container and Error on a label space
    /// digest mismatch.
    static XflModel load(const std::filesystem::path& path, const LabelSpace& space);
    static XflModel deserialize(std::string_view bytes, const LabelSpace* space = nullptr);
    static ModelHeader read_header(const std::filesystem::path& path);

    bool operator==(const XflModel&) const = default;
};

/// Ranking from dense scores: descending, ties by ascending id.
LabelRanking rank_scores(std::span<const double> scores);

XflModel train(const Dataset& data, const LabelSpace& space, const HyperParams& hp);

struct ScoredPair {
    double score = 0.0;
    bool relevant = false;
    std::uint64_t multiplicity = 1;
};

struct Calibration {
    double threshold = 0.5;
    double f1 = 0.0;
    bool degenerate = false; // all scores identical
};

/// Chooses p_t maximizing micro-F1 of {s > p_t}. Candidates are just below
/// the smallest score, midpoints between consecutive distinct scores, and
/// the largest score. Ties go to the larger p_t.
Calibration calibrate_from_scores(std::span<const ScoredPair> pairs);

/// Calibrates on `valid` and stores the threshold in the model.
Calibration calibrate_threshold(XflModel& model, const Dataset& valid);

/// Mean nDCG@k of the model's rankings over points with non-empty truth.
double mean_ndcg(const XflModel& model, const Dataset& data, std::size_t k);

/// Trains every grid entry and returns the one with the best validation
/// mean nDCG@5; ties keep the earlier entry.
HyperParams grid_search(std::span<const HyperParams> grid, const Dataset& train, const Dataset& valid,
                        const LabelSpace& space);

} // namespace xfl

#pragma once

#include "xfl/labelspace.hpp"
#include "xfl/learner.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xfl {

/// rel[i] in {0, 1} for ranked position i (0-based here, rank i + 1).
using RelevanceVector = std::vector<int>;

RelevanceVector relevance(std::span<const LabelId> ranked, const LabelIds& truth, std::size_t k);

double cg_at_k(std::span<const int> rel, std::size_t k);
double dcg_at_k(std::span<const int> rel, std::size_t k);
/// Normalized by the ideal DCG of n relevant labels; 0 when n == 0.
double ndcg_at_k(std::span<const int> rel, std::size_t n, std::size_t k);
/// Throws std::out_of_range for ids outside the label space.
double psdcg_at_k(std::span<const int> rel, std::span<const LabelId> ranked, const LabelSpace& space, std::size_t k);

struct MicroCounts {
    std::vector<std::uint64_t> tp, fp, fn;

    MicroCounts() = default;
    explicit MicroCounts(std::size_t labels) : tp(labels), fp(labels), fn(labels) {}
    /// Adds one data point; both sets sorted.
    void add(const LabelIds& predicted, const LabelIds& truth);
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Micro-averaged precision, recall and F1; 0/0 is 0.
Prf micro_prf(const MicroCounts& counts);
Prf micro_prf(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

/// Pads a baseline's unranked prediction to k labels in descending global
/// frequency order (ascending label id, since ids are frequency ordered).
std::vector<LabelId> pad_with_frequency_order(std::span<const LabelId> predicted, const LabelSpace& space,
                                              std::size_t k);

struct PointPrediction {
    std::vector<LabelId> ranked; // at least the top k
    LabelIds predicted;          // thresholded set
    LabelIds truth;
};

struct EvalSummary {
    std::size_t points = 0;
    std::size_t ranked_points = 0; // points with non-empty truth
    double cg = 0.0;
    double dcg = 0.0;
    double ndcg = 0.0;
    double psdcg = 0.0;
    Prf micro;
};

/// Rank metrics are means over points with non-empty truth; micro metrics
/// count every point.
EvalSummary summarize(std::span<const PointPrediction> points, const LabelSpace& space, std::size_t k);

struct ReportRow {
    std::string metric;
    std::size_t label_space = 0;
    std::string slice;
    double value = 0.0;
};

struct EvalReport {
    std::vector<ReportRow> rows;
    bool unseen_requested = false;
    bool unseen_empty = false;

    void append(const EvalSummary& summary, std::size_t label_space, const std::string& slice, std::size_t k);
    std::string to_tsv() const;
    void write_tsv(const std::filesystem::path& path) const;
    /// One line per (label space, slice) with the metrics as columns.
    void write_plot_data(const std::filesystem::path& path) const;
    std::optional<double> value(std::string_view metric, std::size_t label_space, std::string_view slice) const;
};

/// Canonical key of a name: sorted canonical tokens joined by '_'.
std::string canonical_key(const CanonicalTokenSet& tokens);
/// true for test functions whose canonical key never occurs in training.
std::vector<bool> unseen_mask(const Corpus& test, const Corpus& train, const Tokenizer& tokenizer);

/// Rankings (top k) and thresholded sets of the model on every point.
std::vector<PointPrediction> predict_points(const XflModel& model, const Dataset& data, std::size_t k);

/// Report for one label space, with an "unseen" slice when a mask is given.
/// Throws on an empty dataset.
EvalReport evaluate(const XflModel& model, const Dataset& test, const LabelSpace& space, std::size_t k = 5,
                    const std::vector<bool>* unseen = nullptr);

} // namespace xfl

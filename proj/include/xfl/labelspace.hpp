#pragma once

#include "xfl/corpus.hpp"
#include "xfl/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace xfl {

using LabelId = std::uint32_t;
/// Sorted, unique label ids of one function.
using LabelIds = std::vector<LabelId>;

struct PropensityParams {
    double A = 0.5;
    double B = 0.425;
};

/// C = (ln N - 1)(B + 1)^A, clamped at 0 so that propensities stay in (0, 1]
/// for tiny corpora where ln N < 1.
double propensity_constant(std::uint64_t total_points, const PropensityParams& params);

/// p = 1 / (1 + C exp(-A ln(count + B))).
double propensity_value(double count, std::uint64_t total_points, const PropensityParams& params);

/// Ordered label vocabulary with per-label frequencies and propensities.
class LabelSpace {
public:
    LabelSpace() = default;
    LabelSpace(std::vector<std::string> labels, std::vector<std::uint64_t> counts, std::uint64_t total_points,
               PropensityParams params);

    std::size_t size() const noexcept { return labels_.size(); }
    const std::string& label(LabelId id) const { return labels_.at(id); }
    std::uint64_t count(LabelId id) const { return counts_.at(id); }
    /// Throws std::out_of_range for an invalid id.
    double propensity(LabelId id) const { return propensities_.at(id); }
    std::optional<LabelId> id_of(const std::string& label) const;

    std::span<const std::string> labels() const noexcept { return labels_; }
    std::span<const std::uint64_t> counts() const noexcept { return counts_; }
    std::span<const double> propensities() const noexcept { return propensities_; }
    std::uint64_t total_points() const noexcept { return total_points_; }
    const PropensityParams& params() const noexcept { return params_; }
    double C() const noexcept { return C_; }

    /// SHA-256 of the canonical text form; models embed it.
    std::string digest() const;
    std::string to_json() const;
    static LabelSpace from_json(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static LabelSpace load(const std::filesystem::path& path);

    bool operator==(const LabelSpace& other) const;

private:
    std::vector<std::string> labels_;
    std::vector<std::uint64_t> counts_;
    std::vector<double> propensities_;
    std::uint64_t total_points_ = 0;
    PropensityParams params_;
    double C_ = 0.0;
    std::unordered_map<std::string, LabelId> index_;
};

/// Per-function token frequencies (one count per name containing the
/// token), sorted by descending count then lexicographically.
std::vector<std::pair<std::string, std::uint64_t>> count_tokens(const Corpus& corpus, const Tokenizer& tokenizer);

/// Top-n labels of the training corpus. Warns and keeps all tokens when
/// fewer than n distinct tokens exist.
LabelSpace build_label_space(const Corpus& train, const Tokenizer& tokenizer, std::size_t n,
                             const PropensityParams& params);

struct GroundTruth {
    std::vector<std::string> function_ids;
    std::vector<LabelIds> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t empty_count() const;
};

/// L_c intersected with the label space, per function, in corpus order.
GroundTruth project_ground_truth(const Corpus& corpus, const LabelSpace& space, const Tokenizer& tokenizer);
LabelIds project_tokens(const CanonicalTokenSet& tokens, const LabelSpace& space);

/// Grid search for (A, B): the model propensity curve over ln N_l is fitted
/// to the empirical CDF of label frequencies by least squares.
PropensityParams fit_propensity_params(std::span<const std::uint64_t> counts, std::uint64_t total_points,
                                       std::span<const double> a_grid, std::span<const double> b_grid);

} // namespace xfl

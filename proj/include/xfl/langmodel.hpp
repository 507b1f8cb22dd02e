#pragma once

#include "xfl/error.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace xfl {

using TokenId = std::uint32_t;

/// Interpolated modified Kneser-Ney trigram model over label sequences.
/// Every sequence is scored as <s> w1 ... wn </s> with natural logarithms.
class TrigramLm {
public:
    static constexpr TokenId kBos = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kUnk = 2;

    TrigramLm() = default;

    /// Empty sequences are ignored. Throws Error when fewer than two
    /// distinct tokens occur.
    static TrigramLm train(const std::vector<std::vector<std::string>>& sequences);

    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    const std::string& token(TokenId id) const { return vocab_.at(id); }
    /// kUnk for tokens outside the vocabulary.
    TokenId id_of(std::string_view token) const;

    /// P(w | <s>), the only context of the first token.
    double prob(TokenId w, TokenId v) const;
    /// P(w | u v).
    double prob(TokenId w, TokenId u, TokenId v) const;
    double prob_unigram(TokenId w) const;
    double log_prob(TokenId w, TokenId v) const;
    double log_prob(TokenId w, TokenId u, TokenId v) const;

    /// Log probability of the sequence including both boundary
    /// transitions. Throws Error on an empty sequence.
    double score(std::span<const std::string> sequence) const;
    double score_ids(std::span<const TokenId> sequence) const;

    /// D1, D2, D3+ of one order (1 = unigram, 3 = trigram).
    std::array<double, 3> discounts(int order) const;

    void save(const std::filesystem::path& path) const;
    static TrigramLm load(const std::filesystem::path& path);
    std::string serialize() const;
    static TrigramLm deserialize(std::string_view text);

    bool operator==(const TrigramLm& o) const { return vocab_ == o.vocab_ && trigrams_ == o.trigrams_; }

private:
    struct Context {
        double total = 0.0;
        double gamma = 0.0;
    };

    void build();
    double discount(int order, std::uint64_t count) const;
    static std::uint64_t key(TokenId a, TokenId b, TokenId c = 0);

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, TokenId> index_;
    std::unordered_map<std::uint64_t, std::uint64_t> trigrams_; // raw counts, the only trained state

    std::unordered_map<std::uint64_t, std::uint64_t> bigrams_; // adjusted counts
    std::vector<std::uint64_t> unigrams_;                      // adjusted counts
    std::unordered_map<std::uint64_t, Context> context3_;
    std::unordered_map<std::uint64_t, Context> context2_;
    std::vector<double> p1_;
    std::array<std::array<double, 3>, 3> d_{};
};

struct OrderingResult {
    std::vector<std::string> sequence;
    double log_score = 0.0;
    std::uint64_t steps = 0;
    bool optimal = true;
};

inline constexpr std::uint64_t kDefaultStepCap = 1'000'000;
inline constexpr std::size_t kMaxOrderingLabels = 32;

/// Most likely order of a label set. Branch and bound seeded with the greedy
/// order; a step is one expansion of a partial sequence. Equal scores keep
/// the lexicographically smaller sequence.
OrderingResult order_labels(const TrigramLm& lm, std::span<const std::string> labels,
                            std::uint64_t step_cap = kDefaultStepCap);

/// Greedy left-to-right order: repeatedly appends the most likely next label.
OrderingResult greedy_order(const TrigramLm& lm, std::span<const std::string> labels);

enum class NamingConvention { snake, camel };

NamingConvention parse_convention(std::string_view text);
std::string render_name(std::span<const std::string> sequence, NamingConvention convention);

} // namespace xfl

#pragma once

#include "xfl/error.hpp"

#include <filesystem>
#include <map>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace xfl {

struct TokenizerConfig {
    /// Decoration regexes (ECMAScript); each match is cut out of the name.
    std::vector<std::string> decoration_patterns;
    std::map<std::string, std::vector<std::string>> abbreviation_map;
    std::unordered_set<std::string> dictionary;
    std::size_t min_word_len = 2;

    /// Reads the JSON config; `dictionary_path` resolves relative to the
    /// config file. Abbreviation expansions are added to the dictionary so
    /// that the word splitter never cuts them apart.
    static TokenizerConfig load(const std::filesystem::path& path);
    /// The bundled config shipped in data/.
    static TokenizerConfig load_default();
    static std::filesystem::path default_path();

    /// Throws Error if an invariant is violated (empty dictionary,
    /// non-alphabetic expansion, pattern that does not compile).
    void validate() const;
};

/// Canonical token set of one name: sorted, unique, lowercase alphabetic.
using CanonicalTokenSet = std::set<std::string>;

/// Non-alphanumeric split, digit/alpha separation and camel-case split,
/// lowercased. Digit runs are kept as their own segments.
std::vector<std::string> split_segments(std::string_view name);

class Tokenizer {
public:
    explicit Tokenizer(TokenizerConfig config);

    const TokenizerConfig& config() const noexcept { return config_; }

    /// Repeatedly removes the longest decoration match until none is left.
    std::string strip_decorations(std::string_view name) const;
    /// Single pass; expansions are not re-expanded.
    std::vector<std::string> expand_abbreviations(std::span<const std::string> tokens) const;
    /// Dictionary cover of a lowercase alphabetic segment. Maximizes covered
    /// characters, then prefers fewer words; remaining ties go to the
    /// segmentation whose earliest word starts leftmost and is longest.
    /// Uncovered runs are kept as tokens.
    std::vector<std::string> best_split(std::string_view segment) const;
    /// strip -> split -> expand -> best_split, digits dropped, deduplicated.
    CanonicalTokenSet canonical_tokens(std::string_view name) const;

private:
    TokenizerConfig config_;
    std::vector<std::regex> patterns_;
    std::size_t max_word_len_ = 0;
};

/// Tokens joined for display and for the language-model corpus, in the
/// order they appear in the name (duplicates removed, first wins).
std::vector<std::string> ordered_tokens(const Tokenizer& tokenizer, std::string_view name);

} // namespace xfl

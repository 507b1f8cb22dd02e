#include "xfl/tokenizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace xfl {

namespace {

bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) { return is_lower(c) || is_upper(c) || is_digit(c); }

char to_lower(char c) { return is_upper(c) ? static_cast<char>(c - 'A' + 'a') : c; }

bool is_alpha_token(std::string_view s)
{
    return !s.empty() && std::all_of(s.begin(), s.end(), is_lower);
}

bool is_digit_token(std::string_view s)
{
    return !s.empty() && std::all_of(s.begin(), s.end(), is_digit);
}

} // namespace

std::filesystem::path TokenizerConfig::default_path()
{
    return std::filesystem::path(XFL_DATA_DIR) / "tokenizer.json";
}

TokenizerConfig TokenizerConfig::load_default()
{
    return load(default_path());
}

TokenizerConfig TokenizerConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read tokenizer config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed tokenizer config " + path.string() + ": " + e.what());
    }

    TokenizerConfig cfg;
    try {
        cfg.decoration_patterns = j.value("patterns", std::vector<std::string>{});
        cfg.abbreviation_map = j.value("abbreviations", std::map<std::string, std::vector<std::string>>{});
        cfg.min_word_len = j.value("min_word_len", std::size_t{2});
        auto dict_path = std::filesystem::path(j.at("dictionary_path").get<std::string>());
        if (dict_path.is_relative())
            dict_path = path.parent_path() / dict_path;
        std::ifstream dict(dict_path);
        if (!dict)
            throw Error("cannot read dictionary " + dict_path.string());
        std::string word;
        while (dict >> word) {
            std::transform(word.begin(), word.end(), word.begin(), to_lower);
            cfg.dictionary.insert(word);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed tokenizer config " + path.string() + ": " + e.what());
    }
    for (const auto& [abbr, expansion] : cfg.abbreviation_map)
        for (const auto& w : expansion)
            cfg.dictionary.insert(w);
    cfg.validate();
    return cfg;
}

void TokenizerConfig::validate() const
{
    if (dictionary.empty())
        throw Error("tokenizer dictionary is empty");
    for (const auto& [abbr, expansion] : abbreviation_map) {
        if (expansion.empty())
            throw Error("abbreviation '" + abbr + "' has an empty expansion");
        for (const auto& w : expansion)
            if (!is_alpha_token(w))
                throw Error("abbreviation '" + abbr + "' expands to non-lowercase-alphabetic token '" + w + "'");
    }
    for (const auto& p : decoration_patterns) {
        try {
            std::regex re(p, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw Error("decoration pattern '" + p + "' does not compile: " + e.what());
        }
    }
}

std::vector<std::string> split_segments(std::string_view name)
{
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty())
            out.push_back(std::exchange(cur, {}));
    };
    for (std::size_t i = 0; i < name.size(); ++i) {
        char c = name[i];
        if (!is_alnum(c)) {
            flush();
            continue;
        }
        if (!cur.empty()) {
            char prev = name[i - 1];
            bool boundary = (is_digit(prev) != is_digit(c)) || (is_lower(prev) && is_upper(c)) ||
                            (is_upper(prev) && is_upper(c) && i + 1 < name.size() && is_lower(name[i + 1]));
            if (boundary)
                flush();
        }
        cur.push_back(to_lower(c));
    }
    flush();
    return out;
}

Tokenizer::Tokenizer(TokenizerConfig config) : config_(std::move(config))
{
    config_.validate();
    patterns_.reserve(config_.decoration_patterns.size());
    for (const auto& p : config_.decoration_patterns)
        patterns_.emplace_back(p, std::regex::ECMAScript);
    for (const auto& w : config_.dictionary)
        max_word_len_ = std::max(max_word_len_, w.size());
}

std::string Tokenizer::strip_decorations(std::string_view name) const
{
    std::string s(name);
    for (;;) {
        std::size_t best_pos = 0;
        std::size_t best_len = 0;
        for (const auto& re : patterns_) {
            for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
                auto len = static_cast<std::size_t>(it->length(0));
                if (len > best_len) {
                    best_len = len;
                    best_pos = static_cast<std::size_t>(it->position(0));
                }
            }
        }
        if (best_len == 0)
            return s;
        s.erase(best_pos, best_len);
    }
}

std::vector<std::string> Tokenizer::expand_abbreviations(std::span<const std::string> tokens) const
{
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto it = config_.abbreviation_map.find(t);
        if (it == config_.abbreviation_map.end())
            out.push_back(t);
        else
            out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

std::vector<std::string> Tokenizer::best_split(std::string_view segment) const
{
    const std::size_t n = segment.size();
    struct Cell {
        std::size_t cover = 0;
        std::size_t words = 0;
        std::size_t next = 0; // end of the piece starting here
        bool word = false;
    };
    std::vector<Cell> best(n + 1);
    auto better = [](std::size_t cover, std::size_t words, const Cell& cur) {
        return cover > cur.cover || (cover == cur.cover && words < cur.words);
    };

    std::string piece;
    for (std::size_t i = n; i-- > 0;) {
        // Skipping the character is the baseline; words only replace it when
        // strictly better or tied (leftmost start wins ties).
        Cell cell{best[i + 1].cover, best[i + 1].words, i + 1, false};
        bool have_word = false;
        std::size_t longest = std::min(max_word_len_, n - i);
        for (std::size_t len = longest; len >= config_.min_word_len && len >= 1; --len) {
            piece.assign(segment.substr(i, len));
            if (!config_.dictionary.contains(piece))
                continue;
            const Cell& rest = best[i + len];
            std::size_t cover = len + rest.cover;
            std::size_t words = 1 + rest.words;
            bool take = have_word ? better(cover, words, cell)
                                  : (better(cover, words, cell) || (cover == cell.cover && words == cell.words));
            if (take) {
                cell = {cover, words, i + len, true};
                have_word = true;
            }
        }
        best[i] = cell;
    }

    std::vector<std::string> out;
    std::string residue;
    for (std::size_t i = 0; i < n;) {
        const Cell& c = best[i];
        if (c.word) {
            if (!residue.empty())
                out.push_back(std::exchange(residue, {}));
            out.emplace_back(segment.substr(i, c.next - i));
        } else {
            residue.push_back(segment[i]);
        }
        i = c.next;
    }
    if (!residue.empty())
        out.push_back(std::move(residue));
    return out;
}

namespace {

template <class Sink>
void tokenize_into(const Tokenizer& tok, std::string_view name, Sink&& sink)
{
    auto segments = split_segments(tok.strip_decorations(name));
    for (const auto& t : tok.expand_abbreviations(segments)) {
        if (is_digit_token(t))
            continue;
        for (auto& w : tok.best_split(t))
            sink(std::move(w));
    }
}

} // namespace

CanonicalTokenSet Tokenizer::canonical_tokens(std::string_view name) const
{
    CanonicalTokenSet out;
    tokenize_into(*this, name, [&](std::string w) { out.insert(std::move(w)); });
    return out;
}

std::vector<std::string> ordered_tokens(const Tokenizer& tokenizer, std::string_view name)
{
    std::vector<std::string> out;
    tokenize_into(tokenizer, name, [&](std::string w) {
        if (std::find(out.begin(), out.end(), w) == out.end())
            out.push_back(std::move(w));
    });
    return out;
}

} // namespace xfl

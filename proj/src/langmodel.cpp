#include "xfl/langmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace xfl {

namespace {

constexpr std::uint64_t kIdBits = 21;
constexpr std::uint64_t kIdMask = (std::uint64_t{1} << kIdBits) - 1;

} // namespace

std::uint64_t TrigramLm::key(TokenId a, TokenId b, TokenId c)
{
    return (static_cast<std::uint64_t>(a) << (2 * kIdBits)) | (static_cast<std::uint64_t>(b) << kIdBits) | c;
}

TrigramLm TrigramLm::train(const std::vector<std::vector<std::string>>& sequences)
{
    std::set<std::string> tokens;
    for (const auto& s : sequences)
        for (const auto& t : s)
            tokens.insert(t);
    for (const char* marker : {"<s>", "</s>", "<unk>"})
        if (tokens.erase(marker) != 0)
            throw Error(std::string("training sequences may not contain the reserved token ") + marker);
    if (tokens.size() < 2)
        throw Error("language model needs at least 2 distinct tokens, got " + std::to_string(tokens.size()));
    if (tokens.size() + 3 > kIdMask)
        throw Error("language model vocabulary too large");

    TrigramLm lm;
    lm.vocab_ = {"<s>", "</s>", "<unk>"};
    lm.vocab_.insert(lm.vocab_.end(), tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < lm.vocab_.size(); ++i)
        lm.index_.emplace(lm.vocab_[i], static_cast<TokenId>(i));

    std::vector<TokenId> ids;
    for (const auto& s : sequences) {
        if (s.empty())
            continue;
        ids.assign(1, kBos);
        for (const auto& t : s)
            ids.push_back(lm.index_.at(t));
        ids.push_back(kEos);
        for (std::size_t i = 2; i < ids.size(); ++i)
            ++lm.trigrams_[key(ids[i - 2], ids[i - 1], ids[i])];
    }
    lm.build();
    return lm;
}

void TrigramLm::build()
{
    bigrams_.clear();
    context3_.clear();
    context2_.clear();
    unigrams_.assign(vocab_.size(), 0);
    if (index_.empty())
        for (std::size_t i = 0; i < vocab_.size(); ++i)
            index_.emplace(vocab_[i], static_cast<TokenId>(i));

    // Sorted iteration keeps floating-point sums independent of hash order.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> tri(trigrams_.begin(), trigrams_.end());
    std::sort(tri.begin(), tri.end());
    // Bigram counts: continuation counts, except raw counts after <s> since
    // nothing can precede it.
    std::map<std::uint64_t, std::uint64_t> bi;
    for (const auto& [k, c] : tri) {
        auto u = static_cast<TokenId>(k >> (2 * kIdBits));
        auto v = static_cast<TokenId>((k >> kIdBits) & kIdMask);
        auto w = static_cast<TokenId>(k & kIdMask);
        bi[key(0, v, w)] += 1;
        if (u == kBos)
            bi[key(0, kBos, v)] += c;
    }
    bigrams_.insert(bi.begin(), bi.end());
    for (const auto& [k, c] : bi)
        unigrams_[k & kIdMask] += 1;

    auto estimate = [](std::array<std::uint64_t, 5> n) {
        std::array<double, 3> d{};
        const double n1 = static_cast<double>(n[1]), n2 = static_cast<double>(n[2]), n3 = static_cast<double>(n[3]),
                     n4 = static_cast<double>(n[4]);
        const bool y_defined = n1 + 2 * n2 > 0;
        const double y = y_defined ? n1 / (n1 + 2 * n2) : 0.5;
        const double fallback = y;
        d[0] = n1 > 0 ? 1 - 2 * y * n2 / n1 : fallback;
        d[1] = n2 > 0 ? 2 - 3 * y * n3 / n2 : fallback;
        d[2] = n3 > 0 ? 3 - 4 * y * n4 / n3 : fallback;
        for (int i = 0; i < 3; ++i)
            d[i] = std::clamp(d[i], 0.0, static_cast<double>(i + 1));
        return d;
    };
    auto count_of_counts = [](auto&& values) {
        std::array<std::uint64_t, 5> n{};
        for (std::uint64_t c : values)
            if (c >= 1 && c <= 4)
                ++n[c];
        return n;
    };
    std::vector<std::uint64_t> v3, v2;
    for (const auto& [k, c] : tri)
        v3.push_back(c);
    for (const auto& [k, c] : bi)
        v2.push_back(c);
    d_[2] = estimate(count_of_counts(v3));
    d_[1] = estimate(count_of_counts(v2));
    d_[0] = estimate(count_of_counts(unigrams_));

    auto accumulate = [&](std::unordered_map<std::uint64_t, Context>& ctx, std::uint64_t ctx_key, int order,
                          std::uint64_t c) {
        auto& x = ctx[ctx_key];
        x.total += static_cast<double>(c);
        x.gamma += discount(order, c);
    };
    for (const auto& [k, c] : tri)
        accumulate(context3_, k >> kIdBits, 3, c);
    for (const auto& [k, c] : bi)
        accumulate(context2_, k >> kIdBits, 2, c);
    for (auto* ctx : {&context3_, &context2_})
        for (auto& [k, x] : *ctx)
            x.gamma /= x.total;

    double total1 = 0.0;
    double mass1 = 0.0;
    for (std::size_t w = 0; w < unigrams_.size(); ++w) {
        if (unigrams_[w] == 0)
            continue;
        total1 += static_cast<double>(unigrams_[w]);
        mass1 += discount(1, unigrams_[w]);
    }
    // Leftover unigram mass is spread uniformly over everything but <s>.
    const double uniform = 1.0 / static_cast<double>(vocab_.size() - 1);
    const double gamma1 = mass1 / total1;
    p1_.assign(vocab_.size(), 0.0);
    for (std::size_t w = 1; w < vocab_.size(); ++w) {
        double c = static_cast<double>(unigrams_[w]);
        double own = unigrams_[w] == 0 ? 0.0 : std::max(c - discount(1, unigrams_[w]), 0.0) / total1;
        p1_[w] = own + gamma1 * uniform;
    }
}

double TrigramLm::discount(int order, std::uint64_t count) const
{
    const auto& d = d_[static_cast<std::size_t>(order - 1)];
    return count == 1 ? d[0] : count == 2 ? d[1] : d[2];
}

std::array<double, 3> TrigramLm::discounts(int order) const
{
    if (order < 1 || order > 3)
        throw Error("language model order must be 1, 2 or 3");
    return d_[static_cast<std::size_t>(order - 1)];
}

TokenId TrigramLm::id_of(std::string_view token) const
{
    auto it = index_.find(std::string(token));
    return it == index_.end() || it->second == kBos || it->second == kEos ? kUnk : it->second;
}

double TrigramLm::prob_unigram(TokenId w) const
{
    return p1_.at(w);
}

double TrigramLm::prob(TokenId w, TokenId v) const
{
    double lower = prob_unigram(w);
    auto ctx = context2_.find(key(0, v, 0) >> kIdBits);
    if (ctx == context2_.end())
        return lower;
    double own = 0.0;
    if (auto it = bigrams_.find(key(0, v, w)); it != bigrams_.end())
        own = std::max(static_cast<double>(it->second) - discount(2, it->second), 0.0) / ctx->second.total;
    return own + ctx->second.gamma * lower;
}

double TrigramLm::prob(TokenId w, TokenId u, TokenId v) const
{
    double lower = prob(w, v);
    auto ctx = context3_.find(key(u, v, 0) >> kIdBits);
    if (ctx == context3_.end())
        return lower;
    double own = 0.0;
    if (auto it = trigrams_.find(key(u, v, w)); it != trigrams_.end())
        own = std::max(static_cast<double>(it->second) - discount(3, it->second), 0.0) / ctx->second.total;
    return own + ctx->second.gamma * lower;
}

double TrigramLm::log_prob(TokenId w, TokenId v) const { return std::log(prob(w, v)); }
double TrigramLm::log_prob(TokenId w, TokenId u, TokenId v) const { return std::log(prob(w, u, v)); }

double TrigramLm::score_ids(std::span<const TokenId> seq) const
{
    if (seq.empty())
        throw Error("cannot score an empty sequence");
    double s = log_prob(seq[0], kBos);
    if (seq.size() > 1)
        s += log_prob(seq[1], kBos, seq[0]);
    for (std::size_t i = 2; i < seq.size(); ++i)
        s += log_prob(seq[i], seq[i - 2], seq[i - 1]);
    const std::size_t n = seq.size();
    s += n == 1 ? log_prob(kEos, kBos, seq[0]) : log_prob(kEos, seq[n - 2], seq[n - 1]);
    return s;
}

double TrigramLm::score(std::span<const std::string> sequence) const
{
    std::vector<TokenId> ids;
    ids.reserve(sequence.size());
    for (const auto& t : sequence)
        ids.push_back(id_of(t));
    return score_ids(ids);
}

std::string TrigramLm::serialize() const
{
    std::ostringstream out;
    out << "xfl-trigram-lm 1\n" << vocab_.size() << '\n';
    for (const auto& t : vocab_)
        out << t << '\n';
    std::map<std::uint64_t, std::uint64_t> sorted(trigrams_.begin(), trigrams_.end());
    out << sorted.size() << '\n';
    for (const auto& [k, c] : sorted)
        out << (k >> (2 * kIdBits)) << ' ' << ((k >> kIdBits) & kIdMask) << ' ' << (k & kIdMask) << ' ' << c << '\n';
    return out.str();
}

TrigramLm TrigramLm::deserialize(std::string_view text)
{
    std::istringstream in{std::string(text)};
    auto bad = [](const std::string& why) { return FormatError("unrecognized format: language model " + why); };
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "xfl-trigram-lm" || version != 1)
        throw bad("header missing");
    std::size_t vocab = 0;
    if (!(in >> vocab) || vocab < 5 || vocab > kIdMask)
        throw bad("vocabulary size invalid");
    TrigramLm lm;
    lm.vocab_.resize(vocab);
    for (auto& t : lm.vocab_)
        if (!(in >> t))
            throw bad("vocabulary truncated");
    if (lm.vocab_[0] != "<s>" || lm.vocab_[1] != "</s>" || lm.vocab_[2] != "<unk>")
        throw bad("reserved tokens missing");
    for (std::size_t i = 0; i < vocab; ++i)
        if (!lm.index_.emplace(lm.vocab_[i], static_cast<TokenId>(i)).second)
            throw bad("duplicate token " + lm.vocab_[i]);
    std::size_t n = 0;
    if (!(in >> n))
        throw bad("trigram count missing");
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = 0, v = 0, w = 0, c = 0;
        if (!(in >> u >> v >> w >> c) || u >= vocab || v >= vocab || w >= vocab || c == 0)
            throw bad("trigram entry invalid");
        lm.trigrams_[key(static_cast<TokenId>(u), static_cast<TokenId>(v), static_cast<TokenId>(w))] = c;
    }
    if (lm.trigrams_.empty())
        throw bad("has no trigrams");
    lm.build();
    return lm;
}

void TrigramLm::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write language model " + path.string());
    out << serialize();
}

TrigramLm TrigramLm::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read language model " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

namespace {

struct OrderTables {
    std::size_t n = 0;
    std::vector<double> first;  // [j]       log P(j | <s>)
    std::vector<double> second; // [i][j]    log P(j | <s> i)
    std::vector<double> trans;  // [h][i][j] log P(j | h i)
    std::vector<double> end1;   // [i]       log P(</s> | <s> i)
    std::vector<double> end2;   // [h][i]    log P(</s> | h i)

    OrderTables(const TrigramLm& lm, const std::vector<TokenId>& t) : n(t.size())
    {
        first.resize(n);
        second.resize(n * n);
        trans.resize(n * n * n);
        end1.resize(n);
        end2.resize(n * n);
        for (std::size_t j = 0; j < n; ++j) {
            first[j] = lm.log_prob(t[j], TrigramLm::kBos);
            end1[j] = lm.log_prob(TrigramLm::kEos, TrigramLm::kBos, t[j]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                second[i * n + j] = lm.log_prob(t[j], TrigramLm::kBos, t[i]);
                end2[i * n + j] = lm.log_prob(TrigramLm::kEos, t[i], t[j]);
                for (std::size_t h = 0; h < n; ++h)
                    trans[(h * n + i) * n + j] = lm.log_prob(t[j], t[h], t[i]);
            }
        }
    }

    // Log probability of placing j after the partial path.
    double step(const std::vector<std::size_t>& path, std::size_t j) const
    {
        const std::size_t m = path.size();
        if (m == 0)
            return first[j];
        if (m == 1)
            return second[path[0] * n + j];
        return trans[(path[m - 2] * n + path[m - 1]) * n + j];
    }

    double finish(const std::vector<std::size_t>& path) const
    {
        const std::size_t m = path.size();
        return m == 1 ? end1[path[0]] : end2[path[m - 2] * n + path[m - 1]];
    }
};

std::vector<std::string> unique_sorted(std::span<const std::string> labels)
{
    std::vector<std::string> out(labels.begin(), labels.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.empty())
        throw Error("cannot order an empty label set");
    if (out.size() > kMaxOrderingLabels)
        throw Error("cannot order more than " + std::to_string(kMaxOrderingLabels) + " labels");
    return out;
}

std::vector<TokenId> token_ids(const TrigramLm& lm, const std::vector<std::string>& labels)
{
    std::vector<TokenId> t;
    t.reserve(labels.size());
    for (const auto& l : labels)
        t.push_back(lm.id_of(l));
    return t;
}

std::vector<std::size_t> greedy_path(const OrderTables& tab)
{
    std::vector<std::size_t> path;
    std::vector<bool> used(tab.n, false);
    while (path.size() < tab.n) {
        std::size_t best = tab.n;
        double best_lp = 0.0;
        for (std::size_t j = 0; j < tab.n; ++j) {
            if (used[j])
                continue;
            double lp = tab.step(path, j);
            if (best == tab.n || lp > best_lp) {
                best = j;
                best_lp = lp;
            }
        }
        used[best] = true;
        path.push_back(best);
    }
    return path;
}

double path_score(const OrderTables& tab, const std::vector<std::size_t>& path)
{
    double s = 0.0;
    std::vector<std::size_t> prefix;
    for (std::size_t j : path) {
        s += tab.step(prefix, j);
        prefix.push_back(j);
    }
    return s + tab.finish(path);
}

OrderingResult make_result(const std::vector<std::string>& labels, const std::vector<std::size_t>& path, double score)
{
    OrderingResult r;
    for (std::size_t j : path)
        r.sequence.push_back(labels[j]);
    r.log_score = score;
    return r;
}

class BranchAndBound {
public:
    BranchAndBound(const OrderTables& tab, std::uint64_t cap) : tab_(tab), cap_(cap), best_in_(tab.n)
    {
        const std::size_t n = tab.n;
        for (std::size_t j = 0; j < n; ++j) {
            double b = tab.first[j];
            for (std::size_t i = 0; i < n; ++i) {
                if (i == j)
                    continue;
                b = std::max(b, tab.second[i * n + j]);
                for (std::size_t h = 0; h < n; ++h)
                    if (h != i && h != j)
                        b = std::max(b, tab.trans[(h * n + i) * n + j]);
            }
            best_in_[j] = b;
        }
        best_end_ = n == 1 ? tab.end1[0] : -std::numeric_limits<double>::infinity();
        for (std::size_t h = 0; h < n; ++h)
            for (std::size_t i = 0; i < n; ++i)
                if (h != i)
                    best_end_ = std::max(best_end_, tab.end2[h * n + i]);
    }

    void run(std::vector<std::size_t> seed_path, double seed_score)
    {
        best_path_ = std::move(seed_path);
        best_score_ = seed_score;
        used_.assign(tab_.n, false);
        path_.clear();
        search(0.0);
    }

    const std::vector<std::size_t>& best_path() const { return best_path_; }
    double best_score() const { return best_score_; }
    std::uint64_t steps() const { return steps_; }
    bool aborted() const { return aborted_; }

private:
    void search(double g)
    {
        if (path_.size() == tab_.n) {
            double total = g + tab_.finish(path_);
            if (total > best_score_ || (total == best_score_ && path_ < best_path_)) {
                best_score_ = total;
                best_path_ = path_;
            }
            return;
        }
        if (steps_ >= cap_) {
            aborted_ = true;
            return;
        }
        ++steps_;
        double bound = best_end_;
        for (std::size_t j = 0; j < tab_.n; ++j)
            if (!used_[j])
                bound += best_in_[j];
        // Small slack keeps rounding from pruning exact ties.
        if (g + bound + 1e-9 * (1.0 + std::abs(best_score_)) < best_score_)
            return;
        for (std::size_t j = 0; j < tab_.n && !aborted_; ++j) {
            if (used_[j])
                continue;
            double lp = tab_.step(path_, j);
            used_[j] = true;
            path_.push_back(j);
            search(g + lp);
            path_.pop_back();
            used_[j] = false;
        }
    }

    const OrderTables& tab_;
    std::uint64_t cap_;
    std::vector<double> best_in_;
    double best_end_;
    std::vector<bool> used_;
    std::vector<std::size_t> path_;
    std::vector<std::size_t> best_path_;
    double best_score_ = 0.0;
    std::uint64_t steps_ = 0;
    bool aborted_ = false;
};

} // namespace

OrderingResult greedy_order(const TrigramLm& lm, std::span<const std::string> input)
{
    auto labels = unique_sorted(input);
    OrderTables tab(lm, token_ids(lm, labels));
    auto path = greedy_path(tab);
    return make_result(labels, path, path_score(tab, path));
}

OrderingResult order_labels(const TrigramLm& lm, std::span<const std::string> input, std::uint64_t step_cap)
{
    auto labels = unique_sorted(input);
    OrderTables tab(lm, token_ids(lm, labels));
    auto seed = greedy_path(tab);
    double seed_score = path_score(tab, seed);
    BranchAndBound bb(tab, step_cap);
    bb.run(seed, seed_score);
    auto r = make_result(labels, bb.best_path(), bb.best_score());
    r.steps = bb.steps();
    r.optimal = !bb.aborted();
    return r;
}

NamingConvention parse_convention(std::string_view text)
{
    if (text == "snake")
        return NamingConvention::snake;
    if (text == "camel")
        return NamingConvention::camel;
    throw Error("unknown naming convention '" + std::string(text) + "' (expected snake or camel)");
}

std::string render_name(std::span<const std::string> sequence, NamingConvention convention)
{
    if (sequence.empty())
        throw Error("cannot render an empty name");
    auto lower = [](std::string s) {
        for (auto& c : s)
            if (c >= 'A' && c <= 'Z')
                c = static_cast<char>(c - 'A' + 'a');
        return s;
    };
    std::string out;
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        std::string t = lower(sequence[i]);
        if (convention == NamingConvention::snake) {
            if (i > 0)
                out += '_';
        } else if (i > 0 && !t.empty() && t[0] >= 'a' && t[0] <= 'z') {
            t[0] = static_cast<char>(t[0] - 'a' + 'A');
        }
        out += t;
    }
    return out;
}

} // namespace xfl

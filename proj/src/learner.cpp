#include "xfl/learner.hpp"

#include "xfl/hashing.hpp"
#include "xfl/log.hpp"
#include "xfl/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

namespace xfl {

void HyperParams::validate() const
{
    if (trees < 1)
        throw Error("trees must be at least 1");
    if (max_leaf < 1)
        throw Error("max_leaf must be at least 1");
    if (k < 1)
        throw Error("k must be at least 1");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw Error("alpha must lie in [0, 1]");
    if (!(gamma > 0.0))
        throw Error("gamma must be positive");
    if (leaf_top_k < 1)
        throw Error("leaf_top_k must be at least 1");
    if (!(l1 >= 0.0))
        throw Error("l1 must be non-negative");
    if (separator_epochs < 1)
        throw Error("separator_epochs must be at least 1");
    if (!(separator_tol >= 0.0))
        throw Error("separator_tol must be non-negative");
}

namespace {

template <class T>
T parse_number(std::string_view key, std::string_view text)
{
    T value{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw Error("bad value '" + std::string(text) + "' for hyper-parameter '" + std::string(key) + "'");
    return value;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t'))
        s.remove_suffix(1);
    return s;
}

} // namespace

HyperParams HyperParams::parse(std::string_view text, HyperParams hp)
{
    while (!text.empty()) {
        auto comma = text.find(',');
        auto item = trim(text.substr(0, comma));
        text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
        if (item.empty())
            continue;
        auto eq = item.find('=');
        if (eq == std::string_view::npos)
            throw Error("hyper-parameter '" + std::string(item) + "' is not of the form key=value");
        auto key = trim(item.substr(0, eq));
        auto val = trim(item.substr(eq + 1));
        if (key == "trees" || key == "T")
            hp.trees = parse_number<std::size_t>(key, val);
        else if (key == "max_leaf")
            hp.max_leaf = parse_number<std::size_t>(key, val);
        else if (key == "k")
            hp.k = parse_number<std::size_t>(key, val);
        else if (key == "alpha")
            hp.alpha = parse_number<double>(key, val);
        else if (key == "gamma")
            hp.gamma = parse_number<double>(key, val);
        else if (key == "max_split_iters")
            hp.max_split_iters = parse_number<std::size_t>(key, val);
        else if (key == "rarity_cutoff")
            hp.rarity_cutoff = parse_number<std::uint64_t>(key, val);
        else if (key == "seed")
            hp.seed = parse_number<std::uint64_t>(key, val);
        else if (key == "leaf_top_k" || key == "K")
            hp.leaf_top_k = parse_number<std::size_t>(key, val);
        else if (key == "l1")
            hp.l1 = parse_number<double>(key, val);
        else if (key == "separator_epochs")
            hp.separator_epochs = parse_number<std::size_t>(key, val);
        else if (key == "separator_tol")
            hp.separator_tol = parse_number<double>(key, val);
        else if (key == "threads")
            hp.threads = parse_number<std::size_t>(key, val);
        else
            throw Error("unknown hyper-parameter '" + std::string(key) + "'");
    }
    hp.validate();
    return hp;
}

std::string HyperParams::to_string() const
{
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "trees=%zu,max_leaf=%zu,k=%zu,alpha=%.17g,gamma=%.17g,max_split_iters=%zu,rarity_cutoff=%llu,"
                  "seed=%llu,leaf_top_k=%zu,l1=%.17g,separator_epochs=%zu,separator_tol=%.17g",
                  trees, max_leaf, k, alpha, gamma, max_split_iters, static_cast<unsigned long long>(rarity_cutoff),
                  static_cast<unsigned long long>(seed), leaf_top_k, l1, separator_epochs, separator_tol);
    return buf;
}

void Dataset::add(std::string id, std::span<const double> features, LabelIds labels)
{
    if (ids.empty() && width == 0)
        width = features.size();
    if (features.size() != width)
        throw Error("feature width " + std::to_string(features.size()) + " of '" + id + "' does not match " +
                    std::to_string(width));
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(std::move(labels));
    ids.push_back(std::move(id));
}

Dataset make_dataset(const EmbeddingTable& embeddings, const GroundTruth& truth)
{
    Dataset d;
    d.width = embeddings.width();
    for (std::size_t i = 0; i < truth.function_ids.size(); ++i) {
        const double* row = embeddings.find(truth.function_ids[i]);
        if (row == nullptr)
            throw Error("no embedding for function '" + truth.function_ids[i] + "'");
        d.add(truth.function_ids[i], {row, embeddings.width()}, truth.labels[i]);
    }
    return d;
}

std::size_t Tree::leaf_for(std::span<const double> x) const
{
    std::size_t n = 0;
    while (!nodes[n].is_leaf())
        n = static_cast<std::size_t>(nodes[n].separator.margin(x) > 0.0 ? nodes[n].right : nodes[n].left);
    return n;
}

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_width(const XflModel& m, std::span<const double> x)
{
    if (x.size() != m.width)
        throw Error("embedding width " + std::to_string(x.size()) + " does not match model width " +
                    std::to_string(m.width));
}

} // namespace

std::vector<double> XflModel::tree_scores(std::span<const double> x) const
{
    check_width(*this, x);
    std::vector<double> s(num_labels, 0.0);
    for (const auto& t : trees)
        for (const auto& e : t.nodes[t.leaf_for(x)].leaf)
            s[e.label] += e.score;
    const double inv = 1.0 / static_cast<double>(trees.size());
    for (auto& v : s)
        v *= inv;
    return s;
}

std::vector<double> XflModel::scores(std::span<const double> x) const
{
    auto s = tree_scores(x);
    for (const auto& r : rare)
        s[r.label] = hp.alpha * s[r.label] + (1.0 - hp.alpha) * sigmoid(r.scorer.margin(x));
    return s;
}

LabelRanking rank_scores(std::span<const double> scores)
{
    LabelRanking r(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        r[i] = {static_cast<LabelId>(i), scores[i]};
    std::stable_sort(r.begin(), r.end(), [](const LabelScore& a, const LabelScore& b) { return a.score > b.score; });
    return r;
}

LabelRanking XflModel::predict(std::span<const double> x) const
{
    return rank_scores(scores(x));
}

LabelIds XflModel::predict_set(std::span<const double> x, double p_t) const
{
    auto s = scores(x);
    LabelIds out;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] > p_t)
            out.push_back(static_cast<LabelId>(i));
    return out;
}

namespace {

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn)
{
    if (threads == 0)
        threads = std::max(1U, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

struct RankedLabel {
    LabelId label;
    double mass;
};

class TreeBuilder {
public:
    TreeBuilder(const Dataset& data, const std::vector<double>& inv_p, const HyperParams& hp, std::uint64_t seed)
        : data_(data), inv_p_(inv_p), hp_(hp), rng_(seed), mass_(inv_p.size(), 0.0), count_(inv_p.size(), 0)
    {
    }

    Tree build()
    {
        std::vector<std::size_t> all(data_.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        struct Work {
            std::size_t node;
            std::vector<std::size_t> points;
        };
        std::vector<Work> stack;
        tree_.nodes.emplace_back();
        stack.push_back({0, std::move(all)});
        while (!stack.empty()) {
            Work w = std::move(stack.back());
            stack.pop_back();
            std::vector<std::size_t> left, right;
            SparseLinear sep;
            if (!try_split(w.points, sep, left, right)) {
                tree_.nodes[w.node].leaf = make_leaf(w.points);
                continue;
            }
            auto l = static_cast<std::int32_t>(tree_.nodes.size());
            tree_.nodes.emplace_back();
            tree_.nodes.emplace_back();
            auto& node = tree_.nodes[w.node];
            node.separator = std::move(sep);
            node.left = l;
            node.right = l + 1;
            // Right first so that the left subtree is expanded next.
            stack.push_back({static_cast<std::size_t>(l + 1), std::move(right)});
            stack.push_back({static_cast<std::size_t>(l), std::move(left)});
        }
        return std::move(tree_);
    }

private:
    bool splittable(const std::vector<std::size_t>& pts) const
    {
        if (pts.size() <= hp_.max_leaf)
            return false;
        bool same_x = true;
        bool same_y = true;
        auto first = data_.row(pts[0]);
        for (std::size_t i = 1; i < pts.size() && (same_x || same_y); ++i) {
            if (same_x) {
                auto r = data_.row(pts[i]);
                same_x = std::equal(r.begin(), r.end(), first.begin());
            }
            same_y = same_y && data_.y[pts[i]] == data_.y[pts[0]];
        }
        return !same_x && !same_y;
    }

    std::vector<LabelId> side_ranking(const std::vector<std::size_t>& pts, const std::vector<char>& side, char which)
    {
        std::vector<LabelId> touched;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (side[i] != which)
                continue;
            for (LabelId l : data_.y[pts[i]]) {
                if (mass_[l] == 0.0)
                    touched.push_back(l);
                mass_[l] += inv_p_[l];
            }
        }
        auto better = [&](LabelId a, LabelId b) { return mass_[a] != mass_[b] ? mass_[a] > mass_[b] : a < b; };
        const std::size_t k = std::min(hp_.k, touched.size());
        std::partial_sort(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(k), touched.end(), better);
        for (LabelId l : touched)
            mass_[l] = 0.0;
        touched.resize(k);
        return touched;
    }

    // PSnDCG@k of one point's labels under a side ranking.
    double psndcg(const LabelIds& y, const std::vector<LabelId>& ranking) const
    {
        if (y.empty())
            return 0.0;
        double dcg = 0.0;
        for (std::size_t r = 0; r < ranking.size(); ++r)
            if (std::binary_search(y.begin(), y.end(), ranking[r]))
                dcg += inv_p_[ranking[r]] / std::log2(static_cast<double>(r) + 2.0);
        std::vector<double> gains;
        gains.reserve(y.size());
        for (LabelId l : y)
            gains.push_back(inv_p_[l]);
        std::sort(gains.begin(), gains.end(), std::greater<>());
        double ideal = 0.0;
        for (std::size_t r = 0; r < std::min(hp_.k, gains.size()); ++r)
            ideal += gains[r] / std::log2(static_cast<double>(r) + 2.0);
        return dcg / ideal;
    }

    bool try_split(const std::vector<std::size_t>& pts, SparseLinear& sep, std::vector<std::size_t>& left,
                   std::vector<std::size_t>& right)
    {
        if (!splittable(pts))
            return false;
        const std::size_t n = pts.size();
        std::vector<char> side(n);
        std::size_t ones = 0;
        for (auto& s : side) {
            s = rng_.coin() ? 1 : 0;
            ones += static_cast<std::size_t>(s);
        }
        if (ones == 0 || ones == n) {
            auto flip = rng_.below(n);
            side[flip] = static_cast<char>(1 - side[flip]);
        }

        for (std::size_t it = 0; it < hp_.max_split_iters; ++it) {
            auto rank_left = side_ranking(pts, side, 0);
            auto rank_right = side_ranking(pts, side, 1);
            std::vector<char> next(side);
            bool changed = false;
            std::size_t right_count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& y = data_.y[pts[i]];
                double gl = psndcg(y, rank_left);
                double gr = psndcg(y, rank_right);
                if (gl > gr)
                    next[i] = 0;
                else if (gr > gl)
                    next[i] = 1;
                changed = changed || next[i] != side[i];
                right_count += static_cast<std::size_t>(next[i]);
            }
            if (!changed || right_count == 0 || right_count == n)
                break;
            side = std::move(next);
        }

        // Fit the separator on the node's points, class-balanced.
        const std::size_t width = data_.width;
        std::vector<std::vector<double>> columns(width, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            auto r = data_.row(pts[i]);
            for (std::size_t j = 0; j < width; ++j)
                columns[j][i] = r[j];
        }
        std::vector<signed char> labels(n);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = side[i] != 0 ? 1 : -1;
            pos += static_cast<std::size_t>(side[i]);
        }
        std::vector<double> costs(n);
        for (std::size_t i = 0; i < n; ++i)
            costs[i] = static_cast<double>(n) / (2.0 * static_cast<double>(labels[i] > 0 ? pos : n - pos));
        sep = fit_l1_logistic(columns, labels, costs, {hp_.l1, hp_.separator_epochs, hp_.separator_tol});

        for (std::size_t p : pts)
            (sep.margin(data_.row(p)) > 0.0 ? right : left).push_back(p);
        return !left.empty() && !right.empty();
    }

    std::vector<LabelScore> make_leaf(const std::vector<std::size_t>& pts)
    {
        std::vector<LabelId> touched;
        for (std::size_t p : pts) {
            for (LabelId l : data_.y[p]) {
                if (count_[l] == 0)
                    touched.push_back(l);
                ++count_[l];
            }
        }
        if (touched.size() > hp_.leaf_top_k) {
            auto heavier = [&](LabelId a, LabelId b) {
                double ma = static_cast<double>(count_[a]) * inv_p_[a];
                double mb = static_cast<double>(count_[b]) * inv_p_[b];
                return ma != mb ? ma > mb : a < b;
            };
            std::partial_sort(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(hp_.leaf_top_k),
                              touched.end(), heavier);
            for (std::size_t i = hp_.leaf_top_k; i < touched.size(); ++i)
                count_[touched[i]] = 0;
            touched.resize(hp_.leaf_top_k);
        }
        std::vector<LabelScore> leaf;
        leaf.reserve(touched.size());
        const double n = static_cast<double>(pts.size());
        for (LabelId l : touched) {
            leaf.push_back({l, static_cast<double>(count_[l]) / n});
            count_[l] = 0;
        }
        std::sort(leaf.begin(), leaf.end(), [](const LabelScore& a, const LabelScore& b) {
            return a.score != b.score ? a.score > b.score : a.label < b.label;
        });
        return leaf;
    }

    const Dataset& data_;
    const std::vector<double>& inv_p_;
    const HyperParams& hp_;
    SplitMix64 rng_;
    std::vector<double> mass_;
    std::vector<std::uint64_t> count_;
    Tree tree_;
};

} // namespace

XflModel train(const Dataset& data, const LabelSpace& space, const HyperParams& hp)
{
    hp.validate();
    if (data.size() == 0)
        throw Error("cannot train on an empty dataset");
    if (data.size() < hp.max_leaf)
        throw Error("training needs at least max_leaf (" + std::to_string(hp.max_leaf) + ") points, got " +
                    std::to_string(data.size()));
    if (data.width == 0)
        throw Error("training embeddings have zero width");
    for (const auto& y : data.y)
        for (LabelId l : y)
            if (l >= space.size())
                throw Error("label id " + std::to_string(l) + " outside the label space");

    std::vector<double> inv_p(space.size());
    for (std::size_t l = 0; l < space.size(); ++l)
        inv_p[l] = 1.0 / space.propensity(static_cast<LabelId>(l));

    XflModel model;
    model.hp = hp;
    model.hp.threads = 0;
    model.width = data.width;
    model.num_labels = space.size();
    model.label_space_digest = space.digest();
    model.trees.resize(hp.trees);

    parallel_for(hp.trees, hp.threads, [&](std::size_t t) {
        TreeBuilder builder(data, inv_p, hp, hp.seed ^ static_cast<std::uint64_t>(t));
        model.trees[t] = builder.build();
    });

    std::vector<LabelId> rare_labels;
    std::vector<std::size_t> positives(space.size(), 0);
    for (const auto& y : data.y)
        for (LabelId l : y)
            ++positives[l];
    for (std::size_t l = 0; l < space.size(); ++l) {
        if (space.count(static_cast<LabelId>(l)) > hp.rarity_cutoff)
            continue;
        if (positives[l] == 0) {
            log::warn("rare label '" + space.label(static_cast<LabelId>(l)) +
                      "' has no positive training points; skipping its classifier");
            continue;
        }
        rare_labels.push_back(static_cast<LabelId>(l));
    }

    if (!rare_labels.empty() && hp.alpha < 1.0) {
        const std::size_t n = data.size();
        std::vector<std::vector<double>> columns(data.width, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            auto r = data.row(i);
            for (std::size_t j = 0; j < data.width; ++j)
                columns[j][i] = r[j];
        }
        model.rare.resize(rare_labels.size());
        parallel_for(rare_labels.size(), hp.threads, [&](std::size_t r) {
            const LabelId l = rare_labels[r];
            const double w = std::pow(inv_p[l], hp.gamma);
            std::vector<signed char> labels(n);
            std::vector<double> costs(n);
            for (std::size_t i = 0; i < n; ++i) {
                bool has = std::binary_search(data.y[i].begin(), data.y[i].end(), l);
                labels[i] = has ? 1 : -1;
                costs[i] = has ? w : 1.0;
            }
            model.rare[r] = {l, fit_l1_logistic(columns, labels, costs,
                                                {hp.l1, hp.separator_epochs, hp.separator_tol})};
        });
    }
    return model;
}

Calibration calibrate_from_scores(std::span<const ScoredPair> pairs)
{
    if (pairs.empty())
        throw Error("threshold calibration needs at least one score");
    std::map<double, std::pair<std::uint64_t, std::uint64_t>> groups; // score -> (relevant, irrelevant)
    std::uint64_t total_rel = 0;
    std::uint64_t total_irr = 0;
    for (const auto& p : pairs) {
        auto& g = groups[p.score];
        (p.relevant ? g.first : g.second) += p.multiplicity;
        (p.relevant ? total_rel : total_irr) += p.multiplicity;
    }

    std::vector<std::pair<double, std::pair<std::uint64_t, std::uint64_t>>> g(groups.begin(), groups.end());
    Calibration best;
    if (g.size() == 1) {
        best.threshold = g[0].first - DBL_EPSILON;
        best.f1 = micro_prf(total_rel, total_irr, 0).f1;
        best.degenerate = true;
        log::warn("all validation scores are identical; threshold set just below that score");
        return best;
    }

    // Ascending candidates; predicted = groups strictly above the candidate.
    std::uint64_t tp = total_rel;
    std::uint64_t fp = total_irr;
    best.threshold = g[0].first - DBL_EPSILON;
    best.f1 = micro_prf(tp, fp, 0).f1;
    for (std::size_t j = 0; j < g.size(); ++j) {
        tp -= g[j].second.first;
        fp -= g[j].second.second;
        double cand = j + 1 < g.size() ? g[j].first + (g[j + 1].first - g[j].first) / 2.0 : g[j].first;
        double f1 = micro_prf(tp, fp, total_rel - tp).f1;
        if (f1 >= best.f1) {
            best.f1 = f1;
            best.threshold = cand;
        }
    }
    return best;
}

Calibration calibrate_threshold(XflModel& model, const Dataset& valid)
{
    if (valid.size() == 0)
        throw Error("threshold calibration needs a non-empty validation set");
    std::map<std::pair<double, bool>, std::uint64_t> counts;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        auto s = model.scores(valid.row(i));
        const auto& y = valid.y[i];
        for (std::size_t l = 0; l < s.size(); ++l)
            ++counts[{s[l], std::binary_search(y.begin(), y.end(), static_cast<LabelId>(l))}];
    }
    std::vector<ScoredPair> pairs;
    pairs.reserve(counts.size());
    for (const auto& [key, m] : counts)
        pairs.push_back({key.first, key.second, m});
    auto c = calibrate_from_scores(pairs);
    model.threshold = c.threshold;
    model.calibrated = true;
    return c;
}

double mean_ndcg(const XflModel& model, const Dataset& data, std::size_t k)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.y[i].empty())
            continue;
        auto ranking = model.predict(data.row(i));
        std::vector<LabelId> ids;
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r)
            ids.push_back(ranking[r].label);
        sum += ndcg_at_k(relevance(ids, data.y[i], k), data.y[i].size(), k);
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

HyperParams grid_search(std::span<const HyperParams> grid, const Dataset& train_set, const Dataset& valid,
                        const LabelSpace& space)
{
    if (grid.empty())
        throw Error("grid search needs at least one configuration");
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto model = train(train_set, space, grid[i]);
        double s = mean_ndcg(model, valid, 5);
        log::info("grid " + grid[i].to_string() + ": nDCG@5 " + std::to_string(s));
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return grid[best];
}

} // namespace xfl

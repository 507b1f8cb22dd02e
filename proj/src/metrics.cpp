#include "xfl/metrics.hpp"

#include "xfl/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

namespace xfl {

namespace {

double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

} // namespace

RelevanceVector relevance(std::span<const LabelId> ranked, const LabelIds& truth, std::size_t k)
{
    RelevanceVector rel;
    const std::size_t m = std::min(k, ranked.size());
    rel.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
        rel.push_back(std::binary_search(truth.begin(), truth.end(), ranked[i]) ? 1 : 0);
    return rel;
}

double cg_at_k(std::span<const int> rel, std::size_t k)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < std::min(k, rel.size()); ++i)
        sum += rel[i];
    return sum;
}

double dcg_at_k(std::span<const int> rel, std::size_t k)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < std::min(k, rel.size()); ++i)
        if (rel[i] != 0)
            sum += rel[i] * discount(i + 1);
    return sum;
}

double ndcg_at_k(std::span<const int> rel, std::size_t n, std::size_t k)
{
    if (n == 0)
        return 0.0;
    double ideal = 0.0;
    for (std::size_t i = 1; i <= std::min(k, n); ++i)
        ideal += discount(i);
    return dcg_at_k(rel, k) / ideal;
}

double psdcg_at_k(std::span<const int> rel, std::span<const LabelId> ranked, const LabelSpace& space, std::size_t k)
{
    double sum = 0.0;
    for (std::size_t i = 0; i < std::min({k, rel.size(), ranked.size()}); ++i) {
        double p = space.propensity(ranked[i]);
        if (rel[i] != 0)
            sum += rel[i] * discount(i + 1) / p;
    }
    return sum;
}

void MicroCounts::add(const LabelIds& predicted, const LabelIds& truth)
{
    auto bump = [](std::vector<std::uint64_t>& v, LabelId id) {
        if (id >= v.size())
            v.resize(id + 1, 0);
        ++v[id];
    };
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < predicted.size() || j < truth.size()) {
        if (j == truth.size() || (i < predicted.size() && predicted[i] < truth[j])) {
            bump(fp, predicted[i++]);
        } else if (i == predicted.size() || truth[j] < predicted[i]) {
            bump(fn, truth[j++]);
        } else {
            bump(tp, predicted[i]);
            ++i;
            ++j;
        }
    }
}

Prf micro_prf(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn)
{
    Prf r;
    auto ratio = [](std::uint64_t a, std::uint64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn);
    r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

Prf micro_prf(const MicroCounts& counts)
{
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (auto v : counts.tp)
        tp += v;
    for (auto v : counts.fp)
        fp += v;
    for (auto v : counts.fn)
        fn += v;
    return micro_prf(tp, fp, fn);
}

std::vector<LabelId> pad_with_frequency_order(std::span<const LabelId> predicted, const LabelSpace& space,
                                              std::size_t k)
{
    std::vector<LabelId> out(predicted.begin(), predicted.end());
    std::unordered_set<LabelId> have(out.begin(), out.end());
    for (LabelId id = 0; out.size() < k && id < space.size(); ++id)
        if (!have.contains(id))
            out.push_back(id);
    return out;
}

EvalSummary summarize(std::span<const PointPrediction> points, const LabelSpace& space, std::size_t k)
{
    EvalSummary s;
    MicroCounts counts(space.size());
    for (const auto& p : points) {
        ++s.points;
        counts.add(p.predicted, p.truth);
        if (p.truth.empty())
            continue;
        ++s.ranked_points;
        auto rel = relevance(p.ranked, p.truth, k);
        s.cg += cg_at_k(rel, k);
        s.dcg += dcg_at_k(rel, k);
        s.ndcg += ndcg_at_k(rel, p.truth.size(), k);
        s.psdcg += psdcg_at_k(rel, p.ranked, space, k);
    }
    if (s.ranked_points > 0) {
        const double n = static_cast<double>(s.ranked_points);
        s.cg /= n;
        s.dcg /= n;
        s.ndcg /= n;
        s.psdcg /= n;
    }
    s.micro = micro_prf(counts);
    return s;
}

void EvalReport::append(const EvalSummary& s, std::size_t label_space, const std::string& slice, std::size_t k)
{
    const std::string at = "@" + std::to_string(k);
    auto add = [&](std::string metric, double v) { rows.push_back({std::move(metric), label_space, slice, v}); };
    add("points", static_cast<double>(s.points));
    add("cg" + at, s.cg);
    add("dcg" + at, s.dcg);
    add("ndcg" + at, s.ndcg);
    add("psdcg" + at, s.psdcg);
    add("precision", s.micro.precision);
    add("recall", s.micro.recall);
    add("f1", s.micro.f1);
}

std::string EvalReport::to_tsv() const
{
    std::ostringstream out;
    out << "metric\tlabel_space\tslice\tvalue\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g", r.value);
        out << r.metric << '\t' << r.label_space << '\t' << r.slice << '\t' << buf << '\n';
    }
    return out.str();
}

void EvalReport::write_tsv(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write report " + path.string());
    out << to_tsv();
}

void EvalReport::write_plot_data(const std::filesystem::path& path) const
{
    std::vector<std::string> metrics;
    std::map<std::pair<std::size_t, std::string>, std::map<std::string, double>> table;
    for (const auto& r : rows) {
        if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end())
            metrics.push_back(r.metric);
        table[{r.label_space, r.slice}][r.metric] = r.value;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write plot data " + path.string());
    out << "label_space\tslice";
    for (const auto& m : metrics)
        out << '\t' << m;
    out << '\n';
    char buf[64];
    for (const auto& [key, values] : table) {
        out << key.first << '\t' << key.second;
        for (const auto& m : metrics) {
            auto it = values.find(m);
            std::snprintf(buf, sizeof buf, "%.10g", it == values.end() ? 0.0 : it->second);
            out << '\t' << buf;
        }
        out << '\n';
    }
}

std::optional<double> EvalReport::value(std::string_view metric, std::size_t label_space, std::string_view slice) const
{
    for (const auto& r : rows)
        if (r.metric == metric && r.label_space == label_space && r.slice == slice)
            return r.value;
    return std::nullopt;
}

std::string canonical_key(const CanonicalTokenSet& tokens)
{
    std::string key;
    for (const auto& t : tokens) {
        if (!key.empty())
            key += '_';
        key += t;
    }
    return key;
}

std::vector<bool> unseen_mask(const Corpus& test, const Corpus& train, const Tokenizer& tokenizer)
{
    std::unordered_set<std::string> seen;
    for (const auto& r : train.records())
        seen.insert(canonical_key(tokenizer.canonical_tokens(r.name)));
    std::vector<bool> mask;
    mask.reserve(test.size());
    for (const auto& r : test.records())
        mask.push_back(!seen.contains(canonical_key(tokenizer.canonical_tokens(r.name))));
    return mask;
}

std::vector<PointPrediction> predict_points(const XflModel& model, const Dataset& data, std::size_t k)
{
    std::vector<PointPrediction> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto scores = model.scores(data.row(i));
        auto ranking = rank_scores(scores);
        auto& p = out[i];
        for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r)
            p.ranked.push_back(ranking[r].label);
        for (LabelId id = 0; id < scores.size(); ++id)
            if (scores[id] > model.threshold)
                p.predicted.push_back(id);
        p.truth = data.y[i];
    }
    return out;
}

EvalReport evaluate(const XflModel& model, const Dataset& test, const LabelSpace& space, std::size_t k,
                    const std::vector<bool>* unseen)
{
    if (test.size() == 0)
        throw Error("cannot evaluate on an empty split");
    auto points = predict_points(model, test, k);
    EvalReport report;
    report.append(summarize(points, space, k), space.size(), "all", k);
    if (unseen != nullptr) {
        if (unseen->size() != points.size())
            throw Error("unseen mask does not match the test split");
        report.unseen_requested = true;
        std::vector<PointPrediction> slice;
        for (std::size_t i = 0; i < points.size(); ++i)
            if ((*unseen)[i])
                slice.push_back(points[i]);
        if (slice.empty()) {
            report.unseen_empty = true;
            log::warn("unseen-name slice is empty: every test name occurs in training");
        } else {
            report.append(summarize(slice, space, k), space.size(), "unseen", k);
        }
    }
    return report;
}

} // namespace xfl

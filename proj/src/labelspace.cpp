#include "xfl/labelspace.hpp"

#include "xfl/hashing.hpp"
#include "xfl/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace xfl {

double propensity_constant(std::uint64_t total_points, const PropensityParams& params)
{
    double c = (std::log(static_cast<double>(total_points)) - 1.0) * std::pow(params.B + 1.0, params.A);
    return std::max(0.0, c);
}

double propensity_value(double count, std::uint64_t total_points, const PropensityParams& params)
{
    double c = propensity_constant(total_points, params);
    return 1.0 / (1.0 + c * std::exp(-params.A * std::log(count + params.B)));
}

LabelSpace::LabelSpace(std::vector<std::string> labels, std::vector<std::uint64_t> counts,
                       std::uint64_t total_points, PropensityParams params)
    : labels_(std::move(labels)), counts_(std::move(counts)), total_points_(total_points), params_(params)
{
    if (labels_.size() != counts_.size())
        throw Error("label space: labels and counts differ in length");
    C_ = propensity_constant(total_points_, params_);
    propensities_.reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (counts_[i] == 0)
            throw Error("label space: label '" + labels_[i] + "' has zero count");
        if (!index_.emplace(labels_[i], static_cast<LabelId>(i)).second)
            throw Error("label space: duplicate label '" + labels_[i] + "'");
        propensities_.push_back(propensity_value(static_cast<double>(counts_[i]), total_points_, params_));
    }
}

std::optional<LabelId> LabelSpace::id_of(const std::string& label) const
{
    auto it = index_.find(label);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

std::string LabelSpace::to_json() const
{
    nlohmann::json j;
    j["format"] = "xfl-labelspace";
    j["version"] = 1;
    j["A"] = params_.A;
    j["B"] = params_.B;
    j["C"] = C_;
    j["N"] = total_points_;
    j["labels"] = labels_;
    j["counts"] = counts_;
    return j.dump();
}

LabelSpace LabelSpace::from_json(std::string_view text)
{
    try {
        auto j = nlohmann::json::parse(text);
        if (j.value("format", "") != "xfl-labelspace")
            throw FormatError("unrecognized format: not a label space file");
        return LabelSpace(j.at("labels").get<std::vector<std::string>>(),
                          j.at("counts").get<std::vector<std::uint64_t>>(), j.at("N").get<std::uint64_t>(),
                          {j.at("A").get<double>(), j.at("B").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("unrecognized format: malformed label space: ") + e.what());
    }
}

std::string LabelSpace::digest() const
{
    return sha256_hex(to_json());
}

void LabelSpace::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write label space " + path.string());
    out << to_json() << '\n';
}

LabelSpace LabelSpace::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read label space " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

bool LabelSpace::operator==(const LabelSpace& other) const
{
    return labels_ == other.labels_ && counts_ == other.counts_ && total_points_ == other.total_points_ &&
           params_.A == other.params_.A && params_.B == other.params_.B;
}

std::vector<std::pair<std::string, std::uint64_t>> count_tokens(const Corpus& corpus, const Tokenizer& tokenizer)
{
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& r : corpus.records())
        for (const auto& t : tokenizer.canonical_tokens(r.name))
            ++counts[t];
    std::vector<std::pair<std::string, std::uint64_t>> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    return sorted;
}

LabelSpace build_label_space(const Corpus& train, const Tokenizer& tokenizer, std::size_t n,
                             const PropensityParams& params)
{
    if (n == 0)
        throw Error("label space size must be at least 1");
    if (train.empty())
        throw Error("cannot build a label space from an empty corpus");
    auto sorted = count_tokens(train, tokenizer);
    if (sorted.size() < n)
        log::warn("requested " + std::to_string(n) + " labels but only " + std::to_string(sorted.size()) +
                  " distinct tokens exist; keeping all");
    sorted.resize(std::min(n, sorted.size()));
    std::vector<std::string> labels;
    std::vector<std::uint64_t> counts;
    for (auto& [label, count] : sorted) {
        labels.push_back(std::move(label));
        counts.push_back(count);
    }
    return LabelSpace(std::move(labels), std::move(counts), train.size(), params);
}

std::size_t GroundTruth::empty_count() const
{
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.empty(); }));
}

LabelIds project_tokens(const CanonicalTokenSet& tokens, const LabelSpace& space)
{
    LabelIds ids;
    for (const auto& t : tokens)
        if (auto id = space.id_of(t))
            ids.push_back(*id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

GroundTruth project_ground_truth(const Corpus& corpus, const LabelSpace& space, const Tokenizer& tokenizer)
{
    GroundTruth gt;
    gt.function_ids.reserve(corpus.size());
    gt.labels.reserve(corpus.size());
    for (const auto& r : corpus.records()) {
        gt.function_ids.push_back(r.id());
        gt.labels.push_back(project_tokens(tokenizer.canonical_tokens(r.name), space));
    }
    return gt;
}

PropensityParams fit_propensity_params(std::span<const std::uint64_t> counts, std::uint64_t total_points,
                                       std::span<const double> a_grid, std::span<const double> b_grid)
{
    if (counts.empty() || a_grid.empty() || b_grid.empty())
        throw Error("propensity fit needs labels and a non-empty grid");
    std::vector<std::uint64_t> sorted(counts.begin(), counts.end());
    std::sort(sorted.begin(), sorted.end());
    const double m = static_cast<double>(sorted.size());

    PropensityParams best{a_grid.front(), b_grid.front()};
    double best_err = std::numeric_limits<double>::infinity();
    for (double a : a_grid) {
        for (double b : b_grid) {
            PropensityParams p{a, b};
            double err = 0.0;
            for (std::uint64_t c : sorted) {
                auto le = std::upper_bound(sorted.begin(), sorted.end(), c) - sorted.begin();
                double cdf = static_cast<double>(le) / m;
                double d = propensity_value(static_cast<double>(c), total_points, p) - cdf;
                err += d * d;
            }
            if (err < best_err) {
                best_err = err;
                best = p;
            }
        }
    }
    return best;
}

} // namespace xfl

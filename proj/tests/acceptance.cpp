// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include "support.hpp"
#include "xfl/featurizer.hpp"
#include "xfl/labelspace.hpp"
#include "xfl/langmodel.hpp"
#include "xfl/learner.hpp"
#include "xfl/log.hpp"
#include "xfl/metrics.hpp"
#include "xfl/pipeline.hpp"
#include "xfl/tokenizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

using namespace xfl;
namespace ref = xfl::testing::ref;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

const Tokenizer& tok()
{
    static const Tokenizer t(TokenizerConfig::load_default());
    return t;
}

Outcome tokenizer_examples()
{
    const auto t0 = Clock::now();
    using V = std::vector<std::string>;
    using S = CanonicalTokenSet;
    std::vector<std::pair<std::string, bool>> checks = {
        {"__libxyz_init", split_segments("__libxyz_init") == V{"libxyz", "init"}},
        {"IsWindowOpen", split_segments("IsWindowOpen") == V{"is", "window", "open"}},
        {"mkdirs", tok().expand_abbreviations(V{"mkdirs"}) == V{"make", "directories"}},
        {"foreach", tok().best_split("foreach") == V{"for", "each"}},
        {"background", tok().best_split("background") == V{"background"}},
        {"make_smooth_colormap", tok().canonical_tokens("make_smooth_colormap") == S{"make", "smooth", "color", "map"}},
        {"mcxRealloc", tok().canonical_tokens("mcxRealloc") == S{"realloc", "mcx"}},
        {"check_audio_range", tok().canonical_tokens("check_audio_range") == S{"range", "audio", "check"}},
        {"HIDSetItemValue", tok().canonical_tokens("HIDSetItemValue") == S{"set", "item", "hid", "value"}},
    };
    const double secs = seconds_since(t0);
    std::string failed;
    for (const auto& [name, ok] : checks)
        if (!ok)
            failed += " " + name;
    std::ostringstream d;
    d << checks.size() << " examples, " << secs << " s";
    if (!failed.empty())
        d << ", mismatched:" << failed;
    return {failed.empty() && secs < 1.0, d.str()};
}

Outcome metrics_oracle()
{
    const auto t0 = Clock::now();
    SplitMix64 rng(2024);
    double worst = 0.0;
    bool in_range = true, perfect = true;
    std::vector<std::vector<std::uint32_t>> all_pred, all_truth;
    MicroCounts counts(64);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t L = 1 + rng.below(64);
        const std::size_t k = 1 + rng.below(10);
        std::vector<std::string> labels;
        std::vector<std::uint64_t> freq;
        for (std::size_t i = 0; i < L; ++i) {
            labels.push_back("l" + std::to_string(i));
            freq.push_back(1 + rng.below(1000));
        }
        std::sort(freq.rbegin(), freq.rend());
        LabelSpace space(labels, freq, 5000, {});
        std::vector<double> prop(space.propensities().begin(), space.propensities().end());
        std::vector<LabelId> ranked(L);
        std::iota(ranked.begin(), ranked.end(), 0);
        for (std::size_t i = L; i > 1; --i)
            std::swap(ranked[i - 1], ranked[rng.below(i)]);
        LabelIds truth, predicted;
        for (LabelId l = 0; l < L; ++l) {
            if (rng.uniform() < 0.25)
                truth.push_back(l);
            if (rng.uniform() < 0.25)
                predicted.push_back(l);
        }
        counts.add(predicted, truth);
        all_pred.push_back(predicted);
        all_truth.push_back(truth);

        auto rel = relevance(ranked, truth, k);
        const double nd = ndcg_at_k(rel, truth.size(), k);
        worst = std::max({worst, std::abs(cg_at_k(rel, k) - ref::cg(ranked, truth, k)),
                          std::abs(dcg_at_k(rel, k) - ref::dcg(ranked, truth, k)),
                          std::abs(nd - ref::ndcg(ranked, truth, k)),
                          std::abs(psdcg_at_k(rel, ranked, space, k) - ref::psdcg(ranked, truth, prop, k))});
        in_range = in_range && nd >= 0.0 && nd <= 1.0;

        // Truth first gives the ideal ranking.
        if (!truth.empty()) {
            std::vector<LabelId> ideal = truth;
            for (LabelId l = 0; l < L; ++l)
                if (!std::binary_search(truth.begin(), truth.end(), l))
                    ideal.push_back(l);
            perfect = perfect && ndcg_at_k(relevance(ideal, truth, k), truth.size(), k) == 1.0;
        }
    }
    auto mine = micro_prf(counts);
    auto theirs = ref::micro(all_pred, all_truth);
    worst = std::max({worst, std::abs(mine.precision - theirs.p), std::abs(mine.recall - theirs.r),
                      std::abs(mine.f1 - theirs.f1)});
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "1000 rankings, max deviation " << worst << ", perfect nDCG exact " << (perfect ? "yes" : "no")
      << ", nDCG in [0,1] " << (in_range ? "yes" : "no") << ", " << secs << " s";
    return {worst <= 1e-9 && perfect && in_range && secs < 5.0, d.str()};
}

Outcome propensity()
{
    const PropensityParams pp{0.5, 0.425};
    bool monotone = true;
    double worst = 0.0;
    std::size_t labels = 0;
    auto fixture = testing::make_fixture_corpus();
    auto unseen = testing::make_unseen_fixture();
    for (const Corpus* c : {&fixture, &unseen.train}) {
        auto space = build_label_space(*c, tok(), c == &fixture ? 64 : 16, pp);
        labels += space.size();
        const double N = static_cast<double>(space.total_points());
        const double C = std::max(0.0, (std::log(N) - 1.0) * std::pow(pp.B + 1.0, pp.A));
        for (LabelId a = 0; a < space.size(); ++a) {
            const double direct = 1.0 / (1.0 + C * std::exp(-pp.A * std::log(space.count(a) + pp.B)));
            worst = std::max(worst, std::abs(space.propensity(a) - direct));
            for (LabelId b = 0; b < space.size(); ++b) {
                if (space.count(a) > space.count(b) && !(space.propensity(a) > space.propensity(b)))
                    monotone = false;
                if (space.count(a) == space.count(b) && space.propensity(a) != space.propensity(b))
                    monotone = false;
            }
        }
    }
    // N = 1000, N_l = 100 against a 40-digit mpmath evaluation.
    const double big = propensity_value(100, 1000, pp);
    worst = std::max(worst, std::abs(big - 0.5869458191474192129));
    std::ostringstream d;
    d << labels << " labels, monotone " << (monotone ? "yes" : "no") << ", max formula deviation " << worst;
    return {monotone && worst <= 1e-12, d.str()};
}

Outcome separable_learner()
{
    const auto t0 = Clock::now();
    auto train_set = testing::gaussian_clusters(8, 100, 16, 1.0, 1, "tr");
    auto valid_set = testing::gaussian_clusters(8, 10, 16, 1.0, 3, "va");
    auto test_set = testing::gaussian_clusters(8, 13, 16, 1.0, 2, "te");
    test_set.x.resize(100 * 16);
    test_set.y.resize(100);
    test_set.ids.resize(100);
    auto space = testing::uniform_space(8, 100);
    HyperParams hp;
    hp.trees = 10;
    hp.seed = 17;
    auto model = train(train_set, space, hp);
    calibrate_threshold(model, valid_set);
    auto report = evaluate(model, test_set, space, 5);
    const double ndcg = *report.value("ndcg@5", 8, "all");
    const double f1 = *report.value("f1", 8, "all");
    const double secs = seconds_since(t0);

    // Routing oracle on a 20-point model.
    auto small = testing::gaussian_clusters(4, 5, 6, 1.5, 8);
    auto small_space = testing::uniform_space(4, 5);
    HyperParams shp;
    shp.trees = 3;
    shp.max_leaf = 2;
    shp.l1 = 0.1;
    shp.seed = 21;
    auto small_model = train(small, small_space, shp);
    auto probe = testing::gaussian_clusters(4, 25, 6, 3.0, 99);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < probe.size(); ++i)
        if (small_model.tree_scores(probe.row(i)) != testing::oracle_tree_scores(small_model, probe.row(i)))
            ++mismatches;

    std::ostringstream d;
    d << "nDCG@5 " << ndcg << ", micro-F1 " << f1 << ", " << secs << " s, routing mismatches " << mismatches << "/"
      << probe.size();
    return {ndcg >= 0.98 && f1 >= 0.95 && secs < 30.0 && mismatches == 0, d.str()};
}

Outcome overfit()
{
    auto corpus = testing::make_fixture_corpus();
    auto space = build_label_space(corpus, tok(), 64, {});
    FeatureConfig fc;
    fc.seed = derive_seed(1, "featurize");
    auto table = featurize_corpus(corpus, fc, 512);
    auto data = make_dataset(table, project_ground_truth(corpus, space, tok()));
    HyperParams hp;
    hp.seed = derive_seed(1, "train");
    auto model = train(data, space, hp);
    calibrate_threshold(model, data);
    auto report = evaluate(model, data, space, 5);
    const double f1 = *report.value("f1", 64, "all");
    std::ostringstream d;
    d << corpus.size() << " functions, " << space.size() << " labels, micro-F1 " << f1 << ", threshold "
      << model.threshold;
    return {f1 >= 0.90, d.str()};
}

Outcome threshold_monotonicity()
{
    std::size_t violations = 0, checks = 0;
    for (std::uint64_t m = 0; m < 100; ++m) {
        SplitMix64 rng(m);
        const std::size_t clusters = 3 + rng.below(4);
        auto data = testing::gaussian_clusters(clusters, 8, 5, 1.0 + 2.0 * rng.uniform(), 100 + m);
        // Some points carry a second label so predicted sets vary in size.
        for (auto& y : data.y)
            if (rng.uniform() < 0.3) {
                y.push_back(static_cast<LabelId>(rng.below(clusters)));
                std::sort(y.begin(), y.end());
                y.erase(std::unique(y.begin(), y.end()), y.end());
            }
        auto space = testing::uniform_space(clusters, 8);
        HyperParams hp;
        hp.trees = 3;
        hp.max_leaf = 3;
        hp.seed = m;
        auto model = train(data, space, hp);
        auto valid = testing::gaussian_clusters(clusters, 3, 5, 1.5, 900 + m);
        calibrate_threshold(model, valid);
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto s = model.scores(data.row(i));
            std::vector<double> cuts = s;
            cuts.push_back(model.threshold);
            for (double t = -0.05; t <= 1.05; t += 0.01)
                cuts.push_back(t);
            std::sort(cuts.begin(), cuts.end());
            LabelIds prev = model.predict_set(data.row(i), cuts.front() - 1.0);
            for (double t : cuts) {
                auto cur = model.predict_set(data.row(i), t);
                ++checks;
                if (!std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()))
                    ++violations;
                prev = cur;
            }
        }
    }
    std::ostringstream d;
    d << "100 calibrated models, " << checks << " threshold steps, " << violations << " subset violations";
    return {violations == 0, d.str()};
}

Outcome language_model()
{
    auto names = testing::lm_name_corpus(500, 77);
    auto lm = TrigramLm::train(names);
    std::vector<std::string> vocab;
    for (std::size_t i = 3; i < lm.vocab_size(); ++i)
        vocab.push_back(lm.token(static_cast<TokenId>(i)));
    SplitMix64 rng(31);
    auto draw = [&](std::size_t n) {
        std::vector<std::string> labels;
        while (labels.size() < n) {
            auto t = vocab[rng.below(vocab.size())];
            if (std::find(labels.begin(), labels.end(), t) == labels.end())
                labels.push_back(t);
        }
        return labels;
    };
    std::size_t sets = 0, wrong = 0, below_greedy = 0;
    for (; sets < 250; ++sets) {
        auto labels = draw(1 + rng.below(6));
        auto r = order_labels(lm, labels, std::numeric_limits<std::uint64_t>::max());
        std::sort(labels.begin(), labels.end());
        std::vector<std::string> best;
        double best_score = -std::numeric_limits<double>::infinity();
        do {
            const double s = lm.score(labels);
            if (s > best_score) {
                best_score = s;
                best = labels;
            }
        } while (std::next_permutation(labels.begin(), labels.end()));
        if (r.sequence != best || r.log_score != best_score || !r.optimal)
            ++wrong;
        if (r.log_score < greedy_order(lm, labels).log_score)
            ++below_greedy;
    }
    double slowest = 0.0;
    for (int q = 0; q < 40; ++q) {
        auto labels = draw(7 + static_cast<std::size_t>(q % 2));
        const auto t0 = Clock::now();
        auto r = order_labels(lm, labels);
        slowest = std::max(slowest, seconds_since(t0));
        if (r.log_score < greedy_order(lm, labels).log_score)
            ++below_greedy;
    }
    std::ostringstream d;
    d << sets << " sets vs exhaustive: " << wrong << " mismatches, " << below_greedy
      << " below greedy, slowest 8-label query " << slowest * 1000 << " ms";
    return {wrong == 0 && below_greedy == 0 && slowest < 0.05, d.str()};
}

Outcome determinism()
{
    testing::TempDir d("xfl-accept");
    save_corpus(testing::make_fixture_corpus(), d / "corpus.jsonl");
    auto run = [&](const std::string& out) {
        PipelineConfig c;
        c.corpus = d / "corpus.jsonl";
        c.out_dir = d / out;
        c.label_space_sizes = {64};
        c.embedding_width = 128;
        c.categorical_width = 1 << 14;
        c.hyper_params = "trees=8";
        c.seed = 123;
        c.split = {0.8, 0.1, 0.1, Grouping::by_function, 0};
        run_pipeline(c);
        return d.path() / out / "n64";
    };
    auto a = run("a");
    auto b = run("b");
    std::vector<std::string> differ;
    for (const char* f : {"model.bin", "rankings.tsv", "names.tsv"})
        if (testing::read_file(a / f) != testing::read_file(b / f) || testing::read_file(a / f).empty())
            differ.emplace_back(f);
    std::string detail = "model.bin, rankings.tsv, names.tsv ";
    if (differ.empty())
        detail += "bit-identical across two runs";
    else
        for (const auto& f : differ)
            detail += "differ:" + f + " ";
    return {differ.empty(), detail};
}

Outcome unseen_slice()
{
    auto fx = testing::make_unseen_fixture();
    FeatureConfig fc;
    fc.seed = derive_seed(5, "featurize");
    // Featurize all three parts as one corpus, as the pipeline does.
    std::vector<FunctionRecord> all;
    for (const Corpus* c : {&fx.train, &fx.valid, &fx.test})
        all.insert(all.end(), c->records().begin(), c->records().end());
    auto table = featurize_corpus(Corpus(all), fc, 256);
    auto space = build_label_space(fx.train, tok(), 16, {});
    auto train_set = make_dataset(table, project_ground_truth(fx.train, space, tok()));
    auto valid_set = make_dataset(table, project_ground_truth(fx.valid, space, tok()));
    auto test_set = make_dataset(table, project_ground_truth(fx.test, space, tok()));
    HyperParams hp;
    hp.seed = derive_seed(5, "train");
    auto model = train(train_set, space, hp);
    calibrate_threshold(model, valid_set);
    auto mask = unseen_mask(fx.test, fx.train, tok());
    const auto unseen = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    auto report = evaluate(model, test_set, space, 5, &mask);
    const auto f1 = report.value("f1", space.size(), "unseen");
    std::ostringstream d;
    d << unseen << "/" << mask.size() << " test names unseen, unseen-slice F1 " << (f1 ? *f1 : -1.0);
    if (f1)
        d << ", nDCG@5 " << *report.value("ndcg@5", space.size(), "unseen");
    return {unseen == mask.size() && unseen > 0 && f1 && *f1 > 0.0, d.str()};
}

} // namespace

int main()
{
    log::set_quiet(true);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"tokenizer-examples", tokenizer_examples},
        {"metrics-oracle", metrics_oracle},
        {"propensity", propensity},
        {"separable-learner", separable_learner},
        {"overfit-fixture", overfit},
        {"threshold-monotonicity", threshold_monotonicity},
        {"language-model-ordering", language_model},
        {"pipeline-determinism", determinism},
        {"unseen-name-slice", unseen_slice},
    };
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}

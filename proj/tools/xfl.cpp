// Command-line front end: one subcommand per pipeline stage plus the full
// pipeline.
#include "xfl/corpus.hpp"
#include "xfl/featurizer.hpp"
#include "xfl/hashing.hpp"
#include "xfl/labelspace.hpp"
#include "xfl/langmodel.hpp"
#include "xfl/learner.hpp"
#include "xfl/log.hpp"
#include "xfl/metrics.hpp"
#include "xfl/pipeline.hpp"
#include "xfl/tokenizer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace xfl;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> config;
    bool quiet = false;
    std::optional<std::string> tokenizer;
};

Tokenizer make_tokenizer(const Globals& g)
{
    return Tokenizer(g.tokenizer ? TokenizerConfig::load(*g.tokenizer) : TokenizerConfig::load_default());
}

Grouping parse_grouping(const std::string& s)
{
    if (s == "by_binary")
        return Grouping::by_binary;
    if (s == "by_function")
        return Grouping::by_function;
    throw Error("unknown grouping '" + s + "' (expected by_function or by_binary)");
}

std::string join(const std::vector<std::string>& v, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0)
            out += sep;
        out += v[i];
    }
    return out;
}

Dataset unlabeled(const EmbeddingTable& table, const std::optional<std::string>& corpus_path)
{
    Dataset d;
    d.width = table.width();
    if (corpus_path) {
        auto corpus = load_corpus(*corpus_path);
        for (const auto& r : corpus.records()) {
            const double* row = table.find(r.id());
            if (row == nullptr)
                throw Error("no embedding for function '" + r.id() + "'");
            d.add(r.id(), {row, table.width()}, {});
        }
    } else {
        for (std::size_t i = 0; i < table.size(); ++i)
            d.add(table.ids()[i], table.row(i), {});
    }
    return d;
}

std::size_t embedding_width_of(const fs::path& path)
{
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream s(line);
        std::string tok;
        std::size_t n = 0;
        s >> tok;
        while (s >> tok)
            ++n;
        return n;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"xfl: predicts names for binary functions with extreme multi-label learning"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed for every randomized stage");
    app.add_option("--config", g.config, "Pipeline config file (JSON)");
    app.add_option("--tokenizer", g.tokenizer, "Tokenizer config (default: bundled)");
    app.add_flag("--quiet", g.quiet, "Suppress progress messages");

    std::function<int()> action;

    // corpus
    auto* corpus_cmd = app.add_subcommand("corpus", "Validate or split a corpus");
    corpus_cmd->require_subcommand(1);
    std::string corpus_in;
    auto* validate_cmd = corpus_cmd->add_subcommand("validate", "Check a corpus file");
    validate_cmd->add_option("corpus", corpus_in)->required();
    validate_cmd->callback([&] {
        action = [&] {
            LoadReport report;
            try {
                auto corpus = load_corpus(corpus_in, &report);
                std::cout << corpus.size() << " records, " << corpus.binary_ids().size() << " binaries, "
                          << report.warnings.size() << " warnings, " << report.dropped_overlaps
                          << " dropped overlaps\n";
            } catch (const CorpusError& e) {
                std::cerr << "error: " << e.what() << '\n';
                for (const auto& d : e.diagnostics())
                    std::cerr << "  line " << d.line << ": " << d.message << '\n';
                return 1;
            }
            return 0;
        };
    });

    std::string split_out = ".";
    SplitSpec spec;
    std::string grouping = "by_function";
    auto* split_cmd = corpus_cmd->add_subcommand("split", "Split into train/valid/test");
    split_cmd->add_option("corpus", corpus_in)->required();
    split_cmd->add_option("--out-dir", split_out);
    split_cmd->add_option("--train", spec.train);
    split_cmd->add_option("--valid", spec.valid);
    split_cmd->add_option("--test", spec.test);
    split_cmd->add_option("--grouping", grouping)->check(CLI::IsMember({"by_function", "by_binary"}));
    split_cmd->callback([&] {
        action = [&] {
            spec.grouping = parse_grouping(grouping);
            spec.seed = derive_seed(g.seed.value_or(0), "split");
            auto parts = split(load_corpus(corpus_in), spec);
            fs::create_directories(split_out);
            save_corpus(parts.train, fs::path(split_out) / "train.jsonl");
            save_corpus(parts.valid, fs::path(split_out) / "valid.jsonl");
            save_corpus(parts.test, fs::path(split_out) / "test.jsonl");
            std::cout << parts.train.size() << ' ' << parts.valid.size() << ' ' << parts.test.size() << '\n';
            return 0;
        };
    });

    // tokenize
    std::vector<std::string> names;
    bool show_stages = false;
    auto* tok_cmd = app.add_subcommand("tokenize", "Print canonical token sets of function names");
    tok_cmd->add_option("names", names)->required();
    tok_cmd->add_flag("--stages", show_stages, "Also print intermediate stages");
    tok_cmd->callback([&] {
        action = [&] {
            auto tok = make_tokenizer(g);
            for (const auto& n : names) {
                auto tokens = tok.canonical_tokens(n);
                std::cout << n << '\t' << join({tokens.begin(), tokens.end()}, " ") << '\n';
                if (show_stages) {
                    auto stripped = tok.strip_decorations(n);
                    auto segments = split_segments(stripped);
                    std::cout << "  stripped  " << stripped << '\n';
                    std::cout << "  segments  " << join(segments, " ") << '\n';
                    std::cout << "  expanded  " << join(tok.expand_abbreviations(segments), " ") << '\n';
                }
            }
            return 0;
        };
    });

    // labelspace
    auto* ls_cmd = app.add_subcommand("labelspace", "Build a label space");
    ls_cmd->require_subcommand(1);
    std::size_t ls_n = 512;
    std::string ls_out;
    PropensityParams pp;
    bool fit = false;
    auto* ls_build = ls_cmd->add_subcommand("build", "Top-n labels of a training corpus");
    ls_build->add_option("corpus", corpus_in)->required();
    ls_build->add_option("--n", ls_n);
    ls_build->add_option("--out", ls_out)->required();
    ls_build->add_option("--A", pp.A);
    ls_build->add_option("--B", pp.B);
    ls_build->add_flag("--fit-propensity", fit, "Fit A and B to the label frequency distribution");
    ls_build->callback([&] {
        action = [&] {
            auto corpus = load_corpus(corpus_in);
            auto tok = make_tokenizer(g);
            if (fit) {
                auto counts = count_tokens(corpus, tok);
                std::vector<std::uint64_t> c;
                for (std::size_t i = 0; i < std::min(ls_n, counts.size()); ++i)
                    c.push_back(counts[i].second);
                std::vector<double> as, bs;
                for (int i = 1; i <= 20; ++i)
                    as.push_back(0.05 * i);
                for (int i = 0; i <= 60; ++i)
                    bs.push_back(0.05 * i);
                pp = fit_propensity_params(c, corpus.size(), as, bs);
                std::cout << "A=" << pp.A << " B=" << pp.B << '\n';
            }
            auto space = build_label_space(corpus, tok, ls_n, pp);
            space.save(ls_out);
            std::cout << space.size() << " labels, digest " << space.digest() << '\n';
            return 0;
        };
    });

    // featurize
    std::size_t E = 512;
    std::size_t D = std::size_t{1} << 18;
    std::string out_path;
    auto* feat_cmd = app.add_subcommand("featurize", "Compute projected embeddings for a corpus");
    feat_cmd->add_option("corpus", corpus_in)->required();
    feat_cmd->add_option("--E", E, "Embedding width");
    feat_cmd->add_option("--D", D, "Categorical hashing width (power of two)");
    feat_cmd->add_option("--out", out_path)->required();
    feat_cmd->callback([&] {
        action = [&] {
            FeatureConfig fc;
            fc.categorical_width = D;
            fc.seed = derive_seed(g.seed.value_or(0), "featurize");
            auto table = featurize_corpus(load_corpus(corpus_in), fc, E);
            table.save(out_path);
            std::cout << table.size() << " embeddings of width " << table.width() << '\n';
            return 0;
        };
    });

    // train
    std::string ls_path, emb_path, hp_text, valid_path, model_path;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--corpus", corpus_in, "Training corpus (ground truth)")->required();
    train_cmd->add_option("--labelspace", ls_path)->required();
    train_cmd->add_option("--embeddings", emb_path)->required();
    train_cmd->add_option("--valid", valid_path, "Validation corpus for threshold calibration");
    train_cmd->add_option("--hp", hp_text, "Hyper-parameters key=value,...");
    train_cmd->add_option("--out", model_path)->required();
    train_cmd->callback([&] {
        action = [&] {
            auto space = LabelSpace::load(ls_path);
            auto tok = make_tokenizer(g);
            auto hp = HyperParams::parse(hp_text);
            if (g.seed)
                hp.seed = derive_seed(*g.seed, "train");
            auto table = load_embeddings(emb_path, embedding_width_of(emb_path));
            auto data = make_dataset(table, project_ground_truth(load_corpus(corpus_in), space, tok));
            auto model = train(data, space, hp);
            if (!valid_path.empty()) {
                auto valid = make_dataset(table, project_ground_truth(load_corpus(valid_path), space, tok));
                auto c = calibrate_threshold(model, valid);
                std::cout << "threshold " << c.threshold << " (validation F1 " << c.f1 << ")\n";
            } else {
                log::warn("no validation corpus given; threshold left at " + std::to_string(model.threshold));
            }
            model.save(model_path);
            return 0;
        };
    });

    // predict
    std::size_t topk = 5;
    std::optional<std::string> corpus_opt;
    auto* pred_cmd = app.add_subcommand("predict", "Rank labels for every function");
    pred_cmd->add_option("--model", model_path)->required();
    pred_cmd->add_option("--labelspace", ls_path)->required();
    pred_cmd->add_option("--embeddings", emb_path)->required();
    pred_cmd->add_option("--corpus", corpus_opt, "Restrict to (and order by) this corpus");
    pred_cmd->add_option("--topk", topk);
    pred_cmd->add_option("--out", out_path)->required();
    pred_cmd->callback([&] {
        action = [&] {
            auto space = LabelSpace::load(ls_path);
            auto model = XflModel::load(model_path, space);
            auto data = unlabeled(load_embeddings(emb_path, model.width), corpus_opt);
            write_rankings(out_path, model, data, space, topk);
            return 0;
        };
    });

    // evaluate
    std::size_t k = 5;
    std::optional<std::string> train_corpus, plot_path;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a model on a test corpus");
    eval_cmd->add_option("--model", model_path)->required();
    eval_cmd->add_option("--labelspace", ls_path)->required();
    eval_cmd->add_option("--embeddings", emb_path)->required();
    eval_cmd->add_option("--corpus", corpus_in, "Test corpus")->required();
    eval_cmd->add_option("--train", train_corpus, "Training corpus, enables the unseen-name slice");
    eval_cmd->add_option("--k", k);
    eval_cmd->add_option("--out", out_path);
    eval_cmd->add_option("--emit-plot-data", plot_path);
    eval_cmd->callback([&] {
        action = [&] {
            auto space = LabelSpace::load(ls_path);
            auto model = XflModel::load(model_path, space);
            auto tok = make_tokenizer(g);
            auto test = load_corpus(corpus_in);
            auto data = make_dataset(load_embeddings(emb_path, model.width), project_ground_truth(test, space, tok));
            std::vector<bool> mask;
            if (train_corpus)
                mask = unseen_mask(test, load_corpus(*train_corpus), tok);
            auto report = evaluate(model, data, space, k, train_corpus ? &mask : nullptr);
            if (out_path.empty())
                std::cout << report.to_tsv();
            else
                report.write_tsv(out_path);
            if (plot_path)
                report.write_plot_data(*plot_path);
            return 0;
        };
    });

    // lm
    auto* lm_cmd = app.add_subcommand("lm", "Label-order language model");
    lm_cmd->require_subcommand(1);
    std::string names_file;
    auto* lm_train = lm_cmd->add_subcommand("train", "Train on function names (one per line, or a .jsonl corpus)");
    lm_train->add_option("names", names_file)->required();
    lm_train->add_option("--out", out_path)->required();
    lm_train->callback([&] {
        action = [&] {
            auto tok = make_tokenizer(g);
            std::vector<std::vector<std::string>> seqs;
            if (fs::path(names_file).extension() == ".jsonl") {
                seqs = name_sequences(load_corpus(names_file), tok);
            } else {
                std::ifstream in(names_file);
                if (!in)
                    throw Error("cannot read " + names_file);
                std::string line;
                while (std::getline(in, line)) {
                    auto t = ordered_tokens(tok, line);
                    if (!t.empty())
                        seqs.push_back(std::move(t));
                }
            }
            auto lm = TrigramLm::train(seqs);
            lm.save(out_path);
            std::cout << seqs.size() << " sequences, vocabulary " << lm.vocab_size() << '\n';
            return 0;
        };
    });
    std::string lm_path, convention = "snake";
    std::vector<std::string> labels;
    std::uint64_t step_cap = kDefaultStepCap;
    auto* lm_order = lm_cmd->add_subcommand("order", "Order a label set into a name");
    lm_order->add_option("--model", lm_path)->required();
    lm_order->add_option("--labels", labels)->required()->delimiter(',');
    lm_order->add_option("--convention", convention)->check(CLI::IsMember({"snake", "camel"}));
    lm_order->add_option("--step-cap", step_cap);
    lm_order->callback([&] {
        action = [&] {
            auto lm = TrigramLm::load(lm_path);
            auto r = order_labels(lm, labels, step_cap);
            std::cout << render_name(r.sequence, parse_convention(convention)) << '\t' << r.log_score << '\t'
                      << r.steps << " steps" << (r.optimal ? "" : " (step cap reached)") << '\n';
            return 0;
        };
    });

    // pipeline
    std::optional<std::string> pipeline_config;
    auto* pipe_cmd = app.add_subcommand("pipeline", "Run every stage from a config file");
    pipe_cmd->add_option("config", pipeline_config, "Config file (or use --config)");
    pipe_cmd->callback([&] {
        action = [&] {
            auto path = pipeline_config ? pipeline_config : g.config;
            if (!path)
                throw Error("pipeline needs a config file");
            auto cfg = PipelineConfig::load(*path);
            if (g.seed)
                cfg.seed = *g.seed;
            auto result = run_pipeline(cfg);
            for (const auto& s : result.stages)
                std::cout << (s.ran ? "ran     " : "skipped ") << s.name << '\n';
            std::cout << "report: " << result.report.string() << '\n';
            return 0;
        };
    });

    // version
    std::optional<std::string> version_model;
    auto* ver_cmd = app.add_subcommand("version", "Print version information");
    ver_cmd->add_option("--model", version_model, "Also report a model file's format");
    ver_cmd->callback([&] {
        action = [&] {
            std::optional<fs::path> cfg, model;
            if (g.config)
                cfg = *g.config;
            if (version_model)
                model = *version_model;
            std::cout << version_info(cfg, model);
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    log::set_quiet(g.quiet);
    try {
        return action ? action() : 1;
    } catch (const CorpusError& e) {
        std::cerr << "error: " << e.what() << '\n';
        for (const auto& d : e.diagnostics())
            std::cerr << "  line " << d.line << ": " << d.message << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

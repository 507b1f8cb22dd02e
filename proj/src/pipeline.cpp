#include "xfl/pipeline.hpp"

#include "xfl/featurizer.hpp"
#include "xfl/hashing.hpp"
#include "xfl/log.hpp"
#include "xfl/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace xfl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* grouping_name(Grouping g) { return g == Grouping::by_binary ? "by_binary" : "by_function"; }

Grouping parse_grouping(const std::string& s)
{
    if (s == "by_binary")
        return Grouping::by_binary;
    if (s == "by_function")
        return Grouping::by_function;
    throw Error("unknown split grouping '" + s + "' (expected by_function or by_binary)");
}

const char* convention_name(NamingConvention c) { return c == NamingConvention::camel ? "camel" : "snake"; }

} // namespace

PipelineConfig PipelineConfig::from_json(std::string_view text, const fs::path& base_dir)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed pipeline config: ") + e.what());
    }
    if (!j.is_object())
        throw Error("malformed pipeline config: expected an object");

    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    static const std::vector<std::string> known = {
        "corpus",     "out_dir", "tokenizer", "embeddings", "label_space_sizes", "n",     "propensity",
        "embedding_width", "categorical_width", "hyper_params", "seed", "split", "convention", "k",
        "unseen_slice", "step_cap"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            log::warn("pipeline config: ignoring unknown field '" + key + "'");

    PipelineConfig c;
    try {
        if (j.contains("corpus"))
            c.corpus = resolve(j["corpus"].get<std::string>());
        if (j.contains("out_dir"))
            c.out_dir = resolve(j["out_dir"].get<std::string>());
        else if (!base_dir.empty())
            c.out_dir = base_dir / c.out_dir;
        if (j.contains("tokenizer"))
            c.tokenizer = resolve(j["tokenizer"].get<std::string>());
        if (j.contains("embeddings"))
            c.embeddings = resolve(j["embeddings"].get<std::string>());
        if (j.contains("label_space_sizes"))
            c.label_space_sizes = j["label_space_sizes"].get<std::vector<std::size_t>>();
        else if (j.contains("n"))
            c.label_space_sizes = {j["n"].get<std::size_t>()};
        if (j.contains("propensity")) {
            c.propensity.A = j["propensity"].value("A", c.propensity.A);
            c.propensity.B = j["propensity"].value("B", c.propensity.B);
        }
        c.embedding_width = j.value("embedding_width", c.embedding_width);
        c.categorical_width = j.value("categorical_width", c.categorical_width);
        c.hyper_params = j.value("hyper_params", c.hyper_params);
        c.seed = j.value("seed", c.seed);
        if (j.contains("split")) {
            const auto& s = j["split"];
            c.split.train = s.value("train", c.split.train);
            c.split.valid = s.value("valid", c.split.valid);
            c.split.test = s.value("test", c.split.test);
            c.split.grouping = parse_grouping(s.value("grouping", std::string(grouping_name(c.split.grouping))));
        }
        c.convention = parse_convention(j.value("convention", std::string("snake")));
        c.k = j.value("k", c.k);
        c.unseen_slice = j.value("unseen_slice", c.unseen_slice);
        c.step_cap = j.value("step_cap", c.step_cap);
    } catch (const json::exception& e) {
        throw Error(std::string("malformed pipeline config: ") + e.what());
    }
    if (c.label_space_sizes.empty())
        throw Error("pipeline config: label_space_sizes is empty");
    for (auto n : c.label_space_sizes)
        if (n == 0)
            throw Error("pipeline config: label space size must be positive");
    HyperParams::parse(c.hyper_params); // validate early
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read pipeline config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str(), path.parent_path());
}

std::string PipelineConfig::to_json() const
{
    json j;
    j["corpus"] = corpus.string();
    j["out_dir"] = out_dir.string();
    if (tokenizer)
        j["tokenizer"] = tokenizer->string();
    if (embeddings)
        j["embeddings"] = embeddings->string();
    j["label_space_sizes"] = label_space_sizes;
    j["propensity"] = {{"A", propensity.A}, {"B", propensity.B}};
    j["embedding_width"] = embedding_width;
    j["categorical_width"] = categorical_width;
    j["hyper_params"] = hyper_params;
    j["seed"] = seed;
    j["split"] = {{"train", split.train},
                  {"valid", split.valid},
                  {"test", split.test},
                  {"grouping", grouping_name(split.grouping)}};
    j["convention"] = convention_name(convention);
    j["k"] = k;
    j["unseen_slice"] = unseen_slice;
    j["step_cap"] = step_cap;
    return j.dump(2);
}

std::string PipelineConfig::digest() const
{
    return sha256_hex(to_json());
}

bool PipelineResult::all_skipped() const
{
    return std::none_of(stages.begin(), stages.end(), [](const StageOutcome& s) { return s.ran; });
}

void write_rankings(const fs::path& path, const XflModel& model, const Dataset& data, const LabelSpace& space,
                    std::size_t topk)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write rankings " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto ranking = model.predict(data.row(i));
        out << data.ids[i];
        for (std::size_t r = 0; r < std::min(topk, ranking.size()); ++r) {
            std::snprintf(buf, sizeof buf, "%.6f", ranking[r].score);
            out << '\t' << space.label(ranking[r].label) << ':' << buf;
        }
        out << '\n';
    }
    if (!out)
        throw Error("failed writing rankings " + path.string());
}

std::string synthesize_name(const XflModel& model, const LabelSpace& space, const TrigramLm& lm,
                            std::span<const double> x, NamingConvention convention, std::uint64_t step_cap)
{
    auto ranking = model.predict(x);
    std::vector<std::string> labels;
    for (const auto& e : ranking) {
        if (!(e.score > model.threshold) || labels.size() == kMaxOrderingLabels)
            break;
        labels.push_back(space.label(e.label));
    }
    if (labels.empty())
        return {};
    auto ordered = order_labels(lm, labels, step_cap);
    return render_name(ordered.sequence, convention);
}

std::vector<std::vector<std::string>> name_sequences(const Corpus& corpus, const Tokenizer& tokenizer)
{
    std::vector<std::vector<std::string>> out;
    out.reserve(corpus.size());
    for (const auto& r : corpus.records()) {
        auto t = ordered_tokens(tokenizer, r.name);
        if (!t.empty())
            out.push_back(std::move(t));
    }
    return out;
}

std::string version_info(const std::optional<fs::path>& config, const std::optional<fs::path>& model)
{
    std::ostringstream out;
    out << "xfl " << kToolVersion << '\n';
    out << "model format " << kModelFormatVersion << '\n';
    out << "feature layout " << kFeatureLayoutVersion << '\n';
    if (config)
        out << "config digest " << PipelineConfig::load(*config).digest() << '\n';
    if (model) {
        auto h = XflModel::read_header(*model);
        out << "model file format " << h.format_version << " (feature layout " << h.feature_layout_version
            << ", label space " << h.label_space_digest << ")\n";
    }
    return out.str();
}

namespace {

std::string tokenizer_fingerprint(const TokenizerConfig& cfg)
{
    std::vector<std::string> words(cfg.dictionary.begin(), cfg.dictionary.end());
    std::sort(words.begin(), words.end());
    Sha256Builder h;
    for (const auto& p : cfg.decoration_patterns)
        h.update("p:").update(p).update("\n");
    for (const auto& [abbr, expansion] : cfg.abbreviation_map) {
        h.update("a:").update(abbr);
        for (const auto& w : expansion)
            h.update(" ").update(w);
        h.update("\n");
    }
    for (const auto& w : words)
        h.update(w).update("\n");
    h.update("min:" + std::to_string(cfg.min_word_len));
    return to_hex(h.finish());
}

class StageRunner {
public:
    StageRunner(fs::path stamp_dir, PipelineResult& result) : dir_(std::move(stamp_dir)), result_(result)
    {
        fs::create_directories(dir_);
    }

    void run(const std::string& name, const std::string& key, const std::vector<fs::path>& outputs,
             const std::function<void()>& body)
    {
        const fs::path stamp = dir_ / (name + ".stamp");
        if (up_to_date(stamp, key, outputs)) {
            log::info("stage " + name + ": up to date");
            result_.stages.push_back({name, false});
            return;
        }
        log::info("stage " + name + ": running");
        try {
            for (const auto& o : outputs)
                fs::create_directories(o.parent_path());
            body();
            std::ofstream out(stamp, std::ios::binary | std::ios::trunc);
            out << key << '\n';
            for (const auto& o : outputs)
                out << sha256_file_hex(o.string()) << ' ' << o.filename().string() << '\n';
            if (!out)
                throw Error("cannot write stamp " + stamp.string());
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(name, e.what());
        }
        result_.stages.push_back({name, true});
    }

private:
    static bool up_to_date(const fs::path& stamp, const std::string& key, const std::vector<fs::path>& outputs)
    {
        std::ifstream in(stamp);
        std::string line;
        if (!in || !std::getline(in, line) || line != key)
            return false;
        for (const auto& o : outputs) {
            if (!std::getline(in, line) || !fs::exists(o))
                return false;
            if (line.substr(0, line.find(' ')) != sha256_file_hex(o.string()))
                return false;
        }
        return true;
    }

    fs::path dir_;
    PipelineResult& result_;
};

std::string file_sha(const fs::path& p) { return sha256_file_hex(p.string()); }

class KeyBuilder {
public:
    KeyBuilder& add(std::string_view field, std::string_view value)
    {
        text_.append(field).append("=").append(value).append("\n");
        return *this;
    }
    template <class T>
    KeyBuilder& num(std::string_view field, T value)
    {
        std::ostringstream s;
        s.precision(17);
        s << value;
        return add(field, s.str());
    }
    std::string str() const { return sha256_hex(text_); }

private:
    std::string text_;
};

Dataset dataset_for(const fs::path& corpus_path, const LabelSpace& space, const Tokenizer& tokenizer,
                    const EmbeddingTable& embeddings)
{
    auto corpus = load_corpus(corpus_path);
    return make_dataset(embeddings, project_ground_truth(corpus, space, tokenizer));
}

} // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg)
{
    PipelineResult result;
    if (cfg.corpus.empty())
        throw StageError("split", "no corpus path configured");
    if (!fs::exists(cfg.corpus))
        throw StageError("split", "corpus file " + cfg.corpus.string() + " does not exist");
    if (cfg.embeddings && !fs::exists(*cfg.embeddings))
        throw StageError("featurize", "embedding file " + cfg.embeddings->string() + " does not exist");

    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    StageRunner runner(out / ".stamps", result);

    std::optional<Tokenizer> tokenizer;
    try {
        tokenizer.emplace(cfg.tokenizer ? TokenizerConfig::load(*cfg.tokenizer) : TokenizerConfig::load_default());
    } catch (const std::exception& e) {
        throw StageError("tokenizer", e.what());
    }
    const std::string tok_fp = tokenizer_fingerprint(tokenizer->config());
    HyperParams hp;
    try {
        hp = HyperParams::parse(cfg.hyper_params);
    } catch (const std::exception& e) {
        throw StageError("train", e.what());
    }
    hp.seed = derive_seed(cfg.seed, "train");

    const std::string corpus_sha = file_sha(cfg.corpus);
    const fs::path train_path = out / "split" / "train.jsonl";
    const fs::path valid_path = out / "split" / "valid.jsonl";
    const fs::path test_path = out / "split" / "test.jsonl";

    runner.run("split",
               KeyBuilder()
                   .add("corpus", corpus_sha)
                   .num("train", cfg.split.train)
                   .num("valid", cfg.split.valid)
                   .num("test", cfg.split.test)
                   .add("grouping", grouping_name(cfg.split.grouping))
                   .num("seed", cfg.seed)
                   .str(),
               {train_path, valid_path, test_path}, [&] {
                   auto corpus = load_corpus(cfg.corpus);
                   SplitSpec spec = cfg.split;
                   spec.seed = derive_seed(cfg.seed, "split");
                   auto parts = split(corpus, spec);
                   save_corpus(parts.train, train_path);
                   save_corpus(parts.valid, valid_path);
                   save_corpus(parts.test, test_path);
               });
    const std::string train_sha = file_sha(train_path);
    const std::string valid_sha = file_sha(valid_path);
    const std::string test_sha = file_sha(test_path);

    fs::path emb_path = out / "embeddings.txt";
    if (cfg.embeddings) {
        emb_path = *cfg.embeddings;
    } else {
        runner.run("featurize",
                   KeyBuilder()
                       .add("corpus", corpus_sha)
                       .num("E", cfg.embedding_width)
                       .num("D", cfg.categorical_width)
                       .num("seed", cfg.seed)
                       .num("layout", kFeatureLayoutVersion)
                       .str(),
                   {emb_path}, [&] {
                       FeatureConfig fc;
                       fc.categorical_width = cfg.categorical_width;
                       fc.seed = derive_seed(cfg.seed, "featurize");
                       featurize_corpus(load_corpus(cfg.corpus), fc, cfg.embedding_width).save(emb_path);
                   });
    }
    const std::string emb_sha = file_sha(emb_path);
    std::optional<EmbeddingTable> embeddings;
    auto get_embeddings = [&]() -> const EmbeddingTable& {
        if (!embeddings)
            embeddings = load_embeddings(emb_path, cfg.embedding_width, nullptr,
                                         cfg.embeddings ? Provenance::external : Provenance::projected);
        return *embeddings;
    };

    const fs::path lm_path = out / "lm.txt";
    runner.run("lm", KeyBuilder().add("train", train_sha).add("tokenizer", tok_fp).str(), {lm_path}, [&] {
        TrigramLm::train(name_sequences(load_corpus(train_path), *tokenizer)).save(lm_path);
    });
    const std::string lm_sha = file_sha(lm_path);

    std::vector<fs::path> reports;
    for (std::size_t n : cfg.label_space_sizes) {
        const fs::path dir = out / ("n" + std::to_string(n));
        const std::string tag = "[" + std::to_string(n) + "]";
        const fs::path ls_path = dir / "labelspace.json";
        const fs::path model_path = dir / "model.bin";
        const fs::path rank_path = dir / "rankings.tsv";
        const fs::path report_path = dir / "report.tsv";
        const fs::path names_path = dir / "names.tsv";

        runner.run("labelspace" + tag,
                   KeyBuilder()
                       .add("train", train_sha)
                       .add("tokenizer", tok_fp)
                       .num("n", n)
                       .num("A", cfg.propensity.A)
                       .num("B", cfg.propensity.B)
                       .str(),
                   {ls_path}, [&] {
                       build_label_space(load_corpus(train_path), *tokenizer, n, cfg.propensity).save(ls_path);
                   });
        const std::string ls_sha = file_sha(ls_path);
        std::optional<LabelSpace> space;
        auto get_space = [&]() -> const LabelSpace& {
            if (!space)
                space = LabelSpace::load(ls_path);
            return *space;
        };

        runner.run("train" + tag,
                   KeyBuilder()
                       .add("labelspace", ls_sha)
                       .add("embeddings", emb_sha)
                       .add("train", train_sha)
                       .add("valid", valid_sha)
                       .add("tokenizer", tok_fp)
                       .add("hp", hp.to_string())
                       .num("format", kModelFormatVersion)
                       .str(),
                   {model_path}, [&] {
                       auto train_set = dataset_for(train_path, get_space(), *tokenizer, get_embeddings());
                       auto valid_set = dataset_for(valid_path, get_space(), *tokenizer, get_embeddings());
                       auto model = train(train_set, get_space(), hp);
                       auto cal = calibrate_threshold(model, valid_set);
                       log::info("calibrated threshold " + std::to_string(cal.threshold) + " (validation F1 " +
                                 std::to_string(cal.f1) + ")");
                       model.save(model_path);
                   });
        const std::string model_sha = file_sha(model_path);
        std::optional<XflModel> model;
        std::optional<Dataset> test_set;
        auto get_model = [&]() -> const XflModel& {
            if (!model)
                model = XflModel::load(model_path, get_space());
            return *model;
        };
        auto get_test = [&]() -> const Dataset& {
            if (!test_set)
                test_set = dataset_for(test_path, get_space(), *tokenizer, get_embeddings());
            return *test_set;
        };

        runner.run("predict" + tag,
                   KeyBuilder().add("model", model_sha).add("embeddings", emb_sha).add("test", test_sha)
                       .add("tokenizer", tok_fp).num("k", cfg.k).str(),
                   {rank_path}, [&] { write_rankings(rank_path, get_model(), get_test(), get_space(), cfg.k); });

        runner.run("evaluate" + tag,
                   KeyBuilder()
                       .add("model", model_sha)
                       .add("embeddings", emb_sha)
                       .add("test", test_sha)
                       .add("train", train_sha)
                       .add("tokenizer", tok_fp)
                       .num("k", cfg.k)
                       .num("unseen", cfg.unseen_slice)
                       .str(),
                   {report_path}, [&] {
                       std::vector<bool> mask;
                       if (cfg.unseen_slice)
                           mask = unseen_mask(load_corpus(test_path), load_corpus(train_path), *tokenizer);
                       auto report = evaluate(get_model(), get_test(), get_space(), cfg.k,
                                              cfg.unseen_slice ? &mask : nullptr);
                       report.write_tsv(report_path);
                   });
        reports.push_back(report_path);

        runner.run("names" + tag,
                   KeyBuilder()
                       .add("model", model_sha)
                       .add("lm", lm_sha)
                       .add("embeddings", emb_sha)
                       .add("test", test_sha)
                       .add("tokenizer", tok_fp)
                       .add("convention", convention_name(cfg.convention))
                       .num("k", cfg.k)
                       .num("step_cap", cfg.step_cap)
                       .str(),
                   {names_path}, [&] {
                       auto lm = TrigramLm::load(lm_path);
                       const auto& m = get_model();
                       const auto& data = get_test();
                       std::ofstream o(names_path, std::ios::binary | std::ios::trunc);
                       if (!o)
                           throw Error("cannot write " + names_path.string());
                       char buf[32];
                       for (std::size_t i = 0; i < data.size(); ++i) {
                           o << data.ids[i] << '\t'
                             << synthesize_name(m, get_space(), lm, data.row(i), cfg.convention, cfg.step_cap);
                           auto ranking = m.predict(data.row(i));
                           for (std::size_t r = 0; r < std::min(cfg.k, ranking.size()); ++r) {
                               std::snprintf(buf, sizeof buf, "%.6f", ranking[r].score);
                               o << '\t' << get_space().label(ranking[r].label) << ':' << buf;
                           }
                           o << '\n';
                       }
                   });
    }

    const fs::path report_path = out / "report.tsv";
    const fs::path plot_path = out / "plot_data.tsv";
    KeyBuilder report_key;
    for (const auto& r : reports)
        report_key.add(r.parent_path().filename().string(), file_sha(r));
    runner.run("report", report_key.str(), {report_path, plot_path}, [&] {
        std::ofstream o(report_path, std::ios::binary | std::ios::trunc);
        EvalReport merged;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            std::ifstream in(reports[i]);
            std::string line;
            std::getline(in, line); // header
            if (i == 0)
                o << line << '\n';
            while (std::getline(in, line)) {
                o << line << '\n';
                std::istringstream fields(line);
                ReportRow row;
                std::string n, v;
                std::getline(fields, row.metric, '\t');
                std::getline(fields, n, '\t');
                std::getline(fields, row.slice, '\t');
                std::getline(fields, v, '\t');
                row.label_space = std::stoull(n);
                row.value = std::stod(v);
                merged.rows.push_back(row);
            }
        }
        merged.write_plot_data(plot_path);
    });
    result.report = report_path;
    return result;
}

} // namespace xfl

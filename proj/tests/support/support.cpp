#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace xfl::testing {

namespace {

const std::vector<std::string> kMnemonics = {
    "mov",  "lea",  "add",  "sub",   "imul", "xor",   "and",   "or",   "shl",   "shr",  "cmp",
    "test", "je",   "jne",  "jg",    "jl",   "jmp",   "call",  "push", "pop",   "inc",  "dec",
    "movzx", "movsx", "cmovne", "sete", "setne", "neg", "not", "sar",  "movss", "addsd", "mulsd",
    "cvtsi2sd", "pxor", "movdqa", "rep", "bt", "bsr", "xchg", "cdq", "idiv", "div", "nop"};

const std::vector<std::string> kImports = {
    "malloc", "free",   "memcpy",  "memset",  "strlen", "strcmp",  "fopen",  "fclose",  "fread",
    "fwrite", "socket", "connect", "send",    "recv",   "pthread_mutex_lock", "pthread_mutex_unlock",
    "printf", "snprintf", "qsort", "bsearch", "time",   "getenv",  "open",   "close",   "read",
    "write",  "realloc", "calloc", "strtol",  "sprintf", "puts",   "exit"};

std::vector<std::string> motif(const std::string& token)
{
    SplitMix64 r(hash_bytes(token, 0x6d6f746966));
    std::vector<std::string> out;
    const std::size_t len = 8 + r.below(5);
    for (std::size_t i = 0; i < len; ++i)
        out.push_back(kMnemonics[r.below(kMnemonics.size())]);
    return out;
}

OperandKind kind_of(const std::string& mnemonic, std::size_t pos)
{
    if (mnemonic == "push" || mnemonic == "pop" || mnemonic == "inc" || mnemonic == "dec")
        return OperandKind::reg;
    if (mnemonic == "lea" || mnemonic.rfind("mov", 0) == 0)
        return pos == 0 ? OperandKind::reg : OperandKind::mem;
    return pos == 0 ? OperandKind::reg : OperandKind::imm;
}

double normal(SplitMix64& r)
{
    double u1 = r.uniform();
    double u2 = r.uniform();
    if (u1 < 1e-300)
        u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string join_snake(const std::vector<std::string>& tokens)
{
    std::string s;
    for (const auto& t : tokens) {
        if (!s.empty())
            s += '_';
        s += t;
    }
    return s;
}

} // namespace

const std::vector<std::string>& fixture_vocabulary()
{
    static const std::vector<std::string> v = {
        "read",   "write",  "open",    "close",   "buffer", "socket", "file",    "string", "list",
        "node",   "tree",   "hash",    "table",   "parse",  "print",  "format",  "free",   "create",
        "destroy", "lock",  "unlock",  "send",    "receive", "update", "insert", "delete", "find",
        "copy",   "compare", "length", "size",    "count",  "error",  "message", "load",   "save",
        "start",  "stop",   "reset",   "check",   "event",  "handle", "signal",  "thread", "queue",
        "push",   "pop",    "sort",    "search",  "match",  "path",   "name",    "value",  "key",
        "entry",  "header", "packet",  "stream",  "input",  "output", "time",    "user",   "memory",
        "cache",  "image",  "color",   "point",   "window", "menu",   "text",    "block",  "page"};
    return v;
}

FunctionRecord fixture_record(const std::string& binary, const std::vector<std::string>& tokens, std::uint64_t vaddr,
                              SplitMix64& rng, double noise)
{
    FunctionRecord r;
    r.binary_id = binary;
    r.name = join_snake(tokens);
    r.vaddr = vaddr;
    r.opcodes = {"push", "mov", "sub"};
    for (const auto& t : tokens) {
        for (const auto& m : motif(t)) {
            if (rng.uniform() < noise)
                r.opcodes.push_back(kMnemonics[rng.below(kMnemonics.size())]);
            r.opcodes.push_back(m);
        }
        const std::uint64_t h = hash_bytes(t, 0x636f6e7374);
        r.constants.emplace_back(static_cast<std::int64_t>(h % 4096));
        r.constants.emplace_back(t + "_tag");
        r.dynamic_callees.push_back(kImports[h % kImports.size()]);
        r.dynamic_callees.push_back(kImports[(h >> 20) % kImports.size()]);
        r.stack_bytes += 8 * (h % 5);
        r.num_args += (h >> 8) % 2;
    }
    r.opcodes.insert(r.opcodes.end(), {"leave", "ret"});
    for (const auto& m : r.opcodes) {
        auto& kinds = r.operand_kinds.emplace_back();
        if (m == "ret" || m == "leave" || m == "nop" || m == "cdq" || m == "rep")
            continue;
        kinds.push_back(kind_of(m, 0));
        if (m != "push" && m != "pop" && m != "inc" && m != "dec" && m != "not" && m != "neg" && m[0] != 'j' &&
            m != "call" && m != "idiv" && m != "div")
            kinds.push_back(kind_of(m, 1));
    }
    std::sort(r.dynamic_callees.begin(), r.dynamic_callees.end());
    r.dynamic_callees.erase(std::unique(r.dynamic_callees.begin(), r.dynamic_callees.end()), r.dynamic_callees.end());
    r.size = 4 * r.opcodes.size();
    r.local_bytes = r.stack_bytes / 2;
    std::size_t branches = 0;
    for (const auto& m : r.opcodes)
        branches += (m[0] == 'j') ? 1 : 0;
    r.cfg_nodes = 1 + branches;
    r.cfg_edges = 2 * branches;
    return r;
}

Corpus make_fixture_corpus(const FixtureOptions& options)
{
    SplitMix64 rng(options.seed);
    const auto& vocab = fixture_vocabulary();
    std::vector<FunctionRecord> records;
    for (std::size_t b = 0; b < options.binaries; ++b) {
        const std::string binary = "bin" + std::to_string(b);
        std::set<std::string> used;
        std::uint64_t vaddr = 0x401000;
        std::size_t first = records.size();
        while (records.size() - first < options.functions_per_binary) {
            std::vector<std::string> tokens;
            const std::size_t n = 2 + rng.below(2);
            while (tokens.size() < n) {
                const auto& t = vocab[rng.below(vocab.size())];
                if (std::find(tokens.begin(), tokens.end(), t) == tokens.end())
                    tokens.push_back(t);
            }
            if (!used.insert(join_snake(tokens)).second)
                continue;
            auto rec = fixture_record(binary, tokens, vaddr, rng, options.noise);
            vaddr += rec.size + 16;
            records.push_back(std::move(rec));
        }
        // Static call edges inside the binary plus one external callee.
        for (std::size_t i = first; i < records.size(); ++i) {
            const std::size_t calls = rng.below(3);
            for (std::size_t c = 0; c < calls; ++c) {
                std::size_t j = first + rng.below(records.size() - first);
                if (j == i)
                    continue;
                if (std::find(records[i].callees.begin(), records[i].callees.end(), records[j].name) !=
                    records[i].callees.end())
                    continue;
                records[i].callees.push_back(records[j].name);
                records[j].callers.push_back(records[i].name);
            }
            records[i].callees.push_back("printf");
        }
    }
    return Corpus(std::move(records));
}

UnseenFixture make_unseen_fixture(std::uint64_t seed)
{
    SplitMix64 rng(seed);
    const auto& vocab = fixture_vocabulary();
    const std::size_t V = 16;
    std::vector<FunctionRecord> train, valid, test;
    std::vector<std::uint64_t> vaddr(6, 0x401000);
    auto emit = [&](std::vector<FunctionRecord>& out, std::size_t bin, const std::vector<std::string>& tokens) {
        auto rec = fixture_record("unseen" + std::to_string(bin), tokens, vaddr[bin], rng, 0.1);
        vaddr[bin] += rec.size + 16;
        out.push_back(std::move(rec));
    };
    for (std::size_t i = 0; i < V; ++i) {
        for (std::size_t j = i + 1; j < V; ++j) {
            std::vector<std::string> tokens = {vocab[i], vocab[j]};
            if ((i + j) % 4 == 0) {
                emit(test, 5, tokens);
            } else {
                for (std::size_t b = 0; b < 3; ++b)
                    emit(train, b, tokens);
                emit(valid, 3, tokens);
            }
        }
    }
    return {Corpus(std::move(train)), Corpus(std::move(valid)), Corpus(std::move(test))};
}

Dataset gaussian_clusters(std::size_t clusters, std::size_t per_cluster, std::size_t width, double spread,
                          std::uint64_t seed, const std::string& id_prefix)
{
    // Centers are fixed by a seed independent of the sampling seed, so
    // train and test sets drawn with different seeds share them.
    SplitMix64 centers_rng(0x63656e74657273);
    std::vector<std::vector<double>> centers(clusters, std::vector<double>(width));
    for (auto& c : centers)
        for (auto& v : c)
            v = 4.0 * normal(centers_rng);
    SplitMix64 rng(seed);
    Dataset d;
    d.width = width;
    std::vector<double> row(width);
    for (std::size_t i = 0; i < clusters * per_cluster; ++i) {
        const std::size_t c = i % clusters;
        for (std::size_t j = 0; j < width; ++j)
            row[j] = centers[c][j] + spread * normal(rng);
        d.add(id_prefix + std::to_string(i), row, {static_cast<LabelId>(c)});
    }
    return d;
}

LabelSpace uniform_space(std::size_t labels, std::uint64_t count_each)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < labels; ++i)
        names.push_back("c" + std::to_string(i));
    return LabelSpace(names, std::vector<std::uint64_t>(labels, count_each), labels * count_each, {});
}

std::vector<std::vector<std::string>> lm_name_corpus(std::size_t names, std::uint64_t seed)
{
    static const std::vector<std::string> verbs = {"get",   "set",    "init",  "free",   "read",  "write",
                                                   "open",  "close",  "create", "destroy", "parse", "print"};
    static const std::vector<std::string> objects = {"buffer", "file",   "socket", "node",  "list",
                                                     "string", "config", "value",  "table", "entry"};
    static const std::vector<std::string> prefixes = {"mcx", "xml", "png", "ssl", "gtk"};
    static const std::vector<std::string> suffixes = {"size", "count", "length", "name"};
    SplitMix64 rng(seed);
    auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
    std::vector<std::vector<std::string>> out;
    while (out.size() < names) {
        const double u = rng.uniform();
        std::vector<std::string> s;
        if (u < 0.35)
            s = {pick(verbs), pick(objects)};
        else if (u < 0.55)
            s = {pick(prefixes), pick(verbs), pick(objects)};
        else if (u < 0.72)
            s = {pick(verbs), pick(objects), pick(suffixes)};
        else if (u < 0.82)
            s = {pick(objects), pick(verbs)};
        else if (u < 0.9)
            s = {pick(prefixes), pick(objects), pick(verbs), pick(suffixes)};
        else if (u < 0.95)
            s = {pick(prefixes), "realloc"};
        else
            s = {pick(prefixes), pick(verbs), pick(objects), pick(suffixes)};
        std::vector<std::string> dedup;
        for (auto& t : s)
            if (std::find(dedup.begin(), dedup.end(), t) == dedup.end())
                dedup.push_back(t);
        out.push_back(std::move(dedup));
    }
    return out;
}

namespace {

struct Step {
    std::size_t node;
    bool right;
};

void collect_paths(const Tree& t, std::size_t node, std::vector<Step>& path,
                   std::vector<std::pair<std::vector<Step>, std::size_t>>& out)
{
    const auto& n = t.nodes[node];
    if (n.is_leaf()) {
        out.emplace_back(path, node);
        return;
    }
    path.push_back({node, false});
    collect_paths(t, static_cast<std::size_t>(n.left), path, out);
    path.back().right = true;
    collect_paths(t, static_cast<std::size_t>(n.right), path, out);
    path.pop_back();
}

double dense_margin(const SparseLinear& s, std::span<const double> x)
{
    std::vector<double> w(x.size(), 0.0);
    for (std::size_t i = 0; i < s.index.size(); ++i)
        w[s.index[i]] = s.weight[i];
    double m = s.bias;
    for (std::size_t i = 0; i < x.size(); ++i)
        m += w[i] * x[i];
    return m;
}

} // namespace

std::size_t oracle_leaf(const Tree& t, std::span<const double> x)
{
    std::vector<Step> path;
    std::vector<std::pair<std::vector<Step>, std::size_t>> paths;
    collect_paths(t, 0, path, paths);
    std::size_t found = 0, hits = 0;
    for (const auto& [steps, leaf] : paths) {
        bool ok = std::all_of(steps.begin(), steps.end(), [&](const Step& s) {
            return (dense_margin(t.nodes[s.node].separator, x) > 0.0) == s.right;
        });
        if (ok) {
            found = leaf;
            ++hits;
        }
    }
    if (hits != 1)
        throw Error("routing oracle: " + std::to_string(hits) + " matching paths");
    return found;
}

std::vector<double> oracle_tree_scores(const XflModel& model, std::span<const double> x)
{
    std::vector<double> s(model.num_labels, 0.0);
    for (const auto& t : model.trees)
        for (const auto& e : t.nodes[oracle_leaf(t, x)].leaf)
            s[e.label] += e.score;
    for (auto& v : s)
        v /= static_cast<double>(model.trees.size());
    return s;
}

namespace ref {

namespace {
bool in(const std::vector<std::uint32_t>& v, std::uint32_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }
} // namespace

double cg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k)
{
    double s = 0;
    for (std::size_t i = 0; i < k && i < ranked.size(); ++i)
        s += in(truth, ranked[i]) ? 1 : 0;
    return s;
}

double dcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k)
{
    double s = 0;
    for (std::size_t i = 0; i < k && i < ranked.size(); ++i)
        if (in(truth, ranked[i]))
            s += 1.0 / std::log2(i + 2.0);
    return s;
}

double ndcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k)
{
    double ideal = 0;
    for (std::size_t i = 0; i < k && i < truth.size(); ++i)
        ideal += 1.0 / std::log2(i + 2.0);
    return ideal == 0 ? 0 : dcg(ranked, truth, k) / ideal;
}

double psdcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth,
             const std::vector<double>& propensity, std::size_t k)
{
    double s = 0;
    for (std::size_t i = 0; i < k && i < ranked.size(); ++i)
        if (in(truth, ranked[i]))
            s += 1.0 / (propensity[ranked[i]] * std::log2(i + 2.0));
    return s;
}

Prf micro(const std::vector<std::vector<std::uint32_t>>& predicted,
          const std::vector<std::vector<std::uint32_t>>& truth)
{
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        for (auto l : predicted[i])
            (in(truth[i], l) ? tp : fp) += 1;
        for (auto l : truth[i])
            fn += in(predicted[i], l) ? 0 : 1;
    }
    Prf r{};
    r.p = tp + fp > 0 ? tp / (tp + fp) : 0;
    r.r = tp + fn > 0 ? tp / (tp + fn) : 0;
    r.f1 = r.p + r.r > 0 ? 2 * r.p * r.r / (r.p + r.r) : 0;
    return r;
}

} // namespace ref

TempDir::TempDir(const std::string& tag)
{
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir()
{
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace xfl::testing

#include "xfl/featurizer.hpp"

#include "xfl/hashing.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

namespace xfl {

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p)
{
    return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

std::string lowercase(std::string_view s)
{
    std::string out(s);
    for (auto& c : out)
        if (c >= 'A' && c <= 'Z')
            c = static_cast<char>(c - 'A' + 'a');
    return out;
}

const std::array<std::array<std::string_view, 4>, 16> kRegisterAliases = {{
    {"rax", "eax", "ax", "al"},   {"rbx", "ebx", "bx", "bl"},   {"rcx", "ecx", "cx", "cl"},
    {"rdx", "edx", "dx", "dl"},   {"rsi", "esi", "si", "sil"},  {"rdi", "edi", "di", "dil"},
    {"rbp", "ebp", "bp", "bpl"},  {"rsp", "esp", "sp", "spl"},  {"r8", "r8d", "r8w", "r8b"},
    {"r9", "r9d", "r9w", "r9b"},  {"r10", "r10d", "r10w", "r10b"}, {"r11", "r11d", "r11w", "r11b"},
    {"r12", "r12d", "r12w", "r12b"}, {"r13", "r13d", "r13w", "r13b"}, {"r14", "r14d", "r14w", "r14b"},
    {"r15", "r15d", "r15w", "r15b"},
}};

int register_slot(std::string_view name)
{
    std::string n = lowercase(name);
    for (std::size_t i = 0; i < kRegisterAliases.size(); ++i)
        for (auto alias : kRegisterAliases[i])
            if (n == alias)
                return static_cast<int>(i);
    return -1;
}

std::string constant_text(const Constant& c)
{
    if (const auto* i = std::get_if<std::int64_t>(&c))
        return "i:" + std::to_string(*i);
    return "s:" + std::get<std::string>(c);
}

} // namespace

OpcodeClass classify_opcode(std::string_view raw)
{
    std::string m = lowercase(raw);
    std::string_view s = m;
    if (s == "nop" || starts_with(s, "nop") || starts_with(s, "endbr"))
        return OpcodeClass::nop;
    if (starts_with(s, "jmp"))
        return OpcodeClass::jump;
    if (starts_with(s, "j"))
        return OpcodeClass::cond_jump;
    if (starts_with(s, "call"))
        return OpcodeClass::call;
    if (starts_with(s, "ret") || s == "iret" || s == "iretq")
        return OpcodeClass::ret;
    if (starts_with(s, "loop") || starts_with(s, "rep"))
        return OpcodeClass::loop;
    if (s == "syscall" || s == "sysenter" || s == "int" || s == "int3" || s == "hlt" || s == "ud2")
        return OpcodeClass::syscall;
    if (s == "push" || s == "pop" || s == "leave" || s == "enter" || starts_with(s, "push") ||
        starts_with(s, "pop"))
        return OpcodeClass::stack;
    static const std::set<std::string_view> arith = {"add", "sub", "mul", "imul", "div", "idiv", "inc",
                                                     "dec", "neg", "adc", "sbb", "xadd"};
    if (arith.contains(s))
        return OpcodeClass::arith;
    static const std::set<std::string_view> logic = {"and", "or", "xor", "not", "shl", "shr", "sal", "sar",
                                                     "rol", "ror", "rcl", "rcr", "bt", "bts", "btr", "btc",
                                                     "andn", "shld", "shrd"};
    if (logic.contains(s))
        return OpcodeClass::logic;
    if (s == "cmp" || s == "test" || starts_with(s, "cmpxchg") || starts_with(s, "cmps"))
        return OpcodeClass::compare;
    if (starts_with(s, "mov") || starts_with(s, "cmov") || starts_with(s, "set") || s == "lea" ||
        s == "xchg" || s == "cbw" || s == "cwde" || s == "cdqe" || s == "cdq" || s == "cqo" ||
        starts_with(s, "stos") || starts_with(s, "lods"))
        return OpcodeClass::move;
    if (starts_with(s, "f") || starts_with(s, "v") || starts_with(s, "p") || ends_with(s, "ss") ||
        ends_with(s, "sd") || ends_with(s, "ps") || ends_with(s, "pd"))
        return OpcodeClass::floating;
    return OpcodeClass::other;
}

double SparseVector::at(std::uint64_t index) const
{
    auto it = std::lower_bound(indices.begin(), indices.end(), index);
    if (it == indices.end() || *it != index)
        return 0.0;
    return values[static_cast<std::size_t>(it - indices.begin())];
}

SparseVector SparseVector::from_pairs(std::vector<std::pair<std::uint64_t, double>> pairs)
{
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseVector v;
    for (std::size_t i = 0; i < pairs.size();) {
        std::uint64_t idx = pairs[i].first;
        double sum = 0.0;
        for (; i < pairs.size() && pairs[i].first == idx; ++i)
            sum += pairs[i].second;
        if (sum != 0.0) {
            v.indices.push_back(idx);
            v.values.push_back(sum);
        }
    }
    return v;
}

std::vector<std::size_t> reachable_functions(const Corpus& corpus, std::size_t start, std::size_t max_depth)
{
    std::vector<std::size_t> out;
    std::unordered_set<std::size_t> seen{start};
    std::deque<std::pair<std::size_t, std::size_t>> queue{{start, 0}};
    while (!queue.empty()) {
        auto [cur, depth] = queue.front();
        queue.pop_front();
        if (depth == max_depth)
            continue;
        const auto& rec = corpus[cur];
        for (const auto& callee : rec.callees) {
            auto idx = corpus.resolve(rec, callee);
            if (!idx || !seen.insert(*idx).second)
                continue;
            out.push_back(*idx);
            queue.emplace_back(*idx, depth + 1);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> quantitative_features(const FunctionRecord& r, const Corpus* corpus, std::size_t reach_depth)
{
    std::vector<double> q(kQuantitativeWidth, 0.0);
    auto d = [](auto v) { return static_cast<double>(v); };

    q[qslot::size_bytes] = d(r.size);
    q[qslot::instructions] = d(r.opcodes.size());
    std::set<std::string_view> distinct;
    for (const auto& op : r.opcodes) {
        q[qslot::opclass_first + static_cast<std::size_t>(classify_opcode(op))] += 1.0;
        q[qslot::opcode_histogram_first +
          hash_bytes(lowercase(op), 0x6f70636f6465ULL) % (qslot::opcode_histogram_last - qslot::opcode_histogram_first + 1)] += 1.0;
        distinct.insert(op);
    }
    q[qslot::distinct_opcodes] = d(distinct.size());
    for (const auto& insn : r.operand_kinds) {
        for (auto k : insn) {
            switch (k) {
            case OperandKind::reg: q[qslot::operand_register] += 1.0; break;
            case OperandKind::imm: q[qslot::operand_immediate] += 1.0; break;
            case OperandKind::mem: q[qslot::operand_memory] += 1.0; break;
            }
        }
    }

    q[qslot::callers] = d(r.callers.size());
    q[qslot::callees] = d(r.callees.size());
    q[qslot::dynamic_callees] = d(r.dynamic_callees.size());
    q[qslot::cfg_nodes] = d(r.cfg_nodes);
    q[qslot::cfg_edges] = d(r.cfg_edges);
    if (r.cfg_nodes > 0) {
        q[qslot::cfg_cyclomatic] = std::max(0.0, d(r.cfg_edges) - d(r.cfg_nodes) + 2.0);
        q[qslot::cfg_mean_degree] = 2.0 * d(r.cfg_edges) / d(r.cfg_nodes);
    }
    if (corpus != nullptr) {
        if (auto self = corpus->index_of(r.id())) {
            q[qslot::reachable] = d(reachable_functions(*corpus, *self, reach_depth).size());
        }
        std::size_t in = 0;
        std::size_t out = 0;
        for (const auto& c : r.callers)
            in += corpus->resolve(r, c).has_value() ? 1 : 0;
        for (const auto& c : r.callees)
            out += corpus->resolve(r, c).has_value() ? 1 : 0;
        q[qslot::callers_internal] = d(in);
        q[qslot::callees_internal] = d(out);
        q[qslot::callees_external] = d(r.callees.size() - out);
    }

    q[qslot::stack_bytes] = d(r.stack_bytes);
    q[qslot::heap_bytes] = d(r.heap_bytes);
    q[qslot::tls_bytes] = d(r.tls_bytes);
    q[qslot::num_args] = d(r.num_args);
    q[qslot::local_bytes] = d(r.local_bytes);
    q[qslot::constants] = d(r.constants.size());

    for (const auto& reg : r.taint.registers)
        if (int slot = register_slot(reg); slot >= 0)
            q[qslot::taint_register_first + static_cast<std::size_t>(slot)] += 1.0;
    q[qslot::taint_heap_bytes] = d(r.taint.heap_bytes);
    q[qslot::taint_stack_bytes] = d(r.taint.stack_bytes);
    q[qslot::taint_arg_bytes] = d(r.taint.arg_bytes);
    q[qslot::taint_cond_jumps] = d(r.taint.cond_jumps);
    q[qslot::taint_flows] = d(r.taint.flows);
    return q;
}

std::vector<std::string> opcode_shingles(std::span<const std::string> opcodes, std::size_t length)
{
    std::vector<std::string> out;
    if (opcodes.empty() || length == 0)
        return out;
    auto join = [&](std::size_t from, std::size_t n) {
        std::string s;
        for (std::size_t i = from; i < from + n; ++i) {
            if (i > from)
                s += ' ';
            s += lowercase(opcodes[i]);
        }
        return s;
    };
    if (opcodes.size() < length) {
        out.push_back(join(0, opcodes.size()));
        return out;
    }
    for (std::size_t i = 0; i + length <= opcodes.size(); ++i)
        out.push_back(join(i, length));
    return out;
}

std::vector<std::uint64_t> minhash_signature(std::span<const std::string> shingles, std::size_t count,
                                             std::uint64_t seed)
{
    std::vector<std::uint64_t> sig(count, std::numeric_limits<std::uint64_t>::max());
    std::vector<std::uint64_t> keys(count);
    for (std::size_t i = 0; i < count; ++i)
        keys[i] = hash_combine(seed, i);
    std::unordered_set<std::string_view> distinct;
    for (const auto& s : shingles) {
        if (!distinct.insert(s).second)
            continue;
        std::uint64_t base = hash_bytes(s, seed);
        for (std::size_t i = 0; i < count; ++i)
            sig[i] = std::min(sig[i], mix64(base ^ keys[i]));
    }
    return sig;
}

std::vector<std::string> categorical_tokens(const FunctionRecord& r, const Corpus* corpus, const FeatureConfig& cfg)
{
    std::vector<std::string> tokens;
    if (!r.opcodes.empty()) {
        std::string joined;
        for (const auto& op : r.opcodes) {
            joined += lowercase(op);
            joined += '\n';
        }
        tokens.push_back("sha:" + sha256_hex(joined));
        auto sig = minhash_signature(opcode_shingles(r.opcodes, cfg.shingle_length), cfg.minhash_count,
                                     derive_seed(cfg.seed, "minhash"));
        char buf[48];
        for (std::size_t i = 0; i < sig.size(); ++i) {
            std::snprintf(buf, sizeof buf, "mh:%zu:%016llx", i, static_cast<unsigned long long>(sig[i]));
            tokens.emplace_back(buf);
        }
    }
    for (const auto& c : r.constants)
        tokens.push_back("const:" + constant_text(c));
    for (const auto& callee : r.dynamic_callees)
        tokens.push_back("dyn:" + callee);
    if (corpus != nullptr) {
        if (auto self = corpus->index_of(r.id())) {
            std::set<std::string> known;
            for (std::size_t idx : reachable_functions(*corpus, *self, cfg.reach_depth))
                for (const auto& callee : (*corpus)[idx].dynamic_callees)
                    known.insert(callee);
            for (const auto& k : known)
                tokens.push_back("reach:" + k);
        }
    }
    for (const auto& callee : r.taint.callees)
        tokens.push_back("taint:" + callee);
    return tokens;
}

SparseVector categorical_features(const FunctionRecord& r, const Corpus* corpus, const FeatureConfig& cfg)
{
    const std::size_t width = cfg.categorical_width;
    if (width == 0 || (width & (width - 1)) != 0)
        throw Error("categorical width must be a power of two, got " + std::to_string(width));
    std::vector<std::pair<std::uint64_t, double>> pairs;
    const std::uint64_t index_seed = derive_seed(cfg.seed, "categorical-index");
    const std::uint64_t sign_seed = derive_seed(cfg.seed, "categorical-sign");
    for (const auto& t : categorical_tokens(r, corpus, cfg)) {
        std::uint64_t idx = hash_bytes(t, index_seed) & (width - 1);
        double sign = (hash_bytes(t, sign_seed) >> 63) != 0 ? -1.0 : 1.0;
        pairs.emplace_back(idx, sign);
    }
    return SparseVector::from_pairs(std::move(pairs));
}

SparseVector function_vector(std::span<const double> q, const SparseVector& c)
{
    SparseVector f;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] != 0.0) {
            f.indices.push_back(i);
            f.values.push_back(std::log1p(q[i]));
        }
    }
    for (std::size_t i = 0; i < c.nnz(); ++i) {
        f.indices.push_back(q.size() + c.indices[i]);
        f.values.push_back(c.values[i]);
    }
    return f;
}

namespace {

SparseVector mean_of(const std::vector<SparseVector>& f, const std::vector<std::size_t>& members)
{
    if (members.empty())
        return {};
    std::vector<std::pair<std::uint64_t, double>> pairs;
    for (std::size_t m : members)
        for (std::size_t i = 0; i < f[m].nnz(); ++i)
            pairs.emplace_back(f[m].indices[i], f[m].values[i]);
    auto sum = SparseVector::from_pairs(std::move(pairs));
    const double inv = 1.0 / static_cast<double>(members.size());
    for (auto& v : sum.values)
        v *= inv;
    return sum;
}

void append_shifted(SparseVector& out, const SparseVector& in, std::uint64_t offset)
{
    for (std::size_t i = 0; i < in.nnz(); ++i) {
        out.indices.push_back(in.indices[i] + offset);
        out.values.push_back(in.values[i]);
    }
}

} // namespace

SparseVector FunctionFeatures::concatenated() const
{
    SparseVector out;
    append_shifted(out, f, 0);
    append_shifted(out, g, width);
    append_shifted(out, h, 2 * static_cast<std::uint64_t>(width));
    return out;
}

std::vector<FunctionFeatures> context_vectors(const Corpus& corpus, std::vector<SparseVector> f, std::size_t width)
{
    if (f.size() != corpus.size())
        throw Error("context_vectors: feature count does not match corpus size");

    std::unordered_map<std::string, SparseVector> binary_means;
    for (const auto& bin : corpus.binary_ids()) {
        auto members = corpus.binary_members(bin);
        binary_means.emplace(bin, mean_of(f, {members.begin(), members.end()}));
    }

    std::vector<FunctionFeatures> out(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& r = corpus[i];
        std::set<std::size_t> context;
        for (const auto& c : r.callers)
            if (auto idx = corpus.resolve(r, c))
                context.insert(*idx);
        for (const auto& c : r.callees)
            if (auto idx = corpus.resolve(r, c))
                context.insert(*idx);
        out[i].g = mean_of(f, {context.begin(), context.end()});
        out[i].h = binary_means.at(r.binary_id);
        out[i].width = width;
    }
    for (std::size_t i = 0; i < corpus.size(); ++i)
        out[i].f = std::move(f[i]);
    return out;
}

namespace {

void project_into(std::vector<double>& out, const SparseVector& input, std::uint64_t offset, std::uint64_t seed)
{
    const std::size_t width = out.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t j = 0; j < input.nnz(); ++j) {
        const double x = input.values[j] * scale;
        SplitMix64 signs(hash_combine(seed, input.indices[j] + offset));
        for (std::size_t i = 0; i < width; i += 64) {
            std::uint64_t bits = signs.next();
            const std::size_t end = std::min(width, i + 64);
            for (std::size_t k = i; k < end; ++k, bits >>= 1)
                out[k] += (bits & 1U) != 0 ? x : -x;
        }
    }
}

} // namespace

Embedding embed(const SparseVector& input, std::size_t width, std::uint64_t seed)
{
    Embedding e{std::vector<double>(width, 0.0), Provenance::projected};
    project_into(e.values, input, 0, seed);
    return e;
}

Embedding embed(const FunctionFeatures& features, std::size_t width, std::uint64_t seed)
{
    Embedding e{std::vector<double>(width, 0.0), Provenance::projected};
    project_into(e.values, features.f, 0, seed);
    project_into(e.values, features.g, features.width, seed);
    project_into(e.values, features.h, 2 * static_cast<std::uint64_t>(features.width), seed);
    return e;
}

void EmbeddingTable::add(std::string id, std::span<const double> values)
{
    if (values.size() != width_)
        throw Error("embedding for '" + id + "' has width " + std::to_string(values.size()) + ", expected " +
                    std::to_string(width_));
    if (!index_.emplace(id, ids_.size()).second)
        throw Error("duplicate embedding for '" + id + "'");
    ids_.push_back(std::move(id));
    data_.insert(data_.end(), values.begin(), values.end());
}

const double* EmbeddingTable::find(const std::string& id) const
{
    auto it = index_.find(id);
    if (it == index_.end())
        return nullptr;
    return data_.data() + it->second * width_;
}

void EmbeddingTable::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write embeddings " + path.string());
    out << "# xfl-embeddings width=" << width_
        << " provenance=" << (provenance_ == Provenance::projected ? "projected" : "external") << '\n';
    char buf[32];
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        out << ids_[i];
        for (double v : row(i)) {
            auto res = std::to_chars(buf, buf + sizeof buf, v);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
    if (!out)
        throw Error("failed writing embeddings " + path.string());
}

EmbeddingTable featurize_corpus(const Corpus& corpus, const FeatureConfig& cfg, std::size_t embedding_width)
{
    std::vector<SparseVector> f;
    f.reserve(corpus.size());
    for (const auto& r : corpus.records()) {
        auto q = quantitative_features(r, &corpus, cfg.reach_depth);
        f.push_back(function_vector(q, categorical_features(r, &corpus, cfg)));
    }
    const std::size_t width = cfg.function_width();
    auto features = context_vectors(corpus, std::move(f), width);

    const std::uint64_t seed = derive_seed(cfg.seed, "projection");
    // h is shared by a whole binary; project it once per binary.
    std::unordered_map<std::string, std::vector<double>> binary_part;
    EmbeddingTable table(embedding_width, Provenance::projected);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& r = corpus[i];
        auto it = binary_part.find(r.binary_id);
        if (it == binary_part.end()) {
            std::vector<double> h(embedding_width, 0.0);
            project_into(h, features[i].h, 2 * static_cast<std::uint64_t>(width), seed);
            it = binary_part.emplace(r.binary_id, std::move(h)).first;
        }
        std::vector<double> v(embedding_width, 0.0);
        project_into(v, features[i].f, 0, seed);
        project_into(v, features[i].g, width, seed);
        for (std::size_t k = 0; k < embedding_width; ++k)
            v[k] += it->second[k];
        table.add(r.id(), v);
    }
    return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t width, const Corpus* corpus,
                               Provenance provenance)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read embeddings " + path.string());
    std::string line;
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        if (line[0] == '#') {
            if (line.find("provenance=projected") != std::string::npos)
                provenance = Provenance::projected;
            else if (line.find("provenance=external") != std::string::npos)
                provenance = Provenance::external;
            continue;
        }
        std::istringstream ss(line);
        std::string id;
        ss >> id;
        std::vector<double> values;
        std::string tok;
        while (ss >> tok) {
            double v = 0.0;
            auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
                throw Error(path.string() + ":" + std::to_string(line_no) + ": bad value '" + tok + "' for '" + id + "'");
            values.push_back(v);
        }
        if (values.size() != width)
            throw Error("embedding for '" + id + "' has width " + std::to_string(values.size()) + ", expected " +
                        std::to_string(width));
        if (corpus != nullptr && !corpus->index_of(id))
            throw Error("embedding for unknown function '" + id + "'");
        rows.emplace_back(std::move(id), std::move(values));
    }
    EmbeddingTable table(width, provenance);
    for (auto& [id, values] : rows)
        table.add(std::move(id), values);
    return table;
}

} // namespace xfl

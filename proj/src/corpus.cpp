#include "xfl/corpus.hpp"

#include "xfl/hashing.hpp"
#include "xfl/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace xfl {

using nlohmann::json;

CorpusError::CorpusError(std::string what, std::vector<Diagnostic> diagnostics)
    : Error(std::move(what)), diagnostics_(std::move(diagnostics))
{
}

Corpus::Corpus(std::vector<FunctionRecord> records) : records_(std::move(records))
{
    std::vector<Diagnostic> dups;
    by_id_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        auto [it, inserted] = by_id_.emplace(records_[i].id(), i);
        if (!inserted)
            dups.push_back({0, "duplicate function identifier '" + it->first + "'"});
        by_binary_[records_[i].binary_id].push_back(i);
    }
    if (!dups.empty())
        throw CorpusError("corpus contains duplicate function identifiers", std::move(dups));
}

std::optional<std::size_t> Corpus::index_of(std::string_view function_id) const
{
    auto it = by_id_.find(std::string(function_id));
    if (it == by_id_.end())
        return std::nullopt;
    return it->second;
}

std::optional<std::size_t> Corpus::resolve(const FunctionRecord& from, std::string_view name) const
{
    std::string id = from.binary_id;
    id += ':';
    id += name;
    return index_of(id);
}

std::span<const std::size_t> Corpus::binary_members(std::string_view binary_id) const
{
    auto it = by_binary_.find(binary_id);
    if (it == by_binary_.end())
        return {};
    return it->second;
}

std::vector<std::string> Corpus::binary_ids() const
{
    std::vector<std::string> out;
    out.reserve(by_binary_.size());
    for (const auto& [id, _] : by_binary_)
        out.push_back(id);
    return out;
}

namespace {

const std::set<std::string, std::less<>> kKnownFields = {
    "binary_id", "name", "vaddr", "size", "opcodes", "operand_kinds", "callers", "callees",
    "dynamic_callees", "constants", "stack_bytes", "heap_bytes", "tls_bytes", "num_args",
    "local_bytes", "taint", "cfg_nodes", "cfg_edges"};

bool has_space(std::string_view s)
{
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

OperandKind parse_operand_kind(const std::string& s)
{
    if (s == "register" || s == "reg")
        return OperandKind::reg;
    if (s == "immediate" || s == "imm")
        return OperandKind::imm;
    if (s == "memory" || s == "mem")
        return OperandKind::mem;
    throw std::invalid_argument("unknown operand kind '" + s + "'");
}

const char* operand_kind_name(OperandKind k)
{
    switch (k) {
    case OperandKind::reg: return "register";
    case OperandKind::imm: return "immediate";
    case OperandKind::mem: return "memory";
    }
    return "register";
}

template <class T>
void read_opt(const json& j, const char* key, T& out)
{
    if (auto it = j.find(key); it != j.end() && !it->is_null())
        it->get_to(out);
}

[[noreturn]] void reject(std::size_t line_no, const std::string& msg)
{
    throw CorpusError("line " + std::to_string(line_no) + ": " + msg, {{line_no, msg}});
}

} // namespace

FunctionRecord parse_record(std::string_view line, std::size_t line_no, std::vector<Diagnostic>* warnings)
{
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        reject(line_no, std::string("malformed record: ") + e.what());
    }
    if (!j.is_object())
        reject(line_no, "malformed record: expected an object");

    FunctionRecord r;
    try {
        r.binary_id = j.at("binary_id").get<std::string>();
        r.name = j.at("name").get<std::string>();
        r.vaddr = j.at("vaddr").get<std::uint64_t>();
        r.size = j.at("size").get<std::uint64_t>();
        read_opt(j, "opcodes", r.opcodes);
        if (auto it = j.find("operand_kinds"); it != j.end() && !it->is_null()) {
            for (const auto& insn : *it) {
                auto& kinds = r.operand_kinds.emplace_back();
                for (const auto& k : insn)
                    kinds.push_back(parse_operand_kind(k.get<std::string>()));
            }
        }
        read_opt(j, "callers", r.callers);
        read_opt(j, "callees", r.callees);
        read_opt(j, "dynamic_callees", r.dynamic_callees);
        if (auto it = j.find("constants"); it != j.end() && !it->is_null()) {
            for (const auto& c : *it) {
                if (c.is_string())
                    r.constants.emplace_back(c.get<std::string>());
                else if (c.is_number_integer())
                    r.constants.emplace_back(c.get<std::int64_t>());
                else
                    throw std::invalid_argument("constants must be integers or strings");
            }
        }
        read_opt(j, "stack_bytes", r.stack_bytes);
        read_opt(j, "heap_bytes", r.heap_bytes);
        read_opt(j, "tls_bytes", r.tls_bytes);
        read_opt(j, "num_args", r.num_args);
        read_opt(j, "local_bytes", r.local_bytes);
        read_opt(j, "cfg_nodes", r.cfg_nodes);
        read_opt(j, "cfg_edges", r.cfg_edges);
        if (auto it = j.find("taint"); it != j.end() && !it->is_null()) {
            const json& t = *it;
            read_opt(t, "registers", r.taint.registers);
            read_opt(t, "heap_bytes", r.taint.heap_bytes);
            read_opt(t, "stack_bytes", r.taint.stack_bytes);
            read_opt(t, "arg_bytes", r.taint.arg_bytes);
            read_opt(t, "cond_jumps", r.taint.cond_jumps);
            read_opt(t, "flows", r.taint.flows);
            read_opt(t, "callees", r.taint.callees);
        }
    } catch (const CorpusError&) {
        throw;
    } catch (const std::exception& e) {
        reject(line_no, std::string("malformed record: ") + e.what());
    }

    if (trim(r.name).empty())
        reject(line_no, "empty function name");
    if (has_space(r.name))
        reject(line_no, "function name contains whitespace");
    if (r.binary_id.empty() || has_space(r.binary_id))
        reject(line_no, "binary_id must be non-empty and contain no whitespace");
    if (r.size == 0)
        reject(line_no, "zero-size function '" + r.name + "' (pseudo functions of size zero are excluded)");
    if (!r.operand_kinds.empty() && r.operand_kinds.size() != r.opcodes.size())
        reject(line_no, "operand_kinds has " + std::to_string(r.operand_kinds.size()) +
                            " entries but opcodes has " + std::to_string(r.opcodes.size()));

    if (warnings != nullptr) {
        for (const auto& [key, _] : j.items())
            if (!kKnownFields.contains(key))
                warnings->push_back({line_no, "unknown field '" + key + "' ignored"});
    }
    return r;
}

std::string format_record(const FunctionRecord& r)
{
    json j;
    j["binary_id"] = r.binary_id;
    j["name"] = r.name;
    j["vaddr"] = r.vaddr;
    j["size"] = r.size;
    j["opcodes"] = r.opcodes;
    json kinds = json::array();
    for (const auto& insn : r.operand_kinds) {
        json row = json::array();
        for (auto k : insn)
            row.push_back(operand_kind_name(k));
        kinds.push_back(std::move(row));
    }
    j["operand_kinds"] = std::move(kinds);
    j["callers"] = r.callers;
    j["callees"] = r.callees;
    j["dynamic_callees"] = r.dynamic_callees;
    json consts = json::array();
    for (const auto& c : r.constants)
        std::visit([&](const auto& v) { consts.push_back(v); }, c);
    j["constants"] = std::move(consts);
    j["stack_bytes"] = r.stack_bytes;
    j["heap_bytes"] = r.heap_bytes;
    j["tls_bytes"] = r.tls_bytes;
    j["num_args"] = r.num_args;
    j["local_bytes"] = r.local_bytes;
    j["taint"] = {{"registers", r.taint.registers}, {"heap_bytes", r.taint.heap_bytes},
                  {"stack_bytes", r.taint.stack_bytes}, {"arg_bytes", r.taint.arg_bytes},
                  {"cond_jumps", r.taint.cond_jumps}, {"flows", r.taint.flows},
                  {"callees", r.taint.callees}};
    j["cfg_nodes"] = r.cfg_nodes;
    j["cfg_edges"] = r.cfg_edges;
    return j.dump();
}

Corpus load_corpus(const std::filesystem::path& path, LoadReport* report)
{
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read corpus file " + path.string());

    LoadReport local;
    LoadReport& rep = report != nullptr ? *report : local;
    std::vector<FunctionRecord> records;
    std::vector<std::size_t> lines;
    std::vector<Diagnostic> field_warnings;
    std::unordered_map<std::string, std::size_t> first_line;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        try {
            auto rec = parse_record(line, line_no, &field_warnings);
            auto [it, inserted] = first_line.emplace(rec.id(), line_no);
            if (!inserted) {
                rep.rejected.push_back({line_no, "duplicate function identifier '" + rec.id() +
                                                     "' (first seen on line " + std::to_string(it->second) + ")"});
                continue;
            }
            records.push_back(std::move(rec));
            lines.push_back(line_no);
        } catch (const CorpusError& e) {
            for (const auto& d : e.diagnostics())
                rep.rejected.push_back(d);
        }
    }

    // One warning per distinct unknown field keeps the log readable.
    std::set<std::string> seen_fields;
    for (auto& w : field_warnings)
        if (seen_fields.insert(w.message).second)
            rep.warnings.push_back(std::move(w));

    if (!rep.rejected.empty()) {
        std::ostringstream msg;
        msg << path.string() << ": " << rep.rejected.size() << " record(s) rejected";
        for (const auto& d : rep.rejected)
            msg << "\n  line " << d.line << ": " << d.message;
        throw CorpusError(msg.str(), rep.rejected);
    }

    // Overlapping address ranges inside one binary: drop every party.
    std::map<std::string, std::vector<std::size_t>> per_binary;
    for (std::size_t i = 0; i < records.size(); ++i)
        per_binary[records[i].binary_id].push_back(i);
    std::vector<bool> drop(records.size(), false);
    for (auto& [bin, idx] : per_binary) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return std::tie(records[a].vaddr, records[a].size) < std::tie(records[b].vaddr, records[b].size);
        });
        std::uint64_t reach_end = 0;
        std::size_t reach_owner = 0;
        bool have = false;
        for (std::size_t i : idx) {
            const auto& r = records[i];
            if (have && r.vaddr < reach_end) {
                drop[i] = true;
                drop[reach_owner] = true;
            }
            std::uint64_t end = r.vaddr + r.size;
            if (!have || end > reach_end) {
                reach_end = end;
                reach_owner = i;
                have = true;
            }
        }
    }
    std::vector<FunctionRecord> kept;
    kept.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (drop[i]) {
            rep.warnings.push_back({lines[i], "dropped '" + records[i].id() + "': address range overlaps another function"});
            ++rep.dropped_overlaps;
        } else {
            kept.push_back(std::move(records[i]));
        }
    }

    Corpus corpus(std::move(kept));
    std::size_t external_refs = 0;
    for (const auto& r : corpus.records()) {
        for (const auto& c : r.callees)
            external_refs += corpus.resolve(r, c).has_value() ? 0 : 1;
        for (const auto& c : r.callers)
            external_refs += corpus.resolve(r, c).has_value() ? 0 : 1;
    }
    if (external_refs > 0)
        rep.warnings.push_back({0, std::to_string(external_refs) +
                                       " call-graph reference(s) do not resolve inside their binary; treated as external"});
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write corpus file " + path.string());
    for (const auto& r : corpus.records())
        out << format_record(r) << '\n';
    if (!out)
        throw Error("failed writing corpus file " + path.string());
}

namespace {

/// Largest-remainder apportionment of `total` items over the ratios.
std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& ratios)
{
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        double exact = ratios[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    while (assigned < total) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (frac[i] > frac[best] + 1e-12)
                best = i;
        ++counts[best];
        frac[best] = -1.0;
        ++assigned;
    }
    while (assigned > total) {
        std::size_t i = counts[0] > 0 ? 0 : (counts[1] > 0 ? 1 : 2);
        --counts[i];
        --assigned;
    }
    return counts;
}

template <class T>
void shuffle(std::vector<T>& v, std::uint64_t seed)
{
    SplitMix64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.below(i)]);
}

} // namespace

CorpusSplit split(const Corpus& corpus, const SplitSpec& spec)
{
    const std::array<double, 3> ratios{spec.train, spec.valid, spec.test};
    for (double r : ratios)
        if (!(r > 0.0))
            throw Error("split ratios must be positive");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw Error("split ratios must sum to 1");
    if (corpus.empty())
        throw Error("cannot split an empty corpus");

    std::array<std::vector<std::size_t>, 3> parts;
    if (spec.grouping == Grouping::by_function) {
        std::vector<std::size_t> order(corpus.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle(order, spec.seed);
        auto counts = apportion(order.size(), ratios);
        std::size_t pos = 0;
        for (std::size_t p = 0; p < 3; ++p)
            for (std::size_t i = 0; i < counts[p]; ++i)
                parts[p].push_back(order[pos++]);
    } else {
        auto binaries = corpus.binary_ids();
        if (binaries.size() < 3)
            throw Error("by_binary split needs at least 3 binaries, corpus has " + std::to_string(binaries.size()));
        shuffle(binaries, spec.seed);
        auto targets = apportion(corpus.size(), ratios);
        std::array<std::size_t, 3> filled{};
        for (std::size_t b = 0; b < binaries.size(); ++b) {
            std::size_t remaining = binaries.size() - b;
            std::size_t empties = 0;
            for (std::size_t p = 0; p < 3; ++p)
                empties += filled[p] == 0 ? 1 : 0;
            std::size_t pick = 0;
            auto deficit = [&](std::size_t p) {
                return static_cast<double>(targets[p]) - static_cast<double>(filled[p]);
            };
            if (remaining <= empties) {
                while (filled[pick] != 0)
                    ++pick;
            } else {
                for (std::size_t p = 1; p < 3; ++p)
                    if (deficit(p) > deficit(pick))
                        pick = p;
            }
            for (std::size_t i : corpus.binary_members(binaries[b]))
                parts[pick].push_back(i);
            filled[pick] += corpus.binary_members(binaries[b]).size();
        }
    }

    auto build = [&](std::vector<std::size_t>& idx) {
        std::sort(idx.begin(), idx.end());
        std::vector<FunctionRecord> recs;
        recs.reserve(idx.size());
        for (std::size_t i : idx)
            recs.push_back(corpus[i]);
        return Corpus(std::move(recs));
    };
    return {build(parts[0]), build(parts[1]), build(parts[2])};
}

} // namespace xfl

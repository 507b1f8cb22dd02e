#pragma once

#include "xfl/error.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace xfl {

enum class OperandKind : std::uint8_t { reg, imm, mem };

/// Optional taint-analysis counts computed upstream; all zero when absent.
struct TaintInfo {
    std::vector<std::string> registers; // tainted register names
    std::uint64_t heap_bytes = 0;
    std::uint64_t stack_bytes = 0;
    std::uint64_t arg_bytes = 0;
    std::uint64_t cond_jumps = 0;
    std::uint64_t flows = 0;
    std::vector<std::string> callees; // dynamic callees receiving tainted data

    bool operator==(const TaintInfo&) const = default;
};

using Constant = std::variant<std::int64_t, std::string>;

/// One function of one binary. Call-graph references (callers, callees) name
/// other functions of the same binary; names that do not resolve are treated
/// as external.
struct FunctionRecord {
    std::string binary_id;
    std::string name;
    std::uint64_t vaddr = 0;
    std::uint64_t size = 0;
    std::vector<std::string> opcodes;
    std::vector<std::vector<OperandKind>> operand_kinds;
    std::vector<std::string> callers;
    std::vector<std::string> callees;
    std::vector<std::string> dynamic_callees;
    std::vector<Constant> constants;
    std::uint64_t stack_bytes = 0;
    std::uint64_t heap_bytes = 0;
    std::uint64_t tls_bytes = 0;
    std::uint64_t num_args = 0;
    std::uint64_t local_bytes = 0;
    TaintInfo taint;
    std::uint64_t cfg_nodes = 0;
    std::uint64_t cfg_edges = 0;

    /// Corpus-wide identifier: "<binary_id>:<name>".
    std::string id() const { return binary_id + ":" + name; }

    bool operator==(const FunctionRecord&) const = default;
};

struct Diagnostic {
    std::size_t line = 0; // 1-based; 0 when not tied to a line
    std::string message;
};

/// Raised when records are rejected; carries one diagnostic per problem.
class CorpusError : public Error {
public:
    CorpusError(std::string what, std::vector<Diagnostic> diagnostics);
    const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

private:
    std::vector<Diagnostic> diagnostics_;
};

/// Immutable, indexed collection of records.
class Corpus {
public:
    Corpus() = default;
    /// Throws CorpusError on duplicate function identifiers.
    explicit Corpus(std::vector<FunctionRecord> records);

    std::span<const FunctionRecord> records() const noexcept { return records_; }
    const FunctionRecord& operator[](std::size_t i) const { return records_[i]; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    std::optional<std::size_t> index_of(std::string_view function_id) const;
    /// Resolves a callee/caller name relative to the binary of `from`.
    std::optional<std::size_t> resolve(const FunctionRecord& from, std::string_view name) const;
    /// Record indices of one binary, in corpus order. Empty for unknown ids.
    std::span<const std::size_t> binary_members(std::string_view binary_id) const;
    /// Sorted distinct binary ids.
    std::vector<std::string> binary_ids() const;

    bool operator==(const Corpus& other) const { return records_ == other.records_; }

private:
    std::vector<FunctionRecord> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::map<std::string, std::vector<std::size_t>, std::less<>> by_binary_;
};

struct LoadReport {
    std::vector<Diagnostic> rejected;
    std::vector<Diagnostic> warnings;
    std::size_t dropped_overlaps = 0;
};

/// Parses one line of the corpus format. Throws CorpusError (single
/// diagnostic) on malformed input or a violated record invariant.
FunctionRecord parse_record(std::string_view line, std::size_t line_no = 0,
                            std::vector<Diagnostic>* warnings = nullptr);
std::string format_record(const FunctionRecord& record);

/// Loads a line-delimited corpus. Any rejected record aborts the load with a
/// CorpusError listing every offending line. Records whose address ranges
/// overlap another record of the same binary are dropped with a warning.
Corpus load_corpus(const std::filesystem::path& path, LoadReport* report = nullptr);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

enum class Grouping { by_function, by_binary };

struct SplitSpec {
    double train = 0.9;
    double valid = 0.05;
    double test = 0.05;
    Grouping grouping = Grouping::by_function;
    std::uint64_t seed = 0;
};

struct CorpusSplit {
    Corpus train;
    Corpus valid;
    Corpus test;
};

/// Deterministic three-way partition. Throws Error when ratios do not sum to
/// one (1e-9), are not positive, or when by_binary has fewer binaries than
/// partitions.
CorpusSplit split(const Corpus& corpus, const SplitSpec& spec);

} // namespace xfl

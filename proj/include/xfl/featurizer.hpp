#pragma once

#include "xfl/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace xfl {

inline constexpr std::size_t kQuantitativeWidth = 512;
/// Bumped whenever the quantitative slot layout or token scheme changes.
inline constexpr std::uint32_t kFeatureLayoutVersion = 1;

/// Fixed slot layout of the quantitative vector q.
namespace qslot {
enum : std::size_t {
    size_bytes = 0,
    instructions = 1,
    // Opcode class counts ("branch types" and friends), see classify_opcode.
    opclass_first = 2,
    opclass_last = 15,
    callers = 16,
    callees = 17,
    dynamic_callees = 18,
    reachable = 19,
    cfg_nodes = 20,
    cfg_edges = 21,
    cfg_cyclomatic = 22,
    cfg_mean_degree = 23,
    callers_internal = 24,
    callees_internal = 25,
    callees_external = 26,
    stack_bytes = 27,
    heap_bytes = 28,
    tls_bytes = 29,
    num_args = 30,
    local_bytes = 31,
    constants = 32,
    distinct_opcodes = 33,
    operand_register = 34,
    operand_immediate = 35,
    operand_memory = 36,
    taint_register_first = 40, // 16 general-purpose registers, one-hot summed
    taint_register_last = 55,
    taint_heap_bytes = 56,
    taint_stack_bytes = 57,
    taint_arg_bytes = 58,
    taint_cond_jumps = 59,
    taint_flows = 60,
    opcode_histogram_first = 256, // hashed mnemonic histogram
    opcode_histogram_last = 511,
};
} // namespace qslot

enum class OpcodeClass : std::uint8_t {
    jump, cond_jump, call, ret, loop, syscall, arith, logic, move, compare, floating, nop, stack, other
};

OpcodeClass classify_opcode(std::string_view mnemonic);

/// Sparse vector with strictly increasing indices and no explicit zeros.
struct SparseVector {
    std::vector<std::uint64_t> indices;
    std::vector<double> values;

    std::size_t nnz() const noexcept { return indices.size(); }
    double at(std::uint64_t index) const;
    bool operator==(const SparseVector&) const = default;

    /// Builds from unordered (index, value) pairs, summing duplicates.
    static SparseVector from_pairs(std::vector<std::pair<std::uint64_t, double>> pairs);
};

struct FeatureConfig {
    std::size_t categorical_width = std::size_t{1} << 18; // must be a power of two
    std::uint64_t seed = 0;
    std::size_t minhash_count = 64;
    std::size_t shingle_length = 4;
    std::size_t reach_depth = 32;

    std::size_t function_width() const noexcept { return kQuantitativeWidth + categorical_width; }
};

/// Dense q vector of width kQuantitativeWidth, raw counts. Needs the corpus
/// for call-graph resolution; without it internal/reachable slots stay 0.
std::vector<double> quantitative_features(const FunctionRecord& record, const Corpus* corpus = nullptr,
                                          std::size_t reach_depth = 32);

/// Distinct functions reachable through resolved static callees, BFS up to
/// `max_depth`, excluding the start function.
std::vector<std::size_t> reachable_functions(const Corpus& corpus, std::size_t start, std::size_t max_depth);

std::vector<std::string> opcode_shingles(std::span<const std::string> opcodes, std::size_t length);
/// One minimum per hash function over the distinct shingles.
std::vector<std::uint64_t> minhash_signature(std::span<const std::string> shingles, std::size_t count,
                                             std::uint64_t seed);

/// Categorical evidence as string tokens, before hashing.
std::vector<std::string> categorical_tokens(const FunctionRecord& record, const Corpus* corpus,
                                            const FeatureConfig& config);
/// Signed feature hashing of categorical_tokens into `categorical_width`
/// buckets. Throws Error if the width is not a power of two.
SparseVector categorical_features(const FunctionRecord& record, const Corpus* corpus, const FeatureConfig& config);

/// f = [compress(q), c] with compress(x) = ln(1 + x); width Q + D.
SparseVector function_vector(std::span<const double> quantitative, const SparseVector& categorical);

struct FunctionFeatures {
    SparseVector f;
    SparseVector g; // mean over callers and callees; zero when there are none
    SparseVector h; // mean over the whole binary
    std::size_t width = 0; // width of f; the concatenation has 3 * width

    SparseVector concatenated() const;
};

/// g and h for every record of the corpus, given f for every record.
std::vector<FunctionFeatures> context_vectors(const Corpus& corpus, std::vector<SparseVector> f, std::size_t width);

enum class Provenance : std::uint8_t { projected, external };

struct Embedding {
    std::vector<double> values;
    Provenance provenance = Provenance::projected;
};

/// Sparse random projection to `width` dimensions with entries
/// +-1/sqrt(width); signs come from a seeded hash of (input index, output
/// index), so the matrix is never materialized. Linear in the input.
Embedding embed(const SparseVector& input, std::size_t width, std::uint64_t seed);
Embedding embed(const FunctionFeatures& features, std::size_t width, std::uint64_t seed);

/// Row-major table of embeddings keyed by function id.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t width, Provenance provenance) : width_(width), provenance_(provenance) {}

    void add(std::string id, std::span<const double> values);

    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return ids_.size(); }
    Provenance provenance() const noexcept { return provenance_; }
    std::span<const std::string> ids() const noexcept { return ids_; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * width_, width_}; }
    const double* find(const std::string& id) const;

    void save(const std::filesystem::path& path) const;
    bool operator==(const EmbeddingTable& o) const
    {
        return width_ == o.width_ && provenance_ == o.provenance_ && ids_ == o.ids_ && data_ == o.data_;
    }

private:
    std::size_t width_ = 0;
    Provenance provenance_ = Provenance::projected;
    std::vector<std::string> ids_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Full featurization of a corpus: q, c, f, context, projection.
EmbeddingTable featurize_corpus(const Corpus& corpus, const FeatureConfig& config, std::size_t embedding_width);

/// Reads "id v1 ... vE" lines ('#' lines are comments). Throws Error naming
/// the function on a width mismatch, and on ids absent from `corpus` when
/// one is given.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t width, const Corpus* corpus = nullptr,
                               Provenance provenance = Provenance::external);

} // namespace xfl

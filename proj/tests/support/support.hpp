#pragma once

#include "xfl/corpus.hpp"
#include "xfl/labelspace.hpp"
#include "xfl/hashing.hpp"
#include "xfl/learner.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xfl::testing {

/// Dictionary words that tokenize to themselves.
const std::vector<std::string>& fixture_vocabulary();

struct FixtureOptions {
    std::size_t binaries = 10;
    std::size_t functions_per_binary = 20;
    std::uint64_t seed = 1;
    double noise = 0.15; // fraction of filler opcodes
};

/// Synthetic corpus whose function names are 2-3 vocabulary words. Every
/// word contributes its own opcode motif, constants and imports, so
/// features carry the name tokens.
Corpus make_fixture_corpus(const FixtureOptions& options = {});

/// One record built from explicit name tokens (snake_case name).
FunctionRecord fixture_record(const std::string& binary, const std::vector<std::string>& tokens, std::uint64_t vaddr,
                              SplitMix64& rng, double noise);

/// Training and test corpora whose names are disjoint as canonical token
/// sets, while every test token also occurs in training.
struct UnseenFixture {
    Corpus train;
    Corpus valid;
    Corpus test;
};
UnseenFixture make_unseen_fixture(std::uint64_t seed = 7);

/// `clusters` well separated Gaussian clusters in `width` dimensions, point
/// labels = {cluster id}.
Dataset gaussian_clusters(std::size_t clusters, std::size_t per_cluster, std::size_t width, double spread,
                          std::uint64_t seed, const std::string& id_prefix = "p");

/// Label space "c0".."c{n-1}" with equal counts.
LabelSpace uniform_space(std::size_t labels, std::uint64_t count_each);

/// Name corpus for language model tests: verb-object style token sequences
/// with a few fixed-order compounds.
std::vector<std::vector<std::string>> lm_name_corpus(std::size_t names, std::uint64_t seed);

/// Leaf reached by x, found without descending the tree: every root-to-leaf
/// path is enumerated and the one whose branch conditions all hold (with
/// margins recomputed from dense weights) is returned. Throws unless exactly
/// one path matches.
std::size_t oracle_leaf(const Tree& tree, std::span<const double> x);
/// Mean leaf scores over the trees, using oracle_leaf.
std::vector<double> oracle_tree_scores(const XflModel& model, std::span<const double> x);

/// Plain reference implementation of the ranking and set metrics.
namespace ref {
double cg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k);
double dcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k);
double ndcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth, std::size_t k);
double psdcg(const std::vector<std::uint32_t>& ranked, const std::vector<std::uint32_t>& truth,
             const std::vector<double>& propensity, std::size_t k);
struct Prf {
    double p, r, f1;
};
Prf micro(const std::vector<std::vector<std::uint32_t>>& predicted,
          const std::vector<std::vector<std::uint32_t>>& truth);
} // namespace ref

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "xfl");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

} // namespace xfl::testing

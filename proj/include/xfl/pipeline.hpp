#pragma once

#include "xfl/corpus.hpp"
#include "xfl/labelspace.hpp"
#include "xfl/langmodel.hpp"
#include "xfl/learner.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace xfl {

inline constexpr std::string_view kToolVersion = "1.0.0";

struct PipelineConfig {
    std::filesystem::path corpus;
    std::filesystem::path out_dir = "xfl-out";
    std::optional<std::filesystem::path> tokenizer;  // default: bundled config
    std::optional<std::filesystem::path> embeddings; // external embeddings instead of featurizing
    std::vector<std::size_t> label_space_sizes{512};
    PropensityParams propensity;
    std::size_t embedding_width = 512;
    std::size_t categorical_width = std::size_t{1} << 18;
    std::string hyper_params; // "key=value,..." over the defaults
    std::uint64_t seed = 0;
    SplitSpec split;
    NamingConvention convention = NamingConvention::snake;
    std::size_t k = 5;
    bool unseen_slice = true;
    std::uint64_t step_cap = kDefaultStepCap;

    /// Relative paths are resolved against the config file's directory.
    static PipelineConfig load(const std::filesystem::path& path);
    static PipelineConfig from_json(std::string_view text, const std::filesystem::path& base_dir = {});
    std::string to_json() const;
    /// sha256 of the canonical JSON form.
    std::string digest() const;
};

/// Error raised by a pipeline stage; what() is prefixed with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error("stage '" + stage + "': " + message), stage_(std::move(stage))
    {
    }
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct StageOutcome {
    std::string name;
    bool ran = false; // false: outputs were up to date
};

struct PipelineResult {
    std::vector<StageOutcome> stages;
    std::filesystem::path report;

    bool all_skipped() const;
};

/// Runs split, label space, featurize, train, predict, evaluate, lm and
/// names in dependency order, skipping stages whose inputs and outputs are
/// unchanged since their last run.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Writes "function id<TAB>label:score..." lines, top-k descending.
void write_rankings(const std::filesystem::path& path, const XflModel& model, const Dataset& data,
                    const LabelSpace& space, std::size_t topk);

/// Predicted set ordered by the language model and rendered; empty when the
/// model predicts nothing above the threshold.
std::string synthesize_name(const XflModel& model, const LabelSpace& space, const TrigramLm& lm,
                            std::span<const double> x, NamingConvention convention, std::uint64_t step_cap);

/// Ordered canonical tokens of every name, for language model training.
std::vector<std::vector<std::string>> name_sequences(const Corpus& corpus, const Tokenizer& tokenizer);

/// Tool version, model format version and, when given, the config digest
/// and a model file's embedded format version.
std::string version_info(const std::optional<std::filesystem::path>& config,
                         const std::optional<std::filesystem::path>& model);

} // namespace xfl

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "mg2vec/config.hpp"

namespace mg2vec {

/// Stages in dependency order.
const std::vector<std::string>& stage_names();

/// Per-stage seed derived from the global seed and the stage name.
std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage);

// Artifact file names inside the artifact directory.
namespace artifact {
inline constexpr const char* kReads = "reads.fastq";
inline constexpr const char* kLabels = "labels.tsv";
inline constexpr const char* kReferences = "refs.fasta";
inline constexpr const char* kVocab = "vocab.txt";
inline constexpr const char* kGraph = "graph.tsv";
inline constexpr const char* kWalks = "walks.txt";
inline constexpr const char* kGlobal = "global.emb";
inline constexpr const char* kGlobalTsv = "global.tsv";
inline constexpr const char* kModel = "model.ckpt";
inline constexpr const char* kContextual = "contextual.emb";
std::string features(RepresentationMode mode);
std::string features_tsv(RepresentationMode mode);
std::string classifier(RepresentationMode mode, ClassifierKind kind);
std::string report_json(RepresentationMode mode, ClassifierKind kind);
std::string report_text(RepresentationMode mode, ClassifierKind kind);
std::string pr_csv(RepresentationMode mode, ClassifierKind kind);
std::string cluster_json(RepresentationMode mode);
std::string cluster_text(RepresentationMode mode);
std::string assignments(RepresentationMode mode);
}  // namespace artifact

/// Runs one stage against the artifact directory named in the config. Holds a
/// lock file for the duration; writes outputs and `<stage>.manifest`.
void run_stage(const std::string& stage, const PipelineConfig& config, std::ostream& log);

/// Runs config.stages in order.
void run_pipeline(const PipelineConfig& config, std::ostream& log);

/// Reads used by the pipeline (input file or simulated reads) with labels attached.
std::vector<ReadRecord> load_pipeline_reads(const PipelineConfig& config);

/// True when the read belongs to the held-out test split.
class SplitRule {
 public:
  SplitRule(const PipelineConfig& config, const std::vector<std::string>& read_ids);
  bool is_test(const std::string& read_id) const;

 private:
  std::vector<std::size_t> test_samples_;
  double test_fraction_;
  std::uint64_t seed_;
};

}  // namespace mg2vec

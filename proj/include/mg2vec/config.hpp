#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mg2vec/embed.hpp"
#include "mg2vec/mlm.hpp"
#include "mg2vec/node2vec.hpp"
#include "mg2vec/seqio.hpp"
#include "mg2vec/structgraph.hpp"

namespace mg2vec {

enum class ClassifierKind { kLogReg, kMlp, kDeep };
ClassifierKind parse_classifier_kind(const std::string& name);
std::string to_string(ClassifierKind kind);

struct PipelineConfig {
  // [paths]
  std::string artifacts;  // required
  std::string reads;      // FASTA/FASTQ input; empty = reads produced by `simulate`
  std::string labels;     // labels TSV; empty = simulator labels when present

  // [simulate]
  SyntheticSpec simulate;

  // [input]
  double min_avg_q = 7.0;

  // [kmer]
  int k = 4;
  std::string alphabet = "ACGT";

  // [graph]
  WeightParams weights;

  // [walks], [skipgram]
  WalkConfig walks;
  SkipGramConfig skipgram{.dim = 0};  // dim 0 = transformer model_dim

  // [transformer], [masking], [pretrain]
  TransformerConfig transformer;
  MaskingConfig masking;
  PretrainConfig pretrain;
  /// Labels whose reads are withheld from graph, walks and pretraining.
  std::vector<std::string> exclude_labels;

  // [embed]
  RepresentationMode mode = RepresentationMode::kConcat;
  Pooling pooling = Pooling::kMean;
  bool export_tsv = true;

  // [split]
  std::vector<std::size_t> test_samples;  // empty = highest sample index
  double test_fraction = 0.2;             // used when reads carry no sample index

  // [classifier]
  ClassifierKind classifier = ClassifierKind::kLogReg;
  double l2_penalty = 0.1;
  std::size_t max_iters = 10000;
  double tolerance = 1e-6;
  bool standardize = true;
  bool class_weights = true;
  std::size_t net_epochs = 0;  // 0 = classifier default
  std::size_t net_batch_size = 0;
  double net_learning_rate = 0.0;

  // [cluster]
  std::size_t cluster_k = 0;  // 0 = number of classes present
  bool cluster_normalize = true;
  std::size_t cluster_max_iters = 300;
  /// `label:group` pairs merging truth labels before scoring.
  std::vector<std::string> label_groups;

  // [ablation]
  bool no_global_prior = false;
  bool raw_count_weights = false;
  bool unidirectional_attention = false;

  // [run]
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::vector<std::string> stages = {"simulate", "build-graph", "train-structural", "pretrain",
                                     "embed",    "train",       "evaluate"};

  /// Checks cross-field invariants; throws ValidationError.
  void validate() const;
  /// Every key except paths.artifacts, in registry order, as `section.key=value` lines.
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a64(canonical()); }
  KmerVocabulary vocabulary() const { return KmerVocabulary(k, alphabet); }
  /// Transformer settings completed from the vocabulary and ablation flags.
  TransformerConfig transformer_config() const;
  std::size_t structural_dim() const;
};

/// Parses the sectioned `key = value` format. Unknown sections or keys,
/// duplicates and type mismatches throw ValidationError. Required fields are
/// not checked here; call validate() after applying overrides.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config_file(const std::string& path);

/// `[section] key = default  doc` for every key, used by --help.
std::string config_reference();

/// Closest known key to `key` within `section` (empty when nothing is close).
std::string suggest_key(const std::string& section, const std::string& key);

}  // namespace mg2vec

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mg2vec/common.hpp"
#include "mg2vec/embedding_table.hpp"
#include "mg2vec/kmer.hpp"
#include "mg2vec/seqio.hpp"

namespace mg2vec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TransformerConfig {
  int vocab_size = 259;
  int num_layers = 4;
  int num_heads = 8;
  int model_dim = 64;
  int ff_dim = 256;
  double dropout = 0.1;
  int max_tokens = 512;
  bool bidirectional = true;
  double init_std = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
  /// `key=value;` rendering used in checkpoints and run manifests.
  std::string describe() const;
  bool operator==(const TransformerConfig&) const = default;
};

struct MaskingConfig {
  double mask_ratio = 0.15;  // s
  // Of the selected positions: fraction replaced by MASK, by a random k-mer,
  // the rest left unchanged.
  double mask_token_fraction = 1.0;
  double random_token_fraction = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct MaskedInput {
  std::vector<TokenId> input;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
};

/// Independent Bernoulli(s) selection per position; at least one position is
/// always selected so the masked loss is defined.
MaskedInput apply_mask(std::span<const TokenId> tokens, const MaskingConfig& masking, const KmerVocabulary& vocab,
                       Rng& rng);

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix bq, bk, bv, bo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1, w2, b2;
};

/// All trainable tensors. The token embedding doubles as the output
/// projection (weight tying), so there is no separate decoder matrix.
struct TransformerParams {
  Matrix embedding;    // vocab x model_dim
  Matrix output_bias;  // 1 x vocab
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;

  template <typename F>
  void visit(F&& f) {
    f("embedding", embedding);
    f("output_bias", output_bias);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "bq", L.bq);
      f(p + "bk", L.bk);
      f(p + "bv", L.bv);
      f(p + "bo", L.bo);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("final_gain", final_gain);
    f("final_bias", final_bias);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<TransformerParams*>(this)->visit(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  /// Same shapes, all zeros.
  TransformerParams zeros_like() const;
  void set_zero();
  bool all_finite() const;
  std::size_t parameter_count() const;
};

struct ForwardResult {
  Matrix hidden;  // tokens x model_dim, after the final layer norm
  Matrix logits;  // tokens x vocab
  /// attention[layer][head], tokens x tokens; filled when requested.
  std::vector<std::vector<Matrix>> attention;
};

/// Pre-LN transformer encoder with sinusoidal positions and a weight-tied
/// output projection.
class TransformerModel {
 public:
  explicit TransformerModel(const TransformerConfig& config);

  const TransformerConfig& config() const { return config_; }
  TransformerParams& params() { return params_; }
  const TransformerParams& params() const { return params_; }
  const Matrix& embedding() const { return params_.embedding; }
  /// The tied output projection; same storage as embedding().
  const Matrix& output_projection() const { return params_.embedding; }

  /// Inference-mode forward pass (dropout disabled). Throws ValidationError
  /// when the input is longer than max_tokens.
  ForwardResult forward(std::span<const TokenId> ids, bool keep_attention = false) const;

  /// Masked-token loss for one window and its gradient, accumulated into
  /// `grad` scaled by `grad_scale`. Dropout is active when `dropout_rng` is set.
  double loss_and_grad(const MaskedInput& batch, TransformerParams& grad, double grad_scale = 1.0,
                       Rng* dropout_rng = nullptr) const;

  /// Embedding rows as a table (the contextual mapping).
  EmbeddingTable embedding_table(std::uint64_t vocab_fingerprint = 0) const;
  void load_embedding(const EmbeddingTable& table);

  void save(std::ostream& out) const;
  /// Throws IncompatibleArtifactError on a version or, when `expected` is
  /// given, a configuration mismatch.
  static TransformerModel load(std::istream& in, const std::optional<TransformerConfig>& expected = std::nullopt);

 private:
  TransformerConfig config_;
  TransformerParams params_;
  Matrix positions_;  // max_tokens x model_dim sinusoidal table
};

/// Mean over masked positions of -log softmax(logits_t)[target_t].
double mlm_loss(const Matrix& logits, std::span<const TokenId> targets, std::span<const std::size_t> positions);

/// Inverse-square-root warmup schedule:
/// scale * model_dim^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
double warmup_learning_rate(std::uint64_t step, int model_dim, std::uint64_t warmup_steps, double scale = 1.0);

/// Adam over a TransformerParams-shaped set of tensors.
class AdamOptimizer {
 public:
  AdamOptimizer(const TransformerParams& like, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);
  void step(TransformerParams& params, const TransformerParams& grad, double learning_rate);
  std::uint64_t steps() const { return t_; }

 private:
  TransformerParams m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

struct PretrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t warmup_steps = 400;
  double lr_scale = 1.0;
  std::size_t max_reads = 0;  // 0 = all reads
  std::uint64_t seed = 1;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(std::size_t, double)> on_epoch;
};

struct PretrainResult {
  TransformerModel model;
  EmbeddingTable contextual;
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  std::uint64_t steps = 0;
};

/// Non-overlapping windows of at most max_tokens token ids.
std::vector<std::vector<TokenId>> split_windows(std::span<const TokenId> tokens, std::size_t max_tokens);

/// Masked-token pretraining. The embedding layer starts from `global_prior`
/// when given, otherwise from the random initialization.
PretrainResult pretrain(const std::vector<ReadRecord>& reads, const KmerVocabulary& vocab,
                        const EmbeddingTable* global_prior, const TransformerConfig& config,
                        const MaskingConfig& masking, const PretrainConfig& schedule);

/// Mean masked loss and masked-token accuracy of a model on windows, with
/// masks drawn from `masking` (inference mode).
struct MaskedEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t masked = 0;
};
MaskedEvaluation evaluate_masked(const TransformerModel& model, const std::vector<std::vector<TokenId>>& windows,
                                 const MaskingConfig& masking, const KmerVocabulary& vocab);

}  // namespace mg2vec

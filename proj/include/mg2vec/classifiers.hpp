#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "mg2vec/mlm.hpp"

namespace mg2vec {

/// Feature rows with integer class ids into a class catalog.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> classes;

  std::size_t size() const { return labels.size(); }
  int num_classes() const { return static_cast<int>(classes.size()); }
  std::vector<std::size_t> class_counts() const;
  /// Throws ValidationError when rows/labels disagree, a label is outside the
  /// catalog or a feature is non-finite.
  void validate(bool require_two_classes = true) const;
};

/// Per-column z-scoring fitted on training features.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string kind() const = 0;
  virtual int num_classes() const = 0;
  /// Rows of class probabilities.
  virtual Matrix predict_proba(const Matrix& x) const = 0;
  std::vector<int> predict(const Matrix& x) const;
  virtual void save(std::ostream& out) const = 0;
};

std::unique_ptr<Classifier> load_classifier(std::istream& in);

struct LogRegConfig {
  double l2_penalty = 0.1;
  std::size_t max_iters = 10000;
  double tolerance = 1e-6;
};

struct FitReport {
  std::size_t iterations = 0;
  bool converged = false;
  double final_objective = 0.0;
  double gradient_norm = 0.0;
};

/// Multinomial logistic regression (softmax with unpenalized bias) fitted by
/// Newton-CG on mean cross-entropy + l2/2 * ||W||^2.
class LogisticRegression : public Classifier {
 public:
  LogisticRegression() = default;
  LogisticRegression(Matrix weights, Eigen::RowVectorXd bias) : weights_(std::move(weights)), bias_(std::move(bias)) {}

  static LogisticRegression fit(const LabeledDataset& data, const LogRegConfig& config, FitReport* report = nullptr);

  std::string kind() const override { return "logreg"; }
  int num_classes() const override { return static_cast<int>(bias_.size()); }
  Matrix predict_proba(const Matrix& x) const override;
  Matrix decision_function(const Matrix& x) const;
  void save(std::ostream& out) const override;
  static LogisticRegression load_body(std::istream& in);

  const Matrix& weights() const { return weights_; }
  const Eigen::RowVectorXd& bias() const { return bias_; }

 private:
  Matrix weights_;  // features x classes
  Eigen::RowVectorXd bias_;
};

enum class LearningRateSchedule { kConstant, kWarmup };

/// Fully connected ReLU network with optional residual link between hidden
/// layers and optional per-class loss weights, trained with Adam.
struct NetConfig {
  std::vector<int> hidden = {256, 256};
  /// 1-based hidden layer indices (from, to): output of `from` is projected
  /// and added to the input of `to`. {0,0} disables the link.
  std::pair<int, int> residual = {0, 0};
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 4e-5;
  double l2_penalty = 1e-5;
  LearningRateSchedule schedule = LearningRateSchedule::kConstant;
  std::uint64_t warmup_steps = 400;
  double lr_scale = 1.0;
  std::uint64_t seed = 1;
};

class NeuralClassifier : public Classifier {
 public:
  struct Layer {
    Matrix w;
    Matrix b;  // 1 x width
  };

  std::string kind() const override { return "net"; }
  int num_classes() const override { return static_cast<int>(output_.b.size()); }
  Matrix predict_proba(const Matrix& x) const override;
  void save(std::ostream& out) const override;
  static NeuralClassifier load_body(std::istream& in);

  /// Initializes weights only (no training).
  static NeuralClassifier initialize(int input_dim, int num_classes, const NetConfig& config);
  /// Trains with softmax cross-entropy; `class_weights` (empty = unweighted)
  /// scales each example's loss by the weight of its class.
  static NeuralClassifier train(const LabeledDataset& data, const NetConfig& config,
                                const std::vector<double>& class_weights = {});

  const std::vector<Layer>& hidden_layers() const { return hidden_; }
  bool operator==(const NeuralClassifier& other) const;

 private:
  Matrix logits(const Matrix& x) const;

  std::vector<Layer> hidden_;
  Layer output_;
  std::pair<int, int> residual_{0, 0};
  Matrix projection_;  // residual projection, empty when disabled
};

NetConfig mlp_defaults();
/// 256-512-1024 with a residual from layer 1 to layer 3, warmup schedule,
/// 10 epochs of batch 64.
NetConfig deep_defaults();

NeuralClassifier train_mlp(const LabeledDataset& data, std::uint64_t seed, NetConfig config = mlp_defaults());
NeuralClassifier train_deep(const LabeledDataset& data, const std::vector<double>& class_weights, std::uint64_t seed,
                            NetConfig config = deep_defaults());

/// Inverse class frequencies scaled to mean 1 over classes.
std::vector<double> inverse_frequency_weights(const std::vector<std::size_t>& counts);

}  // namespace mg2vec

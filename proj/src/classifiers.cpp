#include "mg2vec/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace mg2vec {

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

void LabeledDataset::validate(bool require_two_classes) const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ValidationError("dataset: feature rows and label count differ");
  for (int y : labels)
    if (y < 0 || y >= num_classes()) throw ValidationError("dataset: label outside the class catalog");
  if (!features.allFinite()) throw ValidationError("dataset: non-finite feature value");
  if (require_two_classes) {
    const auto counts = class_counts();
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
      throw ValidationError("dataset: training needs at least two populated classes");
  }
}

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  s.mean = x.colwise().mean();
  s.scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    s.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

std::vector<int> Classifier::predict(const Matrix& x) const {
  const Matrix p = predict_proba(x);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg;
    p.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

namespace {

void softmax_rows_inplace(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  write_f64_array(out, m.data(), static_cast<std::size_t>(m.size()));
}

Matrix read_matrix(std::istream& in) {
  const auto rows = read_u64(in);
  const auto cols = read_u64(in);
  if (rows * cols > (1ULL << 32)) throw IncompatibleArtifactError("classifier: implausible tensor shape");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  read_f64_array(in, m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

constexpr char kClassifierMagic[8] = {'M', 'G', '2', 'V', 'C', 'L', 'S', 'F'};
constexpr std::uint32_t kClassifierVersion = 1;

void write_header(std::ostream& out, const std::string& kind) {
  out.write(kClassifierMagic, sizeof(kClassifierMagic));
  write_u32(out, kClassifierVersion);
  write_string(out, kind);
}

}  // namespace

std::unique_ptr<Classifier> load_classifier(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kClassifierMagic, sizeof(magic)) != 0)
    throw IncompatibleArtifactError("classifier: bad magic");
  const auto version = read_u32(in);
  if (version != kClassifierVersion) throw IncompatibleArtifactError("classifier: unsupported version");
  const auto kind = read_string(in);
  if (kind == "logreg") return std::make_unique<LogisticRegression>(LogisticRegression::load_body(in));
  if (kind == "net") return std::make_unique<NeuralClassifier>(NeuralClassifier::load_body(in));
  throw IncompatibleArtifactError("classifier: unknown kind " + kind);
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

// Parameters are packed as a (features + 1) x classes matrix; the last row is
// the bias and is not penalized.
class SoftmaxObjective {
 public:
  SoftmaxObjective(const LabeledDataset& data, double l2) : l2_(l2) {
    const auto n = data.features.rows();
    const auto d = data.features.cols();
    x_.resize(n, d + 1);
    x_.leftCols(d) = data.features;
    x_.col(d).setOnes();
    y_ = Matrix::Zero(n, data.num_classes());
    for (Eigen::Index i = 0; i < n; ++i) y_(i, data.labels[static_cast<std::size_t>(i)]) = 1.0;
    labels_ = data.labels;
  }

  Eigen::Index rows() const { return x_.cols(); }

  double value(const Matrix& theta) const {
    Matrix z = x_ * theta;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const auto row = z.row(i);
      const double mx = row.maxCoeff();
      loss += mx + std::log((row.array() - mx).exp().sum()) - row(labels_[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(z.rows()) + 0.5 * l2_ * theta.topRows(theta.rows() - 1).squaredNorm();
  }

  // Gradient at theta; caches probabilities for Hessian products.
  Matrix gradient(const Matrix& theta) {
    probs_ = x_ * theta;
    softmax_rows_inplace(probs_);
    Matrix g = x_.transpose() * (probs_ - y_) / static_cast<double>(x_.rows());
    g.topRows(g.rows() - 1) += l2_ * theta.topRows(theta.rows() - 1);
    return g;
  }

  Matrix hessian_product(const Matrix& v) const {
    const Matrix a = x_ * v;
    const Matrix s = probs_.cwiseProduct(a);
    const Eigen::VectorXd rs = s.rowwise().sum();
    const Matrix q = s - (probs_.array().colwise() * rs.array()).matrix();
    Matrix hv = x_.transpose() * q / static_cast<double>(x_.rows());
    hv.topRows(hv.rows() - 1) += l2_ * v.topRows(v.rows() - 1);
    return hv;
  }

 private:

  double l2_;
  Matrix x_;
  Matrix y_;
  Matrix probs_;
  std::vector<int> labels_;
};

double inner(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

}  // namespace

LogisticRegression LogisticRegression::fit(const LabeledDataset& data, const LogRegConfig& config, FitReport* report) {
  data.validate();
  if (config.l2_penalty < 0) throw ValidationError("logreg: l2_penalty must be >= 0");
  SoftmaxObjective obj(data, config.l2_penalty);
  Matrix theta = Matrix::Zero(obj.rows(), data.num_classes());
  FitReport rep;
  double f = obj.value(theta);
  for (rep.iterations = 0; rep.iterations < config.max_iters; ++rep.iterations) {
    const Matrix g = obj.gradient(theta);
    rep.gradient_norm = g.cwiseAbs().maxCoeff();
    if (rep.gradient_norm < config.tolerance) {
      rep.converged = true;
      break;
    }
    // Truncated conjugate gradient on H s = -g.
    const double gnorm = g.norm();
    const double cg_tol = std::min(0.5, std::sqrt(gnorm)) * gnorm;
    Matrix s = Matrix::Zero(g.rows(), g.cols());
    Matrix r = -g;
    Matrix p = r;
    double rr = inner(r, r);
    for (int it = 0; it < 250 && std::sqrt(rr) > cg_tol; ++it) {
      const Matrix hp = obj.hessian_product(p);
      const double curvature = inner(p, hp);
      if (curvature <= 1e-300) break;
      const double alpha = rr / curvature;
      s += alpha * p;
      r -= alpha * hp;
      const double rr_next = inner(r, r);
      p = r + (rr_next / rr) * p;
      rr = rr_next;
    }
    if (s.squaredNorm() == 0.0) s = -g;
    // Armijo backtracking.
    const double slope = inner(g, s);
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Matrix candidate = theta + step * s;
      const double fc = obj.value(candidate);
      if (fc <= f + 1e-4 * step * slope) {
        theta = candidate;
        f = fc;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease possible at double precision
  }
  if (!rep.converged) {
    const Matrix g = obj.gradient(theta);
    rep.gradient_norm = g.cwiseAbs().maxCoeff();
    rep.converged = rep.gradient_norm < config.tolerance;
  }
  rep.final_objective = f;
  if (report) *report = rep;
  const auto d = data.features.cols();
  return LogisticRegression(theta.topRows(d), theta.row(d));
}

Matrix LogisticRegression::decision_function(const Matrix& x) const {
  if (x.cols() != weights_.rows()) throw ValidationError("logreg: feature dimension mismatch");
  return (x * weights_).rowwise() + bias_;
}

Matrix LogisticRegression::predict_proba(const Matrix& x) const {
  Matrix z = decision_function(x);
  softmax_rows_inplace(z);
  return z;
}

void LogisticRegression::save(std::ostream& out) const {
  write_header(out, kind());
  write_matrix(out, weights_);
  write_matrix(out, Matrix(bias_));
}

LogisticRegression LogisticRegression::load_body(std::istream& in) {
  Matrix w = read_matrix(in);
  Matrix b = read_matrix(in);
  if (b.rows() != 1 || b.cols() != w.cols()) throw IncompatibleArtifactError("logreg: inconsistent shapes");
  return LogisticRegression(std::move(w), b.row(0));
}

// ---------------------------------------------------------------------------
// Feed-forward networks

NetConfig mlp_defaults() { return NetConfig{}; }

NetConfig deep_defaults() {
  NetConfig c;
  c.hidden = {256, 512, 1024};
  c.residual = {1, 3};
  c.epochs = 10;
  c.batch_size = 64;
  c.schedule = LearningRateSchedule::kWarmup;
  c.l2_penalty = 0.0;
  return c;
}

std::vector<double> inverse_frequency_weights(const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw ValidationError("class weights: no examples");
  std::vector<double> w(counts.size(), 0.0);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    w[i] = static_cast<double>(total) / static_cast<double>(counts[i]);
    sum += w[i];
    ++present;
  }
  const double mean = sum / static_cast<double>(present);
  for (auto& x : w) x /= mean;
  return w;
}

namespace {

Matrix he_normal(int rows, int cols, double gain, Rng& rng) {
  Matrix m(rows, cols);
  const double sd = std::sqrt(gain / static_cast<double>(rows));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

struct NetCache {
  std::vector<Matrix> inputs;  // input to each hidden layer
  std::vector<Matrix> pre;     // pre-activation
  std::vector<Matrix> act;     // post-ReLU
};

}  // namespace

NeuralClassifier NeuralClassifier::initialize(int input_dim, int num_classes, const NetConfig& config) {
  if (config.hidden.empty()) throw ValidationError("net: at least one hidden layer required");
  const auto [from, to] = config.residual;
  const int depth = static_cast<int>(config.hidden.size());
  if ((from != 0 || to != 0) && !(from >= 1 && to > from + 0 && to <= depth && to >= 2))
    throw ValidationError("net: residual link must satisfy 1 <= from < to <= depth");
  Rng rng(mix_seed(config.seed, 0x4E7ULL));
  NeuralClassifier net;
  int fan_in = input_dim;
  for (int width : config.hidden) {
    net.hidden_.push_back({he_normal(fan_in, width, 2.0, rng), Matrix::Zero(1, width)});
    fan_in = width;
  }
  net.output_ = {he_normal(fan_in, num_classes, 1.0, rng), Matrix::Zero(1, num_classes)};
  net.residual_ = config.residual;
  if (from != 0) {
    const int src = config.hidden[static_cast<std::size_t>(from - 1)];
    const int dst = config.hidden[static_cast<std::size_t>(to - 2)];  // width of the input to layer `to`
    net.projection_ = he_normal(src, dst, 1.0, rng);
  }
  return net;
}

namespace {

Matrix run_net(const std::vector<NeuralClassifier::Layer>& hidden, const NeuralClassifier::Layer& output,
               std::pair<int, int> residual, const Matrix& projection, const Matrix& x, NetCache* cache) {
  Matrix h = x;
  std::vector<Matrix> acts;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    Matrix in = h;
    if (residual.first != 0 && static_cast<int>(l) + 1 == residual.second)
      in += acts[static_cast<std::size_t>(residual.first - 1)] * projection;
    Matrix pre = (in * hidden[l].w).rowwise() + hidden[l].b.row(0);
    h = pre.cwiseMax(0.0);
    acts.push_back(h);
    if (cache) {
      cache->inputs.push_back(std::move(in));
      cache->pre.push_back(std::move(pre));
    }
  }
  if (cache) cache->act = acts;
  return (h * output.w).rowwise() + output.b.row(0);
}

}  // namespace

Matrix NeuralClassifier::logits(const Matrix& x) const {
  if (x.cols() != hidden_.front().w.rows()) throw ValidationError("net: feature dimension mismatch");
  return run_net(hidden_, output_, residual_, projection_, x, nullptr);
}

Matrix NeuralClassifier::predict_proba(const Matrix& x) const {
  Matrix z = logits(x);
  softmax_rows_inplace(z);
  return z;
}

bool NeuralClassifier::operator==(const NeuralClassifier& other) const {
  if (hidden_.size() != other.hidden_.size() || residual_ != other.residual_) return false;
  for (std::size_t i = 0; i < hidden_.size(); ++i)
    if (hidden_[i].w != other.hidden_[i].w || hidden_[i].b != other.hidden_[i].b) return false;
  return output_.w == other.output_.w && output_.b == other.output_.b && projection_ == other.projection_;
}

NeuralClassifier NeuralClassifier::train(const LabeledDataset& data, const NetConfig& config,
                                         const std::vector<double>& class_weights) {
  data.validate();
  if (config.batch_size == 0) throw ValidationError("net: batch_size must be >= 1");
  if (!class_weights.empty() && class_weights.size() != data.classes.size())
    throw ValidationError("net: need one class weight per class");
  NeuralClassifier net = initialize(static_cast<int>(data.features.cols()), data.num_classes(), config);

  // Parameter and gradient views for Adam.
  std::vector<Matrix*> params;
  std::vector<bool> penalize;
  auto add = [&](Matrix& p, bool is_weight) {
    params.push_back(&p);
    penalize.push_back(is_weight);
  };
  for (auto& L : net.hidden_) {
    add(L.w, true);
    add(L.b, false);
  }
  add(net.output_.w, true);
  add(net.output_.b, false);
  if (net.projection_.size() != 0) add(net.projection_, true);
  std::vector<Matrix> grads, m, v;
  for (auto* p : params) {
    grads.push_back(Matrix::Zero(p->rows(), p->cols()));
    m.push_back(Matrix::Zero(p->rows(), p->cols()));
    v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;

  Rng rng(mix_seed(config.seed, 0x7A1ULL));
  const auto n = static_cast<std::size_t>(data.features.rows());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t depth = net.hidden_.size();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const auto bsz = static_cast<Eigen::Index>(end - start);
      Matrix xb(bsz, data.features.cols());
      std::vector<int> yb(static_cast<std::size_t>(bsz));
      for (Eigen::Index r = 0; r < bsz; ++r) {
        xb.row(r) = data.features.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
        yb[static_cast<std::size_t>(r)] = data.labels[order[start + static_cast<std::size_t>(r)]];
      }
      NetCache cache;
      Matrix dz = run_net(net.hidden_, net.output_, net.residual_, net.projection_, xb, &cache);
      softmax_rows_inplace(dz);
      for (Eigen::Index r = 0; r < bsz; ++r) {
        const int y = yb[static_cast<std::size_t>(r)];
        const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
        epoch_loss += -w * std::log(std::max(dz(r, y), 1e-300));
        dz(r, y) -= 1.0;
        dz.row(r) *= w / static_cast<double>(bsz);
      }
      if (!std::isfinite(epoch_loss)) {
        std::ostringstream msg;
        msg << "net training diverged: non-finite loss at epoch " << epoch << ", step " << t;
        throw DivergenceError(msg.str());
      }

      // Backward.
      std::size_t gi = 2 * depth;
      grads[gi] = cache.act.back().transpose() * dz;
      grads[gi + 1] = dz.colwise().sum();
      std::vector<Matrix> dact(depth);
      for (std::size_t l = 0; l + 1 < depth; ++l) dact[l] = Matrix::Zero(bsz, net.hidden_[l].w.cols());
      dact[depth - 1] = dz * net.output_.w.transpose();
      Matrix dproj;
      if (net.projection_.size() != 0) dproj = Matrix::Zero(net.projection_.rows(), net.projection_.cols());
      for (std::size_t l = depth; l-- > 0;) {
        Matrix dpre = dact[l].cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
        grads[2 * l] = cache.inputs[l].transpose() * dpre;
        grads[2 * l + 1] = dpre.colwise().sum();
        const Matrix din = dpre * net.hidden_[l].w.transpose();
        if (net.residual_.first != 0 && static_cast<int>(l) + 1 == net.residual_.second) {
          const auto src = static_cast<std::size_t>(net.residual_.first - 1);
          dproj += cache.act[src].transpose() * din;
          dact[src] += din * net.projection_.transpose();
        }
        if (l > 0) dact[l - 1] += din;
      }
      if (net.projection_.size() != 0) grads.back() = dproj;
      if (config.l2_penalty > 0.0) {
        for (std::size_t p = 0; p < params.size(); ++p)
          if (penalize[p]) grads[p] += config.l2_penalty * (*params[p]);
      }

      ++t;
      const double lr = config.schedule == LearningRateSchedule::kWarmup
                            ? warmup_learning_rate(t, config.hidden.front(), config.warmup_steps, config.lr_scale)
                            : config.learning_rate;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      for (std::size_t p = 0; p < params.size(); ++p) {
        m[p] = beta1 * m[p] + (1.0 - beta1) * grads[p];
        v[p].array() = beta2 * v[p].array() + (1.0 - beta2) * grads[p].array().square();
        params[p]->array() -= lr * (m[p].array() / c1) / ((v[p].array() / c2).sqrt() + eps);
      }
    }
  }
  return net;
}

void NeuralClassifier::save(std::ostream& out) const {
  write_header(out, kind());
  write_u64(out, hidden_.size());
  write_u64(out, static_cast<std::uint64_t>(residual_.first));
  write_u64(out, static_cast<std::uint64_t>(residual_.second));
  for (const auto& L : hidden_) {
    write_matrix(out, L.w);
    write_matrix(out, L.b);
  }
  write_matrix(out, output_.w);
  write_matrix(out, output_.b);
  write_matrix(out, projection_);
}

NeuralClassifier NeuralClassifier::load_body(std::istream& in) {
  NeuralClassifier net;
  const auto depth = read_u64(in);
  if (depth == 0 || depth > 64) throw IncompatibleArtifactError("net: implausible depth");
  net.residual_.first = static_cast<int>(read_u64(in));
  net.residual_.second = static_cast<int>(read_u64(in));
  for (std::uint64_t i = 0; i < depth; ++i) {
    Layer L;
    L.w = read_matrix(in);
    L.b = read_matrix(in);
    net.hidden_.push_back(std::move(L));
  }
  net.output_.w = read_matrix(in);
  net.output_.b = read_matrix(in);
  net.projection_ = read_matrix(in);
  return net;
}

NeuralClassifier train_mlp(const LabeledDataset& data, std::uint64_t seed, NetConfig config) {
  config.seed = seed;
  return NeuralClassifier::train(data, config);
}

NeuralClassifier train_deep(const LabeledDataset& data, const std::vector<double>& class_weights, std::uint64_t seed,
                            NetConfig config) {
  config.seed = seed;
  return NeuralClassifier::train(data, config, class_weights);
}

}  // namespace mg2vec

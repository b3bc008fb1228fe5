#include "mg2vec/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace mg2vec {

void TransformerConfig::validate() const {
  if (vocab_size < 1) throw ValidationError("transformer: vocab_size must be >= 1");
  if (num_layers < 1) throw ValidationError("transformer: num_layers must be >= 1");
  if (num_heads < 1 || model_dim < 1 || model_dim % num_heads != 0)
    throw ValidationError("transformer: model_dim must be divisible by num_heads");
  if (ff_dim < 1) throw ValidationError("transformer: ff_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("transformer: dropout must lie in [0,1)");
  if (max_tokens < 1) throw ValidationError("transformer: max_tokens must be >= 1");
  if (!(init_std > 0.0)) throw ValidationError("transformer: init_std must be positive");
}

std::string TransformerConfig::describe() const {
  std::ostringstream os;
  os << "vocab_size=" << vocab_size << ";num_layers=" << num_layers << ";num_heads=" << num_heads
     << ";model_dim=" << model_dim << ";ff_dim=" << ff_dim << ";dropout=" << format_double(dropout)
     << ";max_tokens=" << max_tokens << ";bidirectional=" << (bidirectional ? 1 : 0)
     << ";init_std=" << format_double(init_std) << ";seed=" << seed << ";";
  return os.str();
}

void MaskingConfig::validate() const {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ValidationError("masking: mask_ratio must lie in [0,1]");
  if (mask_token_fraction < 0.0 || random_token_fraction < 0.0 ||
      mask_token_fraction + random_token_fraction > 1.0 + 1e-12)
    throw ValidationError("masking: replacement fractions must be non-negative and sum to at most 1");
}

MaskedInput apply_mask(std::span<const TokenId> tokens, const MaskingConfig& masking, const KmerVocabulary& vocab,
                       Rng& rng) {
  if (tokens.empty()) throw DomainError("apply_mask: empty token list");
  MaskedInput out;
  out.input.assign(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (rng.bernoulli(masking.mask_ratio)) out.positions.push_back(i);
  if (out.positions.empty()) out.positions.push_back(rng.index(tokens.size()));
  for (auto pos : out.positions) {
    out.targets.push_back(tokens[pos]);
    if (masking.mask_token_fraction >= 1.0) {
      out.input[pos] = vocab.mask_id();
      continue;
    }
    const double u = rng.uniform();
    if (u < masking.mask_token_fraction) {
      out.input[pos] = vocab.mask_id();
    } else if (u < masking.mask_token_fraction + masking.random_token_fraction) {
      out.input[pos] = static_cast<TokenId>(rng.index(static_cast<std::uint64_t>(vocab.num_kmers())));
    }
  }
  return out;
}

TransformerParams TransformerParams::zeros_like() const {
  TransformerParams z = *this;
  z.set_zero();
  return z;
}

void TransformerParams::set_zero() {
  visit([](const std::string&, Matrix& m) { m.setZero(); });
}

bool TransformerParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

std::size_t TransformerParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

Matrix sinusoidal_positions(int max_tokens, int dim) {
  Matrix pe(max_tokens, dim);
  for (int pos = 0; pos < max_tokens; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix* xhat_out,
                  Eigen::VectorXd* rstd_out) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd rstd = (var.array() + kLayerNormEps).rsqrt();
  Matrix xhat = (centered.array().colwise() * rstd.array()).matrix();
  Matrix y = ((xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array()).matrix();
  if (xhat_out) *xhat_out = std::move(xhat);
  if (rstd_out) *rstd_out = rstd;
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Eigen::VectorXd& rstd, const Matrix& gain,
                           Matrix& dgain, Matrix& dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Eigen::ArrayXXd dxhat = dy.array().rowwise() * gain.row(0).array();
  const Eigen::VectorXd m1 = dxhat.rowwise().mean();
  const Eigen::VectorXd m2 = (dxhat * xhat.array()).rowwise().mean();
  Eigen::ArrayXXd dx = dxhat.colwise() - m1.array();
  dx -= xhat.array().colwise() * m2.array();
  dx.colwise() *= rstd.array();
  return dx.matrix();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void softmax_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
}

// Inverted-dropout mask, or an empty matrix when dropout is inactive.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return {};
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->bernoulli(p) ? 0.0 : keep;
  return mask;
}

void apply_dropout(Matrix& x, const Matrix& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

struct LayerCache {
  Matrix ln1_xhat;
  Eigen::VectorXd ln1_rstd;
  Matrix a;
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix o;
  Matrix drop1;
  Matrix ln2_xhat;
  Eigen::VectorXd ln2_rstd;
  Matrix b;
  Matrix z;
  Matrix g;
  Matrix drop2;
};

struct ForwardCache {
  Matrix drop0;
  std::vector<LayerCache> layers;
  Matrix lnf_xhat;
  Eigen::VectorXd lnf_rstd;
};

}  // namespace

TransformerModel::TransformerModel(const TransformerConfig& config) : config_(config) {
  config_.validate();
  Rng rng(mix_seed(config_.seed, 0x7F0001ULL));
  const int d = config_.model_dim;
  const int f = config_.ff_dim;
  const double s = config_.init_std;
  params_.embedding = random_matrix(config_.vocab_size, d, s, rng);
  params_.output_bias = Matrix::Zero(1, config_.vocab_size);
  for (int l = 0; l < config_.num_layers; ++l) {
    LayerParams L;
    L.ln1_gain = Matrix::Ones(1, d);
    L.ln1_bias = Matrix::Zero(1, d);
    L.wq = random_matrix(d, d, s, rng);
    L.wk = random_matrix(d, d, s, rng);
    L.wv = random_matrix(d, d, s, rng);
    L.wo = random_matrix(d, d, s, rng);
    L.bq = Matrix::Zero(1, d);
    L.bk = Matrix::Zero(1, d);
    L.bv = Matrix::Zero(1, d);
    L.bo = Matrix::Zero(1, d);
    L.ln2_gain = Matrix::Ones(1, d);
    L.ln2_bias = Matrix::Zero(1, d);
    L.w1 = random_matrix(d, f, s, rng);
    L.b1 = Matrix::Zero(1, f);
    L.w2 = random_matrix(f, d, s, rng);
    L.b2 = Matrix::Zero(1, d);
    params_.layers.push_back(std::move(L));
  }
  params_.final_gain = Matrix::Ones(1, d);
  params_.final_bias = Matrix::Zero(1, d);
  positions_ = sinusoidal_positions(config_.max_tokens, d);
}

namespace {

// Runs the encoder stack. Fills `cache` when given (training), applies dropout
// when `rng` is given, records attention maps when `attention` is given.
Matrix encode(const TransformerConfig& cfg, const TransformerParams& P, const Matrix& positions,
              std::span<const TokenId> ids, ForwardCache* cache, Rng* rng,
              std::vector<std::vector<Matrix>>* attention) {
  const auto T = static_cast<Eigen::Index>(ids.size());
  const int d = cfg.model_dim;
  const int H = cfg.num_heads;
  const int dh = d / H;
  const double emb_scale = std::sqrt(static_cast<double>(d));
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) throw DomainError("transformer: token id out of range");
    x.row(t) = emb_scale * P.embedding.row(id) + positions.row(t);
  }
  Matrix drop0 = dropout_mask(T, d, cfg.dropout, rng);
  apply_dropout(x, drop0);
  if (cache) {
    cache->drop0 = std::move(drop0);
    cache->layers.resize(P.layers.size());
  }
  if (attention) attention->assign(P.layers.size(), {});

  for (std::size_t l = 0; l < P.layers.size(); ++l) {
    const auto& L = P.layers[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;

    c.a = layer_norm(x, L.ln1_gain, L.ln1_bias, &c.ln1_xhat, &c.ln1_rstd);
    c.q = (c.a * L.wq).rowwise() + L.bq.row(0);
    c.k = (c.a * L.wk).rowwise() + L.bk.row(0);
    c.v = (c.a * L.wv).rowwise() + L.bv.row(0);
    c.o.resize(T, d);
    c.probs.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      Matrix s = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * att_scale;
      if (!cfg.bidirectional) {
        for (Eigen::Index i = 0; i < T; ++i)
          for (Eigen::Index j = i + 1; j < T; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
      }
      softmax_rows(s);
      c.o.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
      if (attention) (*attention)[l].push_back(s);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix attn = (c.o * L.wo).rowwise() + L.bo.row(0);
    c.drop1 = dropout_mask(T, d, cfg.dropout, rng);
    apply_dropout(attn, c.drop1);
    x += attn;

    c.b = layer_norm(x, L.ln2_gain, L.ln2_bias, &c.ln2_xhat, &c.ln2_rstd);
    c.z = (c.b * L.w1).rowwise() + L.b1.row(0);
    c.g = c.z.unaryExpr([](double v) { return gelu(v); });
    Matrix ff = (c.g * L.w2).rowwise() + L.b2.row(0);
    c.drop2 = dropout_mask(T, d, cfg.dropout, rng);
    apply_dropout(ff, c.drop2);
    x += ff;
  }
  if (cache) return layer_norm(x, P.final_gain, P.final_bias, &cache->lnf_xhat, &cache->lnf_rstd);
  return layer_norm(x, P.final_gain, P.final_bias, nullptr, nullptr);
}

}  // namespace

ForwardResult TransformerModel::forward(std::span<const TokenId> ids, bool keep_attention) const {
  if (ids.size() > static_cast<std::size_t>(config_.max_tokens))
    throw ValidationError("transformer: input of " + std::to_string(ids.size()) + " tokens exceeds max_tokens=" +
                          std::to_string(config_.max_tokens) + "; split the read into windows first");
  if (ids.empty()) throw DomainError("transformer: empty input");
  ForwardResult out;
  out.hidden = encode(config_, params_, positions_, ids, nullptr, nullptr, keep_attention ? &out.attention : nullptr);
  out.logits = (out.hidden * params_.embedding.transpose()).rowwise() + params_.output_bias.row(0);
  return out;
}

double TransformerModel::loss_and_grad(const MaskedInput& batch, TransformerParams& grad, double grad_scale,
                                       Rng* dropout_rng) const {
  const auto& ids = batch.input;
  if (ids.size() > static_cast<std::size_t>(config_.max_tokens))
    throw ValidationError("transformer: window exceeds max_tokens; split the read into windows first");
  if (batch.positions.empty()) throw DomainError("mlm_loss: no masked positions");
  const auto T = static_cast<Eigen::Index>(ids.size());
  const int d = config_.model_dim;
  const int H = config_.num_heads;
  const int dh = d / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& P = params_;

  ForwardCache cache;
  const Matrix hidden = encode(config_, P, positions_, ids, &cache, dropout_rng, nullptr);

  // Output head, restricted to masked rows.
  const auto M = static_cast<Eigen::Index>(batch.positions.size());
  Matrix hm(M, d);
  for (Eigen::Index r = 0; r < M; ++r) hm.row(r) = hidden.row(static_cast<Eigen::Index>(batch.positions[r]));
  Matrix logits = (hm * P.embedding.transpose()).rowwise() + P.output_bias.row(0);
  double loss = 0.0;
  Matrix& dlogits = logits;  // overwritten in place with d loss / d logits
  for (Eigen::Index r = 0; r < M; ++r) {
    auto row = dlogits.row(r);
    const auto target = batch.targets[static_cast<std::size_t>(r)];
    const double mx = row.maxCoeff();
    const double shifted_target = row(target) - mx;
    row = (row.array() - mx).exp().matrix();
    const double z = row.sum();
    loss += std::log(z) - shifted_target;
    row /= z;
    row(target) -= 1.0;
  }
  loss /= static_cast<double>(M);
  dlogits *= grad_scale / static_cast<double>(M);

  grad.embedding.noalias() += dlogits.transpose() * hm;
  grad.output_bias += dlogits.colwise().sum();
  Matrix dhm = dlogits * P.embedding;
  Matrix dtop = Matrix::Zero(T, d);
  for (Eigen::Index r = 0; r < M; ++r) dtop.row(static_cast<Eigen::Index>(batch.positions[r])) += dhm.row(r);

  Matrix dx = layer_norm_backward(dtop, cache.lnf_xhat, cache.lnf_rstd, P.final_gain, grad.final_gain, grad.final_bias);

  for (std::size_t li = P.layers.size(); li-- > 0;) {
    const auto& L = P.layers[li];
    auto& G = grad.layers[li];
    const auto& c = cache.layers[li];

    // Feed-forward branch.
    Matrix df = dx;
    if (c.drop2.size() != 0) df.array() *= c.drop2.array();
    G.w2.noalias() += c.g.transpose() * df;
    G.b2 += df.colwise().sum();
    Matrix dz = df * L.w2.transpose();
    dz.array() *= c.z.unaryExpr([](double v) { return gelu_grad(v); }).array();
    G.w1.noalias() += c.b.transpose() * dz;
    G.b1 += dz.colwise().sum();
    Matrix db = dz * L.w1.transpose();
    dx += layer_norm_backward(db, c.ln2_xhat, c.ln2_rstd, L.ln2_gain, G.ln2_gain, G.ln2_bias);

    // Attention branch.
    Matrix dattn = dx;
    if (c.drop1.size() != 0) dattn.array() *= c.drop1.array();
    G.wo.noalias() += c.o.transpose() * dattn;
    G.bo += dattn.colwise().sum();
    Matrix dO = dattn * L.wo.transpose();
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < H; ++h) {
      const Matrix& p = c.probs[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      Matrix dp = dOh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = p.transpose() * dOh;
      const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
      Matrix ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * att_scale;
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    G.wq.noalias() += c.a.transpose() * dq;
    G.wk.noalias() += c.a.transpose() * dk;
    G.wv.noalias() += c.a.transpose() * dv;
    G.bq += dq.colwise().sum();
    G.bk += dk.colwise().sum();
    G.bv += dv.colwise().sum();
    Matrix da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx += layer_norm_backward(da, c.ln1_xhat, c.ln1_rstd, L.ln1_gain, G.ln1_gain, G.ln1_bias);
  }

  if (cache.drop0.size() != 0) dx.array() *= cache.drop0.array();
  const double emb_scale = std::sqrt(static_cast<double>(d));
  for (Eigen::Index t = 0; t < T; ++t) grad.embedding.row(ids[static_cast<std::size_t>(t)]) += emb_scale * dx.row(t);
  return loss;
}

EmbeddingTable TransformerModel::embedding_table(std::uint64_t vocab_fingerprint) const {
  EmbeddingTable t(static_cast<std::size_t>(params_.embedding.rows()), static_cast<std::size_t>(params_.embedding.cols()),
                   vocab_fingerprint);
  std::memcpy(t.data(), params_.embedding.data(), sizeof(double) * static_cast<std::size_t>(params_.embedding.size()));
  return t;
}

void TransformerModel::load_embedding(const EmbeddingTable& table) {
  if (table.rows() != static_cast<std::size_t>(params_.embedding.rows()) ||
      table.dim() != static_cast<std::size_t>(params_.embedding.cols()))
    throw ValidationError("transformer: embedding prior shape " + std::to_string(table.rows()) + "x" +
                          std::to_string(table.dim()) + " does not match vocab_size x model_dim " +
                          std::to_string(params_.embedding.rows()) + "x" + std::to_string(params_.embedding.cols()));
  std::memcpy(params_.embedding.data(), table.data(), sizeof(double) * table.values().size());
}

namespace {
constexpr char kCheckpointMagic[8] = {'M', 'G', '2', 'V', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

TransformerConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw IncompatibleArtifactError("checkpoint: malformed config entry");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IncompatibleArtifactError(std::string("checkpoint: config lacks ") + key);
    return it->second;
  };
  TransformerConfig c;
  c.vocab_size = std::stoi(get("vocab_size"));
  c.num_layers = std::stoi(get("num_layers"));
  c.num_heads = std::stoi(get("num_heads"));
  c.model_dim = std::stoi(get("model_dim"));
  c.ff_dim = std::stoi(get("ff_dim"));
  c.dropout = std::stod(get("dropout"));
  c.max_tokens = std::stoi(get("max_tokens"));
  c.bidirectional = get("bidirectional") == "1";
  c.init_std = std::stod(get("init_std"));
  c.seed = std::stoull(get("seed"));
  return c;
}

bool same_architecture(const TransformerConfig& a, const TransformerConfig& b) {
  return a.vocab_size == b.vocab_size && a.num_layers == b.num_layers && a.num_heads == b.num_heads &&
         a.model_dim == b.model_dim && a.ff_dim == b.ff_dim && a.max_tokens == b.max_tokens &&
         a.bidirectional == b.bidirectional;
}
}  // namespace

void TransformerModel::save(std::ostream& out) const {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(out, kCheckpointVersion);
  write_string(out, config_.describe());
  std::uint64_t count = 0;
  params_.visit([&](const std::string&, const Matrix&) { ++count; });
  write_u64(out, count);
  params_.visit([&](const std::string& name, const Matrix& m) {
    write_string(out, name);
    write_u64(out, static_cast<std::uint64_t>(m.rows()));
    write_u64(out, static_cast<std::uint64_t>(m.cols()));
    write_f64_array(out, m.data(), static_cast<std::size_t>(m.size()));
  });
}

TransformerModel TransformerModel::load(std::istream& in, const std::optional<TransformerConfig>& expected) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IncompatibleArtifactError("checkpoint: bad magic");
  const auto version = read_u32(in);
  if (version != kCheckpointVersion)
    throw IncompatibleArtifactError("checkpoint: unsupported version " + std::to_string(version));
  const auto config = parse_config(read_string(in));
  if (expected && !same_architecture(config, *expected))
    throw IncompatibleArtifactError("checkpoint: stored architecture {" + config.describe() +
                                    "} does not match the configured one {" + expected->describe() + "}");
  TransformerModel model(config);
  const auto count = read_u64(in);
  std::map<std::string, Matrix*> slots;
  model.params_.visit([&](const std::string& name, Matrix& m) { slots[name] = &m; });
  if (count != slots.size()) throw IncompatibleArtifactError("checkpoint: unexpected tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = read_string(in);
    const auto rows = read_u64(in);
    const auto cols = read_u64(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw IncompatibleArtifactError("checkpoint: unknown tensor " + name);
    Matrix& m = *it->second;
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
      throw IncompatibleArtifactError("checkpoint: tensor " + name + " has an unexpected shape");
    read_f64_array(in, m.data(), static_cast<std::size_t>(m.size()));
  }
  return model;
}

double mlm_loss(const Matrix& logits, std::span<const TokenId> targets, std::span<const std::size_t> positions) {
  if (positions.empty()) throw DomainError("mlm_loss: no masked positions");
  if (targets.size() != positions.size()) throw DomainError("mlm_loss: targets and positions differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto row = logits.row(static_cast<Eigen::Index>(positions[i]));
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[i]);
  }
  return total / static_cast<double>(positions.size());
}

double warmup_learning_rate(std::uint64_t step, int model_dim, std::uint64_t warmup_steps, double scale) {
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(std::max<std::uint64_t>(warmup_steps, 1));
  return scale * std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamOptimizer::AdamOptimizer(const TransformerParams& like, double beta1, double beta2, double eps)
    : m_(like.zeros_like()), v_(like.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(TransformerParams& params, const TransformerParams& grad, double learning_rate) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<Matrix*> p, g, m, v;
  params.visit([&](const std::string&, Matrix& x) { p.push_back(&x); });
  const_cast<TransformerParams&>(grad).visit([&](const std::string&, Matrix& x) { g.push_back(&x); });
  m_.visit([&](const std::string&, Matrix& x) { m.push_back(&x); });
  v_.visit([&](const std::string&, Matrix& x) { v.push_back(&x); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i]->array() = beta1_ * m[i]->array() + (1.0 - beta1_) * g[i]->array();
    v[i]->array() = beta2_ * v[i]->array() + (1.0 - beta2_) * g[i]->array().square();
    p[i]->array() -= learning_rate * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + eps_);
  }
}

std::vector<std::vector<TokenId>> split_windows(std::span<const TokenId> tokens, std::size_t max_tokens) {
  if (max_tokens == 0) throw DomainError("split_windows: max_tokens must be >= 1");
  std::vector<std::vector<TokenId>> windows;
  for (std::size_t i = 0; i < tokens.size(); i += max_tokens) {
    const auto end = std::min(tokens.size(), i + max_tokens);
    windows.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return windows;
}

MaskedEvaluation evaluate_masked(const TransformerModel& model, const std::vector<std::vector<TokenId>>& windows,
                                 const MaskingConfig& masking, const KmerVocabulary& vocab) {
  Rng rng(mix_seed(masking.seed, 0xE7A1ULL));
  MaskedEvaluation ev;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& w : windows) {
    if (w.empty()) continue;
    const auto masked = apply_mask(w, masking, vocab, rng);
    const auto fr = model.forward(masked.input);
    loss_sum += mlm_loss(fr.logits, masked.targets, masked.positions) * static_cast<double>(masked.positions.size());
    for (std::size_t i = 0; i < masked.positions.size(); ++i) {
      Eigen::Index arg;
      fr.logits.row(static_cast<Eigen::Index>(masked.positions[i])).maxCoeff(&arg);
      correct += arg == masked.targets[i];
    }
    ev.masked += masked.positions.size();
  }
  if (ev.masked) {
    ev.loss = loss_sum / static_cast<double>(ev.masked);
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.masked);
  }
  return ev;
}

PretrainResult pretrain(const std::vector<ReadRecord>& reads, const KmerVocabulary& vocab,
                        const EmbeddingTable* global_prior, const TransformerConfig& config,
                        const MaskingConfig& masking, const PretrainConfig& schedule) {
  config.validate();
  masking.validate();
  if (config.vocab_size != vocab.size())
    throw ValidationError("pretrain: transformer vocab_size does not match the k-mer vocabulary");
  if (schedule.batch_size == 0) throw ValidationError("pretrain: batch_size must be >= 1");

  std::vector<std::vector<TokenId>> windows;
  const std::size_t limit = schedule.max_reads ? std::min(schedule.max_reads, reads.size()) : reads.size();
  for (std::size_t i = 0; i < limit; ++i) {
    const auto tokens = tokenize(reads[i].sequence, vocab, 1);
    for (auto& w : split_windows(tokens, static_cast<std::size_t>(config.max_tokens))) windows.push_back(std::move(w));
  }
  if (windows.empty()) throw Error("pretrain: no read is long enough to yield a k-mer token");

  PretrainResult result{TransformerModel(config), EmbeddingTable{}, 0.0, {}, 0};
  TransformerModel& model = result.model;
  if (global_prior) model.load_embedding(*global_prior);

  const std::size_t probe = std::min<std::size_t>(windows.size(), 64);
  result.initial_loss =
      evaluate_masked(model, std::vector<std::vector<TokenId>>(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(probe)),
                      masking, vocab)
          .loss;

  Rng rng(mix_seed(schedule.seed, 0x9E7A1ULL));
  AdamOptimizer adam(model.params());
  TransformerParams grad = model.params().zeros_like();
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t consecutive_bad = 0;

  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.set_zero();
      for (std::size_t b = start; b < end; ++b) {
        const auto masked = apply_mask(windows[order[b]], masking, vocab, rng);
        const double loss = model.loss_and_grad(masked, grad, scale, &rng);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "pretrain diverged: non-finite masked loss at epoch " << epoch << ", step " << adam.steps();
          throw DivergenceError(msg.str());
        }
        epoch_loss += loss;
      }
      const double lr = warmup_learning_rate(adam.steps() + 1, config.model_dim, schedule.warmup_steps, schedule.lr_scale);
      adam.step(model.params(), grad, lr);
    }
    epoch_loss /= static_cast<double>(order.size());
    result.epoch_loss.push_back(epoch_loss);
    if (schedule.on_epoch) schedule.on_epoch(epoch, epoch_loss);
    consecutive_bad = epoch_loss > 2.0 * result.initial_loss ? consecutive_bad + 1 : 0;
    if (consecutive_bad >= 3) {
      std::ostringstream msg;
      msg << "pretrain diverged: epoch loss " << epoch_loss << " exceeded twice the initial loss "
          << result.initial_loss << " for 3 consecutive epochs";
      throw DivergenceError(msg.str());
    }
  }
  result.steps = adam.steps();
  result.contextual = model.embedding_table(vocab.fingerprint());
  return result;
}

}  // namespace mg2vec

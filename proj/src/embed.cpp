#include "mg2vec/embed.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

namespace mg2vec {

RepresentationMode parse_representation_mode(const std::string& name) {
  if (name == "global") return RepresentationMode::kGlobal;
  if (name == "contextual") return RepresentationMode::kContextual;
  if (name == "encoder") return RepresentationMode::kEncoder;
  if (name == "concat") return RepresentationMode::kConcat;
  if (name == "kmer-frequency") return RepresentationMode::kKmerFrequency;
  throw ValidationError("unknown representation mode '" + name +
                        "' (expected global, contextual, encoder, concat or kmer-frequency)");
}

std::string to_string(RepresentationMode mode) {
  switch (mode) {
    case RepresentationMode::kGlobal: return "global";
    case RepresentationMode::kContextual: return "contextual";
    case RepresentationMode::kEncoder: return "encoder";
    case RepresentationMode::kConcat: return "concat";
    case RepresentationMode::kKmerFrequency: return "kmer-frequency";
  }
  return "?";
}

Pooling parse_pooling(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "max") return Pooling::kMax;
  throw ValidationError("unknown pooling '" + name + "' (expected mean or max)");
}

std::string to_string(Pooling pooling) { return pooling == Pooling::kMax ? "max" : "mean"; }

void require_artifacts(RepresentationMode mode, const EmbeddingArtifacts& a) {
  if (!a.vocab) throw ValidationError("embed: vocabulary not loaded");
  const bool need_global = mode == RepresentationMode::kGlobal || mode == RepresentationMode::kConcat;
  const bool need_contextual = mode == RepresentationMode::kContextual || mode == RepresentationMode::kConcat;
  const bool need_model = mode == RepresentationMode::kEncoder;
  if (need_global && !a.global)
    throw ValidationError("embed: mode " + to_string(mode) + " needs the global structural embeddings");
  if (need_contextual && !a.contextual)
    throw ValidationError("embed: mode " + to_string(mode) + " needs the contextual embeddings from pretraining");
  if (need_model && !a.model) throw ValidationError("embed: mode encoder needs a pretrained transformer");
  const auto rows = static_cast<std::size_t>(a.vocab->size());
  if (need_global && a.global->rows() != rows) throw ValidationError("embed: global table does not match vocabulary");
  if (need_contextual && a.contextual->rows() != rows)
    throw ValidationError("embed: contextual table does not match vocabulary");
}

std::size_t representation_dim(RepresentationMode mode, const EmbeddingArtifacts& a) {
  require_artifacts(mode, a);
  switch (mode) {
    case RepresentationMode::kGlobal: return a.global->dim();
    case RepresentationMode::kContextual: return a.contextual->dim();
    case RepresentationMode::kEncoder: return static_cast<std::size_t>(a.model->config().model_dim);
    case RepresentationMode::kConcat: return a.global->dim() + a.contextual->dim();
    case RepresentationMode::kKmerFrequency: return static_cast<std::size_t>(a.vocab->num_kmers());
  }
  return 0;
}

std::vector<double> kmer_vector(TokenId id, RepresentationMode mode, const EmbeddingArtifacts& a) {
  require_artifacts(mode, a);
  if (id < 0 || id >= a.vocab->size()) throw DomainError("kmer_vector: id out of range");
  const auto row = static_cast<std::size_t>(id);
  std::vector<double> v;
  switch (mode) {
    case RepresentationMode::kGlobal: {
      const auto g = a.global->row(row);
      v.assign(g.begin(), g.end());
      break;
    }
    case RepresentationMode::kContextual: {
      const auto c = a.contextual->row(row);
      v.assign(c.begin(), c.end());
      break;
    }
    case RepresentationMode::kConcat: {
      const auto g = a.global->row(row);
      const auto c = a.contextual->row(row);
      v.assign(g.begin(), g.end());
      v.insert(v.end(), c.begin(), c.end());
      break;
    }
    case RepresentationMode::kKmerFrequency:
      v.assign(static_cast<std::size_t>(a.vocab->num_kmers()), 0.0);
      if (!a.vocab->is_special(id)) v[row] = 1.0;
      break;
    case RepresentationMode::kEncoder:
      throw ValidationError("kmer_vector: encoder vectors depend on context; use kmer_vector_in_context");
  }
  return v;
}

std::vector<double> kmer_vector_in_context(std::span<const TokenId> window, std::size_t position,
                                           const EmbeddingArtifacts& a) {
  require_artifacts(RepresentationMode::kEncoder, a);
  if (position >= window.size()) throw DomainError("kmer_vector_in_context: position outside window");
  const auto fr = a.model->forward(window);
  const auto row = fr.hidden.row(static_cast<Eigen::Index>(position));
  return std::vector<double>(row.data(), row.data() + row.size());
}

namespace {

class Pooler {
 public:
  Pooler(std::size_t dim, Pooling pooling)
      : pooling_(pooling), acc_(dim, pooling == Pooling::kMax ? -std::numeric_limits<double>::infinity() : 0.0) {}

  template <typename Range>
  void add(const Range& v) {
    std::size_t i = 0;
    for (double x : v) {
      acc_[i] = pooling_ == Pooling::kMax ? std::max(acc_[i], x) : acc_[i] + x;
      ++i;
    }
    ++count_;
  }
  std::size_t count() const { return count_; }
  std::vector<double> finish() {
    if (pooling_ == Pooling::kMean)
      for (auto& x : acc_) x /= static_cast<double>(count_);
    return std::move(acc_);
  }

 private:
  Pooling pooling_;
  std::vector<double> acc_;
  std::size_t count_ = 0;
};

}  // namespace

std::vector<double> embed_read(std::string_view sequence, RepresentationMode mode, const EmbeddingArtifacts& a,
                               Pooling pooling) {
  const std::size_t dim = representation_dim(mode, a);
  const auto tokens = tokenize(sequence, *a.vocab, 1);
  if (tokens.empty()) throw UnembeddableReadError("read shorter than k yields no k-mer");
  Pooler pool(dim, pooling);

  if (mode == RepresentationMode::kEncoder) {
    for (const auto& window : split_windows(tokens, static_cast<std::size_t>(a.model->config().max_tokens))) {
      const auto fr = a.model->forward(window);
      for (std::size_t t = 0; t < window.size(); ++t)
        if (window[t] != a.vocab->unk_id()) pool.add(fr.hidden.row(static_cast<Eigen::Index>(t)));
    }
  } else if (mode == RepresentationMode::kKmerFrequency) {
    std::vector<double> counts(dim, 0.0);
    std::size_t n = 0;
    for (TokenId t : tokens) {
      if (a.vocab->is_special(t)) continue;
      counts[static_cast<std::size_t>(t)] += 1.0;
      ++n;
    }
    if (n == 0) throw UnembeddableReadError("read contains only unknown k-mers");
    if (pooling == Pooling::kMax) {
      for (auto& c : counts) c = c > 0 ? 1.0 : 0.0;
    } else {
      for (auto& c : counts) c /= static_cast<double>(n);
    }
    return counts;
  } else {
    for (TokenId t : tokens) {
      if (t == a.vocab->unk_id()) continue;
      switch (mode) {
        case RepresentationMode::kGlobal: pool.add(a.global->row(static_cast<std::size_t>(t))); break;
        case RepresentationMode::kContextual: pool.add(a.contextual->row(static_cast<std::size_t>(t))); break;
        default: pool.add(kmer_vector(t, mode, a)); break;
      }
    }
  }
  if (pool.count() == 0) throw UnembeddableReadError("read contains only unknown k-mers");
  return pool.finish();
}

EmbeddedReads embed_reads(const std::vector<ReadRecord>& reads, RepresentationMode mode,
                          const EmbeddingArtifacts& artifacts, Pooling pooling) {
  const std::size_t dim = representation_dim(mode, artifacts);
  EmbeddedReads out;
  std::vector<std::vector<double>> rows;
  for (const auto& r : reads) {
    try {
      rows.push_back(embed_read(r.sequence, mode, artifacts, pooling));
    } catch (const UnembeddableReadError&) {
      ++out.skipped;
      continue;
    }
    out.ids.push_back(r.id);
    out.labels.push_back(r.label.value_or(""));
  }
  out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.features.row(static_cast<Eigen::Index>(i)).data(), rows[i].data(), dim * sizeof(double));
  return out;
}

void EmbeddedReads::save_tsv(std::ostream& out) const {
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out << ids[static_cast<std::size_t>(i)] << '\t' << labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < features.cols(); ++j) out << '\t' << format_double(features(i, j));
    out << '\n';
  }
}

namespace {
constexpr char kFeatureMagic[8] = {'M', 'G', '2', 'V', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void EmbeddedReads::save(std::ostream& out) const {
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  write_u32(out, kFeatureVersion);
  write_u64(out, static_cast<std::uint64_t>(features.rows()));
  write_u64(out, static_cast<std::uint64_t>(features.cols()));
  write_u64(out, skipped);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    write_string(out, ids[static_cast<std::size_t>(i)]);
    write_string(out, labels[static_cast<std::size_t>(i)]);
  }
  write_f64_array(out, features.data(), static_cast<std::size_t>(features.size()));
}

EmbeddedReads EmbeddedReads::load(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0)
    throw IncompatibleArtifactError("features: bad magic");
  const auto version = read_u32(in);
  if (version != kFeatureVersion) throw IncompatibleArtifactError("features: unsupported version");
  EmbeddedReads e;
  const auto rows = read_u64(in);
  const auto cols = read_u64(in);
  e.skipped = read_u64(in);
  if (rows * cols > (1ULL << 34)) throw IncompatibleArtifactError("features: implausible shape");
  for (std::uint64_t i = 0; i < rows; ++i) {
    e.ids.push_back(read_string(in));
    e.labels.push_back(read_string(in));
  }
  e.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  read_f64_array(in, e.features.data(), static_cast<std::size_t>(e.features.size()));
  return e;
}

}  // namespace mg2vec

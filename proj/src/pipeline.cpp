#include "mg2vec/pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "mg2vec/classifiers.hpp"
#include "mg2vec/clustering.hpp"
#include "mg2vec/metrics.hpp"

namespace fs = std::filesystem;

namespace mg2vec {

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"simulate", "build-graph", "train-structural", "pretrain",
                                                 "embed",    "train",       "evaluate",         "cluster"};
  return names;
}

std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage) {
  return mix_seed(global_seed, fnv1a64(stage));
}

namespace artifact {
std::string features(RepresentationMode m) { return "features." + to_string(m) + ".bin"; }
std::string features_tsv(RepresentationMode m) { return "features." + to_string(m) + ".tsv"; }
std::string classifier(RepresentationMode m, ClassifierKind k) {
  return "classifier." + to_string(m) + "." + to_string(k) + ".bin";
}
std::string report_json(RepresentationMode m, ClassifierKind k) {
  return "report." + to_string(m) + "." + to_string(k) + ".json";
}
std::string report_text(RepresentationMode m, ClassifierKind k) {
  return "report." + to_string(m) + "." + to_string(k) + ".txt";
}
std::string pr_csv(RepresentationMode m, ClassifierKind k) { return "pr." + to_string(m) + "." + to_string(k) + ".csv"; }
std::string cluster_json(RepresentationMode m) { return "cluster." + to_string(m) + ".json"; }
std::string cluster_text(RepresentationMode m) { return "cluster." + to_string(m) + ".txt"; }
std::string assignments(RepresentationMode m) { return "assignments." + to_string(m) + ".tsv"; }
}  // namespace artifact

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("cannot read " + p.string());
  std::uint64_t h = fnv1a64("");
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(f.gcount())), h);
  }
  return h;
}

// Writes through a temporary file so a failed stage never leaves a truncated artifact.
void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body, bool binary = true) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, binary ? std::ios::binary : std::ios::out);
    if (!f) throw Error("cannot write " + tmp.string());
    body(f);
    f.flush();
    if (!f) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

class StageLock {
 public:
  explicit StageLock(const fs::path& dir) : path_(dir / ".mg2vec.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error("artifact directory " + dir.string() + " is locked by another stage (remove " + path_.string() +
                  " if no run is active)");
    std::fclose(f);
  }
  ~StageLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  StageLock(const StageLock&) = delete;
  StageLock& operator=(const StageLock&) = delete;

 private:
  fs::path path_;
};

class Context {
 public:
  Context(std::string stage, const PipelineConfig& cfg, std::ostream& log)
      : stage_(std::move(stage)), cfg_(cfg), log_(log), dir_(cfg.artifacts), seed_(stage_seed(cfg.seed, stage_)) {}

  const PipelineConfig& cfg() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  std::ostream& log() { return log_ << "[" << stage_ << "] "; }

  /// Path of an upstream artifact; throws naming the stage that creates it.
  fs::path require(const std::string& name, const std::string& producer) {
    const auto p = path(name);
    if (!fs::exists(p))
      throw MissingArtifactError("missing artifact " + p.string() + "; run `mg2vec " + producer +
                                 "` with this config first");
    inputs_.emplace_back(name, hash_file(p));
    return p;
  }
  void note_input_file(const fs::path& p) { inputs_.emplace_back(p.string(), hash_file(p)); }

  void output(const std::string& name, const std::function<void(std::ostream&)>& body, bool binary = true) {
    write_file(path(name), body, binary);
    outputs_.emplace_back(name, hash_file(path(name)));
  }
  void info(const std::string& key, const std::string& value) { info_.emplace_back(key, value); }

  void write_manifest(const std::string& suffix = "") {
    const std::string name = stage_ + suffix + ".manifest";
    write_file(path(name), [&](std::ostream& o) {
      o << "stage\t" << stage_ << "\n";
      o << "config_hash\t" << hex64(cfg_.hash()) << "\n";
      o << "global_seed\t" << cfg_.seed << "\n";
      o << "stage_seed\t" << seed_ << "\n";
      for (const auto& [n, h] : inputs_) o << "input\t" << n << "\t" << hex64(h) << "\n";
      for (const auto& [n, h] : outputs_) o << "output\t" << n << "\t" << hex64(h) << "\n";
      for (const auto& [k, v] : info_) o << "info\t" << k << "\t" << v << "\n";
    });
  }

 private:
  std::string stage_;
  const PipelineConfig& cfg_;
  std::ostream& log_;
  fs::path dir_;
  std::uint64_t seed_;
  std::vector<std::pair<std::string, std::uint64_t>> inputs_, outputs_;
  std::vector<std::pair<std::string, std::string>> info_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<ReadRecord> read_input(const PipelineConfig& cfg, Context* ctx) {
  std::vector<ReadRecord> reads;
  fs::path reads_path;
  if (!cfg.reads.empty()) {
    reads_path = cfg.reads;
    if (!fs::exists(reads_path)) throw ValidationError("paths.reads does not exist: " + cfg.reads);
    if (ctx) ctx->note_input_file(reads_path);
  } else {
    reads_path = fs::path(cfg.artifacts) / artifact::kReads;
    if (ctx) {
      reads_path = ctx->require(artifact::kReads, "simulate");
    } else if (!fs::exists(reads_path)) {
      throw MissingArtifactError("missing artifact " + reads_path.string() + "; run `mg2vec simulate` first");
    }
  }
  std::ifstream in(reads_path, std::ios::binary);
  if (!in) throw Error("cannot read " + reads_path.string());
  const std::string name = reads_path.string();
  if (ends_with(name, ".fastq") || ends_with(name, ".fq")) {
    reads = parse_fastq(in, cfg.min_avg_q);
  } else {
    reads = parse_fasta(in);
  }

  fs::path labels_path;
  if (!cfg.labels.empty()) {
    labels_path = cfg.labels;
    if (!fs::exists(labels_path)) throw ValidationError("paths.labels does not exist: " + cfg.labels);
  } else if (cfg.reads.empty() && fs::exists(fs::path(cfg.artifacts) / artifact::kLabels)) {
    labels_path = fs::path(cfg.artifacts) / artifact::kLabels;
  }
  if (!labels_path.empty()) {
    if (ctx) ctx->note_input_file(labels_path);
    std::ifstream lf(labels_path, std::ios::binary);
    attach_labels(reads, read_labels(lf));
  }
  return reads;
}

bool excluded(const ReadRecord& r, const PipelineConfig& cfg) {
  return r.label && std::find(cfg.exclude_labels.begin(), cfg.exclude_labels.end(), *r.label) != cfg.exclude_labels.end();
}

// Reads feeding graph, walks and pretraining: training split minus excluded labels.
std::vector<ReadRecord> representation_corpus(const std::vector<ReadRecord>& reads, const PipelineConfig& cfg) {
  std::vector<std::string> ids;
  ids.reserve(reads.size());
  for (const auto& r : reads) ids.push_back(r.id);
  const SplitRule split(cfg, ids);
  std::vector<ReadRecord> out;
  for (const auto& r : reads)
    if (!split.is_test(r.id) && !excluded(r, cfg)) out.push_back(r);
  if (out.empty()) throw ValidationError("no reads left for representation learning after split and exclusions");
  return out;
}

KmerVocabulary load_vocab(Context& ctx) {
  std::ifstream in(ctx.require(artifact::kVocab, "build-graph"), std::ios::binary);
  auto vocab = KmerVocabulary::from_manifest(in);
  if (!(vocab == ctx.cfg().vocabulary()))
    throw IncompatibleArtifactError("vocabulary on disk (k=" + std::to_string(vocab.k()) + ", alphabet=" +
                                    vocab.alphabet() + ") differs from the config; re-run `mg2vec build-graph`");
  return vocab;
}

EmbeddingTable load_table(Context& ctx, const char* name, const std::string& producer, const KmerVocabulary& vocab) {
  std::ifstream in(ctx.require(name, producer), std::ios::binary);
  auto t = EmbeddingTable::load(in);
  if (t.vocab_fingerprint() != vocab.fingerprint() || t.rows() != static_cast<std::size_t>(vocab.size()))
    throw IncompatibleArtifactError(std::string(name) + " was built for a different vocabulary; re-run `mg2vec " +
                                    producer + "`");
  return t;
}

// ---------------------------------------------------------------------------

void stage_simulate(Context& ctx) {
  const auto& cfg = ctx.cfg();
  if (!cfg.reads.empty())
    throw ValidationError("simulate: paths.reads is set; the simulator only feeds runs without an input file");
  SyntheticSpec spec = cfg.simulate;
  spec.seed = ctx.seed();
  const auto sim = simulate_metagenome(spec);
  ctx.output(artifact::kReads, [&](std::ostream& o) { write_fastq(o, sim.reads); });
  ctx.output(artifact::kLabels, [&](std::ostream& o) { write_labels(o, sim.reads); });
  ctx.output(artifact::kReferences, [&](std::ostream& o) { write_fasta(o, sim.references); });
  std::map<std::string, std::size_t> counts;
  for (const auto& r : sim.reads) ++counts[*r.label];
  std::string summary;
  for (const auto& [k, v] : counts) summary += (summary.empty() ? "" : ",") + k + ":" + std::to_string(v);
  ctx.info("class_counts", summary);
  ctx.info("rejected_ambiguous", std::to_string(sim.rejected_ambiguous));
  ctx.log() << sim.reads.size() << " reads (" << summary << ")\n";
}

void stage_build_graph(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto vocab = cfg.vocabulary();
  const auto corpus = representation_corpus(read_input(cfg, &ctx), cfg);
  const auto mode = cfg.raw_count_weights ? WeightMode::kRawCount : WeightMode::kNormalized;
  const auto graph = build_graph(corpus, vocab, cfg.weights, mode);
  ctx.output(artifact::kVocab, [&](std::ostream& o) { o << vocab.manifest(); });
  ctx.output(artifact::kGraph, [&](std::ostream& o) { save_graph(o, graph, vocab); });
  ctx.info("corpus_reads", std::to_string(corpus.size()));
  ctx.info("nodes", std::to_string(graph.nodes().size()));
  ctx.info("edges", std::to_string(graph.edges().size()));
  ctx.log() << graph.nodes().size() << " nodes, " << graph.edges().size() << " edges from " << corpus.size()
            << " reads\n";
}

void stage_train_structural(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto vocab = load_vocab(ctx);
  KmerGraph graph;
  {
    std::ifstream in(ctx.require(artifact::kGraph, "build-graph"), std::ios::binary);
    graph = load_graph(in, vocab);
  }
  WalkConfig wc = cfg.walks;
  wc.seed = mix_seed(ctx.seed(), 1);
  wc.threads = cfg.threads;
  const auto walks = generate_walks(graph, wc);
  ctx.output(artifact::kWalks, [&](std::ostream& o) { save_walks(o, walks); });

  SkipGramConfig sg = cfg.skipgram;
  sg.dim = cfg.structural_dim();
  sg.seed = mix_seed(ctx.seed(), 2);
  SkipGramStats stats;
  auto table = train_skipgram(walks, static_cast<std::size_t>(vocab.size()), sg, &stats);
  table.set_vocab_fingerprint(vocab.fingerprint());
  ctx.output(artifact::kGlobal, [&](std::ostream& o) { table.save(o); });
  ctx.output(artifact::kGlobalTsv, [&](std::ostream& o) { table.save_tsv(o, vocab); });
  std::string losses;
  for (double l : stats.epoch_mean_loss) losses += (losses.empty() ? "" : ",") + format_double(l);
  ctx.info("walks", std::to_string(walks.size()));
  ctx.info("epoch_loss", losses);
  ctx.log() << walks.size() << " walks, skip-gram epoch losses " << losses << "\n";
}

void stage_pretrain(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto vocab = load_vocab(ctx);
  std::optional<EmbeddingTable> prior;
  if (!cfg.no_global_prior) prior = load_table(ctx, artifact::kGlobal, "train-structural", vocab);
  const auto corpus = representation_corpus(read_input(cfg, &ctx), cfg);

  auto tc = cfg.transformer_config();
  tc.seed = mix_seed(ctx.seed(), 1);
  MaskingConfig mc = cfg.masking;
  mc.seed = mix_seed(ctx.seed(), 2);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = mix_seed(ctx.seed(), 3);
  pc.on_epoch = [&](std::size_t epoch, double loss) { ctx.log() << "epoch " << epoch + 1 << " loss " << loss << "\n"; };

  auto result = pretrain(corpus, vocab, prior ? &*prior : nullptr, tc, mc, pc);
  ctx.output(artifact::kModel, [&](std::ostream& o) { result.model.save(o); });
  ctx.output(artifact::kContextual, [&](std::ostream& o) { result.contextual.save(o); });
  std::string losses;
  for (double l : result.epoch_loss) losses += (losses.empty() ? "" : ",") + format_double(l);
  ctx.info("initial_loss", format_double(result.initial_loss));
  ctx.info("epoch_loss", losses);
  ctx.info("steps", std::to_string(result.steps));
  ctx.info("architecture", tc.describe());
}

void stage_embed(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto vocab = load_vocab(ctx);
  const auto mode = cfg.mode;
  std::optional<EmbeddingTable> global, contextual;
  std::optional<TransformerModel> model;
  if (mode == RepresentationMode::kGlobal || mode == RepresentationMode::kConcat)
    global = load_table(ctx, artifact::kGlobal, "train-structural", vocab);
  if (mode == RepresentationMode::kContextual || mode == RepresentationMode::kConcat)
    contextual = load_table(ctx, artifact::kContextual, "pretrain", vocab);
  if (mode == RepresentationMode::kEncoder) {
    std::ifstream in(ctx.require(artifact::kModel, "pretrain"), std::ios::binary);
    model.emplace(TransformerModel::load(in, cfg.transformer_config()));
  }
  EmbeddingArtifacts arts{&vocab, global ? &*global : nullptr, contextual ? &*contextual : nullptr,
                          model ? &*model : nullptr};
  const auto reads = read_input(cfg, &ctx);
  const auto emb = embed_reads(reads, mode, arts, cfg.pooling);
  ctx.output(artifact::features(mode), [&](std::ostream& o) { emb.save(o); });
  if (cfg.export_tsv) ctx.output(artifact::features_tsv(mode), [&](std::ostream& o) { emb.save_tsv(o); });
  ctx.info("rows", std::to_string(emb.features.rows()));
  ctx.info("dim", std::to_string(emb.features.cols()));
  ctx.info("skipped", std::to_string(emb.skipped));
  ctx.log() << emb.features.rows() << " reads embedded (" << to_string(mode) << ", dim " << emb.features.cols()
            << "), " << emb.skipped << " skipped\n";
}

EmbeddedReads load_features(Context& ctx) {
  std::ifstream in(ctx.require(artifact::features(ctx.cfg().mode), "embed"), std::ios::binary);
  return EmbeddedReads::load(in);
}

struct SplitData {
  LabeledDataset train, test;
  std::vector<std::string> test_ids;
};

SplitData split_features(const EmbeddedReads& emb, const PipelineConfig& cfg) {
  std::set<std::string> labels;
  for (const auto& l : emb.labels)
    if (!l.empty()) labels.insert(l);
  if (labels.size() < 2) throw ValidationError("training needs labels for at least 2 classes (set paths.labels)");
  SplitData s;
  s.train.classes.assign(labels.begin(), labels.end());
  s.test.classes = s.train.classes;
  const SplitRule rule(cfg, emb.ids);
  std::vector<Eigen::Index> tr, te;
  for (std::size_t i = 0; i < emb.ids.size(); ++i) {
    if (emb.labels[i].empty()) continue;
    (rule.is_test(emb.ids[i]) ? te : tr).push_back(static_cast<Eigen::Index>(i));
  }
  auto fill = [&](LabeledDataset& d, const std::vector<Eigen::Index>& rows, std::vector<std::string>* ids) {
    d.features.resize(static_cast<Eigen::Index>(rows.size()), emb.features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      d.features.row(static_cast<Eigen::Index>(r)) = emb.features.row(rows[r]);
      const auto& l = emb.labels[static_cast<std::size_t>(rows[r])];
      d.labels.push_back(static_cast<int>(std::lower_bound(d.classes.begin(), d.classes.end(), l) - d.classes.begin()));
      if (ids) ids->push_back(emb.ids[static_cast<std::size_t>(rows[r])]);
    }
  };
  fill(s.train, tr, nullptr);
  fill(s.test, te, &s.test_ids);
  return s;
}

constexpr char kModelMagic[8] = {'M', 'G', '2', 'V', 'P', 'R', 'E', 'D'};

void save_predictor(std::ostream& out, const std::optional<Standardizer>& st, const std::vector<std::string>& classes,
                    const Classifier& clf) {
  out.write(kModelMagic, sizeof(kModelMagic));
  write_u32(out, 1);
  write_u32(out, st ? 1 : 0);
  if (st) {
    write_u64(out, static_cast<std::uint64_t>(st->mean.size()));
    write_f64_array(out, st->mean.data(), static_cast<std::size_t>(st->mean.size()));
    write_f64_array(out, st->scale.data(), static_cast<std::size_t>(st->scale.size()));
  }
  write_u64(out, classes.size());
  for (const auto& c : classes) write_string(out, c);
  clf.save(out);
}

struct Predictor {
  std::optional<Standardizer> standardizer;
  std::vector<std::string> classes;
  std::unique_ptr<Classifier> classifier;

  Matrix prepare(const Matrix& x) const { return standardizer ? standardizer->apply(x) : x; }
};

Predictor load_predictor(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw IncompatibleArtifactError("classifier artifact: bad magic");
  if (read_u32(in) != 1) throw IncompatibleArtifactError("classifier artifact: unsupported version");
  Predictor p;
  if (read_u32(in)) {
    const auto d = static_cast<Eigen::Index>(read_u64(in));
    Standardizer st;
    st.mean.resize(d);
    st.scale.resize(d);
    read_f64_array(in, st.mean.data(), static_cast<std::size_t>(d));
    read_f64_array(in, st.scale.data(), static_cast<std::size_t>(d));
    p.standardizer = std::move(st);
  }
  const auto n = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) p.classes.push_back(read_string(in));
  p.classifier = load_classifier(in);
  return p;
}

void stage_train(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto emb = load_features(ctx);
  auto data = split_features(emb, cfg);
  if (data.train.size() == 0) throw ValidationError("train: the training split is empty");
  std::optional<Standardizer> st;
  if (cfg.standardize) {
    st = Standardizer::fit(data.train.features);
    data.train.features = st->apply(data.train.features);
  }
  std::unique_ptr<Classifier> clf;
  switch (cfg.classifier) {
    case ClassifierKind::kLogReg: {
      FitReport rep;
      auto lr = LogisticRegression::fit(data.train, {cfg.l2_penalty, cfg.max_iters, cfg.tolerance}, &rep);
      ctx.info("iterations", std::to_string(rep.iterations));
      ctx.info("converged", rep.converged ? "true" : "false");
      ctx.info("gradient_norm", format_double(rep.gradient_norm));
      ctx.log() << "logistic regression: " << rep.iterations << " Newton iterations, converged="
                << (rep.converged ? "yes" : "no") << "\n";
      clf = std::make_unique<LogisticRegression>(std::move(lr));
      break;
    }
    case ClassifierKind::kMlp:
    case ClassifierKind::kDeep: {
      NetConfig nc = cfg.classifier == ClassifierKind::kMlp ? mlp_defaults() : deep_defaults();
      if (cfg.net_epochs) nc.epochs = cfg.net_epochs;
      if (cfg.net_batch_size) nc.batch_size = cfg.net_batch_size;
      if (cfg.net_learning_rate > 0) nc.learning_rate = cfg.net_learning_rate;
      const auto seed = mix_seed(ctx.seed(), 1);
      if (cfg.classifier == ClassifierKind::kMlp) {
        clf = std::make_unique<NeuralClassifier>(train_mlp(data.train, seed, nc));
      } else {
        const auto w = cfg.class_weights ? inverse_frequency_weights(data.train.class_counts()) : std::vector<double>{};
        clf = std::make_unique<NeuralClassifier>(train_deep(data.train, w, seed, nc));
      }
      break;
    }
  }
  ctx.output(artifact::classifier(cfg.mode, cfg.classifier),
             [&](std::ostream& o) { save_predictor(o, st, data.train.classes, *clf); });
  ctx.info("train_rows", std::to_string(data.train.size()));
  ctx.write_manifest("." + to_string(cfg.mode) + "." + to_string(cfg.classifier));
}

void stage_evaluate(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto emb = load_features(ctx);
  Predictor pred;
  {
    std::ifstream in(ctx.require(artifact::classifier(cfg.mode, cfg.classifier), "train"), std::ios::binary);
    pred = load_predictor(in);
  }
  auto data = split_features(emb, cfg);
  if (data.test.classes != pred.classes)
    throw IncompatibleArtifactError("evaluate: class catalog differs from the trained classifier; re-run `mg2vec train`");
  if (data.test.size() == 0) throw ValidationError("evaluate: the test split is empty");
  const Matrix x = pred.prepare(data.test.features);
  const Matrix proba = pred.classifier->predict_proba(x);
  std::vector<int> predicted(static_cast<std::size_t>(proba.rows()));
  for (Eigen::Index i = 0; i < proba.rows(); ++i) {
    Eigen::Index best;
    proba.row(i).maxCoeff(&best);
    predicted[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  auto report = evaluate(predicted, data.test.labels, data.test.classes, &proba);
  report.notes = {{"mode", to_string(cfg.mode)},
                  {"classifier", to_string(cfg.classifier)},
                  {"train_rows", std::to_string(data.train.size())},
                  {"test_rows", std::to_string(data.test.size())},
                  {"config_hash", hex64(cfg.hash())}};
  ctx.output(artifact::report_json(cfg.mode, cfg.classifier), [&](std::ostream& o) { o << report.to_json(); });
  ctx.output(artifact::report_text(cfg.mode, cfg.classifier), [&](std::ostream& o) { o << report.to_text(); });
  ctx.output(artifact::pr_csv(cfg.mode, cfg.classifier), [&](std::ostream& o) { report.save_pr_csv(o); });
  ctx.log() << "macro-F1 " << report.macro_f1 << ", accuracy " << report.accuracy << " on " << data.test.size()
            << " test reads\n";
  ctx.write_manifest("." + to_string(cfg.mode) + "." + to_string(cfg.classifier));
}

void stage_cluster(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const auto emb = load_features(ctx);
  std::map<std::string, std::string> groups;
  for (const auto& g : cfg.label_groups) {
    const auto c = g.find(':');
    groups[g.substr(0, c)] = g.substr(c + 1);
  }
  auto group_of = [&](const std::string& l) {
    const auto it = groups.find(l);
    return it == groups.end() ? l : it->second;
  };

  const SplitRule rule(cfg, emb.ids);
  std::vector<Eigen::Index> rows;
  std::set<std::string> present;
  for (std::size_t i = 0; i < emb.ids.size(); ++i) {
    if (!rule.is_test(emb.ids[i]) || emb.labels[i].empty()) continue;
    rows.push_back(static_cast<Eigen::Index>(i));
    present.insert(group_of(emb.labels[i]));
  }
  if (rows.empty()) throw ValidationError("cluster: no labeled reads in the test split");
  const std::vector<std::string> classes(present.begin(), present.end());
  Matrix x(static_cast<Eigen::Index>(rows.size()), emb.features.cols());
  std::vector<int> truth;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = emb.features.row(rows[r]);
    const auto g = group_of(emb.labels[static_cast<std::size_t>(rows[r])]);
    truth.push_back(static_cast<int>(std::lower_bound(classes.begin(), classes.end(), g) - classes.begin()));
  }
  if (cfg.cluster_normalize) x = l2_normalize_rows(x);
  const std::size_t k = cfg.cluster_k ? cfg.cluster_k : classes.size();
  const auto km = kmeans(x, k, mix_seed(ctx.seed(), 1), cfg.cluster_max_iters);
  const auto table = contingency_table(km.assignment, truth, k, classes.size());
  const auto mapping = hungarian_map(table);
  std::vector<int> predicted;
  for (int c : km.assignment) predicted.push_back(mapping.cluster_to_class[static_cast<std::size_t>(c)]);
  auto report = evaluate(predicted, truth, classes);
  report.cluster_to_class = mapping.cluster_to_class;
  report.notes = {{"mode", to_string(cfg.mode)},
                  {"clusters", std::to_string(k)},
                  {"rows", std::to_string(rows.size())},
                  {"chance", format_double(1.0 / static_cast<double>(k))},
                  {"kmeans_iterations", std::to_string(km.iterations)},
                  {"config_hash", hex64(cfg.hash())}};
  ctx.output(artifact::cluster_json(cfg.mode), [&](std::ostream& o) { o << report.to_json(); });
  ctx.output(artifact::cluster_text(cfg.mode), [&](std::ostream& o) { o << report.to_text(); });
  ctx.output(artifact::assignments(cfg.mode), [&](std::ostream& o) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      o << emb.ids[static_cast<std::size_t>(rows[r])] << '\t' << km.assignment[r] << '\t'
        << (predicted[r] < 0 ? std::string("unassigned") : classes[static_cast<std::size_t>(predicted[r])]) << '\n';
  });
  ctx.log() << "K=" << k << ", mapped accuracy " << report.accuracy << " (chance " << 1.0 / static_cast<double>(k)
            << ")\n";
  ctx.write_manifest("." + to_string(cfg.mode));
}

}  // namespace

SplitRule::SplitRule(const PipelineConfig& config, const std::vector<std::string>& read_ids)
    : test_samples_(config.test_samples), test_fraction_(config.test_fraction), seed_(stage_seed(config.seed, "split")) {
  if (test_samples_.empty()) {
    std::optional<std::size_t> last;
    for (const auto& id : read_ids)
      if (auto s = sample_of_read(id)) last = std::max(last.value_or(0), *s);
    // With a single sample there is nothing to hold out by sample; fall back to hashing.
    if (last && *last > 0) test_samples_.push_back(*last);
  }
}

bool SplitRule::is_test(const std::string& read_id) const {
  if (!test_samples_.empty()) {
    if (const auto s = sample_of_read(read_id))
      return std::find(test_samples_.begin(), test_samples_.end(), *s) != test_samples_.end();
  }
  const auto h = mix_seed(seed_, fnv1a64(read_id));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < test_fraction_;
}

std::vector<ReadRecord> load_pipeline_reads(const PipelineConfig& config) { return read_input(config, nullptr); }

void run_stage(const std::string& stage, const PipelineConfig& config, std::ostream& log) {
  const auto& names = stage_names();
  if (std::find(names.begin(), names.end(), stage) == names.end())
    throw ValidationError("unknown stage '" + stage + "'");
  config.validate();
  fs::create_directories(config.artifacts);
  StageLock lock(config.artifacts);
  Context ctx(stage, config, log);
  if (stage == "simulate") {
    stage_simulate(ctx);
  } else if (stage == "build-graph") {
    stage_build_graph(ctx);
  } else if (stage == "train-structural") {
    stage_train_structural(ctx);
  } else if (stage == "pretrain") {
    stage_pretrain(ctx);
  } else if (stage == "embed") {
    stage_embed(ctx);
    ctx.write_manifest("." + to_string(config.mode));
    return;
  } else if (stage == "train") {
    stage_train(ctx);
    return;
  } else if (stage == "evaluate") {
    stage_evaluate(ctx);
    return;
  } else {
    stage_cluster(ctx);
    return;
  }
  ctx.write_manifest();
}

void run_pipeline(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  for (const auto& s : config.stages) run_stage(s, config, log);
}

}  // namespace mg2vec

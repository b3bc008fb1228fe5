#include "mg2vec/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mg2vec {

ClassifierKind parse_classifier_kind(const std::string& name) {
  if (name == "logreg") return ClassifierKind::kLogReg;
  if (name == "mlp") return ClassifierKind::kMlp;
  if (name == "deep") return ClassifierKind::kDeep;
  throw ValidationError("unknown classifier '" + name + "' (expected logreg, mlp or deep)");
}

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::kLogReg: return "logreg";
    case ClassifierKind::kMlp: return "mlp";
    case ClassifierKind::kDeep: return "deep";
  }
  return "?";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& v, const std::string& what) {
  T out{};
  const auto* b = v.data();
  const auto* e = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || ptr != e || v.empty())
    throw ValidationError(what + ": expected " + (std::is_floating_point_v<T> ? "a number" : "an integer") + ", got '" +
                          v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw ValidationError(what + ": expected true or false, got '" + v + "'");
}

// Per-type parse/format pairs.
void from_text(const std::string& v, const std::string&, std::string& out) { out = v; }
void from_text(const std::string& v, const std::string& w, bool& out) { out = parse_bool(v, w); }
void from_text(const std::string& v, const std::string& w, double& out) { out = parse_number<double>(v, w); }
void from_text(const std::string& v, const std::string& w, int& out) { out = parse_number<int>(v, w); }
void from_text(const std::string& v, const std::string& w, unsigned& out) { out = parse_number<unsigned>(v, w); }
void from_text(const std::string& v, const std::string& w, unsigned long& out) { out = parse_number<unsigned long>(v, w); }
void from_text(const std::string& v, const std::string& w, unsigned long long& out) {
  out = parse_number<unsigned long long>(v, w);
}
template <typename T>
void from_text(const std::string& v, const std::string& w, std::vector<T>& out) {
  out.clear();
  for (const auto& item : split_list(v)) {
    T x{};
    from_text(item, w, x);
    out.push_back(x);
  }
}

std::string to_text(const std::string& v) { return v; }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(double v) { return format_double(v); }
template <typename T>
  requires std::is_integral_v<T>
std::string to_text(T v) {
  return std::to_string(v);
}
template <typename T>
std::string to_text(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + to_text(v[i]);
  return s;
}

struct KeySpec {
  std::string section;
  std::string key;
  std::string doc;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename Access>
KeySpec entry(std::string section, std::string key, std::string doc, Access access) {
  KeySpec s{section, key, std::move(doc), {}, {}};
  const std::string what = section + "." + key;
  s.set = [access, what](PipelineConfig& c, const std::string& v) { from_text(v, what, access(c)); };
  s.get = [access](const PipelineConfig& c) { return to_text(access(const_cast<PipelineConfig&>(c))); };
  return s;
}

#define FIELD(expr) [](PipelineConfig& c) -> auto& { return expr; }

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> r;
    r.push_back(entry("paths", "artifacts", "artifact directory (required; --out overrides)", FIELD(c.artifacts)));
    r.push_back(entry("paths", "reads", "FASTA/FASTQ input; empty uses the simulated reads", FIELD(c.reads)));
    r.push_back(entry("paths", "labels", "labels TSV (read_id<TAB>label)", FIELD(c.labels)));

    r.push_back(entry("simulate", "num_species", "number of microbial species", FIELD(c.simulate.num_species)));
    r.push_back(entry("simulate", "ancestor_length", "bases per species ancestor", FIELD(c.simulate.ancestor_length)));
    r.push_back(entry("simulate", "mutation_rates", "per-species substitution rate from its ancestor",
                      FIELD(c.simulate.mutation_rates)));
    r.push_back(entry("simulate", "abundance", "class probabilities, host first", FIELD(c.simulate.abundance)));
    r.push_back(entry("simulate", "host_length", "host genome bases", FIELD(c.simulate.host_length)));
    r.push_back(entry("simulate", "num_reads", "reads to draw", FIELD(c.simulate.num_reads)));
    r.push_back(entry("simulate", "read_length_mean", "mean read length", FIELD(c.simulate.read_length_mean)));
    r.push_back(entry("simulate", "read_length_stddev", "read length standard deviation",
                      FIELD(c.simulate.read_length_stddev)));
    r.push_back(entry("simulate", "read_length_min", "truncation point of the length distribution",
                      FIELD(c.simulate.read_length_min)));
    r.push_back(entry("simulate", "read_error_rate", "per-base substitution error", FIELD(c.simulate.read_error_rate)));
    r.push_back(entry("simulate", "num_samples", "reads are split evenly into this many samples",
                      FIELD(c.simulate.num_samples)));
    r.push_back(entry("simulate", "species_clade", "ancestor index per species (empty = one ancestor)",
                      FIELD(c.simulate.species_clade)));
    r.push_back(entry("simulate", "clade_gc", "GC fraction per ancestor", FIELD(c.simulate.clade_gc)));
    r.push_back(entry("simulate", "host_gc", "host GC fraction", FIELD(c.simulate.host_gc)));
    r.push_back(entry("simulate", "unique_reads_only", "keep only reads closest to their own species",
                      FIELD(c.simulate.unique_reads_only)));

    r.push_back(entry("input", "min_avg_q", "FASTQ reads need mean Phred strictly above this", FIELD(c.min_avg_q)));

    r.push_back(entry("kmer", "k", "k-mer length", FIELD(c.k)));
    r.push_back(entry("kmer", "alphabet", "ordered symbol set", FIELD(c.alphabet)));

    r.push_back(entry("graph", "lambda_max", "weight update lambda_max", FIELD(c.weights.lambda_max)));
    r.push_back(entry("graph", "lambda_min", "weight update lambda_min", FIELD(c.weights.lambda_min)));
    r.push_back(entry("graph", "denom_floor", "floor of the weight update denominator", FIELD(c.weights.denom_floor)));

    r.push_back(entry("walks", "walks_per_node", "walks started from every node", FIELD(c.walks.walks_per_node)));
    r.push_back(entry("walks", "walk_length", "nodes per walk", FIELD(c.walks.walk_length)));
    r.push_back(entry("walks", "p", "return parameter", FIELD(c.walks.return_param)));
    r.push_back(entry("walks", "q", "in-out parameter", FIELD(c.walks.inout_param)));

    r.push_back(entry("skipgram", "dim", "structural embedding size (0 = transformer.model_dim)", FIELD(c.skipgram.dim)));
    r.push_back(entry("skipgram", "window", "context window", FIELD(c.skipgram.window)));
    r.push_back(entry("skipgram", "negatives", "negative samples per pair", FIELD(c.skipgram.negatives)));
    r.push_back(entry("skipgram", "epochs", "passes over the walk corpus", FIELD(c.skipgram.epochs)));
    r.push_back(entry("skipgram", "learning_rate", "initial SGD step, decayed linearly",
                      FIELD(c.skipgram.learning_rate)));

    r.push_back(entry("transformer", "num_layers", "encoder layers", FIELD(c.transformer.num_layers)));
    r.push_back(entry("transformer", "num_heads", "attention heads", FIELD(c.transformer.num_heads)));
    r.push_back(entry("transformer", "model_dim", "hidden size", FIELD(c.transformer.model_dim)));
    r.push_back(entry("transformer", "ff_dim", "feed-forward width", FIELD(c.transformer.ff_dim)));
    r.push_back(entry("transformer", "dropout", "dropout probability", FIELD(c.transformer.dropout)));
    r.push_back(entry("transformer", "max_tokens", "window length for long reads", FIELD(c.transformer.max_tokens)));
    r.push_back(entry("transformer", "init_std", "normal init standard deviation", FIELD(c.transformer.init_std)));

    r.push_back(entry("masking", "mask_ratio", "per-token masking probability s", FIELD(c.masking.mask_ratio)));
    r.push_back(entry("masking", "mask_token_fraction", "selected positions replaced by MASK",
                      FIELD(c.masking.mask_token_fraction)));
    r.push_back(entry("masking", "random_token_fraction", "selected positions replaced by a random k-mer",
                      FIELD(c.masking.random_token_fraction)));

    r.push_back(entry("pretrain", "epochs", "pretraining epochs", FIELD(c.pretrain.epochs)));
    r.push_back(entry("pretrain", "batch_size", "windows per optimizer step", FIELD(c.pretrain.batch_size)));
    r.push_back(entry("pretrain", "warmup_steps", "learning-rate warmup steps", FIELD(c.pretrain.warmup_steps)));
    r.push_back(entry("pretrain", "lr_scale", "multiplier on the warmup schedule", FIELD(c.pretrain.lr_scale)));
    r.push_back(entry("pretrain", "max_reads", "cap on pretraining reads (0 = all)", FIELD(c.pretrain.max_reads)));
    r.push_back(entry("pretrain", "exclude_labels", "labels withheld from graph, walks and pretraining",
                      FIELD(c.exclude_labels)));

    r.push_back(KeySpec{"embed", "mode", "global, contextual, encoder, concat or kmer-frequency",
                        [](PipelineConfig& c, const std::string& v) { c.mode = parse_representation_mode(v); },
                        [](const PipelineConfig& c) { return to_string(c.mode); }});
    r.push_back(KeySpec{"embed", "pooling", "mean or max",
                        [](PipelineConfig& c, const std::string& v) { c.pooling = parse_pooling(v); },
                        [](const PipelineConfig& c) { return to_string(c.pooling); }});
    r.push_back(entry("embed", "export_tsv", "also write the feature matrix as TSV", FIELD(c.export_tsv)));

    r.push_back(entry("split", "test_samples", "sample indices held out for testing (empty = last)",
                      FIELD(c.test_samples)));
    r.push_back(entry("split", "test_fraction", "hashed test share for reads without a sample index",
                      FIELD(c.test_fraction)));

    r.push_back(KeySpec{"classifier", "type", "logreg, mlp or deep",
                        [](PipelineConfig& c, const std::string& v) { c.classifier = parse_classifier_kind(v); },
                        [](const PipelineConfig& c) { return to_string(c.classifier); }});
    r.push_back(entry("classifier", "l2_penalty", "logistic regression L2 strength", FIELD(c.l2_penalty)));
    r.push_back(entry("classifier", "max_iters", "logistic regression iteration cap", FIELD(c.max_iters)));
    r.push_back(entry("classifier", "tolerance", "gradient tolerance", FIELD(c.tolerance)));
    r.push_back(entry("classifier", "standardize", "z-score features with training statistics", FIELD(c.standardize)));
    r.push_back(entry("classifier", "class_weights", "inverse-frequency loss weights (deep)", FIELD(c.class_weights)));
    r.push_back(entry("classifier", "epochs", "network epochs (0 = default)", FIELD(c.net_epochs)));
    r.push_back(entry("classifier", "batch_size", "network batch size (0 = default)", FIELD(c.net_batch_size)));
    r.push_back(entry("classifier", "learning_rate", "network learning rate (0 = default)", FIELD(c.net_learning_rate)));

    r.push_back(entry("cluster", "k", "number of clusters (0 = classes present)", FIELD(c.cluster_k)));
    r.push_back(entry("cluster", "normalize", "L2-normalize features first", FIELD(c.cluster_normalize)));
    r.push_back(entry("cluster", "max_iters", "Lloyd iteration cap", FIELD(c.cluster_max_iters)));
    r.push_back(entry("cluster", "label_groups", "label:group pairs merged before scoring", FIELD(c.label_groups)));

    r.push_back(entry("ablation", "no_global_prior", "random transformer embedding init", FIELD(c.no_global_prior)));
    r.push_back(entry("ablation", "raw_count_weights", "edge weight = raw count", FIELD(c.raw_count_weights)));
    r.push_back(entry("ablation", "unidirectional_attention", "causal attention mask",
                      FIELD(c.unidirectional_attention)));

    r.push_back(entry("run", "seed", "global seed (--seed overrides)", FIELD(c.seed)));
    r.push_back(entry("run", "threads", "walk generation threads", FIELD(c.threads)));
    r.push_back(entry("run", "stages", "stages executed by `run`", FIELD(c.stages)));
    return r;
  }();
  return specs;
}

#undef FIELD

std::string squash(const std::string& s) {
  std::string out;
  for (char c : s)
    if (c != '_' && c != '-') out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::string suggest_key(const std::string& section, const std::string& key) {
  const std::string target = squash(key);
  std::string best;
  std::size_t best_score = std::string::npos;
  for (const auto& s : registry()) {
    if (s.section != section) continue;
    const std::string cand = squash(s.key);
    std::size_t score = edit_distance(target, cand);
    // A key that is a prefix/abbreviation of the candidate counts as close.
    if (!target.empty() && cand.rfind(target.substr(0, std::min<std::size_t>(target.size(), 4)), 0) == 0)
      score = std::min(score, cand.size() > target.size() ? (cand.size() - target.size()) / 2 : score);
    if (score < best_score) {
      best_score = score;
      best = s.key;
    }
  }
  const std::size_t limit = std::max<std::size_t>(2, target.size() / 2);
  return best_score <= limit ? best : std::string();
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::vector<std::string> sections;
  for (const auto& s : registry())
    if (std::find(sections.begin(), sections.end(), s.section) == sections.end()) sections.push_back(s.section);

  std::istringstream in(text);
  std::string line, section;
  std::vector<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ValidationError(where + ": malformed section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (std::find(sections.begin(), sections.end(), section) == sections.end())
        throw ValidationError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    if (section.empty()) throw ValidationError(where + ": key outside any [section]");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    const auto hash = value.find(" #");
    if (hash != std::string::npos) value = trim(std::string_view(value).substr(0, hash));

    const auto it = std::find_if(registry().begin(), registry().end(),
                                 [&](const KeySpec& s) { return s.section == section && s.key == key; });
    if (it == registry().end()) {
      std::string msg = where + ": unknown key '" + key + "' in [" + section + "]";
      const auto hint = suggest_key(section, key);
      if (!hint.empty()) msg += "; did you mean '" + hint + "'?";
      throw ValidationError(msg);
    }
    const std::string full = section + "." + key;
    if (std::find(seen.begin(), seen.end(), full) != seen.end())
      throw ValidationError(where + ": duplicate key " + full);
    seen.push_back(full);
    it->set(cfg, value);
  }
  return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string PipelineConfig::canonical() const {
  std::string out;
  // The artifact location does not change what is computed, so it stays out of the hash.
  for (const auto& s : registry())
    if (s.key != "artifacts") out += s.section + "." + s.key + "=" + s.get(*this) + "\n";
  return out;
}

std::string config_reference() {
  const PipelineConfig defaults;
  std::string out, section;
  for (const auto& s : registry()) {
    if (s.section != section) {
      section = s.section;
      out += "[" + section + "]\n";
    }
    std::string line = "  " + s.key + " = " + s.get(defaults);
    if (line.size() < 40) line.resize(40, ' ');
    out += line + "  " + s.doc + "\n";
  }
  return out;
}

TransformerConfig PipelineConfig::transformer_config() const {
  TransformerConfig t = transformer;
  t.vocab_size = vocabulary().size();
  t.bidirectional = !unidirectional_attention;
  return t;
}

std::size_t PipelineConfig::structural_dim() const {
  return skipgram.dim ? skipgram.dim : static_cast<std::size_t>(transformer.model_dim);
}

void PipelineConfig::validate() const {
  if (artifacts.empty()) throw ValidationError("config: paths.artifacts is required (or pass --out)");
  if (k < 1 || k > 12) throw ValidationError("config: kmer.k must be in [1, 12]");
  if (alphabet.size() < 2) throw ValidationError("config: kmer.alphabet needs at least 2 symbols");
  weights.validate();
  WalkConfig w = walks;
  w.validate();
  SkipGramConfig sg = skipgram;
  sg.dim = structural_dim();
  sg.validate();
  transformer_config().validate();
  masking.validate();
  if (pretrain.batch_size == 0) throw ValidationError("config: pretrain.batch_size must be >= 1");
  if (!no_global_prior && structural_dim() != static_cast<std::size_t>(transformer.model_dim))
    throw ValidationError("config: skipgram.dim must equal transformer.model_dim to initialize the embedding layer "
                          "(or set ablation.no_global_prior)");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("config: split.test_fraction must be in (0,1)");
  if (!(l2_penalty >= 0.0)) throw ValidationError("config: classifier.l2_penalty must be >= 0");
  if (!(tolerance > 0.0)) throw ValidationError("config: classifier.tolerance must be > 0");
  for (const auto& g : label_groups)
    if (g.find(':') == std::string::npos || g.front() == ':' || g.back() == ':')
      throw ValidationError("config: cluster.label_groups entries must look like label:group, got '" + g + "'");
  static const std::vector<std::string> known = {"simulate", "build-graph", "train-structural", "pretrain",
                                                 "embed",    "train",       "evaluate",         "cluster"};
  for (const auto& s : stages)
    if (std::find(known.begin(), known.end(), s) == known.end())
      throw ValidationError("config: run.stages has unknown stage '" + s + "'");
}

}  // namespace mg2vec

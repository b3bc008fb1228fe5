#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "mg2vec/pipeline.hpp"

using namespace mg2vec;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mg2vec_unit_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

PipelineConfig tiny_config(const fs::path& dir) {
  auto cfg = parse_config(R"(
[paths]
artifacts = PLACEHOLDER
[simulate]
num_species = 2
ancestor_length = 3000
mutation_rates = 0.05, 0.1
abundance = 0.5, 0.3, 0.2
host_length = 4000
num_reads = 300
read_length_mean = 80
read_length_stddev = 10
num_samples = 3
[kmer]
k = 3
[walks]
walks_per_node = 2
walk_length = 10
[skipgram]
epochs = 1
[transformer]
num_layers = 1
num_heads = 2
model_dim = 8
ff_dim = 16
max_tokens = 64
[pretrain]
epochs = 1
max_reads = 20
)");
  cfg.artifacts = dir.string();
  return cfg;
}

}  // namespace

TEST_CASE("config: a paths-only file gets the documented defaults") {
  const auto cfg = parse_config("[paths]\nartifacts = out\n");
  CHECK(cfg.artifacts == "out");
  CHECK(cfg.k == 4);
  CHECK(cfg.walks.walks_per_node == 10);
  CHECK(cfg.walks.walk_length == 80);
  CHECK(cfg.transformer.num_layers == 4);
  CHECK(cfg.transformer.num_heads == 8);
  CHECK(cfg.transformer.dropout == 0.1);
  CHECK(cfg.masking.mask_ratio == 0.15);
  CHECK(cfg.walks.return_param == 1.0);
  CHECK(cfg.walks.inout_param == 1.0);
  CHECK(cfg.mode == RepresentationMode::kConcat);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.transformer_config().vocab_size == 259);
}

TEST_CASE("config: unknown keys suggest the intended one") {
  CHECK_THROWS_WITH_AS(parse_config("[walks]\nwalklen = 5\n"), doctest::Contains("did you mean 'walk_length'"),
                       ValidationError);
  CHECK(suggest_key("transformer", "num_layer") == "num_layers");
  CHECK(suggest_key("walks", "zzzzzzzz").empty());
  CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("k = 4\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[kmer]\nk = four\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[kmer]\nk = 4\nk = 5\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("[embed]\nmode = both\n"), ValidationError);
}

TEST_CASE("config: validation of required paths and k range") {
  CHECK_THROWS_AS(parse_config("[kmer]\nk = 4\n").validate(), ValidationError);
  for (int k : {3, 6}) {
    auto cfg = parse_config("[paths]\nartifacts = a\n[kmer]\nk = " + std::to_string(k) + "\n");
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.vocabulary().num_kmers() == (k == 3 ? 64 : 4096));
  }
  auto cfg = parse_config("[paths]\nartifacts = a\n[skipgram]\ndim = 16\n");
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.no_global_prior = true;
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(parse_config("[paths]\nartifacts = a\n[run]\nstages = simulate, fly\n").validate(), ValidationError);
}

TEST_CASE("config: ablation flags and canonical hash") {
  const auto cfg = parse_config(
      "[paths]\nartifacts = a\n[ablation]\nno_global_prior = true\nraw_count_weights = yes\n"
      "unidirectional_attention = 1\n");
  CHECK(cfg.no_global_prior);
  CHECK(cfg.raw_count_weights);
  CHECK(!cfg.transformer_config().bidirectional);
  auto moved = cfg;
  moved.artifacts = "elsewhere";
  CHECK(moved.hash() == cfg.hash());
  moved.seed = 2;
  CHECK(moved.hash() != cfg.hash());
  CHECK(parse_config("[paths]\nartifacts = a\n").hash() != cfg.hash());
  CHECK(config_reference().find("walk_length = 80") != std::string::npos);
}

TEST_CASE("stage seeds are distinct and stable") {
  CHECK(stage_seed(1, "pretrain") == stage_seed(1, "pretrain"));
  CHECK(stage_seed(1, "pretrain") != stage_seed(1, "embed"));
  CHECK(stage_seed(1, "pretrain") != stage_seed(2, "pretrain"));
}

TEST_CASE("embedding table binary round trip is exact") {
  EmbeddingTable t(256, 64, 42);
  Rng rng(3);
  for (std::size_t i = 0; i < 256 * 64; ++i) t.data()[i] = rng.normal();
  std::stringstream ss;
  t.save(ss);
  const auto back = EmbeddingTable::load(ss);
  CHECK(back == t);
  std::istringstream junk("not a table");
  CHECK_THROWS_AS(EmbeddingTable::load(junk), IncompatibleArtifactError);
}

TEST_CASE("split rule holds out the last sample") {
  const auto cfg = parse_config("[paths]\nartifacts = a\n");
  const std::vector<std::string> ids{"s00_r000001", "s01_r000002", "s02_r000003"};
  const SplitRule rule(cfg, ids);
  CHECK(!rule.is_test(ids[0]));
  CHECK(!rule.is_test(ids[1]));
  CHECK(rule.is_test(ids[2]));
  std::vector<std::string> plain;
  for (int i = 0; i < 2000; ++i) plain.push_back("read" + std::to_string(i));
  const SplitRule hashed(cfg, plain);
  int test = 0;
  for (const auto& id : plain) test += hashed.is_test(id);
  CHECK(std::abs(test / 2000.0 - 0.2) < 0.03);
}

TEST_CASE("pipeline smoke: early stages, determinism and missing artifacts") {
  const auto dir = scratch("smoke");
  const auto cfg = tiny_config(dir);
  std::ostringstream log;
  for (const char* s : {"simulate", "build-graph", "train-structural"}) run_stage(s, cfg, log);
  for (const char* f : {"reads.fastq", "labels.tsv", "vocab.txt", "graph.tsv", "walks.txt", "global.emb", "global.tsv",
                        "build-graph.manifest"})
    CHECK(fs::exists(dir / f));
  const auto graph = slurp(dir / "graph.tsv");
  const auto manifest = slurp(dir / "build-graph.manifest");
  CHECK(manifest.find("config_hash\t") != std::string::npos);
  run_stage("build-graph", cfg, log);
  CHECK(slurp(dir / "graph.tsv") == graph);
  CHECK(slurp(dir / "build-graph.manifest") == manifest);
  CHECK(!fs::exists(dir / ".mg2vec.lock"));

  CHECK_THROWS_WITH_AS(run_stage("embed", cfg, log), doctest::Contains("mg2vec pretrain"), MissingArtifactError);

  auto global_only = cfg;
  global_only.mode = RepresentationMode::kGlobal;
  run_stage("embed", global_only, log);
  CHECK(fs::exists(dir / "features.global.bin"));

  std::ofstream(dir / ".mg2vec.lock").put('x');
  CHECK_THROWS_WITH(run_stage("build-graph", cfg, log), doctest::Contains("locked"));
  fs::remove(dir / ".mg2vec.lock");
  fs::remove_all(dir);
}

TEST_CASE("pipeline: exclusions shrink the representation corpus") {
  const auto dir = scratch("exclude");
  auto cfg = tiny_config(dir);
  std::ostringstream log;
  run_stage("simulate", cfg, log);
  run_stage("build-graph", cfg, log);
  const auto full = slurp(dir / "build-graph.manifest");
  cfg.exclude_labels = {"host"};
  run_stage("build-graph", cfg, log);
  const auto reduced = slurp(dir / "build-graph.manifest");
  auto corpus = [](const std::string& m) {
    const auto p = m.find("corpus_reads\t") + 13;
    return std::stoul(m.substr(p, m.find('\n', p) - p));
  };
  CHECK(corpus(reduced) < corpus(full));
  CHECK(corpus(full) < 300);  // the held-out sample never feeds the graph
  fs::remove_all(dir);
}

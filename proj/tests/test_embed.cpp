#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mg2vec/embed.hpp"

using namespace mg2vec;

namespace {

struct Fixture {
  KmerVocabulary vocab{2};
  EmbeddingTable global{19, 3};
  EmbeddingTable contextual{19, 2};
  TransformerModel model{[] {
    TransformerConfig c;
    c.vocab_size = 19;
    c.num_layers = 1;
    c.num_heads = 2;
    c.model_dim = 4;
    c.ff_dim = 8;
    c.max_tokens = 8;
    return c;
  }()};

  Fixture() {
    for (std::size_t r = 0; r < 19; ++r) {
      for (std::size_t j = 0; j < 3; ++j) global.row(r)[j] = static_cast<double>(r) + 0.1 * static_cast<double>(j);
      for (std::size_t j = 0; j < 2; ++j) contextual.row(r)[j] = -static_cast<double>(r) * static_cast<double>(j + 1);
    }
  }
  EmbeddingArtifacts all() const { return {&vocab, &global, &contextual, &model}; }
};

}  // namespace

TEST_CASE("mode names round trip") {
  for (auto m : {RepresentationMode::kGlobal, RepresentationMode::kContextual, RepresentationMode::kEncoder,
                 RepresentationMode::kConcat, RepresentationMode::kKmerFrequency})
    CHECK(parse_representation_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_representation_mode("both"), ValidationError);
  CHECK(parse_pooling("max") == Pooling::kMax);
  CHECK_THROWS_AS(parse_pooling("sum"), ValidationError);
}

TEST_CASE("concat vector is global followed by contextual") {
  const Fixture f;
  const auto a = f.all();
  const TokenId id = f.vocab.token_to_id("CG");
  const auto v = kmer_vector(id, RepresentationMode::kConcat, a);
  REQUIRE(v.size() == 5);
  for (std::size_t j = 0; j < 3; ++j) CHECK(v[j] == f.global.row(static_cast<std::size_t>(id))[j]);
  for (std::size_t j = 0; j < 2; ++j) CHECK(v[3 + j] == f.contextual.row(static_cast<std::size_t>(id))[j]);
  CHECK(representation_dim(RepresentationMode::kConcat, a) == 5);
  CHECK(representation_dim(RepresentationMode::kEncoder, a) == 4);
  CHECK(representation_dim(RepresentationMode::kKmerFrequency, a) == 16);
}

TEST_CASE("missing artifacts are reported per mode") {
  const Fixture f;
  EmbeddingArtifacts only_global{&f.vocab, &f.global, nullptr, nullptr};
  CHECK_NOTHROW(require_artifacts(RepresentationMode::kGlobal, only_global));
  CHECK_THROWS_WITH_AS(require_artifacts(RepresentationMode::kConcat, only_global),
                       doctest::Contains("contextual"), ValidationError);
  CHECK_THROWS_AS(require_artifacts(RepresentationMode::kEncoder, only_global), ValidationError);
  CHECK_NOTHROW(require_artifacts(RepresentationMode::kKmerFrequency, {&f.vocab, nullptr, nullptr, nullptr}));
}

TEST_CASE("mean pooling averages k-mer vectors and skips UNK") {
  const Fixture f;
  const auto a = f.all();
  const auto v = embed_read("ACGNT", RepresentationMode::kGlobal, a);
  const double ac = f.vocab.token_to_id("AC"), cg = f.vocab.token_to_id("CG");
  CHECK(v[0] == doctest::Approx((ac + cg) / 2));
  const auto mx = embed_read("ACGNT", RepresentationMode::kGlobal, a, Pooling::kMax);
  CHECK(mx[0] == std::max(ac, cg));
  CHECK_THROWS_AS(embed_read("A", RepresentationMode::kGlobal, a), UnembeddableReadError);
  CHECK_THROWS_AS(embed_read("ANA", RepresentationMode::kGlobal, a), UnembeddableReadError);
}

TEST_CASE("concat pooling equals the mean of per-k-mer concat vectors") {
  const Fixture f;
  const auto a = f.all();
  const std::string read = "ACACGGT";
  const auto pooled = embed_read(read, RepresentationMode::kConcat, a);
  const auto tokens = tokenize(read, f.vocab);
  std::vector<double> manual(5, 0.0);
  for (TokenId t : tokens) {
    const auto v = kmer_vector(t, RepresentationMode::kConcat, a);
    for (std::size_t j = 0; j < 5; ++j) manual[j] += v[j] / static_cast<double>(tokens.size());
  }
  for (std::size_t j = 0; j < 5; ++j) CHECK(pooled[j] == doctest::Approx(manual[j]).epsilon(1e-12));
}

TEST_CASE("k-mer frequency features sum to one") {
  const Fixture f;
  const auto v = embed_read("ACGTACGT", RepresentationMode::kKmerFrequency, f.all());
  double s = 0;
  for (double x : v) s += x;
  CHECK(s == doctest::Approx(1.0));
  CHECK(v[static_cast<std::size_t>(f.vocab.token_to_id("AC"))] == doctest::Approx(2.0 / 7));
}

TEST_CASE("encoder pooling matches per-position hidden states") {
  const Fixture f;
  const auto a = f.all();
  const std::string read = "ACGTTGCA";
  const auto tokens = tokenize(read, f.vocab);
  const auto pooled = embed_read(read, RepresentationMode::kEncoder, a);
  std::vector<double> manual(4, 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto h = kmer_vector_in_context(tokens, t, a);
    for (std::size_t j = 0; j < 4; ++j) manual[j] += h[j] / static_cast<double>(tokens.size());
  }
  for (std::size_t j = 0; j < 4; ++j) CHECK(pooled[j] == doctest::Approx(manual[j]).epsilon(1e-12));
}

TEST_CASE("embed_reads counts skipped reads and round trips") {
  const Fixture f;
  std::vector<ReadRecord> reads{{"a", "ACGT", std::nullopt, "host"},
                                {"b", "A", std::nullopt, "sp1"},
                                {"c", "GGTT", std::nullopt, std::nullopt}};
  const auto e = embed_reads(reads, RepresentationMode::kConcat, f.all());
  CHECK(e.skipped == 1);
  CHECK(e.ids == std::vector<std::string>{"a", "c"});
  CHECK(e.labels == std::vector<std::string>{"host", ""});
  CHECK(e.features.rows() == 2);
  CHECK(e.features.cols() == 5);
  std::stringstream ss;
  e.save(ss);
  const auto back = EmbeddedReads::load(ss);
  CHECK(back.ids == e.ids);
  CHECK(back.labels == e.labels);
  CHECK(back.features == e.features);
  CHECK(back.skipped == 1);
  std::ostringstream tsv;
  e.save_tsv(tsv);
  CHECK(tsv.str().rfind("a\thost\t", 0) == 0);
  std::istringstream bad("MG2VXXXX");
  CHECK_THROWS_AS(EmbeddedReads::load(bad), IncompatibleArtifactError);
}

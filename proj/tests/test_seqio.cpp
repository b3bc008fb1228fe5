#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mg2vec/seqio.hpp"

using namespace mg2vec;

namespace {

std::vector<ReadRecord> fasta(const std::string& text) {
  std::istringstream in(text);
  return parse_fasta(in);
}

std::vector<ReadRecord> fastq(const std::string& text, double q, FastqStats* stats = nullptr) {
  std::istringstream in(text);
  return parse_fastq(in, q, stats);
}

}  // namespace

TEST_CASE("fasta: multi-line records are joined and uppercased") {
  const auto r = fasta(">r1\nacgt\n>r2\nTT\nGG\n");
  REQUIRE(r.size() == 2);
  CHECK(r[0].id == "r1");
  CHECK(r[0].sequence == "ACGT");
  CHECK(r[1].id == "r2");
  CHECK(r[1].sequence == "TTGG");
}

TEST_CASE("fasta: empty input yields no records") { CHECK(fasta("").empty()); }

TEST_CASE("fasta: body before the first header fails at offset 0") {
  try {
    fasta("ACGT\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("fasta: header with no sequence is an error naming its offset") {
  try {
    fasta(">a\nAC\n>b\n>c\nGG\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 6);
  }
}

TEST_CASE("fasta: id stops at whitespace; CRLF and ambiguity codes") {
  const auto r = fasta(">read7 some description\r\nACRYg\r\n");
  REQUIRE(r.size() == 1);
  CHECK(r[0].id == "read7");
  CHECK(r[0].sequence == "ACNNG");
}

TEST_CASE("fasta: reads made only of N are dropped") {
  std::istringstream in(">a\nNNNN\n>b\nACGT\n");
  FastaReader reader(in);
  ReadRecord rec;
  std::vector<std::string> ids;
  while (reader.next(rec)) ids.push_back(rec.id);
  CHECK(ids == std::vector<std::string>{"b"});
  CHECK(reader.dropped_all_n() == 1);
}

TEST_CASE("fastq: mean quality filter is strict") {
  CHECK(fastq("@a\nACGT\n+\nIIII\n", 7).size() == 1);
  CHECK(fastq("@a\nACGT\n+\n!!!!\n", 7).empty());
  CHECK(fastq("@a\nACGT\n+\n!!!!\n", 0).empty());
  CHECK(fastq("@a\nACGT\n+\n!!!!\n", -1).size() == 1);
}

TEST_CASE("fastq: qualities decode as Phred+33") {
  const auto r = fastq("@a\nACGT\n+\n!+5I\n", -1);
  REQUIRE(r.size() == 1);
  REQUIRE(r[0].qualities);
  CHECK(*r[0].qualities == std::vector<std::uint8_t>{0, 10, 20, 40});
}

TEST_CASE("fastq: malformed records") {
  CHECK_THROWS_AS(fastq("@a\nACGT\n+\nIII\n", 7), ParseError);
  CHECK_THROWS_AS(fastq("@a\nACGT\n+\nII\x01I\n", 7), ParseError);
  CHECK_THROWS_AS(fastq("@a\nACGT\n+\nII\xC3I\n", 7), ParseError);
  CHECK_THROWS_AS(fastq("a\nACGT\n+\nIIII\n", 7), ParseError);
  CHECK_THROWS_AS(fastq("@a\nACGT\n", 7), ParseError);
}

TEST_CASE("fastq: stats count dropped reads") {
  FastqStats st;
  const auto r = fastq("@a\nACGT\n+\nIIII\n@b\nACGT\n+\n!!!!\n@c\nNNNN\n+\nIIII\n", 7, &st);
  CHECK(r.size() == 1);
  CHECK(st.kept == 1);
  CHECK(st.dropped_low_quality == 1);
  CHECK(st.dropped_all_n == 1);
}

TEST_CASE("fastq: raising the threshold never keeps more reads") {
  Rng rng(5);
  std::string text;
  for (int i = 0; i < 200; ++i) {
    text += "@r" + std::to_string(i) + "\nACGTACGT\n+\n";
    for (int j = 0; j < 8; ++j) text += static_cast<char>(33 + rng.index(41));
    text += "\n";
  }
  std::size_t prev = fastq(text, -1).size();
  for (double q = 0; q <= 41; q += 0.5) {
    const auto n = fastq(text, q).size();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("parser round trip reproduces ids and sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ReadRecord> reads;
    const auto n = 1 + rng.index(6);
    for (std::uint64_t i = 0; i < n; ++i) {
      ReadRecord r;
      r.id = "id" + std::to_string(trial) + "_" + std::to_string(i);
      const auto len = 1 + rng.index(200);
      for (std::uint64_t j = 0; j < len; ++j) r.sequence += "ACGTN"[rng.index(4)];
      r.qualities = std::vector<std::uint8_t>(r.sequence.size(), 30);
      reads.push_back(r);
    }
    std::ostringstream fa, fq;
    write_fasta(fa, reads, 1 + rng.index(80));
    write_fastq(fq, reads);
    const auto back_fa = fasta(fa.str());
    const auto back_fq = fastq(fq.str(), -1);
    REQUIRE(back_fa.size() == reads.size());
    REQUIRE(back_fq.size() == reads.size());
    for (std::size_t i = 0; i < reads.size(); ++i) {
      CHECK(back_fa[i].id == reads[i].id);
      CHECK(back_fa[i].sequence == reads[i].sequence);
      CHECK(back_fq[i].sequence == reads[i].sequence);
      CHECK(*back_fq[i].qualities == *reads[i].qualities);
    }
  }
}

TEST_CASE("labels sidecar round trip") {
  std::vector<ReadRecord> reads{{"a", "ACGT", std::nullopt, "host"}, {"b", "ACGT", std::nullopt, "sp1"}};
  std::ostringstream out;
  write_labels(out, reads);
  CHECK(out.str() == "a\thost\nb\tsp1\n");
  std::istringstream in(out.str());
  auto labels = read_labels(in);
  std::vector<ReadRecord> fresh{{"a", "A", std::nullopt, std::nullopt}, {"c", "A", std::nullopt, std::nullopt}};
  CHECK(attach_labels(fresh, labels) == 1);
  CHECK(fresh[0].label == "host");
  CHECK(!fresh[1].label);
}

namespace {

SyntheticSpec two_class(std::size_t reads, std::uint64_t seed) {
  SyntheticSpec s;
  s.num_species = 1;
  s.ancestor_length = 2000;
  s.mutation_rates = {0.1};
  s.abundance = {0.9, 0.1};
  s.host_length = 3000;
  s.num_reads = reads;
  s.read_length_mean = 100;
  s.read_length_stddev = 10;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("simulator: label counts follow the abundance within 3 sigma") {
  for (std::size_t n : {1000UL, 10000UL}) {
    const auto sim = simulate_metagenome(two_class(n, 3));
    std::size_t sp = 0;
    for (const auto& r : sim.reads) sp += *r.label == "sp1";
    const double mean = 0.1 * static_cast<double>(n);
    const double sd = std::sqrt(static_cast<double>(n) * 0.1 * 0.9);
    CHECK(std::abs(static_cast<double>(sp) - mean) <= 3 * sd);
  }
}

TEST_CASE("simulator: zero mutation gives identical species genomes") {
  auto s = two_class(10, 1);
  s.num_species = 2;
  s.mutation_rates = {0.0, 0.0};
  s.abundance = {0.5, 0.25, 0.25};
  const auto sim = simulate_metagenome(s);
  REQUIRE(sim.references.size() == 3);
  CHECK(sim.references[1].sequence == sim.references[2].sequence);
}

TEST_CASE("simulator: identical seed gives byte-identical output") {
  auto write = [](const SimulatedMetagenome& m) {
    std::ostringstream o;
    write_fastq(o, m.reads);
    write_labels(o, m.reads);
    write_fasta(o, m.references);
    return o.str();
  };
  const auto a = write(simulate_metagenome(two_class(500, 9)));
  const auto b = write(simulate_metagenome(two_class(500, 9)));
  const auto c = write(simulate_metagenome(two_class(500, 10)));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("simulator: pairwise identity matches the shared-ancestor expectation") {
  SyntheticSpec s;
  s.num_species = 2;
  s.ancestor_length = 100000;
  s.mutation_rates = {0.1, 0.1};
  s.abundance = {0.0, 0.5, 0.5};
  s.host_length = 1000;
  s.num_reads = 1;
  s.seed = 4;
  const auto sim = simulate_metagenome(s);
  const double m = 0.1;
  const double expected = (1 - m) * (1 - m) + m * m / 3;
  CHECK(std::abs(sequence_identity(sim.references[1].sequence, sim.references[2].sequence) - expected) < 0.02);
}

TEST_CASE("simulator: reads carry labels, sample ids and valid lengths") {
  auto s = two_class(300, 2);
  s.num_samples = 3;
  const auto sim = simulate_metagenome(s);
  REQUIRE(sim.reads.size() == 300);
  std::map<std::size_t, std::size_t> per_sample;
  for (const auto& r : sim.reads) {
    CHECK(r.label.has_value());
    CHECK(r.sequence.size() >= s.read_length_min);
    CHECK(r.qualities->size() == r.sequence.size());
    ++per_sample[*sample_of_read(r.id)];
  }
  CHECK(per_sample.size() == 3);
  CHECK(per_sample[0] == 100);
}

TEST_CASE("simulator: GC content follows the configured fraction") {
  auto s = two_class(1, 1);
  s.host_gc = 0.3;
  s.host_length = 50000;
  const auto sim = simulate_metagenome(s);
  const auto& g = sim.references[0].sequence;
  const double gc = static_cast<double>(std::count_if(g.begin(), g.end(), [](char c) { return c == 'G' || c == 'C'; })) /
                    static_cast<double>(g.size());
  CHECK(std::abs(gc - 0.3) < 0.01);
}

TEST_CASE("simulator: unambiguous-read filter keeps reads closest to their source") {
  auto s = two_class(400, 6);
  s.num_species = 2;
  s.mutation_rates = {0.02, 0.02};
  s.abundance = {0.2, 0.4, 0.4};
  s.read_length_mean = 30;
  s.read_length_stddev = 2;
  s.unique_reads_only = true;
  const auto sim = simulate_metagenome(s);
  CHECK(sim.reads.size() == 400);
  CHECK(sim.rejected_ambiguous > 0);
}

TEST_CASE("simulator: invalid specs are rejected") {
  auto s = two_class(10, 1);
  s.abundance = {0.5, 0.4};
  CHECK_THROWS_AS(simulate_metagenome(s), ValidationError);
  s = two_class(10, 1);
  s.mutation_rates = {1.5};
  CHECK_THROWS_AS(simulate_metagenome(s), ValidationError);
  s = two_class(10, 1);
  s.read_length_mean = 5000;
  CHECK_THROWS_AS(simulate_metagenome(s), ValidationError);
}

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mg2vec/common.hpp"

namespace mg2vec {

/// One sequencing read. Sequences are stored uppercased with every symbol
/// outside {A,C,G,T} mapped to 'N'.
struct ReadRecord {
  std::string id;
  std::string sequence;
  std::optional<std::vector<std::uint8_t>> qualities;  // Phred scores
  std::optional<std::string> label;
};

/// Uppercases and maps non-ACGT symbols to 'N'.
std::string normalize_sequence(std::string_view raw);

/// Streaming FASTA reader. Holds at most one record in memory.
class FastaReader {
 public:
  explicit FastaReader(std::istream& in) : in_(in) {}
  /// Returns false at end of input. Throws ParseError on malformed input.
  bool next(ReadRecord& record);
  std::uint64_t dropped_all_n() const { return dropped_all_n_; }

 private:
  bool read_line(std::string& line);

  std::istream& in_;
  std::uint64_t offset_ = 0;
  std::optional<std::string> pending_header_;
  std::uint64_t pending_header_offset_ = 0;
  std::uint64_t dropped_all_n_ = 0;
};

struct FastqStats {
  std::uint64_t kept = 0;
  std::uint64_t dropped_low_quality = 0;
  std::uint64_t dropped_all_n = 0;
};

/// Streaming FASTQ reader (4 lines per record, Phred+33). Keeps records whose
/// mean Phred score is strictly greater than min_avg_q.
class FastqReader {
 public:
  FastqReader(std::istream& in, double min_avg_q) : in_(in), min_avg_q_(min_avg_q) {}
  bool next(ReadRecord& record);
  const FastqStats& stats() const { return stats_; }

 private:
  bool read_line(std::string& line);

  std::istream& in_;
  double min_avg_q_;
  std::uint64_t offset_ = 0;
  FastqStats stats_;
};

std::vector<ReadRecord> parse_fasta(std::istream& in);
std::vector<ReadRecord> parse_fastq(std::istream& in, double min_avg_q, FastqStats* stats = nullptr);

void write_fasta(std::ostream& out, const std::vector<ReadRecord>& reads, std::size_t line_width = 80);
void write_fastq(std::ostream& out, const std::vector<ReadRecord>& reads);

/// Labels sidecar: `read_id<TAB>label` per line.
std::unordered_map<std::string, std::string> read_labels(std::istream& in);
void write_labels(std::ostream& out, const std::vector<ReadRecord>& reads);
/// Attaches labels by read id; returns the number of reads left unlabeled.
std::size_t attach_labels(std::vector<ReadRecord>& reads,
                          const std::unordered_map<std::string, std::string>& labels);

/// Parameters of the shared-ancestor metagenome simulator. Class 0 is the
/// host; classes 1..num_species are the microbial species.
struct SyntheticSpec {
  std::size_t num_species = 4;
  std::size_t ancestor_length = 20000;
  std::vector<double> mutation_rates;  // one per species
  std::vector<double> abundance;       // host first, then species; sums to 1
  std::size_t host_length = 50000;
  std::size_t num_reads = 1000;
  double read_length_mean = 150.0;
  double read_length_stddev = 20.0;
  std::size_t read_length_min = 4;
  double read_error_rate = 0.01;
  std::size_t num_samples = 1;
  std::uint64_t seed = 1;

  // Composition extensions. Species with the same clade share one ancestor;
  // an empty clade list puts every species under ancestor 0.
  std::vector<std::size_t> species_clade;
  std::vector<double> clade_gc;  // GC fraction per ancestor; empty means 0.5
  double host_gc = 0.5;
  /// Keep only species reads strictly closer to their own genome than to any
  /// sibling species at the same coordinates; rejected draws are replaced.
  bool unique_reads_only = false;

  std::vector<std::string> class_names() const;
  /// Throws ValidationError when invariants are violated.
  void validate() const;
};

struct SimulatedMetagenome {
  std::vector<ReadRecord> reads;        // labeled, FASTQ-style qualities attached
  std::vector<ReadRecord> references;   // host then species genomes
  std::vector<std::string> class_names;
  std::size_t rejected_ambiguous = 0;
};

SimulatedMetagenome simulate_metagenome(const SyntheticSpec& spec);

/// Sample index encoded in simulator read ids ("s03_r000017" -> 3); nullopt otherwise.
std::optional<std::size_t> sample_of_read(const std::string& read_id);

/// Fraction of equal positions between two equal-length sequences.
double sequence_identity(const std::string& a, const std::string& b);

}  // namespace mg2vec

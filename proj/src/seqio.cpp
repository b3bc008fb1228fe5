#include "mg2vec/seqio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "mg2vec/common.hpp"

namespace mg2vec {

namespace {

constexpr char kBases[4] = {'A', 'C', 'G', 'T'};

bool all_n(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == 'N'; });
}

std::string header_id(std::string_view header) {
  auto end = header.find_first_of(" \t\r");
  return std::string(header.substr(0, end));
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

char substitute(char base, Rng& rng) {
  char alt;
  do {
    alt = kBases[rng.index(4)];
  } while (alt == base);
  return alt;
}

std::string random_genome(std::size_t length, double gc, Rng& rng) {
  // P(G)=P(C)=gc/2, P(A)=P(T)=(1-gc)/2
  std::string g(length, 'A');
  for (auto& c : g) {
    const double u = rng.uniform();
    if (u < gc) {
      c = u < gc / 2 ? 'G' : 'C';
    } else {
      c = u < gc + (1.0 - gc) / 2 ? 'A' : 'T';
    }
  }
  return g;
}

}  // namespace

std::string normalize_sequence(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case 'A': case 'a': out.push_back('A'); break;
      case 'C': case 'c': out.push_back('C'); break;
      case 'G': case 'g': out.push_back('G'); break;
      case 'T': case 't': out.push_back('T'); break;
      case ' ': case '\t': case '\r': break;
      default: out.push_back('N');
    }
  }
  return out;
}

bool FastaReader::read_line(std::string& line) {
  if (!std::getline(in_, line)) return false;
  offset_ += line.size() + (in_.eof() ? 0 : 1);
  strip_cr(line);
  return true;
}

bool FastaReader::next(ReadRecord& record) {
  std::string line;
  for (;;) {
    if (!pending_header_) {
      std::uint64_t line_start = offset_;
      if (!read_line(line)) return false;
      if (line.empty()) continue;
      if (line[0] != '>') throw ParseError("FASTA sequence data before first header", line_start);
      pending_header_ = line.substr(1);
      pending_header_offset_ = line_start;
    }
    record = ReadRecord{};
    record.id = header_id(*pending_header_);
    const auto header_offset = pending_header_offset_;
    pending_header_.reset();
    std::string body;
    for (;;) {
      const int peek = in_.peek();
      if (peek == std::char_traits<char>::eof()) break;
      std::uint64_t line_start = offset_;
      read_line(line);
      if (!line.empty() && line[0] == '>') {
        pending_header_ = line.substr(1);
        pending_header_offset_ = line_start;
        break;
      }
      body += line;
    }
    record.sequence = normalize_sequence(body);
    if (record.id.empty()) throw ParseError("FASTA record with empty id", header_offset);
    if (record.sequence.empty()) throw ParseError("FASTA record '" + record.id + "' has an empty sequence", header_offset);
    if (all_n(record.sequence)) {
      ++dropped_all_n_;
      continue;
    }
    return true;
  }
}

bool FastqReader::read_line(std::string& line) {
  if (!std::getline(in_, line)) return false;
  offset_ += line.size() + (in_.eof() ? 0 : 1);
  strip_cr(line);
  return true;
}

bool FastqReader::next(ReadRecord& record) {
  std::string header, seq, plus, qual;
  for (;;) {
    std::uint64_t record_start;
    do {
      record_start = offset_;
      if (!read_line(header)) return false;
    } while (header.empty());
    if (header[0] != '@') throw ParseError("FASTQ record does not start with '@'", record_start);
    if (!read_line(seq)) throw ParseError("FASTQ record truncated after header", record_start);
    const std::uint64_t plus_offset = offset_;
    if (!read_line(plus) || plus.empty() || plus[0] != '+')
      throw ParseError("FASTQ record missing '+' separator line", plus_offset);
    const std::uint64_t qual_offset = offset_;
    if (!read_line(qual)) throw ParseError("FASTQ record truncated before quality line", qual_offset);
    if (qual.size() != seq.size())
      throw ParseError("FASTQ sequence/quality length mismatch", qual_offset);
    if (seq.empty()) throw ParseError("FASTQ record has an empty sequence", record_start);

    std::vector<std::uint8_t> phred(qual.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < qual.size(); ++i) {
      const auto byte = static_cast<unsigned char>(qual[i]);
      if (byte < 33 || byte > 126) throw ParseError("FASTQ quality byte outside Phred+33 range", qual_offset + i);
      phred[i] = static_cast<std::uint8_t>(byte - 33);
      sum += phred[i];
    }
    const double mean_q = sum / static_cast<double>(phred.size());
    if (!(mean_q > min_avg_q_)) {
      ++stats_.dropped_low_quality;
      continue;
    }
    record = ReadRecord{};
    record.id = header_id(std::string_view(header).substr(1));
    record.sequence = normalize_sequence(seq);
    if (all_n(record.sequence)) {
      ++stats_.dropped_all_n;
      continue;
    }
    record.qualities = std::move(phred);
    ++stats_.kept;
    return true;
  }
}

std::vector<ReadRecord> parse_fasta(std::istream& in) {
  FastaReader reader(in);
  std::vector<ReadRecord> out;
  ReadRecord r;
  while (reader.next(r)) out.push_back(std::move(r));
  return out;
}

std::vector<ReadRecord> parse_fastq(std::istream& in, double min_avg_q, FastqStats* stats) {
  FastqReader reader(in, min_avg_q);
  std::vector<ReadRecord> out;
  ReadRecord r;
  while (reader.next(r)) out.push_back(std::move(r));
  if (stats) *stats = reader.stats();
  return out;
}

void write_fasta(std::ostream& out, const std::vector<ReadRecord>& reads, std::size_t line_width) {
  for (const auto& r : reads) {
    out << '>' << r.id << '\n';
    for (std::size_t i = 0; i < r.sequence.size(); i += line_width)
      out << std::string_view(r.sequence).substr(i, line_width) << '\n';
  }
}

void write_fastq(std::ostream& out, const std::vector<ReadRecord>& reads) {
  for (const auto& r : reads) {
    out << '@' << r.id << '\n' << r.sequence << "\n+\n";
    if (r.qualities) {
      for (auto q : *r.qualities) out << static_cast<char>(std::min<int>(q, 93) + 33);
    } else {
      out << std::string(r.sequence.size(), 'I');
    }
    out << '\n';
  }
}

std::unordered_map<std::string, std::string> read_labels(std::istream& in) {
  std::unordered_map<std::string, std::string> labels;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const auto line_start = offset;
    offset += line.size() + 1;
    strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ParseError("labels TSV line is not `read_id<TAB>label`", line_start);
    labels[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return labels;
}

void write_labels(std::ostream& out, const std::vector<ReadRecord>& reads) {
  for (const auto& r : reads)
    if (r.label) out << r.id << '\t' << *r.label << '\n';
}

std::size_t attach_labels(std::vector<ReadRecord>& reads,
                          const std::unordered_map<std::string, std::string>& labels) {
  std::size_t missing = 0;
  for (auto& r : reads) {
    auto it = labels.find(r.id);
    if (it == labels.end()) {
      ++missing;
    } else {
      r.label = it->second;
    }
  }
  return missing;
}

std::vector<std::string> SyntheticSpec::class_names() const {
  std::vector<std::string> names{"host"};
  for (std::size_t i = 1; i <= num_species; ++i) names.push_back("sp" + std::to_string(i));
  return names;
}

void SyntheticSpec::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (num_species == 0) throw ValidationError("simulate: num_species must be >= 1");
  if (mutation_rates.size() != num_species)
    throw ValidationError("simulate: need one mutation rate per species");
  for (double m : mutation_rates)
    if (!in_unit(m)) throw ValidationError("simulate: mutation rates must lie in [0,1]");
  if (abundance.size() != num_species + 1)
    throw ValidationError("simulate: abundance needs host + one entry per species");
  double total = 0.0;
  for (double a : abundance) {
    if (!in_unit(a)) throw ValidationError("simulate: abundance entries must lie in [0,1]");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("simulate: abundance must sum to 1");
  if (!in_unit(read_error_rate)) throw ValidationError("simulate: read_error_rate must lie in [0,1]");
  if (!in_unit(host_gc)) throw ValidationError("simulate: host_gc must lie in [0,1]");
  for (double g : clade_gc)
    if (!in_unit(g)) throw ValidationError("simulate: clade_gc entries must lie in [0,1]");
  if (!species_clade.empty() && species_clade.size() != num_species)
    throw ValidationError("simulate: species_clade needs one entry per species");
  for (auto c : species_clade)
    if (!clade_gc.empty() && c >= clade_gc.size())
      throw ValidationError("simulate: species_clade refers to an undefined clade");
  if (num_reads == 0) throw ValidationError("simulate: num_reads must be >= 1");
  if (num_samples == 0 || num_samples > num_reads)
    throw ValidationError("simulate: num_samples must be in [1, num_reads]");
  if (read_length_mean <= 0 || read_length_stddev < 0)
    throw ValidationError("simulate: read length distribution must be positive");
  const double shortest = static_cast<double>(std::min(ancestor_length, host_length));
  if (read_length_mean > shortest || static_cast<double>(read_length_min) > shortest)
    throw ValidationError("simulate: read length exceeds genome length");
}

namespace {

// True when the read is strictly closer (Hamming) to its own species than to
// every sibling species at the same coordinates.
bool closest_to_source(const std::string& read, std::size_t start, std::size_t cls,
                       const std::vector<std::string>& genomes, const std::vector<std::size_t>& clade_of) {
  auto mismatches = [&](const std::string& g) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < read.size(); ++j) m += read[j] != g[start + j];
    return m;
  };
  const std::size_t own = mismatches(genomes[cls]);
  for (std::size_t o = 1; o < genomes.size(); ++o) {
    if (o == cls || clade_of[o] != clade_of[cls]) continue;
    if (mismatches(genomes[o]) <= own) return false;
  }
  return true;
}

}  // namespace

SimulatedMetagenome simulate_metagenome(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SimulatedMetagenome out;
  out.class_names = spec.class_names();

  std::size_t num_clades = 1;
  for (auto c : spec.species_clade) num_clades = std::max(num_clades, c + 1);
  std::vector<std::string> ancestors;
  for (std::size_t c = 0; c < num_clades; ++c) {
    const double gc = c < spec.clade_gc.size() ? spec.clade_gc[c] : 0.5;
    ancestors.push_back(random_genome(spec.ancestor_length, gc, rng));
  }

  std::vector<std::string> genomes;
  genomes.push_back(random_genome(spec.host_length, spec.host_gc, rng));
  for (std::size_t s = 0; s < spec.num_species; ++s) {
    const auto clade = spec.species_clade.empty() ? 0 : spec.species_clade[s];
    std::string g = ancestors[clade];
    const double m = spec.mutation_rates[s];
    for (auto& c : g)
      if (rng.bernoulli(m)) c = substitute(c, rng);
    genomes.push_back(std::move(g));
  }
  for (std::size_t c = 0; c < genomes.size(); ++c)
    out.references.push_back(ReadRecord{out.class_names[c], genomes[c], std::nullopt, out.class_names[c]});

  const int phred = std::clamp(
      spec.read_error_rate > 0 ? static_cast<int>(std::lround(-10.0 * std::log10(spec.read_error_rate))) : 40, 0,
      40);
  const std::size_t per_sample = (spec.num_reads + spec.num_samples - 1) / spec.num_samples;
  out.reads.reserve(spec.num_reads);
  std::vector<std::size_t> clade_of(genomes.size(), static_cast<std::size_t>(-1));
  for (std::size_t s = 0; s < spec.num_species; ++s) clade_of[s + 1] = spec.species_clade.empty() ? 0 : spec.species_clade[s];
  for (std::size_t i = 0; i < spec.num_reads;) {
    const std::size_t cls = rng.categorical(spec.abundance);
    const std::string& genome = genomes[cls];
    const std::size_t lo = std::max<std::size_t>(spec.read_length_min, 1);
    const std::size_t hi = genome.size();
    // Truncated normal by rejection, with a clamp after a bounded number of tries.
    std::size_t len = 0;
    for (int attempt = 0; attempt < 64 && len == 0; ++attempt) {
      const double draw = std::round(rng.normal(spec.read_length_mean, spec.read_length_stddev));
      if (draw >= static_cast<double>(lo) && draw <= static_cast<double>(hi)) len = static_cast<std::size_t>(draw);
    }
    if (len == 0) len = std::clamp<std::size_t>(static_cast<std::size_t>(spec.read_length_mean), lo, hi);
    const std::size_t start = rng.index(genome.size() - len + 1);
    std::string seq = genome.substr(start, len);
    for (auto& c : seq)
      if (rng.bernoulli(spec.read_error_rate)) c = substitute(c, rng);
    if (spec.unique_reads_only && cls > 0 && !closest_to_source(seq, start, cls, genomes, clade_of)) {
      if (++out.rejected_ambiguous > 100 * spec.num_reads + 1000)
        throw Error("simulate: species genomes too similar to draw unambiguous reads");
      continue;
    }

    char id[48];
    std::snprintf(id, sizeof(id), "s%02zu_r%07zu", i / per_sample, i);
    ReadRecord r;
    r.id = id;
    r.sequence = std::move(seq);
    r.qualities = std::vector<std::uint8_t>(r.sequence.size(), static_cast<std::uint8_t>(phred));
    r.label = out.class_names[cls];
    out.reads.push_back(std::move(r));
    ++i;
  }
  return out;
}

std::optional<std::size_t> sample_of_read(const std::string& read_id) {
  if (read_id.size() < 3 || read_id[0] != 's') return std::nullopt;
  const auto us = read_id.find('_');
  if (us == std::string::npos || us == 1) return std::nullopt;
  std::size_t v = 0;
  for (std::size_t i = 1; i < us; ++i) {
    if (read_id[i] < '0' || read_id[i] > '9') return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(read_id[i] - '0');
  }
  return v;
}

double sequence_identity(const std::string& a, const std::string& b) {
  if (a.size() != b.size() || a.empty()) throw DomainError("sequence_identity: sequences must be equal-length and non-empty");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

}  // namespace mg2vec

#include "mg2vec/kmer.hpp"

#include <algorithm>
#include <istream>
#include <sstream>

#include "mg2vec/common.hpp"

namespace mg2vec {

KmerVocabulary::KmerVocabulary(int k, std::string alphabet) : k_(k), alphabet_(std::move(alphabet)) {
  if (k_ < 1) throw ValidationError("vocabulary: k must be >= 1");
  if (alphabet_.size() < 2) throw ValidationError("vocabulary: alphabet needs at least two symbols");
  std::fill(std::begin(symbol_index_), std::end(symbol_index_), -1);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    auto& slot = symbol_index_[static_cast<unsigned char>(alphabet_[i])];
    if (slot != -1) throw ValidationError("vocabulary: duplicate alphabet symbol");
    slot = static_cast<int>(i);
  }
  std::int64_t n = 1;
  for (int i = 0; i < k_; ++i) {
    n *= static_cast<std::int64_t>(alphabet_.size());
    if (n > (1 << 24)) throw ValidationError("vocabulary: |alphabet|^k too large");
  }
  num_kmers_ = static_cast<TokenId>(n);
}

TokenId KmerVocabulary::token_to_id(std::string_view token) const {
  if (token == kPad) return pad_id();
  if (token == kMask) return mask_id();
  if (token == kUnk) return unk_id();
  if (token.size() != static_cast<std::size_t>(k_)) return unk_id();
  const auto base = static_cast<TokenId>(alphabet_.size());
  TokenId id = 0;
  for (char c : token) {
    const int s = symbol_index(c);
    if (s < 0) return unk_id();
    id = id * base + s;
  }
  return id;
}

std::string KmerVocabulary::id_to_token(TokenId id) const {
  if (id < 0 || id >= size()) throw DomainError("vocabulary: id " + std::to_string(id) + " out of range");
  if (id == pad_id()) return std::string(kPad);
  if (id == mask_id()) return std::string(kMask);
  if (id == unk_id()) return std::string(kUnk);
  const auto base = static_cast<TokenId>(alphabet_.size());
  std::string token(static_cast<std::size_t>(k_), ' ');
  for (int i = k_ - 1; i >= 0; --i) {
    token[static_cast<std::size_t>(i)] = alphabet_[static_cast<std::size_t>(id % base)];
    id /= base;
  }
  return token;
}

std::string KmerVocabulary::manifest() const {
  std::ostringstream os;
  os << "mg2vec-vocab\t1\n"
     << "k\t" << k_ << '\n'
     << "alphabet\t" << alphabet_ << '\n'
     << "specials\t" << kPad << ',' << kMask << ',' << kUnk << '\n';
  return os.str();
}

std::uint64_t KmerVocabulary::fingerprint() const { return fnv1a64(manifest()); }

KmerVocabulary KmerVocabulary::from_manifest(std::istream& in) {
  std::string line;
  int k = -1;
  std::string alphabet;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IncompatibleArtifactError("vocabulary manifest: malformed line '" + line + "'");
    const auto key = line.substr(0, tab);
    const auto value = line.substr(tab + 1);
    if (key == "mg2vec-vocab") {
      if (value != "1") throw IncompatibleArtifactError("vocabulary manifest: unsupported version " + value);
      header = true;
    } else if (key == "k") {
      k = std::stoi(value);
    } else if (key == "alphabet") {
      alphabet = value;
    } else if (key == "specials") {
      if (value != "[PAD],[MASK],[UNK]") throw IncompatibleArtifactError("vocabulary manifest: unexpected specials");
    } else {
      throw IncompatibleArtifactError("vocabulary manifest: unknown key '" + key + "'");
    }
  }
  if (!header || k < 1 || alphabet.empty()) throw IncompatibleArtifactError("vocabulary manifest: incomplete header");
  return KmerVocabulary(k, alphabet);
}

std::vector<TokenId> tokenize(std::string_view sequence, const KmerVocabulary& vocab, int stride) {
  if (stride < 1) throw DomainError("tokenize: stride must be >= 1");
  std::vector<TokenId> ids;
  const auto k = static_cast<std::size_t>(vocab.k());
  if (sequence.size() < k) return ids;
  ids.reserve((sequence.size() - k) / static_cast<std::size_t>(stride) + 1);
  for (std::size_t j = 0; j + k <= sequence.size(); j += static_cast<std::size_t>(stride))
    ids.push_back(vocab.token_to_id(sequence.substr(j, k)));
  return ids;
}

}  // namespace mg2vec

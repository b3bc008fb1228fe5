// Independent reference implementations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct EdgeValue {
  unsigned long count = 0;
  double weight = 0.0;
};

/// Repeated application of the co-occurrence update starting from weight 1,
/// written directly from the formula with lambda_max = lambda_min = 2, floor 1.
inline double weight_after(unsigned long n) {
  double w = 1.0;
  for (unsigned long i = 1; i < n; ++i) {
    const double denom = std::max(std::fabs(w - 1.0), 1.0);
    const double psi = w / denom;
    w = 2.0 * std::sqrt(std::max(psi - 1.0, 1.0)) + std::min(psi - 2.0, 2.0) + 2.0;
  }
  return w;
}

/// Nested-loop graph construction keyed by k-mer strings.
inline std::map<std::pair<std::string, std::string>, EdgeValue> graph(const std::vector<std::string>& reads, int k,
                                                                      const std::string& alphabet) {
  auto valid = [&](const std::string& s) {
    for (char c : s)
      if (alphabet.find(c) == std::string::npos) return false;
    return true;
  };
  std::map<std::pair<std::string, std::string>, EdgeValue> edges;
  for (const auto& r : reads) {
    if (static_cast<int>(r.size()) < k + 1) continue;
    for (std::size_t j = 0; j + static_cast<std::size_t>(k) < r.size(); ++j) {
      const auto a = r.substr(j, static_cast<std::size_t>(k));
      const auto b = r.substr(j + 1, static_cast<std::size_t>(k));
      if (valid(a) && valid(b)) ++edges[{a, b}].count;
    }
  }
  for (auto& [key, e] : edges) e.weight = weight_after(e.count);
  return edges;
}

/// Best total over all injective maps from rows to columns (factorial search).
inline double best_assignment(const std::vector<std::vector<double>>& t) {
  const std::size_t rows = t.size();
  const std::size_t cols = rows ? t[0].size() : 0;
  double best = 0.0;
  // Enumerate each row's choice of a distinct column or none.
  std::vector<int> choice(rows, -1);
  std::vector<bool> used(cols, false);
  auto rec = [&](auto&& self, std::size_t i, double acc) -> void {
    if (i == rows) {
      best = std::max(best, acc);
      return;
    }
    self(self, i + 1, acc);
    for (std::size_t c = 0; c < cols; ++c) {
      if (used[c]) continue;
      used[c] = true;
      self(self, i + 1, acc + t[i][c]);
      used[c] = false;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

inline double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

}  // namespace oracle

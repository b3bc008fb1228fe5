#include "mg2vec/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace mg2vec {

PrfScores precision_recall_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  PrfScores s;
  if (tp + fp > 0) s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (s.precision + s.recall > 0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

PrCurve precision_recall_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ValidationError("precision_recall_curve: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto total_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));

  PrCurve curve;
  std::size_t tp = 0, seen = 0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      tp += positive[order[i]] ? 1 : 0;
      ++seen;
      ++i;
    }
    const double p = static_cast<double>(tp) / static_cast<double>(seen);
    const double r = total_pos ? static_cast<double>(tp) / static_cast<double>(total_pos) : 0.0;
    curve.thresholds.push_back(thr);
    curve.precision.push_back(p);
    curve.recall.push_back(r);
    curve.average_precision += (r - prev_recall) * p;
    prev_recall = r;
  }
  return curve;
}

EvalReport evaluate(const std::vector<int>& predicted, const std::vector<int>& truth,
                    const std::vector<std::string>& classes, const Matrix* scores) {
  if (predicted.size() != truth.size()) throw ValidationError("evaluate: prediction and truth lengths differ");
  const std::size_t C = classes.size();
  if (C == 0) throw ValidationError("evaluate: empty class catalog");
  EvalReport rep;
  rep.classes = classes;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= C) throw ValidationError("evaluate: truth id out of range");
    if (predicted[i] < -1 || predicted[i] >= static_cast<int>(C))
      throw ValidationError("evaluate: predicted id out of range");
    rep.has_unassigned = rep.has_unassigned || predicted[i] == -1;
  }
  const std::size_t cols = C + (rep.has_unassigned ? 1 : 0);
  rep.confusion.assign(C, std::vector<std::size_t>(cols, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto col = predicted[i] < 0 ? C : static_cast<std::size_t>(predicted[i]);
    ++rep.confusion[static_cast<std::size_t>(truth[i])][col];
    correct += predicted[i] == truth[i] ? 1 : 0;
  }
  rep.accuracy = predicted.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(predicted.size());

  for (std::size_t c = 0; c < C; ++c) {
    const std::uint64_t tp = rep.confusion[c][c];
    std::uint64_t fn = 0, fp = 0;
    for (std::size_t j = 0; j < cols; ++j)
      if (j != c) fn += rep.confusion[c][j];
    for (std::size_t r = 0; r < C; ++r)
      if (r != c) fp += rep.confusion[r][c];
    const auto s = precision_recall_f1(tp, fp, fn);
    rep.per_class.push_back({classes[c], s.precision, s.recall, s.f1, static_cast<std::size_t>(tp + fn)});
    rep.macro_precision += s.precision / static_cast<double>(C);
    rep.macro_recall += s.recall / static_cast<double>(C);
    rep.macro_f1 += s.f1 / static_cast<double>(C);
  }

  if (scores) {
    if (static_cast<std::size_t>(scores->rows()) != truth.size() || static_cast<std::size_t>(scores->cols()) != C)
      throw ValidationError("evaluate: score matrix shape mismatch");
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> s(truth.size());
      std::vector<bool> pos(truth.size());
      for (std::size_t i = 0; i < truth.size(); ++i) {
        s[i] = (*scores)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        pos[i] = truth[i] == static_cast<int>(c);
      }
      rep.pr_curves.push_back(precision_recall_curve(s, pos));
    }
  }
  return rep;
}

std::string EvalReport::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  for (const auto& [k, v] : notes) j["info"][k] = v;
  j["classes"] = classes;
  j["accuracy"] = accuracy;
  j["macro"] = {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}};
  ordered_json pc = ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    ordered_json e = {{"class", m.name}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                      {"support", m.support}};
    if (!pr_curves.empty()) e["pr_auc"] = pr_curves[c].average_precision;
    pc.push_back(e);
  }
  j["per_class"] = pc;
  j["confusion"] = {{"rows", "truth"}, {"has_unassigned_column", has_unassigned}, {"matrix", confusion}};
  if (cluster_to_class) {
    ordered_json map = ordered_json::array();
    for (std::size_t k = 0; k < cluster_to_class->size(); ++k) {
      const int c = (*cluster_to_class)[k];
      map.push_back({{"cluster", k}, {"class", c < 0 ? std::string("unassigned") : classes[static_cast<std::size_t>(c)]}});
    }
    j["cluster_mapping"] = map;
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  std::size_t w = 8;
  for (const auto& c : classes) w = std::max(w, c.size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "class" << std::right << std::setw(11) << "precision"
     << std::setw(10) << "recall" << std::setw(10) << "f1" << std::setw(10) << "support";
  if (!pr_curves.empty()) os << std::setw(10) << "pr_auc";
  os << '\n';
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    os << std::left << std::setw(static_cast<int>(w)) << m.name << std::right << std::setw(11) << m.precision
       << std::setw(10) << m.recall << std::setw(10) << m.f1 << std::setw(10) << m.support;
    if (!pr_curves.empty()) os << std::setw(10) << pr_curves[c].average_precision;
    os << '\n';
  }
  os << std::left << std::setw(static_cast<int>(w)) << "macro" << std::right << std::setw(11) << macro_precision
     << std::setw(10) << macro_recall << std::setw(10) << macro_f1 << '\n';
  os << "accuracy " << accuracy << '\n';
  return os.str();
}

void EvalReport::save_pr_csv(std::ostream& out) const {
  out << "class,threshold,precision,recall\n";
  for (std::size_t c = 0; c < pr_curves.size(); ++c) {
    const auto& cv = pr_curves[c];
    for (std::size_t i = 0; i < cv.thresholds.size(); ++i)
      out << classes[c] << ',' << format_double(cv.thresholds[i]) << ',' << format_double(cv.precision[i]) << ','
          << format_double(cv.recall[i]) << '\n';
  }
}

}  // namespace mg2vec

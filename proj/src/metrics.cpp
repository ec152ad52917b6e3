#include "axcrf/metrics.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "axcrf/errors.hpp"

namespace axcrf {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int classes) {
  if (pred.size() != truth.size()) {
    throw DataError("confusion_matrix: " + std::to_string(pred.size()) + " predictions vs " +
                    std::to_string(truth.size()) + " labels");
  }
  if (classes < 1) throw std::invalid_argument("confusion_matrix: need at least one class");
  ConfusionMatrix cm;
  cm.classes = classes;
  const auto c = static_cast<std::size_t>(classes);
  cm.counts.assign(c * c, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= classes || truth[i] < 0 || truth[i] >= classes) {
      throw DataError("confusion_matrix: label out of range at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(truth[i]) * c + static_cast<std::size_t>(pred[i])];
  }
  return cm;
}

EvalReport scores(const ConfusionMatrix& cm, std::vector<std::string> class_names) {
  const auto c = static_cast<std::size_t>(cm.classes);
  if (cm.counts.size() != c * c) throw std::invalid_argument("scores: malformed confusion matrix");
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("scores: confusion matrix is empty");

  EvalReport r;
  r.matrix = cm;
  if (class_names.empty()) {
    for (std::size_t i = 0; i < c; ++i) class_names.push_back("class" + std::to_string(i));
  }
  r.class_names = std::move(class_names);
  std::uint64_t trace = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const int ki = static_cast<int>(k);
    const std::uint64_t tp = cm.at(ki, ki);
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(ki, static_cast<int>(j));
      col += cm.at(static_cast<int>(j), ki);
    }
    trace += tp;
    const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double rc = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f1.push_back(p + rc > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0);
  }
  r.average_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / static_cast<double>(c);
  r.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

double overall_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw DataError("overall_accuracy: length mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  const auto c = static_cast<std::size_t>(matrix.classes);
  os << "confusion matrix (rows = truth, columns = prediction)\n";
  for (std::size_t t = 0; t < c; ++t) {
    os << std::setw(14) << class_names[t];
    for (std::size_t p = 0; p < c; ++p) {
      os << ' ' << std::setw(8) << matrix.at(static_cast<int>(t), static_cast<int>(p));
    }
    os << '\n';
  }
  os << std::fixed << std::setprecision(2);
  os << "\n" << std::setw(14) << "class" << std::setw(11) << "precision" << std::setw(9)
     << "recall" << std::setw(7) << "F1" << '\n';
  for (std::size_t k = 0; k < c; ++k) {
    os << std::setw(14) << class_names[k] << std::setw(11) << 100.0 * precision[k] << std::setw(9)
       << 100.0 * recall[k] << std::setw(7) << 100.0 * f1[k] << '\n';
  }
  os << "average F1 " << 100.0 * average_f1 << "\n";
  os << "OA         " << 100.0 * overall_accuracy << "\n";
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  const auto c = static_cast<std::size_t>(matrix.classes);
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < c; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < c; ++p) row.push_back(matrix.at(static_cast<int>(t), static_cast<int>(p)));
    rows.push_back(std::move(row));
  }
  j["confusion_matrix"] = std::move(rows);
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t k = 0; k < c; ++k) {
    per_class.push_back({{"class", class_names[k]},
                         {"precision", precision[k]},
                         {"recall", recall[k]},
                         {"f1", f1[k]}});
  }
  j["per_class"] = std::move(per_class);
  j["average_f1"] = average_f1;
  j["overall_accuracy"] = overall_accuracy;
  return j;
}

}  // namespace axcrf

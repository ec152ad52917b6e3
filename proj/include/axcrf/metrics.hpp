#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace axcrf {

/// C x C counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes) +
                  static_cast<std::size_t>(pred)];
  }
  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int classes);

struct EvalReport {
  ConfusionMatrix matrix;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double average_f1 = 0.0;
  double overall_accuracy = 0.0;
  std::vector<std::string> class_names;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Per-class precision/recall/F1 (0 where undefined), unweighted mean F1
/// over all classes, and OA = trace / total. Throws on an all-zero matrix.
EvalReport scores(const ConfusionMatrix& cm, std::vector<std::string> class_names = {});

/// Fraction of positions where pred == truth.
double overall_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace axcrf

#include "hique/metrics.hpp"

#include <cmath>

#include "hique/errors.hpp"

namespace hique {

namespace {

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

Metrics metrics_from_confusion(const std::array<std::array<long, 2>, 2>& confusion) {
  Metrics m;
  m.confusion = confusion;
  const long n = m.total();
  if (n <= 0) throw ValidationError("metrics need at least one prediction");
  for (int c = 0; c < 2; ++c) {
    const long tp = confusion[c][c];
    const long predicted = confusion[0][c] + confusion[1][c];
    const long support = confusion[c][0] + confusion[c][1];
    m.precision[c] = ratio(tp, predicted);
    m.recall[c] = ratio(tp, support);
    m.f1[c] = ratio(2 * m.precision[c] * m.recall[c], m.precision[c] + m.recall[c]);
    const double w = static_cast<double>(support) / static_cast<double>(n);
    m.weighted_precision += w * m.precision[c];
    m.weighted_recall += w * m.recall[c];
    m.weighted_f1 += w * m.f1[c];
  }
  m.macro_precision = (m.precision[0] + m.precision[1]) / 2;
  m.macro_recall = (m.recall[0] + m.recall[1]) / 2;
  m.macro_f1 = (m.f1[0] + m.f1[1]) / 2;
  m.accuracy = static_cast<double>(confusion[0][0] + confusion[1][1]) / static_cast<double>(n);
  m.g_mean = std::sqrt(m.recall[0] * m.recall[1]);
  return m;
}

Metrics compute_metrics(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.empty()) throw ValidationError("cannot compute metrics on an empty prediction list");
  if (truth.size() != predicted.size()) {
    throw ValidationError("metrics: " + std::to_string(truth.size()) + " labels but " +
                          std::to_string(predicted.size()) + " predictions");
  }
  std::array<std::array<long, 2>, 2> confusion{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++confusion[static_cast<int>(truth[i])][static_cast<int>(predicted[i])];
  }
  return metrics_from_confusion(confusion);
}

nlohmann::json to_json(const Metrics& m) {
  return {{"confusion", m.confusion},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1},
          {"weighted_precision", m.weighted_precision},
          {"weighted_recall", m.weighted_recall},
          {"weighted_f1", m.weighted_f1},
          {"accuracy", m.accuracy},
          {"g_mean", m.g_mean},
          {"per_class",
           {{"normal", {{"precision", m.precision[0]}, {"recall", m.recall[0]}, {"f1", m.f1[0]}}},
            {"depression", {{"precision", m.precision[1]}, {"recall", m.recall[1]}, {"f1", m.f1[1]}}}}}};
}

}  // namespace hique

#pragma once

// Per-sample recomputation of the binary metrics, written without the
// confusion-matrix shortcuts.

#include <cmath>
#include <vector>

namespace oracle {

struct BruteMetrics {
  double precision[2], recall[2], f1[2];
  double macro_p, macro_r, macro_f1, weighted_p, weighted_r, weighted_f1, accuracy, g_mean;
};

inline BruteMetrics brute_metrics(const std::vector<int>& truth, const std::vector<int>& pred) {
  BruteMetrics m{};
  const double n = static_cast<double>(truth.size());
  for (int c = 0; c < 2; ++c) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c) predicted += 1;
      if (truth[i] == c) actual += 1;
      if (pred[i] == c && truth[i] == c) tp += 1;
    }
    m.precision[c] = predicted == 0 ? 0 : tp / predicted;
    m.recall[c] = actual == 0 ? 0 : tp / actual;
    m.f1[c] = m.precision[c] + m.recall[c] == 0 ? 0 : 2 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c]);
    m.weighted_p += actual / n * m.precision[c];
    m.weighted_r += actual / n * m.recall[c];
    m.weighted_f1 += actual / n * m.f1[c];
  }
  m.macro_p = (m.precision[0] + m.precision[1]) / 2;
  m.macro_r = (m.recall[0] + m.recall[1]) / 2;
  m.macro_f1 = (m.f1[0] + m.f1[1]) / 2;
  double correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
  m.accuracy = correct / n;
  m.g_mean = std::sqrt(m.recall[0] * m.recall[1]);
  return m;
}

}  // namespace oracle

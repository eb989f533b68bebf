#pragma once

#include <array>
#include <span>

#include <json.hpp>

#include "hique/types.hpp"

namespace hique {

struct Metrics {
  // confusion[truth][predicted], index 0 normal, 1 depression.
  std::array<std::array<long, 2>, 2> confusion{};
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  double accuracy = 0;
  double g_mean = 0;
  std::array<double, 2> precision{}, recall{}, f1{};

  long total() const { return confusion[0][0] + confusion[0][1] + confusion[1][0] + confusion[1][1]; }
};

// Throws ValidationError on empty or mismatched input. A class that is
// never predicted gets precision 0; F1 with P + R = 0 is 0.
Metrics compute_metrics(std::span<const Label> truth, std::span<const Label> predicted);
Metrics metrics_from_confusion(const std::array<std::array<long, 2>, 2>& confusion);

nlohmann::json to_json(const Metrics& m);

}  // namespace hique

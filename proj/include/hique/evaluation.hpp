#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hique/metrics.hpp"
#include "hique/taxonomy.hpp"
#include "hique/training.hpp"

namespace hique {

struct AblationSetting {
  std::string name;
  QuestionEmbedding question_embedding = QuestionEmbedding::kHierarchical;
  bool qa_module = true;
  bool cm_attention = true;
  bool augmentation = true;
  ModalitySet modalities;

  void validate() const;
  bool operator==(const AblationSetting&) const = default;
};

// The seven question-embedding / layer / augmentation rows, full model last.
std::vector<AblationSetting> layer_ablation_settings();
// A, V, T, A+V, V+T, A+T, A+V+T with everything else on.
std::vector<AblationSetting> modality_ablation_settings();

struct AblationRow {
  AblationSetting setting;
  std::optional<Metrics> metrics;  // test-split metrics; empty when the run failed
  int best_epoch = -1;
  std::string error;
};

using AblationProgress = std::function<void(const AblationRow&)>;

// One model per setting, every run with the base seed. Failures are
// recorded in the row and the sweep continues. Settings run on up to
// `jobs` threads (0: hardware concurrency); rows keep the input order and
// progress is reported in completion order.
std::vector<AblationRow> run_ablation(const std::vector<AblationSetting>& settings, const DataSplit& split,
                                      const RunConfig& base, const AblationProgress& progress = {},
                                      int jobs = 1);

// QE,HQE,QA-Module,CM-Attention,Aug,Precision,Recall,F1,WA-F1 then
// Modalities,G-Mean,Setting,Status.
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct AblationPlan {
  RunConfig base;
  std::vector<AblationSetting> settings;
};

// "key = value" lines. `preset = layers | modalities` adds a preset block,
// `setting = <name> qe=<none|flat|hierarchical> qa=<on|off> cm=<on|off>
// aug=<on|off> modalities=<A+V+T>` adds one row (omitted fields keep the
// full-model value). Any other key is a run-config key for the base.
AblationPlan parse_ablation_plan(std::string_view text, RunConfig base = {});

// Received attention per slot: column means of each map, averaged over
// heads (sums to 1 over slots for one interview), then averaged over
// interviews.
struct SlotAttention {
  int slot = 0;
  std::string text;
  QuestionRole role = QuestionRole::kPrimary;
  int effective_topic_slot = 0;
  int chain_depth = 0;
  std::array<std::optional<double>, 3> self_mass;
  std::array<std::optional<double>, 6> cross_mass;
};

struct InterviewAttention {
  std::string participant_id;
  std::optional<Label> label;
  Prediction prediction;
  std::vector<SlotAttention> slots;  // answered slots only
};

struct AttentionReport {
  int interviews = 0;
  // Empty vectors for maps the configuration does not produce.
  std::array<std::vector<double>, 3> self_mass;
  std::array<std::vector<double>, 6> cross_mass;
  std::vector<InterviewAttention> drill_down;
};

// Mass received by each slot of one map set (per head), normalised.
std::vector<double> received_mass(const std::vector<Eigen::MatrixXd>& maps_per_head);

AttentionReport attention_report(const HiQuEModel& model, const std::vector<EmbeddedInterview>& data,
                                 QuestionEmbedding mode = QuestionEmbedding::kHierarchical,
                                 const QuestionTaxonomy& taxonomy = builtin_taxonomy());

std::string cross_pair_name(int index);  // "audio->visual", ...

nlohmann::json to_json(const AttentionReport& report);

// Bar chart of per-slot mass; primaries and follow-ups drawn differently.
std::string attention_svg(const std::vector<double>& mass, const std::string& title);

}  // namespace hique

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hique/features.hpp"
#include "hique/metrics.hpp"
#include "hique/model.hpp"

namespace hique {

// How questions are presented to the network.
//   none:         the whole interview collapsed onto slot 1
//   flat:         85 slots, no hierarchy embedding
//   hierarchical: 85 slots plus topic/depth embeddings
enum class QuestionEmbedding { kNone, kFlat, kHierarchical };

std::string_view to_string(QuestionEmbedding q);
QuestionEmbedding parse_question_embedding(std::string_view text);

// Collapses present rows of each modality into their mean on slot 1 for
// kNone; returns the input unchanged otherwise.
EmbeddedInterview apply_question_embedding(const EmbeddedInterview& interview, QuestionEmbedding mode);

struct TrainConfig {
  int batch_size = 8;
  int epochs = 100;
  double learning_rate = 2e-4;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  bool augment = true;
  int mask_count = 10;
  int augment_factor = 3;
  QuestionEmbedding question_embedding = QuestionEmbedding::kHierarchical;
  // Adam
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-7;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class SplitRole { kTrain, kValidation, kTest };
std::string_view to_string(SplitRole role);
SplitRole parse_split_role(std::string_view text);

struct DataSplit {
  std::vector<EmbeddedInterview> train, validation, test;

  // Participant-disjoint, labelled, non-empty train and validation.
  void validate() const;
};

// Stratified by label; fractions are of each class.
DataSplit stratified_split(const std::vector<EmbeddedInterview>& corpus, std::uint64_t seed,
                           double train_fraction = 0.6, double validation_fraction = 0.2);

// split.csv: "participant_id,split" with split in {train, validation, test}.
void write_split_file(const std::filesystem::path& file, const DataSplit& split);
DataSplit apply_split_file(const std::filesystem::path& file, std::vector<EmbeddedInterview> corpus);

// Adds (augment_factor - 1) masked copies of every depression-labelled
// interview. Each copy clears mask_count distinct slots in all modalities.
// Throws ConfigError unless `role` is kTrain.
std::vector<EmbeddedInterview> augment_minority(const std::vector<EmbeddedInterview>& train_set,
                                                const TrainConfig& config, std::uint64_t seed,
                                                SplitRole role = SplitRole::kTrain);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;        // example-weighted mean over the epoch, training mode
  double validation_loss = 0;   // inference mode
  double validation_macro_f1 = 0;
};

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  ModelParams params;
  int best_epoch = -1;
  std::vector<EpochRecord> history;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& file);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on mini-batches, keeping the parameters with the best validation
// macro F1 (ties go to the lower validation loss). Deterministic given
// the seed. Throws DivergenceError on a non-finite loss.
Checkpoint train(ModelConfig model_config, const TrainConfig& train_config, const DataSplit& split,
                 const EpochCallback& on_epoch = {});

struct EvaluationResult {
  Metrics metrics;
  double loss = 0;
  std::vector<Prediction> predictions;
};

// Inference over a set; applies the checkpoint's question embedding.
EvaluationResult evaluate_model(const HiQuEModel& model, const std::vector<EmbeddedInterview>& data,
                                QuestionEmbedding mode = QuestionEmbedding::kHierarchical);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// "key = value" lines, '#' comments. Unknown keys are a ConfigError.
// Keys: d_model n_heads conv_stack (e.g. "3x16,3x4") dropout_rate
// modalities qa_module cm_attention hierarchy_embedding key_masking
// batch_size epochs learning_rate seed augment mask_count augment_factor
// question_embedding beta1 beta2 adam_epsilon.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& file, RunConfig base = {});
std::string serialize_run_config(const RunConfig& config);

// HIQUE_SEED, when set.
std::optional<std::uint64_t> seed_from_environment();

}  // namespace hique

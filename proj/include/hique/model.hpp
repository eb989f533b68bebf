#pragma once

#include <Eigen/Core>
#include <array>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hique/features.hpp"
#include "hique/types.hpp"

namespace hique {

struct ConvSpec {
  int kernel_size = 3;
  int out_channels = 16;
  bool operator==(const ConvSpec&) const = default;
};

struct ModelConfig {
  int d_model = 4;
  int n_heads = 2;
  // 1-D convolutions over the slot axis, same padding, each followed by a
  // rectifier. The last layer's width must equal d_model.
  std::vector<ConvSpec> conv_stack{{3, 16}, {3, 4}};
  double dropout_rate = 0.5;
  int seq_len = kNumQuestions;
  std::array<int, 3> input_dims{kAudioDim, kVisualDim, kTextFeatureDim};

  ModalitySet modalities;
  bool qa_module = true;
  bool cm_attention = true;
  bool hierarchy_embedding = true;
  // Exclude absent slots from attention keys. Off: absent slots take part
  // as zero vectors.
  bool key_masking = false;

  // Throws ValidationError.
  void validate() const;
  // True when the cross-modal layer is in use (enabled and >= 2 modalities).
  bool uses_cross_attention() const { return cm_attention && modalities.count() >= 2; }
  int fused_width() const { return uses_cross_attention() ? 2 * d_model : modalities.count() * d_model; }

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Max hierarchy depth with its own embedding row; deeper chains share it.
inline constexpr int kMaxEmbeddedDepth = 3;

// Canonical bidirectional pairs: audio-visual, visual-text, text-audio.
inline constexpr std::array<std::array<Modality, 2>, 3> kModalityPairs{{
    {Modality::kAudio, Modality::kVisual},
    {Modality::kVisual, Modality::kText},
    {Modality::kText, Modality::kAudio},
}};

struct ConvLayer {
  int kernel_size = 3;
  Eigen::MatrixXd weight;  // (kernel_size * in) x out
  Eigen::MatrixXd bias;    // 1 x out
};

struct AttentionParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // d x d
  Eigen::MatrixXd bq, bk, bv, bo;  // 1 x d
};

struct LayerNormParams {
  Eigen::MatrixXd gamma;  // 1 x d
  Eigen::MatrixXd beta;   // 1 x d
};

struct ModelParams {
  std::array<std::vector<ConvLayer>, 3> projector;
  std::array<AttentionParams, 3> self_attention;
  // Index 2*pair + direction; direction 0 queries with the pair's first
  // modality.
  std::array<AttentionParams, 6> cross_attention;
  std::array<LayerNormParams, 6> cross_norm;
  std::array<LayerNormParams, 3> modality_norm;
  Eigen::MatrixXd topic_embedding;  // seq_len x d
  Eigen::MatrixXd depth_embedding;  // (kMaxEmbeddedDepth + 1) x d
  Eigen::MatrixXd head_weight;      // fused_width x 2
  Eigen::MatrixXd head_bias;        // 1 x 2

  // Allocated tensors in a fixed order. Empty tensors are skipped.
  std::vector<std::pair<std::string, Eigen::MatrixXd*>> tensors();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> tensors() const;

  // Same shapes, all zeros.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Allocates every tensor the config needs. Weights ~ U(-1/sqrt(fan_in),
// 1/sqrt(fan_in)), biases zero, layer norm gamma 1 / beta 0.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct AttentionMaps {
  std::array<std::vector<Eigen::MatrixXd>, 3> self_maps;   // per modality, per head
  std::array<std::vector<Eigen::MatrixXd>, 6> cross_maps;  // per ordered pair, per head
};

struct Prediction {
  std::array<double, 2> probabilities{0.5, 0.5};  // (normal, depression)
  Label label = Label::kNormal;
};

// ---- building blocks -------------------------------------------------

// Convolutional projection to slots x d_model with absent slots re-zeroed.
Eigen::MatrixXd project(const ModalityFeatures& features, const std::vector<ConvLayer>& layers);

struct AttentionResult {
  Eigen::MatrixXd output;               // Lq x d (after output projection)
  std::vector<Eigen::MatrixXd> maps;    // per head, Lq x Lk, row-stochastic
};

AttentionResult multi_head_attention(const Eigen::MatrixXd& query, const Eigen::MatrixXd& key,
                                     const Eigen::MatrixXd& value, const AttentionParams& params,
                                     int n_heads, const std::vector<bool>* key_mask = nullptr);

// Self-attention plus residual.
AttentionResult question_aware_encode(const Eigen::MatrixXd& u, const AttentionParams& params, int n_heads,
                                      const std::vector<bool>* key_mask = nullptr);

struct CrossResult {
  Eigen::MatrixXd first_to_second;  // queries from the first input
  Eigen::MatrixXd second_to_first;
  std::vector<Eigen::MatrixXd> first_maps;
  std::vector<Eigen::MatrixXd> second_maps;
};

CrossResult cross_modal_attend(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2,
                               const AttentionParams& first_params, const AttentionParams& second_params,
                               int n_heads);

// Row-wise layer normalisation, epsilon 1e-5.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& params);

// Sum over pairs of GAP(LN(first) (+) LN(second)). Expects 2 * pairs
// representations and as many norm parameter sets.
Eigen::RowVectorXd fuse(std::span<const Eigen::MatrixXd> pair_outputs, std::span<const LayerNormParams> norms);

// Dropout (inverted, only when `rng` is given) -> linear -> softmax.
Prediction predict(const Eigen::RowVectorXd& fused, const Eigen::MatrixXd& weight, const Eigen::MatrixXd& bias,
                   double dropout_rate = 0.0, std::mt19937_64* rng = nullptr);

inline constexpr double kLossEpsilon = 1e-7;

// Mean binary cross-entropy on the depression probability, clamped to
// [1e-7, 1 - 1e-7]. Throws ValidationError on an empty batch.
double cross_entropy_loss(std::span<const double> depression_probs, std::span<const Label> labels);

// ---- full network -----------------------------------------------------

struct ForwardCache;

struct ForwardResult {
  Prediction prediction;
  Eigen::RowVectorXd fused;
  Eigen::RowVectorXd logits;
  AttentionMaps maps;
  std::shared_ptr<ForwardCache> cache;  // set when gradients are needed
};

class HiQuEModel {
 public:
  HiQuEModel(ModelConfig config, std::uint64_t seed);
  HiQuEModel(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // `rng` enables dropout (training mode). `keep_cache` retains what
  // backward() needs.
  ForwardResult forward(const EmbeddedInterview& input, std::mt19937_64* rng = nullptr,
                        bool keep_cache = false) const;

  // Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
  void backward(const ForwardResult& result, const Eigen::RowVectorXd& dlogits, ModelParams& grads) const;

  // Mean cross-entropy over the batch; gradients of that mean are added
  // to `grads`.
  double loss_and_gradients(std::span<const EmbeddedInterview* const> batch, ModelParams& grads,
                            std::mt19937_64* rng = nullptr) const;

  Prediction predict(const EmbeddedInterview& input) const { return forward(input).prediction; }

 private:
  void check_input(const EmbeddedInterview& input) const;

  ModelConfig config_;
  ModelParams params_;
};

// d(loss)/d(logits) for one example of the clamped cross-entropy,
// before dividing by the batch size.
Eigen::RowVectorXd cross_entropy_logit_gradient(const Prediction& prediction, Label label);

}  // namespace hique

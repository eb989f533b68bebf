#include "hique/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hique/errors.hpp"

namespace hique {

namespace {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;

constexpr double kLayerNormEps = 1e-5;

// ---- convolution --------------------------------------------------------

struct ConvCache {
  MatrixXd input;
  MatrixXd pre;
};

// Same-padded 1-D convolution along rows. The weight stacks one
// in x out block per kernel tap; tap j reads row t + j - k/2.
struct Tap {
  Eigen::Index dst, src, rows;
};

Tap tap_range(Eigen::Index len, int kernel, int j) {
  const Eigen::Index off = j - kernel / 2;
  const Eigen::Index t0 = std::max<Eigen::Index>(0, -off);
  const Eigen::Index t1 = std::min<Eigen::Index>(len, len - off);
  return {t0, t0 + off, std::max<Eigen::Index>(0, t1 - t0)};
}

MatrixXd conv_forward(const MatrixXd& x, const ConvLayer& layer, ConvCache* cache) {
  const Eigen::Index ch = x.cols();
  MatrixXd pre(x.rows(), layer.weight.cols());
  pre.rowwise() = layer.bias.row(0);
  for (int j = 0; j < layer.kernel_size; ++j) {
    const Tap t = tap_range(x.rows(), layer.kernel_size, j);
    if (t.rows == 0) continue;
    pre.middleRows(t.dst, t.rows).noalias() += x.middleRows(t.src, t.rows) * layer.weight.middleRows(j * ch, ch);
  }
  MatrixXd out = pre.cwiseMax(0.0);
  if (cache != nullptr) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return out;
}

MatrixXd conv_backward(const ConvCache& cache, const ConvLayer& layer, const MatrixXd& dout, ConvLayer& grad,
                       bool need_input_grad) {
  const MatrixXd dpre = (cache.pre.array() > 0.0).select(dout, 0.0);
  const Eigen::Index ch = cache.input.cols();
  const Eigen::Index len = cache.input.rows();
  grad.bias += dpre.colwise().sum();
  MatrixXd dx;
  if (need_input_grad) dx = MatrixXd::Zero(len, ch);
  for (int j = 0; j < layer.kernel_size; ++j) {
    const Tap t = tap_range(len, layer.kernel_size, j);
    if (t.rows == 0) continue;
    grad.weight.middleRows(j * ch, ch).noalias() +=
        cache.input.middleRows(t.src, t.rows).transpose() * dpre.middleRows(t.dst, t.rows);
    if (need_input_grad) {
      dx.middleRows(t.src, t.rows).noalias() +=
          dpre.middleRows(t.dst, t.rows) * layer.weight.middleRows(j * ch, ch).transpose();
    }
  }
  return dx;
}

struct ProjectionCache {
  std::vector<ConvCache> layers;
};

MatrixXd project_forward(const ModalityFeatures& features, const std::vector<ConvLayer>& layers,
                         ProjectionCache* cache) {
  if (layers.empty()) throw ValidationError("projector has no layers");
  const Eigen::Index expected = layers.front().weight.rows() / layers.front().kernel_size;
  if (features.matrix.cols() != expected) {
    throw ValidationError(std::string(to_string(features.modality)) + " features have width " +
                          std::to_string(features.matrix.cols()) + ", expected " + std::to_string(expected));
  }
  if (cache != nullptr) cache->layers.resize(layers.size());
  MatrixXd x = features.matrix;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = conv_forward(x, layers[i], cache != nullptr ? &cache->layers[i] : nullptr);
  }
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    if (!features.mask[k]) x.row(k).setZero();
  }
  return x;
}

void project_backward(const ProjectionCache& cache, const std::vector<ConvLayer>& layers,
                      const std::vector<bool>& mask, MatrixXd dout, std::vector<ConvLayer>& grads) {
  for (Eigen::Index k = 0; k < dout.rows(); ++k) {
    if (!mask[k]) dout.row(k).setZero();
  }
  for (std::size_t i = layers.size(); i-- > 0;) {
    dout = conv_backward(cache.layers[i], layers[i], dout, grads[i], i > 0);
  }
}

// ---- attention ----------------------------------------------------------

struct AttentionCache {
  MatrixXd q_in, k_in, v_in;
  MatrixXd q, k, v;
  MatrixXd concat;
  std::vector<MatrixXd> probs;
};

void require_finite(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ValidationError(std::string("non-finite attention input (") + what + ")");
}

AttentionResult attention_forward(const MatrixXd& q_in, const MatrixXd& k_in, const MatrixXd& v_in,
                                  const AttentionParams& p, int n_heads, const std::vector<bool>* key_mask,
                                  AttentionCache* cache) {
  require_finite(q_in, "query");
  require_finite(k_in, "key");
  require_finite(v_in, "value");
  const Eigen::Index d = p.wq.cols();
  if (q_in.cols() != p.wq.rows() || k_in.cols() != p.wk.rows() || v_in.cols() != p.wv.rows()) {
    throw ValidationError("attention input width does not match projection size");
  }
  if (n_heads <= 0 || d % n_heads != 0) throw ValidationError("n_heads must divide d_model");
  if (k_in.rows() != v_in.rows()) throw ValidationError("key and value lengths differ");
  const Eigen::Index dk = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  MatrixXd q = q_in * p.wq;
  q.rowwise() += p.bq.row(0);
  MatrixXd k = k_in * p.wk;
  k.rowwise() += p.bk.row(0);
  MatrixXd v = v_in * p.wv;
  v.rowwise() += p.bv.row(0);

  bool masking = false;
  if (key_mask != nullptr) {
    if (static_cast<Eigen::Index>(key_mask->size()) != k_in.rows()) {
      throw ValidationError("key mask length does not match key length");
    }
    // With no present key at all, attend over everything.
    masking = std::any_of(key_mask->begin(), key_mask->end(), [](bool b) { return b; }) &&
              std::any_of(key_mask->begin(), key_mask->end(), [](bool b) { return !b; });
  }

  AttentionResult result;
  MatrixXd concat(q_in.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    MatrixXd scores = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose() * scale;
    if (masking) {
      for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        if (!(*key_mask)[j]) scores.col(j).setConstant(-std::numeric_limits<double>::infinity());
      }
    }
    const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
    MatrixXd probs = (scores.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd row_sum = probs.rowwise().sum();
    probs = probs.array().colwise() / row_sum.array();
    concat.middleCols(h * dk, dk) = probs * v.middleCols(h * dk, dk);
    result.maps.push_back(std::move(probs));
  }
  result.output = concat * p.wo;
  result.output.rowwise() += p.bo.row(0);

  if (cache != nullptr) {
    cache->q_in = q_in;
    cache->k_in = k_in;
    cache->v_in = v_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->probs = result.maps;
  }
  return result;
}

struct AttentionInputGrads {
  MatrixXd dq_in, dk_in, dv_in;
};

AttentionInputGrads attention_backward(const AttentionCache& c, const AttentionParams& p, int n_heads,
                                       const MatrixXd& dout, AttentionParams& g) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dk = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  g.wo.noalias() += c.concat.transpose() * dout;
  g.bo += dout.colwise().sum();
  const MatrixXd dconcat = dout * p.wo.transpose();

  MatrixXd dq = MatrixXd::Zero(c.q.rows(), d);
  MatrixXd dk_m = MatrixXd::Zero(c.k.rows(), d);
  MatrixXd dv = MatrixXd::Zero(c.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const MatrixXd& probs = c.probs[h];
    const auto d_head = dconcat.middleCols(h * dk, dk);
    const MatrixXd dprobs = d_head * c.v.middleCols(h * dk, dk).transpose();
    dv.middleCols(h * dk, dk) += probs.transpose() * d_head;
    const Eigen::VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    const MatrixXd dscores = (probs.array() * (dprobs.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(h * dk, dk) += dscores * c.k.middleCols(h * dk, dk);
    dk_m.middleCols(h * dk, dk) += dscores.transpose() * c.q.middleCols(h * dk, dk);
  }

  g.wq.noalias() += c.q_in.transpose() * dq;
  g.bq += dq.colwise().sum();
  g.wk.noalias() += c.k_in.transpose() * dk_m;
  g.bk += dk_m.colwise().sum();
  g.wv.noalias() += c.v_in.transpose() * dv;
  g.bv += dv.colwise().sum();
  return {dq * p.wq.transpose(), dk_m * p.wk.transpose(), dv * p.wv.transpose()};
}

// ---- layer norm -----------------------------------------------------------

struct LayerNormCache {
  MatrixXd xhat;
  Eigen::VectorXd inv_std;
};

MatrixXd layer_norm_forward(const MatrixXd& x, const LayerNormParams& p, LayerNormCache* cache) {
  const double n = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().mean();
  const MatrixXd centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().sum() / n;
  const Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  MatrixXd xhat = centered.array().colwise() * inv_std.array();
  MatrixXd y = xhat.array().rowwise() * p.gamma.row(0).array();
  y.rowwise() += p.beta.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

MatrixXd layer_norm_backward(const LayerNormCache& c, const LayerNormParams& p, const MatrixXd& dy,
                             LayerNormParams& g) {
  const double n = static_cast<double>(dy.cols());
  g.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.beta += dy.colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * p.gamma.row(0).array();
  const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum();
  MatrixXd dx = (n * dxhat.array()).matrix();
  dx.colwise() -= sum_dxhat;
  dx -= (c.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().colwise() * (c.inv_std.array() / n)).matrix();
}

Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& z) {
  Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

MatrixXd uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  MatrixXd m(rows, cols);
  // Fill row-major so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

AttentionParams init_attention(int d, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = uniform(d, d, bound, rng);
  p.wk = uniform(d, d, bound, rng);
  p.wv = uniform(d, d, bound, rng);
  p.wo = uniform(d, d, bound, rng);
  p.bq = p.bk = p.bv = p.bo = MatrixXd::Zero(1, d);
  return p;
}

LayerNormParams init_norm(int d) { return {MatrixXd::Ones(1, d), MatrixXd::Zero(1, d)}; }

bool pair_active(const ModelConfig& config, int pair) {
  return config.uses_cross_attention() && config.modalities.contains(kModalityPairs[pair][0]) &&
         config.modalities.contains(kModalityPairs[pair][1]);
}


}  // namespace

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  if (d_model <= 0) throw ValidationError("d_model must be positive");
  if (n_heads <= 0 || d_model % n_heads != 0) {
    throw ValidationError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" +
                          std::to_string(d_model) + ")");
  }
  if (conv_stack.empty()) throw ValidationError("conv_stack must have at least one layer");
  for (const auto& c : conv_stack) {
    if (c.kernel_size <= 0 || c.kernel_size % 2 == 0) throw ValidationError("conv kernel sizes must be odd");
    if (c.out_channels <= 0) throw ValidationError("conv output channels must be positive");
  }
  if (conv_stack.back().out_channels != d_model) {
    throw ValidationError("last conv layer must output d_model channels");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must be in [0, 1)");
  if (seq_len <= 0) throw ValidationError("seq_len must be positive");
  for (int d : input_dims) {
    if (d <= 0) throw ValidationError("input dimensions must be positive");
  }
  if (modalities.count() == 0) throw ValidationError("at least one modality must be selected");
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& s : c.conv_stack) conv.push_back({s.kernel_size, s.out_channels});
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"conv_stack", conv},
          {"dropout_rate", c.dropout_rate},
          {"seq_len", c.seq_len},
          {"input_dims", c.input_dims},
          {"modalities", c.modalities.str()},
          {"qa_module", c.qa_module},
          {"cm_attention", c.cm_attention},
          {"hierarchy_embedding", c.hierarchy_embedding},
          {"key_masking", c.key_masking}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.conv_stack.clear();
    for (const auto& s : j.at("conv_stack")) c.conv_stack.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.seq_len = j.at("seq_len").get<int>();
    c.input_dims = j.at("input_dims").get<std::array<int, 3>>();
    c.modalities = ModalitySet::parse(j.at("modalities").get<std::string>());
    c.qa_module = j.at("qa_module").get<bool>();
    c.cm_attention = j.at("cm_attention").get<bool>();
    c.hierarchy_embedding = j.at("hierarchy_embedding").get<bool>();
    c.key_masking = j.at("key_masking").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- parameters -------------------------------------------------------------

namespace {

template <typename Params, typename Ptr>
std::vector<std::pair<std::string, Ptr>> collect(Params& p) {
  std::vector<std::pair<std::string, Ptr>> out;
  auto add = [&out](std::string name, auto& m) {
    if (m.size() > 0) out.emplace_back(std::move(name), &m);
  };
  auto add_attention = [&add](const std::string& prefix, auto& a) {
    add(prefix + ".wq", a.wq);
    add(prefix + ".bq", a.bq);
    add(prefix + ".wk", a.wk);
    add(prefix + ".bk", a.bk);
    add(prefix + ".wv", a.wv);
    add(prefix + ".bv", a.bv);
    add(prefix + ".wo", a.wo);
    add(prefix + ".bo", a.bo);
  };
  for (int m = 0; m < 3; ++m) {
    const std::string name(to_string(kAllModalities[m]));
    for (std::size_t i = 0; i < p.projector[m].size(); ++i) {
      add("projector." + name + "." + std::to_string(i) + ".weight", p.projector[m][i].weight);
      add("projector." + name + "." + std::to_string(i) + ".bias", p.projector[m][i].bias);
    }
  }
  for (int m = 0; m < 3; ++m) {
    add_attention("self_attention." + std::string(to_string(kAllModalities[m])), p.self_attention[m]);
  }
  for (int i = 0; i < 6; ++i) {
    const auto& pair = kModalityPairs[i / 2];
    const std::string name = std::string(to_string(pair[i % 2])) + "_to_" + std::string(to_string(pair[1 - i % 2]));
    add_attention("cross_attention." + name, p.cross_attention[i]);
    add("cross_norm." + name + ".gamma", p.cross_norm[i].gamma);
    add("cross_norm." + name + ".beta", p.cross_norm[i].beta);
  }
  for (int m = 0; m < 3; ++m) {
    const std::string name(to_string(kAllModalities[m]));
    add("modality_norm." + name + ".gamma", p.modality_norm[m].gamma);
    add("modality_norm." + name + ".beta", p.modality_norm[m].beta);
  }
  add("topic_embedding", p.topic_embedding);
  add("depth_embedding", p.depth_embedding);
  add("head.weight", p.head_weight);
  add("head.bias", p.head_bias);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Eigen::MatrixXd*>> ModelParams::tensors() {
  return collect<ModelParams, Eigen::MatrixXd*>(*this);
}

std::vector<std::pair<std::string, const Eigen::MatrixXd*>> ModelParams::tensors() const {
  return collect<const ModelParams, const Eigen::MatrixXd*>(*this);
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& [name, t] : z.tensors()) t->setZero();
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : tensors()) {
    if (!t->allFinite()) return false;
  }
  return true;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  const int d = config.d_model;
  for (int m = 0; m < 3; ++m) {
    if (!config.modalities.on[m]) continue;
    int in = config.input_dims[m];
    for (const auto& spec : config.conv_stack) {
      ConvLayer layer;
      layer.kernel_size = spec.kernel_size;
      const int fan_in = spec.kernel_size * in;
      layer.weight = uniform(fan_in, spec.out_channels, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
      layer.bias = MatrixXd::Zero(1, spec.out_channels);
      p.projector[m].push_back(std::move(layer));
      in = spec.out_channels;
    }
  }
  if (config.qa_module) {
    for (int m = 0; m < 3; ++m) {
      if (config.modalities.on[m]) p.self_attention[m] = init_attention(d, rng);
    }
  }
  if (config.uses_cross_attention()) {
    for (int i = 0; i < 6; ++i) {
      if (!pair_active(config, i / 2)) continue;
      p.cross_attention[i] = init_attention(d, rng);
      p.cross_norm[i] = init_norm(d);
    }
  } else {
    for (int m = 0; m < 3; ++m) {
      if (config.modalities.on[m]) p.modality_norm[m] = init_norm(d);
    }
  }
  if (config.hierarchy_embedding) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    p.topic_embedding = uniform(config.seq_len, d, bound, rng);
    p.depth_embedding = uniform(kMaxEmbeddedDepth + 1, d, bound, rng);
  }
  const int width = config.fused_width();
  p.head_weight = uniform(width, 2, 1.0 / std::sqrt(static_cast<double>(width)), rng);
  p.head_bias = MatrixXd::Zero(1, 2);
  return p;
}

// ---- building blocks --------------------------------------------------------

Eigen::MatrixXd project(const ModalityFeatures& features, const std::vector<ConvLayer>& layers) {
  return project_forward(features, layers, nullptr);
}

AttentionResult multi_head_attention(const Eigen::MatrixXd& query, const Eigen::MatrixXd& key,
                                     const Eigen::MatrixXd& value, const AttentionParams& params, int n_heads,
                                     const std::vector<bool>* key_mask) {
  return attention_forward(query, key, value, params, n_heads, key_mask, nullptr);
}

AttentionResult question_aware_encode(const Eigen::MatrixXd& u, const AttentionParams& params, int n_heads,
                                      const std::vector<bool>* key_mask) {
  AttentionResult r = attention_forward(u, u, u, params, n_heads, key_mask, nullptr);
  r.output += u;
  return r;
}

CrossResult cross_modal_attend(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2,
                               const AttentionParams& first_params, const AttentionParams& second_params,
                               int n_heads) {
  if (u1.rows() != u2.rows() || u1.cols() != u2.cols()) {
    throw ValidationError("cross-modal inputs must have the same shape");
  }
  auto a = attention_forward(u1, u2, u2, first_params, n_heads, nullptr, nullptr);
  auto b = attention_forward(u2, u1, u1, second_params, n_heads, nullptr, nullptr);
  return {a.output + u1, b.output + u2, std::move(a.maps), std::move(b.maps)};
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& params) {
  return layer_norm_forward(x, params, nullptr);
}

Eigen::RowVectorXd fuse(std::span<const Eigen::MatrixXd> pair_outputs, std::span<const LayerNormParams> norms) {
  if (pair_outputs.empty() || pair_outputs.size() % 2 != 0) {
    throw ValidationError("fuse expects both directions of every modality pair");
  }
  if (norms.size() != pair_outputs.size()) throw ValidationError("fuse needs one norm per representation");
  const Eigen::Index d = pair_outputs[0].cols();
  Eigen::RowVectorXd fused = Eigen::RowVectorXd::Zero(2 * d);
  for (std::size_t i = 0; i < pair_outputs.size(); i += 2) {
    fused.head(d) += layer_norm(pair_outputs[i], norms[i]).colwise().mean();
    fused.tail(d) += layer_norm(pair_outputs[i + 1], norms[i + 1]).colwise().mean();
  }
  return fused;
}

Prediction predict(const Eigen::RowVectorXd& fused, const Eigen::MatrixXd& weight, const Eigen::MatrixXd& bias,
                   double dropout_rate, std::mt19937_64* rng) {
  Eigen::RowVectorXd x = fused;
  if (rng != nullptr && dropout_rate > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep = 1.0 - dropout_rate;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = unit(*rng) < keep ? x[i] / keep : 0.0;
  }
  Eigen::RowVectorXd logits = x * weight;
  logits += bias.row(0);
  const Eigen::RowVectorXd probs = softmax(logits);
  Prediction p;
  p.probabilities = {probs[0], probs[1]};
  p.label = probs[1] > probs[0] ? Label::kDepression : Label::kNormal;
  return p;
}

double cross_entropy_loss(std::span<const double> depression_probs, std::span<const Label> labels) {
  if (depression_probs.empty()) throw ValidationError("loss over an empty batch");
  if (depression_probs.size() != labels.size()) throw ValidationError("loss: probabilities and labels differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < depression_probs.size(); ++i) {
    const double p = std::clamp(depression_probs[i], kLossEpsilon, 1.0 - kLossEpsilon);
    const double y = labels[i] == Label::kDepression ? 1.0 : 0.0;
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(depression_probs.size());
}

Eigen::RowVectorXd cross_entropy_logit_gradient(const Prediction& prediction, Label label) {
  const double p = prediction.probabilities[1];
  Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(2);
  if (p <= kLossEpsilon || p >= 1.0 - kLossEpsilon) return g;  // clamped region is flat
  const double y = label == Label::kDepression ? 1.0 : 0.0;
  g[1] = p - y;
  g[0] = y - p;
  return g;
}

// ---- full network ---------------------------------------------------------------

struct ForwardCache {
  std::array<ProjectionCache, 3> projection;
  std::array<std::vector<bool>, 3> masks;
  std::vector<int> topic_row;  // per slot, -1 when no topic embedding applies
  std::vector<int> depth_row;
  std::array<AttentionCache, 3> self_attention;
  std::array<MatrixXd, 3> qa;  // question-aware representations
  std::array<AttentionCache, 6> cross;
  std::array<LayerNormCache, 6> cross_norm;
  std::array<LayerNormCache, 3> modality_norm;
  Eigen::RowVectorXd dropout_scale;  // empty without dropout
  Eigen::RowVectorXd head_input;
};

HiQuEModel::HiQuEModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_params(config_, seed)) {}

HiQuEModel::HiQuEModel(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (!params_.all_finite()) throw ValidationError("model parameters are not finite");
}

void HiQuEModel::check_input(const EmbeddedInterview& input) const {
  for (int m = 0; m < 3; ++m) {
    if (!config_.modalities.on[m]) continue;
    const auto& f = input.modalities[m];
    if (f.slots() != config_.seq_len || f.width() != config_.input_dims[m]) {
      throw ValidationError(std::string(to_string(kAllModalities[m])) + " input must be " +
                            std::to_string(config_.seq_len) + " x " + std::to_string(config_.input_dims[m]) +
                            ", got " + std::to_string(f.slots()) + " x " + std::to_string(f.width()));
    }
    if (static_cast<int>(f.mask.size()) != config_.seq_len) throw ValidationError("mask length mismatch");
  }
}

ForwardResult HiQuEModel::forward(const EmbeddedInterview& input, std::mt19937_64* rng, bool keep_cache) const {
  check_input(input);
  const int len = config_.seq_len;
  const int d = config_.d_model;
  const int heads = config_.n_heads;
  auto cache = std::make_shared<ForwardCache>();
  ForwardResult result;

  if (config_.hierarchy_embedding) {
    cache->topic_row.assign(len, -1);
    cache->depth_row.assign(len, 0);
    for (int k = 0; k < len; ++k) cache->topic_row[k] = k;
    for (const auto& h : input.hierarchy) {
      const int slot = h.slot_index - 1;
      if (slot < 0 || slot >= len) continue;
      const int topic = h.effective_topic_slot - 1;
      cache->topic_row[slot] = (topic >= 0 && topic < len) ? topic : -1;
      cache->depth_row[slot] = std::min(h.chain_depth, kMaxEmbeddedDepth);
    }
  }

  for (int m = 0; m < 3; ++m) {
    if (!config_.modalities.on[m]) continue;
    const auto& features = input.modalities[m];
    cache->masks[m] = features.mask;
    MatrixXd u = project_forward(features, params_.projector[m], &cache->projection[m]);
    if (config_.hierarchy_embedding) {
      for (int k = 0; k < len; ++k) {
        if (!features.mask[k]) continue;
        if (cache->topic_row[k] >= 0) u.row(k) += params_.topic_embedding.row(cache->topic_row[k]);
        u.row(k) += params_.depth_embedding.row(cache->depth_row[k]);
      }
    }
    if (config_.qa_module) {
      auto att = attention_forward(u, u, u, params_.self_attention[m], heads,
                                   config_.key_masking ? &features.mask : nullptr, &cache->self_attention[m]);
      cache->qa[m] = att.output + u;
      result.maps.self_maps[m] = std::move(att.maps);
    } else {
      cache->qa[m] = std::move(u);
    }
  }

  Eigen::RowVectorXd fused = Eigen::RowVectorXd::Zero(config_.fused_width());
  if (config_.uses_cross_attention()) {
    for (int i = 0; i < 6; ++i) {
      if (!pair_active(config_, i / 2)) continue;
      const int q = static_cast<int>(kModalityPairs[i / 2][i % 2]);
      const int kv = static_cast<int>(kModalityPairs[i / 2][1 - i % 2]);
      auto att = attention_forward(cache->qa[q], cache->qa[kv], cache->qa[kv], params_.cross_attention[i], heads,
                                   config_.key_masking ? &cache->masks[kv] : nullptr, &cache->cross[i]);
      const MatrixXd combined = att.output + cache->qa[q];
      const MatrixXd normed = layer_norm_forward(combined, params_.cross_norm[i], &cache->cross_norm[i]);
      fused.segment((i % 2) * d, d) += normed.colwise().mean();
      result.maps.cross_maps[i] = std::move(att.maps);
    }
  } else {
    int offset = 0;
    for (int m = 0; m < 3; ++m) {
      if (!config_.modalities.on[m]) continue;
      const MatrixXd normed = layer_norm_forward(cache->qa[m], params_.modality_norm[m], &cache->modality_norm[m]);
      fused.segment(offset, d) = normed.colwise().mean();
      offset += d;
    }
  }
  if (!fused.allFinite()) throw ValidationError("non-finite fused representation");

  Eigen::RowVectorXd head_input = fused;
  if (rng != nullptr && config_.dropout_rate > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep = 1.0 - config_.dropout_rate;
    cache->dropout_scale.resize(fused.size());
    for (Eigen::Index i = 0; i < fused.size(); ++i) cache->dropout_scale[i] = unit(*rng) < keep ? 1.0 / keep : 0.0;
    head_input = fused.cwiseProduct(cache->dropout_scale);
  }
  Eigen::RowVectorXd logits = head_input * params_.head_weight;
  logits += params_.head_bias.row(0);
  const Eigen::RowVectorXd probs = softmax(logits);
  result.prediction.probabilities = {probs[0], probs[1]};
  result.prediction.label = probs[1] > probs[0] ? Label::kDepression : Label::kNormal;
  result.fused = fused;
  result.logits = logits;
  if (keep_cache) {
    cache->head_input = std::move(head_input);
    result.cache = std::move(cache);
  }
  return result;
}

void HiQuEModel::backward(const ForwardResult& result, const Eigen::RowVectorXd& dlogits, ModelParams& grads) const {
  if (!result.cache) throw Error("backward() needs a forward pass run with keep_cache");
  const ForwardCache& c = *result.cache;
  const int d = config_.d_model;
  const int heads = config_.n_heads;
  const int len = config_.seq_len;

  grads.head_weight.noalias() += c.head_input.transpose() * dlogits;
  grads.head_bias += dlogits;
  Eigen::RowVectorXd dfused = dlogits * params_.head_weight.transpose();
  if (c.dropout_scale.size() > 0) dfused = dfused.cwiseProduct(c.dropout_scale);

  std::array<MatrixXd, 3> dqa;
  for (int m = 0; m < 3; ++m) {
    if (config_.modalities.on[m]) dqa[m] = MatrixXd::Zero(len, d);
  }

  if (config_.uses_cross_attention()) {
    for (int i = 0; i < 6; ++i) {
      if (!pair_active(config_, i / 2)) continue;
      const int q = static_cast<int>(kModalityPairs[i / 2][i % 2]);
      const int kv = static_cast<int>(kModalityPairs[i / 2][1 - i % 2]);
      MatrixXd dnormed(len, d);
      dnormed.rowwise() = dfused.segment((i % 2) * d, d) / static_cast<double>(len);
      const MatrixXd dcombined =
          layer_norm_backward(c.cross_norm[i], params_.cross_norm[i], dnormed, grads.cross_norm[i]);
      dqa[q] += dcombined;
      auto g = attention_backward(c.cross[i], params_.cross_attention[i], heads, dcombined, grads.cross_attention[i]);
      dqa[q] += g.dq_in;
      dqa[kv] += g.dk_in + g.dv_in;
    }
  } else {
    int offset = 0;
    for (int m = 0; m < 3; ++m) {
      if (!config_.modalities.on[m]) continue;
      MatrixXd dnormed(len, d);
      dnormed.rowwise() = dfused.segment(offset, d) / static_cast<double>(len);
      dqa[m] += layer_norm_backward(c.modality_norm[m], params_.modality_norm[m], dnormed, grads.modality_norm[m]);
      offset += d;
    }
  }

  for (int m = 0; m < 3; ++m) {
    if (!config_.modalities.on[m]) continue;
    MatrixXd du = dqa[m];
    if (config_.qa_module) {
      auto g = attention_backward(c.self_attention[m], params_.self_attention[m], heads, dqa[m],
                                  grads.self_attention[m]);
      du += g.dq_in + g.dk_in + g.dv_in;
    }
    if (config_.hierarchy_embedding) {
      for (int k = 0; k < len; ++k) {
        if (!c.masks[m][k]) continue;
        if (c.topic_row[k] >= 0) grads.topic_embedding.row(c.topic_row[k]) += du.row(k);
        grads.depth_embedding.row(c.depth_row[k]) += du.row(k);
      }
    }
    project_backward(c.projection[m], params_.projector[m], c.masks[m], std::move(du), grads.projector[m]);
  }
}

double HiQuEModel::loss_and_gradients(std::span<const EmbeddedInterview* const> batch, ModelParams& grads,
                                      std::mt19937_64* rng) const {
  if (batch.empty()) throw ValidationError("loss over an empty batch");
  std::vector<double> probs;
  std::vector<Label> labels;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const EmbeddedInterview* item : batch) {
    if (!item->label) throw ValidationError("training example " + item->participant_id + " has no label");
    ForwardResult r = forward(*item, rng, true);
    probs.push_back(r.prediction.probabilities[1]);
    labels.push_back(*item->label);
    backward(r, cross_entropy_logit_gradient(r.prediction, *item->label) * scale, grads);
  }
  return cross_entropy_loss(probs, labels);
}

}  // namespace hique

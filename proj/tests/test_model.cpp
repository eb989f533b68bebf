#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "hique/errors.hpp"
#include "hique/model.hpp"

using namespace hique;
using namespace testing_support;

namespace {

void check_row_stochastic(const Eigen::MatrixXd& m) {
  CHECK(m.minCoeff() >= 0.0);
  CHECK(m.maxCoeff() <= 1.0);
  for (Eigen::Index r = 0; r < m.rows(); ++r) CHECK(std::abs(m.row(r).sum() - 1.0) < 1e-5);
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig{};
  c.conv_stack = {{3, 16}, {3, 5}};
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig{};
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ModelConfig{};
  c.modalities = ModalitySet{{false, false, false}};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("config json round trip") {
  ModelConfig c = miniature_config();
  c.key_masking = true;
  c.modalities = ModalitySet::parse("A+T");
  CHECK(model_config_from_json(to_json(c)) == c);
}

TEST_CASE("projection shapes and masking") {
  ModelConfig c;
  auto params = init_params(c, 3);
  auto f = ModalityFeatures::zeros(Modality::kAudio);
  // all-zero input with zero biases stays zero
  auto u = project(f, params.projector[0]);
  CHECK(u.rows() == 85);
  CHECK(u.cols() == 4);
  CHECK(u.cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int k = 0; k < 85; k += 2) {
    Eigen::VectorXd v(88);
    for (auto& x : v) x = n(rng);
    f.set_row(k, v);
  }
  for (auto& layer : params.projector[0]) layer.bias.setConstant(0.3);
  u = project(f, params.projector[0]);
  for (int k = 1; k < 85; k += 2) CHECK(u.row(k).cwiseAbs().maxCoeff() == 0.0);

  auto wrong = ModalityFeatures::zeros(Modality::kAudio, 85, 90);
  CHECK_THROWS_WITH_AS(project(wrong, params.projector[0]), doctest::Contains("expected 88"), ValidationError);
}

TEST_CASE("constant inputs give uniform maps") {
  AttentionParams p{Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1),
                    Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1),
                    Eigen::MatrixXd::Zero(1, 1),     Eigen::MatrixXd::Zero(1, 1),
                    Eigen::MatrixXd::Zero(1, 1),     Eigen::MatrixXd::Zero(1, 1)};
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(85, 1, 0.7);
  auto r = multi_head_attention(x, x, x, p, 1);
  REQUIRE(r.maps.size() == 1);
  CHECK(max_abs_diff(r.maps[0], Eigen::MatrixXd::Constant(85, 85, 1.0 / 85)) < 1e-15);
}

TEST_CASE("attention matches loop oracle") {
  std::mt19937_64 rng(11);
  for (int heads : {1, 2}) {
    const auto q = random_mat(3, 4, rng), k = random_mat(3, 4, rng);
    const auto a = random_attn(4, rng);
    const auto expected = oracle::attention(q, k, k, a, heads);
    const auto got = multi_head_attention(to_eigen(q), to_eigen(k), to_eigen(k), to_params(a), heads);
    CHECK(max_abs_diff(got.output, to_eigen(expected.output)) < 1e-12);
    for (int h = 0; h < heads; ++h) {
      CHECK(max_abs_diff(got.maps[h], to_eigen(expected.maps[h])) < 1e-12);
      check_row_stochastic(got.maps[h]);
    }
  }
}

TEST_CASE("non-finite attention input is rejected") {
  std::mt19937_64 rng(1);
  auto q = to_eigen(random_mat(3, 2, rng));
  q(1, 1) = std::nan("");
  CHECK_THROWS_AS(multi_head_attention(q, q, q, to_params(random_attn(2, rng)), 1), ValidationError);
}

TEST_CASE("key masking removes absent keys") {
  std::mt19937_64 rng(2);
  const auto x = to_eigen(random_mat(4, 2, rng));
  const auto p = to_params(random_attn(2, rng));
  std::vector<bool> mask{true, false, true, false};
  auto r = multi_head_attention(x, x, x, p, 2, &mask);
  for (const auto& m : r.maps) {
    check_row_stochastic(m);
    CHECK(m.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.col(3).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("question-aware residual") {
  std::mt19937_64 rng(3);
  auto p = to_params(random_attn(4, rng));
  p.bv.setZero();
  p.bo.setZero();
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(85, 4);
  CHECK(question_aware_encode(zero, p, 2).output.cwiseAbs().maxCoeff() == 0.0);

  const auto u = to_eigen(random_mat(85, 4, rng));
  const auto plain = multi_head_attention(u, u, u, p, 2);
  const auto qa = question_aware_encode(u, p, 2);
  CHECK(qa.output.rows() == 85);
  CHECK(max_abs_diff(qa.output, plain.output + u) < 1e-14);
}

TEST_CASE("cross attention passthrough and symmetry") {
  std::mt19937_64 rng(4);
  auto p = to_params(random_attn(4, rng));
  p.bv.setZero();
  p.bo.setZero();
  const auto u1 = to_eigen(random_mat(85, 4, rng));
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(85, 4);
  auto r = cross_modal_attend(u1, zero, p, p, 2);
  CHECK(max_abs_diff(r.first_to_second, u1) < 1e-15);

  const auto u2 = to_eigen(random_mat(85, 4, rng));
  auto ab = cross_modal_attend(u1, u2, p, p, 2);
  auto ba = cross_modal_attend(u2, u1, p, p, 2);
  CHECK(max_abs_diff(ab.first_to_second, ba.second_to_first) < 1e-15);
  CHECK(max_abs_diff(ab.second_to_first, ba.first_to_second) < 1e-15);
}

TEST_CASE("fusion identities") {
  std::mt19937_64 rng(6);
  const LayerNormParams norm{to_eigen(random_mat(1, 4, rng)), to_eigen(random_mat(1, 4, rng))};
  std::vector<Eigen::MatrixXd> reps(6, Eigen::MatrixXd::Constant(85, 4, 2.5));
  std::vector<LayerNormParams> norms(6, norm);
  const auto fused = fuse(reps, norms);
  Eigen::RowVectorXd expected(8);
  expected << norm.beta.row(0), norm.beta.row(0);
  CHECK((fused - 3.0 * expected).cwiseAbs().maxCoeff() < 1e-12);

  // additivity with a zeroed pair and zero shift
  std::vector<LayerNormParams> zero_shift(6, LayerNormParams{norm.gamma, Eigen::MatrixXd::Zero(1, 4)});
  for (auto& r : reps) r = to_eigen(random_mat(85, 4, rng));
  const auto full = fuse(std::span(reps).subspan(0, 4), std::span(zero_shift).subspan(0, 4));
  reps[4].setZero();
  reps[5].setZero();
  CHECK((fuse(reps, zero_shift) - full).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(fuse(std::span(reps).subspan(0, 3), std::span(norms).subspan(0, 3)), ValidationError);
}

TEST_CASE("fusion against explicit pooling on two slots") {
  std::mt19937_64 rng(7);
  std::vector<Eigen::MatrixXd> reps;
  std::vector<LayerNormParams> norms;
  Eigen::RowVectorXd expected = Eigen::RowVectorXd::Zero(6);
  for (int i = 0; i < 6; ++i) {
    const auto x = random_mat(2, 3, rng);
    const auto g = random_mat(1, 3, rng)[0], b = random_mat(1, 3, rng)[0];
    reps.push_back(to_eigen(x));
    norms.push_back({row(g), row(b)});
    const auto pooled = oracle::column_mean(oracle::layer_norm(x, g, b));
    for (int j = 0; j < 3; ++j) expected[(i % 2) * 3 + j] += pooled[j];
  }
  CHECK((fuse(reps, norms) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prediction head") {
  Eigen::RowVectorXd u = Eigen::RowVectorXd::Ones(8);
  auto p = predict(u, Eigen::MatrixXd::Zero(8, 2), Eigen::MatrixXd::Zero(1, 2));
  CHECK(p.probabilities[0] == doctest::Approx(0.5));
  CHECK(p.probabilities[1] == doctest::Approx(0.5));

  Eigen::MatrixXd bias(1, 2);
  bias << 2.0, 0.0;
  p = predict(Eigen::RowVectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2), bias);
  CHECK(p.probabilities[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(p.probabilities[1] == doctest::Approx(0.1192).epsilon(1e-3));
  CHECK(p.probabilities[0] + p.probabilities[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.label == Label::kNormal);
}

TEST_CASE("cross entropy") {
  const std::vector<double> half{0.5};
  for (Label y : {Label::kNormal, Label::kDepression}) {
    const std::vector<Label> l{y};
    CHECK(cross_entropy_loss(half, l) == doctest::Approx(std::log(2.0)));
  }
  const std::vector<double> perfect{1.0, 0.0};
  const std::vector<Label> perfect_labels{Label::kDepression, Label::kNormal};
  CHECK(cross_entropy_loss(perfect, perfect_labels) < 1e-6);
  const std::vector<double> probs{0.8, 0.4};
  CHECK(cross_entropy_loss(probs, perfect_labels) == doctest::Approx(0.3670).epsilon(1e-4));
  CHECK_THROWS_AS(cross_entropy_loss({}, {}), ValidationError);
}

TEST_CASE("full model forward shapes and maps") {
  ModelConfig c;
  HiQuEModel model(c, 1);
  SyntheticConfig sc;
  sc.n_depressed = 1;
  sc.n_normal = 1;
  const auto corpus = generate_synthetic_corpus(sc);
  for (const auto& e : corpus) {
    const auto r = model.forward(e);
    CHECK(r.fused.size() == 8);
    CHECK(r.prediction.probabilities[0] + r.prediction.probabilities[1] == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& maps : r.maps.self_maps) {
      REQUIRE(maps.size() == 2);
      for (const auto& m : maps) {
        CHECK(m.rows() == 85);
        CHECK(m.cols() == 85);
        check_row_stochastic(m);
      }
    }
    for (const auto& maps : r.maps.cross_maps) {
      REQUIRE(maps.size() == 2);
      for (const auto& m : maps) check_row_stochastic(m);
    }
    // no dropout without an rng
    CHECK(model.forward(e).logits == r.logits);
  }
}

TEST_CASE("ablated configurations run") {
  std::mt19937_64 rng(9);
  for (const char* mods : {"A", "V", "T", "A+V", "V+T", "A+T", "A+V+T"}) {
    for (bool qa : {false, true}) {
      for (bool cm : {false, true}) {
        ModelConfig c = miniature_config();
        c.modalities = ModalitySet::parse(mods);
        c.qa_module = qa;
        c.cm_attention = cm;
        HiQuEModel model(c, 2);
        const auto e = random_interview(c, rng);
        const auto r = model.forward(e);
        CHECK(r.fused.size() == c.fused_width());
        CHECK(std::isfinite(r.prediction.probabilities[1]));
      }
    }
  }
}

TEST_CASE("input shape is checked") {
  ModelConfig c = miniature_config();
  HiQuEModel model(c, 1);
  ModelConfig other = c;
  other.input_dims = {3, 4, 6};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(model.forward(random_interview(other, rng)), ValidationError);
}

TEST_CASE("slot permutation leaves the fused vector unchanged") {
  // Holds for kernel-1 projections without hierarchy embeddings; wider
  // kernels and slot-indexed embeddings make slot order meaningful.
  ModelConfig c;
  c.conv_stack = {{1, 16}, {1, 4}};
  c.hierarchy_embedding = false;
  HiQuEModel model(c, 4);
  SyntheticConfig sc;
  sc.n_depressed = 1;
  sc.n_normal = 0;
  const auto e = generate_synthetic_corpus(sc).front();
  std::vector<int> perm(85);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(12);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permuted = e;
  for (int m = 0; m < 3; ++m) {
    for (int k = 0; k < 85; ++k) {
      permuted.modalities[m].matrix.row(perm[k]) = e.modalities[m].matrix.row(k);
      permuted.modalities[m].mask[perm[k]] = e.modalities[m].mask[k];
    }
  }
  const auto a = model.forward(e);
  const auto b = model.forward(permuted);
  CHECK((a.fused - b.fused).cwiseAbs().maxCoeff() < 1e-10);
  for (int m = 0; m < 3; ++m) {
    for (int h = 0; h < 2; ++h) {
      const auto& ma = a.maps.self_maps[m][h];
      const auto& mb = b.maps.self_maps[m][h];
      double worst = 0;
      for (int i = 0; i < 85; ++i)
        for (int j = 0; j < 85; ++j) worst = std::max(worst, std::abs(ma(i, j) - mb(perm[i], perm[j])));
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("absent slots carry zero values at initialisation") {
  ModelConfig c;
  HiQuEModel model(c, 8);
  std::mt19937_64 rng(3);
  auto e = generate_synthetic_corpus(SyntheticConfig{}).front();
  const auto u = project(e.modalities[2], model.params().projector[2]);
  const auto& p = model.params().self_attention[2];
  Eigen::MatrixXd v = u * p.wv;
  v.rowwise() += p.bv.row(0);
  for (int k = 0; k < 85; ++k) {
    if (!e.modalities[2].mask[k]) CHECK(v.row(k).cwiseAbs().maxCoeff() == 0.0);
  }
}

namespace {

double total_loss(const HiQuEModel& model, const std::vector<EmbeddedInterview>& batch) {
  std::vector<double> probs;
  std::vector<Label> labels;
  for (const auto& e : batch) {
    probs.push_back(model.forward(e).prediction.probabilities[1]);
    labels.push_back(*e.label);
  }
  return cross_entropy_loss(probs, labels);
}

double gradient_check(ModelConfig c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HiQuEModel model(c, seed);
  // Non-zero biases and shifts so every tensor has a meaningful gradient.
  for (auto& [name, t] : model.params().tensors()) {
    if (name.find("bias") != std::string::npos || name.find(".b") != std::string::npos ||
        name.find("beta") != std::string::npos || name.find("gamma") != std::string::npos) {
      *t += to_eigen(random_mat(t->rows(), t->cols(), rng, 0.3));
    }
  }
  std::vector<EmbeddedInterview> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back(random_interview(c, rng, i == 2 ? 0.6 : 1.0));
    batch.back().label = i % 2 ? Label::kNormal : Label::kDepression;
  }
  std::vector<const EmbeddedInterview*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  ModelParams grads = model.params().zeros_like();
  model.loss_and_gradients(ptrs, grads);

  const double h = 1e-4;
  double worst = 0.0;
  auto tensors = model.params().tensors();
  auto grad_tensors = grads.tensors();
  REQUIRE(tensors.size() == grad_tensors.size());
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Eigen::MatrixXd& w = *tensors[t].second;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = total_loss(model, batch);
      w.data()[i] = saved - h;
      const double down = total_loss(model, batch);
      w.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grad_tensors[t].second->data()[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      if (rel > 1e-3) MESSAGE(tensors[t].first << "[" << i << "] analytic " << analytic << " numeric " << numeric);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("gradient check on the miniature model") {
  ModelConfig c = miniature_config();
  CHECK(gradient_check(c, 21) < 1e-3);
  c.key_masking = true;
  CHECK(gradient_check(c, 22) < 1e-3);
  c = miniature_config();
  c.cm_attention = false;
  CHECK(gradient_check(c, 23) < 1e-3);
  c = miniature_config();
  c.qa_module = false;
  c.modalities = ModalitySet::parse("V+T");
  CHECK(gradient_check(c, 24) < 1e-3);
}

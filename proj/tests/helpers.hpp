#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <random>
#include <string>

#include "hique/features.hpp"
#include "hique/model.hpp"
#include "oracles.hpp"

namespace testing_support {

inline Eigen::MatrixXd to_eigen(const oracle::Mat& m) {
  Eigen::MatrixXd out(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j];
  return out;
}

inline Eigen::MatrixXd row(const std::vector<double>& v) {
  return to_eigen(oracle::Mat{v});
}

inline oracle::Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  oracle::Mat m(r, std::vector<double>(c));
  for (auto& row : m)
    for (double& v : row) v = n(rng);
  return m;
}

inline oracle::Attn random_attn(std::size_t d, std::mt19937_64& rng) {
  oracle::Attn a;
  a.wq = random_mat(d, d, rng, 0.7);
  a.wk = random_mat(d, d, rng, 0.7);
  a.wv = random_mat(d, d, rng, 0.7);
  a.wo = random_mat(d, d, rng, 0.7);
  a.bq = random_mat(1, d, rng, 0.2)[0];
  a.bk = random_mat(1, d, rng, 0.2)[0];
  a.bv = random_mat(1, d, rng, 0.2)[0];
  a.bo = random_mat(1, d, rng, 0.2)[0];
  return a;
}

inline hique::AttentionParams to_params(const oracle::Attn& a) {
  return {to_eigen(a.wq), to_eigen(a.wk), to_eigen(a.wv), to_eigen(a.wo),
          row(a.bq),      row(a.bk),      row(a.bv),      row(a.bo)};
}

// 3 slots, d_model 2, one head, narrow inputs.
inline hique::ModelConfig miniature_config() {
  hique::ModelConfig c;
  c.d_model = 2;
  c.n_heads = 1;
  c.conv_stack = {{3, 3}, {3, 2}};
  c.seq_len = 3;
  c.input_dims = {3, 4, 5};
  c.dropout_rate = 0.0;
  return c;
}

inline hique::EmbeddedInterview random_interview(const hique::ModelConfig& c, std::mt19937_64& rng,
                                                 double presence = 0.8) {
  hique::EmbeddedInterview e;
  e.participant_id = "p";
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution present(presence);
  std::vector<bool> slot_present(c.seq_len);
  for (int k = 0; k < c.seq_len; ++k) slot_present[k] = present(rng);
  for (int m = 0; m < 3; ++m) {
    auto f = hique::ModalityFeatures::zeros(hique::kAllModalities[m], c.seq_len, c.input_dims[m]);
    for (int k = 0; k < c.seq_len; ++k) {
      if (!slot_present[k]) continue;
      Eigen::VectorXd v(c.input_dims[m]);
      for (auto& x : v) x = n(rng);
      f.set_row(k, v);
    }
    e.modalities[m] = std::move(f);
  }
  for (int k = 0; k < c.seq_len; ++k) {
    if (!slot_present[k]) continue;
    hique::HierarchicalPosition h;
    h.slot_index = k + 1;
    h.role = k == 0 ? hique::QuestionRole::kPrimary : hique::QuestionRole::kFollowUp;
    h.effective_topic_slot = 1;
    h.chain_depth = k;
    e.hierarchy.push_back(h);
  }
  e.label = hique::Label::kDepression;
  return e;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("hique_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing_support

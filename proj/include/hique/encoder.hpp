#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace hique {

inline constexpr int kTextDim = 768;

// Contextual text encoder. token_embeddings() feeds similarity scoring,
// summary() is the sequence-level ([CLS]-style) vector used as the text
// feature of an answer.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<Eigen::VectorXd> token_embeddings(std::string_view text) const = 0;
  virtual Eigen::VectorXd summary(std::string_view text) const = 0;
};

// Lowercased word tokens; apostrophes and underscores stay inside words.
std::vector<std::string> tokenize(std::string_view text);

// Deterministic encoder with no model files: every token maps to a
// seeded Gaussian direction, mixed with its neighbours so identical words
// in different contexts are close but not equal.
class HashingEncoder final : public TextEncoder {
 public:
  explicit HashingEncoder(int dim = kTextDim, double context_weight = 0.25, std::uint64_t seed = 0);

  std::string name() const override { return "hashing"; }
  int dim() const override { return dim_; }
  std::vector<Eigen::VectorXd> token_embeddings(std::string_view text) const override;
  Eigen::VectorXd summary(std::string_view text) const override;

 private:
  Eigen::VectorXd token_vector(std::string_view token) const;

  int dim_;
  double context_weight_;
  std::uint64_t seed_;
};

// Runs an external program once per call. `{input}` in the command line
// is replaced by the path of a temporary file holding the UTF-8 text; the
// program prints JSON {"cls": [...], "tokens": [[...], ...]} on stdout.
class CommandEncoder final : public TextEncoder {
 public:
  CommandEncoder(std::string command, int dim = kTextDim);

  std::string name() const override { return "command"; }
  int dim() const override { return dim_; }
  std::vector<Eigen::VectorXd> token_embeddings(std::string_view text) const override;
  Eigen::VectorXd summary(std::string_view text) const override;

 private:
  struct Output {
    Eigen::VectorXd cls;
    std::vector<Eigen::VectorXd> tokens;
  };
  Output run(std::string_view text) const;

  std::string command_;
  int dim_;
};

// "hashing" or "command:<command line>".
std::unique_ptr<TextEncoder> make_encoder(std::string_view spec);

struct BertScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Greedy cosine matching of token embeddings, aggregated as F1.
BertScore bert_score(const std::vector<Eigen::VectorXd>& candidate,
                     const std::vector<Eigen::VectorXd>& reference);

}  // namespace hique

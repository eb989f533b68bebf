#include "hique/encoder.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "hique/errors.hpp"

namespace hique {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Eigen::VectorXd unit(Eigen::VectorXd v) {
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v;
}

Eigen::VectorXd to_vector(const nlohmann::json& array, int dim, const char* what) {
  if (!array.is_array() || static_cast<int>(array.size()) != dim) {
    throw AdapterError(std::string("encoder output '") + what + "' must be an array of " +
                       std::to_string(dim) + " numbers");
  }
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = array[i].get<double>();
  if (!v.allFinite()) throw AdapterError(std::string("encoder output '") + what + "' is not finite");
  return v;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    // Typographic apostrophe (U+2019) counts as part of the word.
    if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      current.push_back('\'');
      i += 2;
      continue;
    }
    if (std::isalnum(c) || c == '\'' || c == '_' || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

HashingEncoder::HashingEncoder(int dim, double context_weight, std::uint64_t seed)
    : dim_(dim), context_weight_(context_weight), seed_(seed) {
  if (dim <= 0) throw ConfigError("encoder dimension must be positive");
}

Eigen::VectorXd HashingEncoder::token_vector(std::string_view token) const {
  std::mt19937_64 rng(fnv1a(token, seed_));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = normal(rng);
  return unit(std::move(v));
}

std::vector<Eigen::VectorXd> HashingEncoder::token_embeddings(std::string_view text) const {
  const auto tokens = tokenize(text);
  std::vector<Eigen::VectorXd> base;
  base.reserve(tokens.size());
  for (const auto& t : tokens) base.push_back(token_vector(t));

  std::vector<Eigen::VectorXd> out;
  out.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    Eigen::VectorXd v = base[i];
    if (i > 0) v += context_weight_ * base[i - 1];
    if (i + 1 < base.size()) v += context_weight_ * base[i + 1];
    out.push_back(unit(std::move(v)));
  }
  return out;
}

Eigen::VectorXd HashingEncoder::summary(std::string_view text) const {
  const auto tokens = token_embeddings(text);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim_);
  for (const auto& t : tokens) sum += t;
  return unit(std::move(sum));
}

CommandEncoder::CommandEncoder(std::string command, int dim) : command_(std::move(command)), dim_(dim) {
  if (command_.find("{input}") == std::string::npos) {
    throw ConfigError("encoder command must contain the {input} placeholder");
  }
}

CommandEncoder::Output CommandEncoder::run(std::string_view text) const {
  std::string tmpl = (std::filesystem::temp_directory_path() / "hique-enc-XXXXXX").string();
  const int fd = ::mkstemp(tmpl.data());
  if (fd < 0) throw AdapterError("cannot create temporary file for encoder input");
  ::close(fd);
  const std::filesystem::path input(tmpl);
  {
    std::ofstream f(input, std::ios::binary);
    f << text;
  }

  std::string cmd = command_;
  for (auto pos = cmd.find("{input}"); pos != std::string::npos; pos = cmd.find("{input}")) {
    cmd.replace(pos, 7, "'" + input.string() + "'");
  }

  std::string stdout_text;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    std::filesystem::remove(input);
    throw AdapterError("cannot start encoder command: " + command_);
  }
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) stdout_text.append(buf, n);
  const int status = ::pclose(pipe);
  std::filesystem::remove(input);
  if (status != 0) throw AdapterError("encoder command failed with status " + std::to_string(status));

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(stdout_text);
  } catch (const nlohmann::json::exception& e) {
    throw AdapterError(std::string("encoder produced invalid JSON: ") + e.what());
  }
  Output out;
  out.cls = to_vector(j.at("cls"), dim_, "cls");
  for (const auto& t : j.value("tokens", nlohmann::json::array())) {
    out.tokens.push_back(unit(to_vector(t, dim_, "tokens")));
  }
  return out;
}

std::vector<Eigen::VectorXd> CommandEncoder::token_embeddings(std::string_view text) const {
  return run(text).tokens;
}

Eigen::VectorXd CommandEncoder::summary(std::string_view text) const { return run(text).cls; }

std::unique_ptr<TextEncoder> make_encoder(std::string_view spec) {
  if (spec == "hashing") return std::make_unique<HashingEncoder>();
  constexpr std::string_view kCommand = "command:";
  if (spec.substr(0, kCommand.size()) == kCommand) {
    return std::make_unique<CommandEncoder>(std::string(spec.substr(kCommand.size())));
  }
  throw ConfigError("unknown text encoder '" + std::string(spec) + "' (expected hashing or command:<cmd>)");
}

BertScore bert_score(const std::vector<Eigen::VectorXd>& candidate,
                     const std::vector<Eigen::VectorXd>& reference) {
  BertScore s;
  if (candidate.empty() || reference.empty()) return s;

  Eigen::MatrixXd sim(candidate.size(), reference.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      const double denom = candidate[i].norm() * reference[j].norm();
      sim(i, j) = denom > 0.0 ? candidate[i].dot(reference[j]) / denom : 0.0;
    }
  }
  s.precision = sim.rowwise().maxCoeff().mean();
  s.recall = sim.colwise().maxCoeff().mean();
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? std::clamp(2.0 * s.precision * s.recall / denom, 0.0, 1.0) : 0.0;
  return s;
}

}  // namespace hique

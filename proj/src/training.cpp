#include "hique/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "hique/errors.hpp"
#include "hique/io.hpp"

namespace hique {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Fisher-Yates with an explicit modulo-free draw so the order only
// depends on the mt19937_64 stream.
std::size_t draw_below(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[draw_below(rng, i)]);
}

}  // namespace

// ---- question embedding modes ---------------------------------------------------

std::string_view to_string(QuestionEmbedding q) {
  switch (q) {
    case QuestionEmbedding::kNone:
      return "none";
    case QuestionEmbedding::kFlat:
      return "flat";
    case QuestionEmbedding::kHierarchical:
      return "hierarchical";
  }
  return "hierarchical";
}

QuestionEmbedding parse_question_embedding(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "none" || t == "nqe") return QuestionEmbedding::kNone;
  if (t == "flat" || t == "qe") return QuestionEmbedding::kFlat;
  if (t == "hierarchical" || t == "hqe") return QuestionEmbedding::kHierarchical;
  throw ConfigError("unknown question embedding '" + std::string(text) + "' (none, flat, hierarchical)");
}

EmbeddedInterview apply_question_embedding(const EmbeddedInterview& interview, QuestionEmbedding mode) {
  if (mode != QuestionEmbedding::kNone) return interview;
  EmbeddedInterview out;
  out.participant_id = interview.participant_id;
  out.label = interview.label;
  bool any = false;
  for (int m = 0; m < 3; ++m) {
    const auto& src = interview.modalities[m];
    auto dst = ModalityFeatures::zeros(src.modality, src.slots(), src.width());
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(src.width());
    int n = 0;
    for (int k = 0; k < src.slots(); ++k) {
      if (!src.mask[k]) continue;
      sum += src.matrix.row(k).transpose();
      ++n;
    }
    if (n > 0) {
      dst.set_row(0, sum / n);
      any = true;
    }
    out.modalities[m] = std::move(dst);
  }
  if (any) out.hierarchy.push_back({1, QuestionRole::kPrimary, 1, 0});
  return out;
}

// ---- configs ----------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (mask_count < 0 || mask_count > kNumQuestions) throw ConfigError("mask_count must be in [0, 85]");
  if (augment_factor < 1) throw ConfigError("augment_factor must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam_epsilon > 0)) throw ConfigError("adam_epsilon must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"dropout_rate", c.dropout_rate},
          {"seed", c.seed},
          {"augment", c.augment},
          {"mask_count", c.mask_count},
          {"augment_factor", c.augment_factor},
          {"question_embedding", to_string(c.question_embedding)},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.augment = j.at("augment").get<bool>();
    c.mask_count = j.at("mask_count").get<int>();
    c.augment_factor = j.at("augment_factor").get<int>();
    c.question_embedding = parse_question_embedding(j.at("question_embedding").get<std::string>());
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- splits ------------------------------------------------------------------

std::string_view to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain:
      return "train";
    case SplitRole::kValidation:
      return "validation";
    case SplitRole::kTest:
      return "test";
  }
  return "train";
}

SplitRole parse_split_role(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "train") return SplitRole::kTrain;
  if (t == "validation" || t == "dev" || t == "val") return SplitRole::kValidation;
  if (t == "test") return SplitRole::kTest;
  throw ParseError("unknown split '" + std::string(text) + "'");
}

void DataSplit::validate() const {
  if (train.empty()) throw ValidationError("training split is empty");
  if (validation.empty()) throw ValidationError("validation split is empty");
  std::set<std::string> seen;
  for (const auto* part : {&train, &validation, &test}) {
    for (const auto& e : *part) {
      if (!e.label) throw ValidationError("interview " + e.participant_id + " has no label");
      if (!seen.insert(e.participant_id).second) {
        throw ValidationError("participant " + e.participant_id + " appears more than once across splits");
      }
    }
  }
}

DataSplit stratified_split(const std::vector<EmbeddedInterview>& corpus, std::uint64_t seed, double train_fraction,
                           double validation_fraction) {
  if (train_fraction <= 0 || validation_fraction <= 0 || train_fraction + validation_fraction > 1.0) {
    throw ConfigError("split fractions must be positive and sum to at most 1");
  }
  std::mt19937_64 rng(seed);
  DataSplit split;
  for (Label label : {Label::kDepression, Label::kNormal}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!corpus[i].label) throw ValidationError("interview " + corpus[i].participant_id + " has no label");
      if (*corpus[i].label == label) idx.push_back(i);
    }
    shuffle_in_place(idx, rng);
    const auto n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * n));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::lround(validation_fraction * n)));
    for (std::size_t j = 0; j < n; ++j) {
      auto& dst = j < n_train ? split.train : (j < n_train + n_val ? split.validation : split.test);
      dst.push_back(corpus[idx[j]]);
    }
  }
  auto by_id = [](const EmbeddedInterview& a, const EmbeddedInterview& b) { return a.participant_id < b.participant_id; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.validation.begin(), split.validation.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  return split;
}

void write_split_file(const std::filesystem::path& file, const DataSplit& split) {
  std::ostringstream out;
  out << "participant_id,split\n";
  for (const auto& [part, role] : {std::pair{&split.train, SplitRole::kTrain},
                                   std::pair{&split.validation, SplitRole::kValidation},
                                   std::pair{&split.test, SplitRole::kTest}}) {
    for (const auto& e : *part) out << e.participant_id << ',' << to_string(role) << '\n';
  }
  write_file_atomic(file, out.str());
}

DataSplit apply_split_file(const std::filesystem::path& file, std::vector<EmbeddedInterview> corpus) {
  std::istringstream in(read_text_file(file));
  std::map<std::string, SplitRole> roles;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected 'participant_id,split'");
    const std::string id = trim(line.substr(0, comma));
    const std::string role = trim(line.substr(comma + 1));
    if (line_no == 1 && id == "participant_id") continue;
    try {
      if (!roles.emplace(id, parse_split_role(role)).second) {
        throw ParseError("participant " + id + " listed twice");
      }
    } catch (const ParseError& e) {
      throw ParseError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  DataSplit split;
  std::set<std::string> found;
  for (auto& e : corpus) {
    const auto it = roles.find(e.participant_id);
    if (it == roles.end()) continue;
    found.insert(e.participant_id);
    switch (it->second) {
      case SplitRole::kTrain:
        split.train.push_back(std::move(e));
        break;
      case SplitRole::kValidation:
        split.validation.push_back(std::move(e));
        break;
      case SplitRole::kTest:
        split.test.push_back(std::move(e));
        break;
    }
  }
  for (const auto& [id, role] : roles) {
    if (!found.count(id)) throw ValidationError(file.string() + ": participant " + id + " has no cached features");
  }
  return split;
}

// ---- augmentation --------------------------------------------------------------

std::vector<EmbeddedInterview> augment_minority(const std::vector<EmbeddedInterview>& train_set,
                                                const TrainConfig& config, std::uint64_t seed, SplitRole role) {
  if (role != SplitRole::kTrain) {
    throw ConfigError("augmentation is only applied to the training split, not " + std::string(to_string(role)));
  }
  config.validate();
  std::mt19937_64 rng(seed);
  std::vector<EmbeddedInterview> out = train_set;
  for (const auto& source : train_set) {
    if (!source.label) throw ValidationError("interview " + source.participant_id + " has no label");
    if (*source.label != Label::kDepression) continue;
    // Candidate slots are the answered questions.
    std::vector<int> occupied;
    const int slots = source.modalities[0].slots();
    for (int k = 0; k < slots; ++k) {
      bool present = false;
      for (const auto& f : source.modalities) present = present || f.mask[k];
      if (present) occupied.push_back(k);
    }
    for (int copy = 1; copy < config.augment_factor; ++copy) {
      std::vector<int> pool = occupied;
      const std::size_t n = std::min<std::size_t>(config.mask_count, pool.size());
      // partial Fisher-Yates: the first n entries are the sample
      for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + draw_below(rng, pool.size() - i)]);
      std::set<int> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
      EmbeddedInterview masked = source;
      masked.participant_id = source.participant_id + "#aug" + std::to_string(copy);
      for (int k : chosen) {
        for (auto& f : masked.modalities) f.clear_row(k);
      }
      std::erase_if(masked.hierarchy, [&](const HierarchicalPosition& h) { return chosen.count(h.slot_index - 1) > 0; });
      out.push_back(std::move(masked));
    }
  }
  return out;
}

// ---- checkpoints ---------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& cp) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : cp.params.tensors()) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t->size()));
    for (Eigen::Index r = 0; r < t->rows(); ++r)
      for (Eigen::Index c = 0; c < t->cols(); ++c) data.push_back((*t)(r, c));
    tensors[name] = {{"shape", {t->rows(), t->cols()}}, {"data", std::move(data)}};
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : cp.history) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", h.train_loss},
                       {"validation_loss", h.validation_loss},
                       {"validation_macro_f1", h.validation_macro_f1}});
  }
  nlohmann::json j = {{"format", "hique-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"model_config", to_json(cp.model_config)},
                      {"train_config", to_json(cp.train_config)},
                      {"best_epoch", cp.best_epoch},
                      {"history", std::move(history)},
                      {"tensors", std::move(tensors)}};
  write_file_atomic(file, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::string text;
  try {
    text = read_text_file(file);
  } catch (const Error&) {
    throw Error("cannot read checkpoint " + file.string());
  }
  auto fail = [&file](const std::string& why) { return ParseError("checkpoint " + file.string() + ": " + why); };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw fail("not valid JSON");
  }
  if (!j.is_object() || j.value("format", "") != "hique-checkpoint") throw fail("not a checkpoint file");
  if (j.value("version", -1) != kCheckpointVersion) {
    throw fail("unsupported version " + j.value("version", nlohmann::json()).dump());
  }
  Checkpoint cp;
  try {
    cp.model_config = model_config_from_json(j.at("model_config"));
    cp.train_config = train_config_from_json(j.at("train_config"));
    cp.best_epoch = j.at("best_epoch").get<int>();
    for (const auto& h : j.at("history")) {
      cp.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                            h.at("validation_loss").get<double>(), h.at("validation_macro_f1").get<double>()});
    }
    cp.params = init_params(cp.model_config, 0);
    const auto& tensors = j.at("tensors");
    std::size_t used = 0;
    for (auto& [name, t] : cp.params.tensors()) {
      if (!tensors.contains(name)) throw fail("missing tensor " + name);
      const auto& entry = tensors.at(name);
      const auto shape = entry.at("shape").get<std::array<Eigen::Index, 2>>();
      const auto& data = entry.at("data");
      if (shape[0] != t->rows() || shape[1] != t->cols() || data.size() != static_cast<std::size_t>(t->size())) {
        throw fail("tensor " + name + " has the wrong shape");
      }
      std::size_t i = 0;
      for (Eigen::Index r = 0; r < t->rows(); ++r)
        for (Eigen::Index c = 0; c < t->cols(); ++c) (*t)(r, c) = data[i++].get<double>();
      ++used;
    }
    if (used != tensors.size()) throw fail("unexpected extra tensors");
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  } catch (const ParseError& e) {
    const std::string what = e.what();
    if (what.rfind("checkpoint ", 0) == 0) throw;
    throw fail(what);
  } catch (const ValidationError& e) {
    throw fail(e.what());
  }
  if (!cp.params.all_finite()) throw fail("non-finite parameters");
  return cp;
}

// ---- training --------------------------------------------------------------------

EvaluationResult evaluate_model(const HiQuEModel& model, const std::vector<EmbeddedInterview>& data,
                                QuestionEmbedding mode) {
  if (data.empty()) throw ValidationError("nothing to evaluate");
  EvaluationResult result;
  std::vector<Label> truth, predicted;
  std::vector<double> probs;
  for (const auto& item : data) {
    if (!item.label) throw ValidationError("interview " + item.participant_id + " has no label");
    const Prediction p = model.predict(apply_question_embedding(item, mode));
    result.predictions.push_back(p);
    truth.push_back(*item.label);
    predicted.push_back(p.label);
    probs.push_back(p.probabilities[1]);
  }
  result.metrics = compute_metrics(truth, predicted);
  result.loss = cross_entropy_loss(probs, truth);
  return result;
}

namespace {

struct Adam {
  ModelParams m, v;
  long step = 0;

  explicit Adam(const ModelParams& params) : m(params.zeros_like()), v(params.zeros_like()) {}

  void apply(ModelParams& params, const ModelParams& grads, const TrainConfig& c) {
    ++step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    auto p = params.tensors();
    auto g = grads.tensors();
    auto mt = m.tensors();
    auto vt = v.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& mi = *mt[i].second;
      auto& vi = *vt[i].second;
      const auto& gi = *g[i].second;
      mi = c.beta1 * mi + (1.0 - c.beta1) * gi;
      vi = c.beta2 * vi + (1.0 - c.beta2) * gi.cwiseProduct(gi);
      p[i].second->array() -=
          c.learning_rate * (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + c.adam_epsilon);
    }
  }
};

}  // namespace

Checkpoint train(ModelConfig model_config, const TrainConfig& tc, const DataSplit& split,
                 const EpochCallback& on_epoch) {
  tc.validate();
  split.validate();
  model_config.dropout_rate = tc.dropout_rate;
  model_config.hierarchy_embedding = tc.question_embedding == QuestionEmbedding::kHierarchical;
  model_config.validate();

  std::mt19937_64 seeder(tc.seed);
  const std::uint64_t init_seed = seeder();
  const std::uint64_t augment_seed = seeder();
  std::mt19937_64 shuffle_rng(seeder());
  std::mt19937_64 dropout_rng(seeder());

  std::vector<EmbeddedInterview> train_set;
  {
    const auto augmented = tc.augment ? augment_minority(split.train, tc, augment_seed) : split.train;
    for (const auto& e : augmented) train_set.push_back(apply_question_embedding(e, tc.question_embedding));
  }

  HiQuEModel model(model_config, init_seed);
  for (const auto* part : {static_cast<const std::vector<EmbeddedInterview>*>(&train_set), &split.validation}) {
    for (const auto& e : *part) {
      for (int m = 0; m < 3; ++m) {
        if (!model_config.modalities.on[m]) continue;
        const auto& f = e.modalities[m];
        if (f.slots() != model_config.seq_len || f.width() != model_config.input_dims[m]) {
          throw ValidationError("interview " + e.participant_id + ": " + std::string(to_string(f.modality)) +
                                " features are " + std::to_string(f.slots()) + " x " + std::to_string(f.width()) +
                                ", expected " + std::to_string(model_config.seq_len) + " x " +
                                std::to_string(model_config.input_dims[m]));
        }
        f.validate();
      }
    }
  }
  Adam adam(model.params());
  Checkpoint best;
  best.model_config = model_config;
  best.train_config = tc;
  best.params = model.params();
  double best_f1 = -1.0, best_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_in_place(order, shuffle_rng);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const EmbeddedInterview*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_set[order[i]]);
      ModelParams grads = model.params().zeros_like();
      double loss = 0.0;
      try {
        loss = model.loss_and_gradients(batch, grads, &dropout_rng);
      } catch (const ValidationError& e) {
        // inputs were checked up front, so this is a numeric blow-up
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(loss) || !grads.all_finite()) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + " (non-finite loss or gradient)");
      }
      adam.apply(model.params(), grads, tc);
      if (!model.params().all_finite()) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + " (non-finite parameters)");
      }
      loss_sum += loss * static_cast<double>(batch.size());
    }
    EvaluationResult val;
    try {
      val = evaluate_model(model, split.validation, tc.question_embedding);
    } catch (const ValidationError& e) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", validation pass: " + e.what());
    }
    if (!std::isfinite(val.loss)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (non-finite validation loss)");
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(train_set.size()), val.loss, val.metrics.macro_f1};
    best.history.push_back(record);
    if (record.validation_macro_f1 > best_f1 ||
        (record.validation_macro_f1 == best_f1 && record.validation_loss < best_loss)) {
      best_f1 = record.validation_macro_f1;
      best_loss = record.validation_loss;
      best.best_epoch = epoch;
      best.params = model.params();
    }
    if (on_epoch) on_epoch(record);
  }
  return best;
}

// ---- run config file ------------------------------------------------------------

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string t = lower(v);
  if (t == "true" || t == "on" || t == "yes" || t == "1") return true;
  if (t == "false" || t == "off" || t == "no" || t == "0") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return d;
}

std::vector<ConvSpec> parse_conv_stack(const std::string& v) {
  std::vector<ConvSpec> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("conv_stack: expected 'kernel x channels', got '" + item + "'");
    out.push_back({parse_number<int>("conv_stack", trim(item.substr(0, x))),
                   parse_number<int>("conv_stack", trim(item.substr(x + 1)))});
  }
  if (out.empty()) throw ConfigError("conv_stack is empty");
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, RunConfig c) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    try {
      if (key == "d_model") c.model.d_model = parse_number<int>(key, v);
      else if (key == "n_heads") c.model.n_heads = parse_number<int>(key, v);
      else if (key == "conv_stack") c.model.conv_stack = parse_conv_stack(v);
      else if (key == "dropout_rate") c.model.dropout_rate = c.train.dropout_rate = parse_real(key, v);
      else if (key == "modalities") c.model.modalities = ModalitySet::parse(v);
      else if (key == "qa_module") c.model.qa_module = parse_bool(key, v);
      else if (key == "cm_attention") c.model.cm_attention = parse_bool(key, v);
      else if (key == "hierarchy_embedding") c.model.hierarchy_embedding = parse_bool(key, v);
      else if (key == "key_masking") c.model.key_masking = parse_bool(key, v);
      else if (key == "batch_size") c.train.batch_size = parse_number<int>(key, v);
      else if (key == "epochs") c.train.epochs = parse_number<int>(key, v);
      else if (key == "learning_rate") c.train.learning_rate = parse_real(key, v);
      else if (key == "seed") c.train.seed = parse_number<std::uint64_t>(key, v);
      else if (key == "augment") c.train.augment = parse_bool(key, v);
      else if (key == "mask_count") c.train.mask_count = parse_number<int>(key, v);
      else if (key == "augment_factor") c.train.augment_factor = parse_number<int>(key, v);
      else if (key == "question_embedding") c.train.question_embedding = parse_question_embedding(v);
      else if (key == "beta1") c.train.beta1 = parse_real(key, v);
      else if (key == "beta2") c.train.beta2 = parse_real(key, v);
      else if (key == "adam_epsilon") c.train.adam_epsilon = parse_real(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.model.hierarchy_embedding = c.model.hierarchy_embedding &&
                                c.train.question_embedding == QuestionEmbedding::kHierarchical;
  try {
    c.model.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file, RunConfig base) {
  std::string text;
  try {
    text = read_text_file(file);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + file.string());
  }
  return parse_run_config(text, std::move(base));
}

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  std::string conv;
  for (const auto& s : c.model.conv_stack) {
    if (!conv.empty()) conv += ",";
    conv += std::to_string(s.kernel_size) + "x" + std::to_string(s.out_channels);
  }
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "d_model = " << c.model.d_model << "\n"
      << "n_heads = " << c.model.n_heads << "\n"
      << "conv_stack = " << conv << "\n"
      << "dropout_rate = " << c.train.dropout_rate << "\n"
      << "modalities = " << c.model.modalities.str() << "\n"
      << "qa_module = " << b(c.model.qa_module) << "\n"
      << "cm_attention = " << b(c.model.cm_attention) << "\n"
      << "hierarchy_embedding = " << b(c.model.hierarchy_embedding) << "\n"
      << "key_masking = " << b(c.model.key_masking) << "\n"
      << "batch_size = " << c.train.batch_size << "\n"
      << "epochs = " << c.train.epochs << "\n"
      << "learning_rate = " << c.train.learning_rate << "\n"
      << "seed = " << c.train.seed << "\n"
      << "augment = " << b(c.train.augment) << "\n"
      << "mask_count = " << c.train.mask_count << "\n"
      << "augment_factor = " << c.train.augment_factor << "\n"
      << "question_embedding = " << to_string(c.train.question_embedding) << "\n"
      << "beta1 = " << c.train.beta1 << "\n"
      << "beta2 = " << c.train.beta2 << "\n"
      << "adam_epsilon = " << c.train.adam_epsilon << "\n";
  return out.str();
}

std::optional<std::uint64_t> seed_from_environment() {
  const char* v = std::getenv("HIQUE_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return parse_number<std::uint64_t>("HIQUE_SEED", trim(v));
}

}  // namespace hique

#include "hique/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "hique/errors.hpp"

namespace hique {

namespace {

constexpr char kCacheMagic[8] = {'H', 'I', 'Q', 'U', 'E', 'F', 'C', '\0'};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key, int slot) {
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h ^= static_cast<std::uint64_t>(slot) + 0x632BE59BD9B4E019ULL;
  h *= 1099511628211ULL;
  return h;
}

std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", t);
  return buf;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& file) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw ParseError("feature cache " + file.string() + " is truncated");
  }
  return v;
}

}  // namespace

ModalityFeatures ModalityFeatures::zeros(Modality m, int slots, int width) {
  ModalityFeatures f;
  f.modality = m;
  f.matrix = Eigen::MatrixXd::Zero(slots, width < 0 ? feature_dim(m) : width);
  f.mask.assign(slots, false);
  return f;
}

int ModalityFeatures::present_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), true));
}

void ModalityFeatures::set_row(int slot, const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (values.size() != matrix.cols()) {
    throw ValidationError(std::string(to_string(modality)) + " row expects width " +
                          std::to_string(matrix.cols()) + ", got " + std::to_string(values.size()));
  }
  matrix.row(slot) = values.transpose();
  mask[slot] = true;
}

void ModalityFeatures::clear_row(int slot) {
  matrix.row(slot).setZero();
  mask[slot] = false;
}

void ModalityFeatures::validate() const {
  if (static_cast<Eigen::Index>(mask.size()) != matrix.rows()) {
    throw ValidationError(std::string(to_string(modality)) + " mask length does not match slot count");
  }
  if (!matrix.allFinite()) throw ValidationError(std::string(to_string(modality)) + " features are not finite");
  for (int k = 0; k < slots(); ++k) {
    if (!mask[k] && !matrix.row(k).isZero(0.0)) {
      throw ValidationError(std::string(to_string(modality)) + " slot " + std::to_string(k + 1) +
                            " is masked but not zero");
    }
  }
}

EmbeddedInterview EmbeddedInterview::empty(std::string participant_id, int slots) {
  EmbeddedInterview e;
  e.participant_id = std::move(participant_id);
  for (auto m : kAllModalities) e.features(m) = ModalityFeatures::zeros(m, slots);
  return e;
}

void EmbeddedInterview::validate() const {
  for (auto m : kAllModalities) {
    const auto& f = features(m);
    if (f.modality != m) throw ValidationError("modality slots out of order");
    if (f.slots() != kNumQuestions || f.width() != feature_dim(m)) {
      throw ValidationError(std::string(to_string(m)) + " features must be 85 x " +
                            std::to_string(feature_dim(m)) + ", got " + std::to_string(f.slots()) +
                            " x " + std::to_string(f.width()));
    }
    f.validate();
  }
}

SegmentVector compute_landmark_stats(std::span<const LandmarkFrame> frames) {
  SegmentVector out{Eigen::VectorXd::Zero(2 * 136), false};
  if (frames.empty()) return out;

  Eigen::MatrixXd coords(frames.size(), 136);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (int p = 0; p < 68; ++p) {
      coords(f, p) = frames[f].x[p];
      coords(f, 68 + p) = frames[f].y[p];
    }
  }
  if (!coords.allFinite()) throw ValidationError("landmark coordinates must be finite");
  const Eigen::RowVectorXd mean = coords.colwise().mean();
  const Eigen::RowVectorXd var =
      (coords.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(frames.size());
  out.values.head(136) = mean.transpose();
  out.values.tail(136) = var.transpose();
  out.present = true;
  return out;
}

std::vector<TimedLandmarkFrame> read_clnf_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open landmark file " + path.string());
  std::vector<TimedLandmarkFrame> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.find("frame") != std::string::npos) continue;  // header
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    double frame_no = 0, confidence = 0, success = 0;
    TimedLandmarkFrame f;
    fields >> frame_no >> f.timestamp >> confidence >> success;
    for (auto& v : f.frame.x) fields >> v;
    for (auto& v : f.frame.y) fields >> v;
    if (!fields) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected 4 + 136 values");
    }
    f.success = success != 0.0;
    frames.push_back(f);
  }
  return frames;
}

std::vector<LandmarkFrame> sample_frames(std::span<const TimedLandmarkFrame> frames, TimeSpan span) {
  std::vector<LandmarkFrame> out;
  if (span.end <= span.start) return out;
  for (double tick = span.start; tick < span.end; tick += 1.0) {
    const TimedLandmarkFrame* best = nullptr;
    double best_dist = 0.5;
    for (const auto& f : frames) {
      if (!f.success) continue;
      const double d = std::abs(f.timestamp - tick);
      if (d <= best_dist) {
        best_dist = d;
        best = &f;
      }
    }
    if (best != nullptr) out.push_back(best->frame);
  }
  return out;
}

Eigen::VectorXd SyntheticAcousticAdapter::extract(const WaveformSpan& segment) const {
  std::mt19937_64 rng(mix_seed(seed_, segment.participant_id, segment.slot));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(kAudioDim);
  for (int i = 0; i < kAudioDim; ++i) v[i] = normal(rng);
  return v;
}

CommandAcousticAdapter::CommandAcousticAdapter(std::string command) : command_(std::move(command)) {
  if (command_.find("{wav}") == std::string::npos) {
    throw ConfigError("acoustic command must contain the {wav} placeholder");
  }
}

Eigen::VectorXd CommandAcousticAdapter::extract(const WaveformSpan& segment) const {
  std::string cmd = command_;
  replace_all(cmd, "{wav}", "'" + segment.wav.string() + "'");
  replace_all(cmd, "{start}", format_time(segment.span.start));
  replace_all(cmd, "{end}", format_time(segment.span.end));

  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw AdapterError("cannot start acoustic command: " + command_);
  std::string output;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) output.append(buf, n);
  const int status = ::pclose(pipe);
  if (status != 0) throw AdapterError("acoustic command failed with status " + std::to_string(status));

  std::istringstream lines(output);
  std::string line, last;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) last = line;
  }
  for (char& c : last) {
    if (c == ',' || c == ';') c = ' ';
  }
  std::istringstream fields(last);
  std::vector<double> values;
  for (double v; fields >> v;) values.push_back(v);
  if (values.size() != static_cast<std::size_t>(kAudioDim)) {
    throw AdapterError("acoustic command produced " + std::to_string(values.size()) + " values, expected 88");
  }
  Eigen::VectorXd out = Eigen::Map<Eigen::VectorXd>(values.data(), kAudioDim);
  if (!out.allFinite()) throw AdapterError("acoustic command produced non-finite values");
  return out;
}

SegmentVector extract_audio_features(const WaveformSpan& segment, const AcousticAdapter* adapter) {
  if (adapter == nullptr) {
    throw ConfigError("no acoustic feature adapter configured (use a command or synthetic adapter)");
  }
  if (segment.span.end <= segment.span.start) return {Eigen::VectorXd::Zero(kAudioDim), false};
  Eigen::VectorXd values = adapter->extract(segment);
  if (values.size() != kAudioDim) {
    throw AdapterError(adapter->name() + " adapter returned " + std::to_string(values.size()) +
                       " values, expected 88");
  }
  return {std::move(values), true};
}

SegmentVector extract_text_features(std::string_view answer_text, const TextEncoder& encoder) {
  if (encoder.dim() != kTextFeatureDim) {
    throw ConfigError("text encoder must produce 768-d vectors, got " + std::to_string(encoder.dim()));
  }
  if (answer_text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    return {Eigen::VectorXd::Zero(kTextFeatureDim), false};
  }
  Eigen::VectorXd v = encoder.summary(answer_text);
  if (v.size() != kTextFeatureDim || !v.allFinite()) {
    throw AdapterError(encoder.name() + " encoder returned an invalid summary vector");
  }
  return {std::move(v), true};
}

EmbeddedInterview embed_interview(const StructuredInterview& interview, const EmbeddingSources& sources) {
  EmbeddedInterview out = EmbeddedInterview::empty(interview.participant_id);
  out.label = interview.label;
  const SlotLayout layout = build_slot_layout(interview);

  for (int k = 0; k < kNumQuestions; ++k) {
    if (!layout.slot_segment[k]) continue;
    const auto& s = interview.segments[*layout.slot_segment[k]];
    out.hierarchy.push_back(s.position);

    if (sources.audio != nullptr) {
      auto a = extract_audio_features({sources.wav, s.segment.answer_span, interview.participant_id, k + 1},
                                      sources.audio);
      if (a.present) out.features(Modality::kAudio).set_row(k, a.values);
    }
    if (sources.landmarks) {
      const auto frames = sample_frames(*sources.landmarks, s.segment.answer_span);
      auto v = compute_landmark_stats(frames);
      if (v.present) out.features(Modality::kVisual).set_row(k, v.values);
    }
    if (sources.text != nullptr) {
      auto t = extract_text_features(s.segment.answer_text(), *sources.text);
      if (t.present) out.features(Modality::kText).set_row(k, t.values);
    }
  }
  return out;
}

int structure_parent(int follow_up_slot) {
  return 1 + ((follow_up_slot - (kNumPrimary + 1)) * 13 + 16) % kNumPrimary;
}

std::vector<EmbeddedInterview> generate_synthetic_corpus(const SyntheticConfig& config) {
  if (config.n_depressed < 0 || config.n_normal < 0) throw ValidationError("class counts must be non-negative");
  if (config.signal_strength < 0.0) throw ValidationError("signal_strength must be non-negative");
  std::vector<bool> is_signal(kNumQuestions + 1, false);
  for (int s : config.signal_slots) {
    if (s < 1 || s > kNumQuestions) {
      throw ValidationError("signal slot " + std::to_string(s) + " outside [1, 85]");
    }
    is_signal[s] = true;
  }
  // In structure mode the signal follows follow-up slots onto their parents.
  std::vector<int> parent_of(kNumQuestions + 1, 0);
  if (config.structure_signal) {
    for (int s : config.signal_slots) {
      if (s > kNumPrimary) parent_of[s] = structure_parent(s);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<EmbeddedInterview> corpus;
  const int total = config.n_depressed + config.n_normal;
  corpus.reserve(total);
  for (int i = 0; i < total; ++i) {
    const Label label = i < config.n_depressed ? Label::kDepression : Label::kNormal;
    char id[32];
    std::snprintf(id, sizeof id, "syn%04d", i + 1);
    EmbeddedInterview e = EmbeddedInterview::empty(id);
    e.label = label;

    std::array<bool, kNumQuestions + 1> present{};
    for (int k = 1; k <= kNumQuestions; ++k) {
      const double p = k <= kNumPrimary ? config.primary_presence : config.follow_up_presence;
      present[k] = unit(rng) < p;
    }
    std::array<bool, kNumQuestions + 1> shifted{};
    for (int k = 1; k <= kNumQuestions; ++k) {
      if (!present[k] || !is_signal[k]) continue;
      shifted[k] = true;
      if (parent_of[k] != 0) {
        present[parent_of[k]] = true;
        shifted[parent_of[k]] = true;
      }
    }

    const double shift = (label == Label::kDepression ? 0.5 : -0.5) * config.signal_strength;
    for (int k = 1; k <= kNumQuestions; ++k) {
      if (!present[k]) continue;
      for (auto m : kAllModalities) {
        auto& f = e.features(m);
        Eigen::VectorXd row(f.width());
        for (int c = 0; c < f.width(); ++c) row[c] = normal(rng);
        if (shifted[k]) row.array() += shift;
        f.set_row(k - 1, row);
      }
      if (config.visual_missing_rate > 0.0 && unit(rng) < config.visual_missing_rate) {
        e.features(Modality::kVisual).clear_row(k - 1);
      }
    }

    std::vector<int> present_primaries;
    for (int k = 1; k <= kNumPrimary; ++k) {
      if (present[k]) present_primaries.push_back(k);
    }
    for (int k = 1; k <= kNumQuestions; ++k) {
      if (!present[k]) continue;
      HierarchicalPosition pos;
      pos.slot_index = k;
      if (k <= kNumPrimary) {
        pos.role = QuestionRole::kPrimary;
        pos.effective_topic_slot = k;
        pos.chain_depth = 0;
      } else {
        pos.role = QuestionRole::kFollowUp;
        pos.chain_depth = 1;
        if (parent_of[k] != 0) {
          pos.effective_topic_slot = parent_of[k];
        } else if (!present_primaries.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, present_primaries.size() - 1);
          pos.effective_topic_slot = present_primaries[pick(rng)];
        } else {
          pos.effective_topic_slot = k;
        }
      }
      e.hierarchy.push_back(pos);
    }
    corpus.push_back(std::move(e));
  }
  return corpus;
}

std::filesystem::path cache_file_for(const std::filesystem::path& dir, const std::string& participant_id) {
  return dir / (participant_id + ".hqf");
}

void write_feature_cache(const std::filesystem::path& file, const EmbeddedInterview& interview) {
  nlohmann::json header;
  header["format_version"] = kFeatureCacheVersion;
  header["participant_id"] = interview.participant_id;
  header["label"] = interview.label ? nlohmann::json(to_string(*interview.label)) : nlohmann::json(nullptr);
  nlohmann::json mods = nlohmann::json::array();
  for (auto m : kAllModalities) {
    const auto& f = interview.features(m);
    std::string mask;
    for (bool b : f.mask) mask.push_back(b ? '1' : '0');
    mods.push_back({{"name", to_string(m)}, {"rows", f.slots()}, {"cols", f.width()}, {"mask", mask}});
  }
  header["modalities"] = std::move(mods);
  nlohmann::json hier = nlohmann::json::array();
  for (const auto& h : interview.hierarchy) {
    hier.push_back({{"slot", h.slot_index},
                    {"role", to_string(h.role)},
                    {"effective_topic_slot", h.effective_topic_slot},
                    {"chain_depth", h.chain_depth}});
  }
  header["hierarchy"] = std::move(hier);
  const std::string header_text = header.dump();

  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write feature cache " + tmp.string());
    out.write(kCacheMagic, sizeof kCacheMagic);
    write_pod(out, kFeatureCacheVersion);
    write_pod(out, static_cast<std::uint64_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    // Row-major float64, present rows only.
    for (auto m : kAllModalities) {
      const auto& f = interview.features(m);
      for (int k = 0; k < f.slots(); ++k) {
        if (!f.mask[k]) continue;
        for (int c = 0; c < f.width(); ++c) write_pod(out, f.matrix(k, c));
      }
    }
    if (!out) throw Error("failed writing feature cache " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

EmbeddedInterview read_feature_cache(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ParseError("cannot open feature cache " + file.string());
  char magic[sizeof kCacheMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0) {
    throw ParseError(file.string() + " is not a feature cache file");
  }
  const auto version = read_pod<std::uint32_t>(in, file);
  if (version != kFeatureCacheVersion) {
    throw ParseError(file.string() + ": unsupported feature cache version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(in, file);
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
    throw ParseError("feature cache " + file.string() + " is truncated");
  }

  EmbeddedInterview e;
  try {
    const auto header = nlohmann::json::parse(header_text);
    e.participant_id = header.at("participant_id").get<std::string>();
    if (!header.at("label").is_null()) e.label = parse_label(header["label"].get<std::string>());
    const auto& mods = header.at("modalities");
    if (mods.size() != 3) throw ParseError("expected 3 modalities");
    for (int i = 0; i < 3; ++i) {
      const Modality m = parse_modality(mods[i].at("name").get<std::string>());
      if (m != kAllModalities[i]) throw ParseError("modalities out of order");
      auto f = ModalityFeatures::zeros(m, mods[i].at("rows").get<int>(), mods[i].at("cols").get<int>());
      const auto mask = mods[i].at("mask").get<std::string>();
      if (static_cast<int>(mask.size()) != f.slots()) throw ParseError("mask length mismatch");
      for (int k = 0; k < f.slots(); ++k) f.mask[k] = mask[k] == '1';
      e.features(m) = std::move(f);
    }
    for (const auto& h : header.at("hierarchy")) {
      e.hierarchy.push_back({h.at("slot").get<int>(), parse_role(h.at("role").get<std::string>()),
                             h.at("effective_topic_slot").get<int>(), h.at("chain_depth").get<int>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(file.string() + ": bad header: " + ex.what());
  }
  for (auto m : kAllModalities) {
    auto& f = e.features(m);
    for (int k = 0; k < f.slots(); ++k) {
      if (!f.mask[k]) continue;
      for (int c = 0; c < f.width(); ++c) f.matrix(k, c) = read_pod<double>(in, file);
    }
  }
  e.validate();
  return e;
}

std::vector<EmbeddedInterview> load_feature_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("features directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".hqf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EmbeddedInterview> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_feature_cache(f));
  return out;
}

}  // namespace hique

#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hique/encoder.hpp"
#include "hique/structuring.hpp"
#include "hique/types.hpp"

namespace hique {

// One modality of an interview: a slots x width matrix plus presence
// mask. Absent rows are exactly zero.
struct ModalityFeatures {
  Modality modality = Modality::kAudio;
  Eigen::MatrixXd matrix;
  std::vector<bool> mask;

  static ModalityFeatures zeros(Modality m, int slots = kNumQuestions, int width = -1);

  int slots() const { return static_cast<int>(matrix.rows()); }
  int width() const { return static_cast<int>(matrix.cols()); }
  int present_count() const;

  // 0-based slot.
  void set_row(int slot, const Eigen::Ref<const Eigen::VectorXd>& values);
  void clear_row(int slot);

  // Mask/zero coupling and finiteness; throws ValidationError.
  void validate() const;
};

struct EmbeddedInterview {
  std::string participant_id;
  std::array<ModalityFeatures, 3> modalities;
  // One entry per occupied slot, in slot order.
  std::vector<HierarchicalPosition> hierarchy;
  std::optional<Label> label;

  static EmbeddedInterview empty(std::string participant_id, int slots = kNumQuestions);

  ModalityFeatures& features(Modality m) { return modalities[static_cast<int>(m)]; }
  const ModalityFeatures& features(Modality m) const { return modalities[static_cast<int>(m)]; }

  // 85 x 88 / 85 x 272 / 85 x 768 shapes plus per-modality validate().
  void validate() const;
};

struct LandmarkFrame {
  std::array<double, 68> x{};
  std::array<double, 68> y{};
};

struct SegmentVector {
  Eigen::VectorXd values;
  bool present = false;
};

// Mean then population variance of [x_1..x_68, y_1..y_68] over frames
// (272 values). No frames -> zero vector, present=false.
SegmentVector compute_landmark_stats(std::span<const LandmarkFrame> frames);

struct TimedLandmarkFrame {
  double timestamp = 0.0;
  bool success = true;
  LandmarkFrame frame;
};

// DAIC-WOZ CLNF_features.txt: "frame, timestamp, confidence, success,
// x0..x67, y0..y67" with a header row.
std::vector<TimedLandmarkFrame> read_clnf_landmarks(const std::filesystem::path& path);

// One successfully tracked frame per second of the span (nearest frame
// within half a second of each tick).
std::vector<LandmarkFrame> sample_frames(std::span<const TimedLandmarkFrame> frames, TimeSpan span);

struct WaveformSpan {
  std::filesystem::path wav;
  TimeSpan span;
  std::string participant_id;
  int slot = 0;  // 1-based
};

class AcousticAdapter {
 public:
  virtual ~AcousticAdapter() = default;
  virtual std::string name() const = 0;
  virtual bool reentrant() const = 0;
  // 88 eGeMAPS-style functionals for the span.
  virtual Eigen::VectorXd extract(const WaveformSpan& segment) const = 0;
};

// Seeded standard-normal functionals keyed on (seed, participant, slot).
class SyntheticAcousticAdapter final : public AcousticAdapter {
 public:
  explicit SyntheticAcousticAdapter(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "synthetic"; }
  bool reentrant() const override { return true; }
  Eigen::VectorXd extract(const WaveformSpan& segment) const override;

 private:
  std::uint64_t seed_;
};

// Runs an external extractor (e.g. an openSMILE eGeMAPSv02 wrapper). The
// placeholders {wav}, {start} and {end} are substituted; the program must
// print 88 numbers (comma, semicolon or whitespace separated) on the last
// non-empty line of stdout.
class CommandAcousticAdapter final : public AcousticAdapter {
 public:
  explicit CommandAcousticAdapter(std::string command);
  std::string name() const override { return "command"; }
  bool reentrant() const override { return true; }
  Eigen::VectorXd extract(const WaveformSpan& segment) const override;

 private:
  std::string command_;
};

// Null adapter -> ConfigError. Zero-length span -> zero vector, absent.
SegmentVector extract_audio_features(const WaveformSpan& segment, const AcousticAdapter* adapter);

// Empty text -> zero vector, absent. Encoder width must be 768.
SegmentVector extract_text_features(std::string_view answer_text, const TextEncoder& encoder);

struct EmbeddingSources {
  const AcousticAdapter* audio = nullptr;  // null: audio modality left absent
  std::filesystem::path wav;
  std::optional<std::vector<TimedLandmarkFrame>> landmarks;  // empty: visual absent
  const TextEncoder* text = nullptr;                         // null: text absent
};

// Lays the structured interview onto the 85 slots and extracts each
// available modality per occupied slot.
EmbeddedInterview embed_interview(const StructuredInterview& interview, const EmbeddingSources& sources);

struct SyntheticConfig {
  int n_depressed = 30;
  int n_normal = 60;
  std::uint64_t seed = 1;
  double signal_strength = 4.0;
  std::vector<int> signal_slots{3, 17, 30, 47, 59, 62};
  // Signal follow-up slots are attached to a fixed parent primary that
  // carries the same shift; other follow-ups get a random present parent.
  bool structure_signal = false;
  double primary_presence = 0.9;
  double follow_up_presence = 0.7;
  // Probability that the visual row of a present slot is missing.
  double visual_missing_rate = 0.0;
};

// Fixed parent primary for a follow-up signal slot in structure mode.
int structure_parent(int follow_up_slot);

std::vector<EmbeddedInterview> generate_synthetic_corpus(const SyntheticConfig& config);

// Feature cache: one "<participant>.hqf" file per interview.
inline constexpr std::uint32_t kFeatureCacheVersion = 1;
void write_feature_cache(const std::filesystem::path& file, const EmbeddedInterview& interview);
EmbeddedInterview read_feature_cache(const std::filesystem::path& file);
std::filesystem::path cache_file_for(const std::filesystem::path& dir, const std::string& participant_id);
// All *.hqf files in the directory, sorted by participant id.
std::vector<EmbeddedInterview> load_feature_dir(const std::filesystem::path& dir);

}  // namespace hique

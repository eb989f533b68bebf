#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace hique {

enum class Label { kNormal = 0, kDepression = 1 };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

enum class Modality { kAudio = 0, kVisual = 1, kText = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::kAudio, Modality::kVisual,
                                                        Modality::kText};
inline constexpr int kAudioDim = 88;
inline constexpr int kVisualDim = 272;
inline constexpr int kTextFeatureDim = 768;

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view text);
int feature_dim(Modality m);

// Subset of {audio, visual, text}; index by static_cast<int>(Modality).
struct ModalitySet {
  std::array<bool, 3> on{true, true, true};

  bool contains(Modality m) const { return on[static_cast<int>(m)]; }
  int count() const { return int(on[0]) + int(on[1]) + int(on[2]); }
  bool operator==(const ModalitySet&) const = default;

  static ModalitySet all() { return {}; }
  static ModalitySet only(Modality m);
  // "A+V+T", "T", "A+V", ...
  static ModalitySet parse(std::string_view text);
  std::string str() const;
};

}  // namespace hique

#include "hique/types.hpp"

#include "hique/errors.hpp"

namespace hique {

std::string_view to_string(Label label) {
  return label == Label::kDepression ? "depression" : "normal";
}

Label parse_label(std::string_view text) {
  if (text == "depression" || text == "1") return Label::kDepression;
  if (text == "normal" || text == "0") return Label::kNormal;
  throw ParseError("unknown label '" + std::string(text) + "'");
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kAudio: return "audio";
    case Modality::kVisual: return "visual";
    case Modality::kText: return "text";
  }
  return "?";
}

Modality parse_modality(std::string_view text) {
  if (text == "audio" || text == "A" || text == "a") return Modality::kAudio;
  if (text == "visual" || text == "V" || text == "v") return Modality::kVisual;
  if (text == "text" || text == "T" || text == "t") return Modality::kText;
  throw ParseError("unknown modality '" + std::string(text) + "'");
}

int feature_dim(Modality m) {
  switch (m) {
    case Modality::kAudio: return kAudioDim;
    case Modality::kVisual: return kVisualDim;
    case Modality::kText: return kTextFeatureDim;
  }
  return 0;
}

ModalitySet ModalitySet::only(Modality m) {
  ModalitySet s;
  s.on = {false, false, false};
  s.on[static_cast<int>(m)] = true;
  return s;
}

ModalitySet ModalitySet::parse(std::string_view text) {
  ModalitySet s;
  s.on = {false, false, false};
  std::size_t start = 0;
  while (start <= text.size()) {
    auto plus = text.find('+', start);
    auto part = text.substr(start, plus == std::string_view::npos ? text.npos : plus - start);
    s.on[static_cast<int>(parse_modality(part))] = true;
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  if (s.count() == 0) throw ParseError("empty modality set");
  return s;
}

std::string ModalitySet::str() const {
  std::string out;
  constexpr std::array<char, 3> kLetters{'A', 'V', 'T'};
  for (int i = 0; i < 3; ++i) {
    if (!on[i]) continue;
    if (!out.empty()) out.push_back('+');
    out.push_back(kLetters[i]);
  }
  return out;
}

}  // namespace hique

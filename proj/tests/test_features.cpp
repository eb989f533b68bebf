#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "hique/errors.hpp"
#include "hique/features.hpp"
#include "hique/io.hpp"

using namespace hique;
using testing_support::TempDir;

namespace {

void write_tone(const std::filesystem::path& path, double seconds, double freq) {
  const int rate = 16000;
  const auto n = static_cast<std::uint32_t>(seconds * rate);
  std::ofstream out(path, std::ios::binary);
  auto u32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&out](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + n * 2);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(rate);
  u32(rate * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(n * 2);
  for (std::uint32_t i = 0; i < n; ++i) {
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(12000 * std::sin(2 * M_PI * freq * i / rate))));
  }
}

}  // namespace

TEST_CASE("landmark statistics") {
  LandmarkFrame f;
  for (int i = 0; i < 68; ++i) {
    f.x[i] = i;
    f.y[i] = 2 * i;
  }
  std::vector<LandmarkFrame> same(3, f);
  auto s = compute_landmark_stats(same);
  CHECK(s.present);
  REQUIRE(s.values.size() == 272);
  CHECK(s.values.tail(136).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.values[5] == 5.0);
  CHECK(s.values[68 + 5] == 10.0);

  std::vector<LandmarkFrame> zero(1);
  CHECK(compute_landmark_stats(zero).values.cwiseAbs().maxCoeff() == 0.0);

  LandmarkFrame a, b;
  a.x[0] = 1;
  b.x[0] = 3;
  std::vector<LandmarkFrame> two{a, b};
  s = compute_landmark_stats(two);
  CHECK(s.values[0] == 2.0);
  CHECK(s.values[136] == 1.0);

  s = compute_landmark_stats({});
  CHECK_FALSE(s.present);
  CHECK(s.values.size() == 272);
}

TEST_CASE("clnf reading and frame sampling") {
  TempDir dir("clnf");
  std::ofstream out(dir.path / "CLNF_features.txt");
  out << "frame, timestamp, confidence, success";
  for (int i = 0; i < 68; ++i) out << ", x" << i;
  for (int i = 0; i < 68; ++i) out << ", y" << i;
  out << "\n";
  for (int f = 0; f < 40; ++f) {
    out << f + 1 << ", " << f * 0.1 << ", 0.9, " << (f == 20 ? 0 : 1);
    for (int i = 0; i < 136; ++i) out << ", " << f;
    out << "\n";
  }
  out.close();
  const auto frames = read_clnf_landmarks(dir.path / "CLNF_features.txt");
  REQUIRE(frames.size() == 40);
  CHECK_FALSE(frames[20].success);
  const auto picked = sample_frames(frames, {1.0, 3.5});
  // ticks at 1, 2, 3; the frame at 2.0 failed so its neighbour is used
  REQUIRE(picked.size() == 3);
  CHECK(picked[0].x[0] == 10);
  CHECK(std::abs(picked[1].x[0] - 20) == 1);
  CHECK(picked[2].x[0] == 30);
}

TEST_CASE("audio adapters") {
  SyntheticAcousticAdapter synth(7);
  WaveformSpan span{"", {1.0, 2.0}, "p1", 3};
  const auto a = extract_audio_features(span, &synth);
  const SyntheticAcousticAdapter again(7);
  const auto b = extract_audio_features(span, &again);
  CHECK(a.present);
  CHECK(a.values.size() == 88);
  CHECK(a.values == b.values);
  span.slot = 4;
  CHECK(extract_audio_features(span, &synth).values != a.values);

  WaveformSpan empty{"", {2.0, 2.0}, "p1", 3};
  const auto z = extract_audio_features(empty, &synth);
  CHECK_FALSE(z.present);
  CHECK(z.values.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(extract_audio_features(span, nullptr), ConfigError);
}

TEST_CASE("command acoustic adapter on a tone") {
  TempDir dir("audio");
  write_tone(dir.path / "tone.wav", 1.0, 440.0);
  const std::string script = std::string(HIQUE_TEST_DATA) + "/functionals.py";
  CommandAcousticAdapter adapter("python3 " + script + " {wav} {start} {end}");
  const auto v = extract_audio_features({dir.path / "tone.wav", {0.0, 1.0}, "p", 1}, &adapter);
  CHECK(v.present);
  REQUIRE(v.values.size() == 88);
  CHECK(v.values.allFinite());

  CommandAcousticAdapter broken("false {wav}");
  CHECK_THROWS_AS(broken.extract({dir.path / "tone.wav", {0.0, 1.0}, "p", 1}), AdapterError);
}

TEST_CASE("text features") {
  HashingEncoder enc;
  const auto e = extract_text_features("", enc);
  CHECK_FALSE(e.present);
  CHECK(e.values.size() == 768);
  CHECK(e.values.cwiseAbs().maxCoeff() == 0.0);
  const auto a = extract_text_features("i grew up in atlanta", enc);
  CHECK(a.present);
  CHECK(a.values == extract_text_features("i grew up in atlanta", enc).values);
  CHECK(a.values != extract_text_features("i moved here for work", enc).values);
  HashingEncoder narrow(16);
  CHECK_THROWS(extract_text_features("x", narrow));
}

TEST_CASE("modality feature validation") {
  auto f = ModalityFeatures::zeros(Modality::kVisual);
  CHECK(f.width() == 272);
  CHECK_NOTHROW(f.validate());
  f.matrix(4, 0) = 1.0;
  CHECK_THROWS_AS(f.validate(), ValidationError);
  f.set_row(4, Eigen::VectorXd::Ones(272));
  CHECK_NOTHROW(f.validate());
  f.matrix(4, 1) = std::nan("");
  CHECK_THROWS_AS(f.validate(), ValidationError);
}

TEST_CASE("synthetic corpus") {
  SyntheticConfig c;
  const auto a = generate_synthetic_corpus(c);
  REQUIRE(a.size() == 90);
  int depressed = 0;
  for (const auto& e : a) {
    CHECK_NOTHROW(e.validate());
    CHECK(e.modalities[0].matrix.rows() == 85);
    CHECK(e.modalities[0].matrix.cols() == 88);
    CHECK(e.modalities[1].matrix.cols() == 272);
    CHECK(e.modalities[2].matrix.cols() == 768);
    CHECK(e.modalities[0].mask == e.modalities[2].mask);
    depressed += *e.label == Label::kDepression;
    for (const auto& h : e.hierarchy) CHECK(e.modalities[0].mask[h.slot_index - 1]);
  }
  CHECK(depressed == 30);
  const auto b = generate_synthetic_corpus(c);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].modalities[2].matrix == b[i].modalities[2].matrix);

  c.signal_slots = {0};
  CHECK_THROWS_AS(generate_synthetic_corpus(c), ValidationError);
  c.signal_slots = {86};
  CHECK_THROWS_AS(generate_synthetic_corpus(c), ValidationError);
}

TEST_CASE("null signal leaves classes identically distributed") {
  SyntheticConfig c;
  c.signal_strength = 0;
  c.n_depressed = 200;
  c.n_normal = 200;
  const auto corpus = generate_synthetic_corpus(c);
  double mean[2] = {0, 0};
  long count[2] = {0, 0};
  for (const auto& e : corpus) {
    const int y = static_cast<int>(*e.label);
    const auto& f = e.modalities[0];
    for (int k : {3, 17, 30}) {
      if (!f.mask[k - 1]) continue;
      mean[y] += f.matrix.row(k - 1).mean();
      ++count[y];
    }
  }
  CHECK(std::abs(mean[0] / count[0] - mean[1] / count[1]) < 0.05);
}

TEST_CASE("structure signal ties follow-ups to their parents") {
  SyntheticConfig c;
  c.structure_signal = true;
  c.signal_slots = {70, 80};
  for (const auto& e : generate_synthetic_corpus(c)) {
    for (const auto& h : e.hierarchy) {
      if (h.slot_index == 70 || h.slot_index == 80) {
        CHECK(h.effective_topic_slot == structure_parent(h.slot_index));
        CHECK(e.modalities[0].mask[structure_parent(h.slot_index) - 1]);
      }
    }
  }
}

TEST_CASE("feature cache round trip") {
  TempDir dir("cache");
  SyntheticConfig c;
  c.n_depressed = 2;
  c.n_normal = 1;
  c.visual_missing_rate = 0.3;
  const auto corpus = generate_synthetic_corpus(c);
  for (const auto& e : corpus) write_feature_cache(cache_file_for(dir.path, e.participant_id), e);
  const auto loaded = load_feature_dir(dir.path);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].participant_id == corpus[i].participant_id);
    CHECK(loaded[i].label == corpus[i].label);
    CHECK(loaded[i].hierarchy == corpus[i].hierarchy);
    for (int m = 0; m < 3; ++m) {
      CHECK(loaded[i].modalities[m].matrix == corpus[i].modalities[m].matrix);
      CHECK(loaded[i].modalities[m].mask == corpus[i].modalities[m].mask);
    }
  }
  write_file_atomic(dir.path / "bad.hqf", "HIQUEFC");
  CHECK_THROWS_AS(read_feature_cache(dir.path / "bad.hqf"), ParseError);
}

TEST_CASE("embedding a structured interview") {
  QuestionTaxonomy tax = builtin_taxonomy();
  const std::vector<TranscriptTurn> turns{{Speaker::kInterviewer, 0, 1, "where are you from originally"},
                                          {Speaker::kParticipant, 1, 3, "atlanta"},
                                          {Speaker::kInterviewer, 3, 4, "why"},
                                          {Speaker::kInterviewer, 4, 5, "how are you doing today"},
                                          {Speaker::kParticipant, 5, 6, "okay"},
                                          {Speaker::kParticipant, 6, 7, "tired"}};
  const auto report = structure_interview("p9", turns, tax, nullptr);
  HashingEncoder enc;
  SyntheticAcousticAdapter audio(1);
  EmbeddingSources sources;
  sources.audio = &audio;
  sources.text = &enc;
  const auto e = embed_interview(report.interview, sources);
  CHECK_NOTHROW(e.validate());
  const auto& text = e.features(Modality::kText);
  CHECK(text.present_count() == 2);  // "why" has no answer
  CHECK(text.mask[2]);
  CHECK(text.mask[48]);
  CHECK(text.matrix.row(48).transpose() == extract_text_features("okay tired", enc).values);
  CHECK(e.features(Modality::kAudio).present_count() == 2);
  CHECK(e.features(Modality::kVisual).present_count() == 0);
  CHECK(e.hierarchy.size() == 3);
}

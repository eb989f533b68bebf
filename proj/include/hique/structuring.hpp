#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hique/encoder.hpp"
#include "hique/taxonomy.hpp"
#include "hique/types.hpp"

namespace hique {

enum class Speaker { kInterviewer, kParticipant };

struct TranscriptTurn {
  Speaker speaker = Speaker::kParticipant;
  double start_time = 0.0;
  double end_time = 0.0;
  std::string text;
};

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
};

struct QASegment {
  std::string question_text;
  std::vector<TranscriptTurn> answer_turns;
  TimeSpan question_span;
  TimeSpan answer_span;
  QuestionEntry matched_entry;
  double similarity = 1.0;

  // Participant turns joined by single spaces.
  std::string answer_text() const;
};

struct HierarchicalPosition {
  int slot_index = 0;
  QuestionRole role = QuestionRole::kPrimary;
  int effective_topic_slot = 0;
  int chain_depth = 0;

  bool operator==(const HierarchicalPosition&) const = default;
};

struct StructuredSegment {
  QASegment segment;
  HierarchicalPosition position;
};

struct StructuredInterview {
  std::string participant_id;
  std::vector<StructuredSegment> segments;
  std::optional<Label> label;
};

// Readers. Both validate ordering (start times non-decreasing) and
// end_time >= start_time, throwing ParseError / ValidationError.
std::vector<TranscriptTurn> read_transcript_jsonl(const std::filesystem::path& path);
std::vector<TranscriptTurn> parse_transcript_jsonl(std::string_view content);
// DAIC-WOZ style: tab-separated start_time, stop_time, speaker, value with
// a header row. Speaker "Ellie" is the interviewer.
std::vector<TranscriptTurn> read_transcript_daic(const std::filesystem::path& path);
std::vector<TranscriptTurn> parse_transcript_daic(std::string_view content);
// Dispatches on extension: .jsonl / .json -> JSONL, otherwise DAIC TSV.
std::vector<TranscriptTurn> read_transcript(const std::filesystem::path& path);

// True for utterances that open like a question ("what ...", "do you ...",
// "tell me ..."). Backchannels such as "mhm" or "that's great" are not.
bool looks_like_question(std::string_view text);

struct MappingResult {
  QuestionEntry entry;
  double similarity = 0.0;
  bool appended = false;
};

// Maps interviewer questions that are not in the taxonomy onto it by
// BERT-score similarity. A question whose best similarity falls below
// the reference mean (the average best-match similarity among the
// canonical questions themselves) is appended as a new entry.
class UnseenQuestionMapper {
 public:
  explicit UnseenQuestionMapper(const TextEncoder& encoder,
                                const QuestionTaxonomy& reference = builtin_taxonomy());

  // Exact lookup first; otherwise similarity search over base entries.
  MappingResult map(std::string_view text, QuestionTaxonomy& taxonomy) const;

  // BERT-score F1 of `text` against every base entry (index order).
  std::vector<double> similarities(std::string_view text) const;

  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

 private:
  const TextEncoder& encoder_;
  std::vector<std::vector<Eigen::VectorXd>> canonical_tokens_;
  double threshold_ = 0.0;
};

// Role guess for a brand-new question: short and deictic -> follow-up.
QuestionRole infer_role(std::string_view question);

MappingResult map_unseen_question(std::string_view text, QuestionTaxonomy& taxonomy,
                                  const TextEncoder& encoder);

struct SegmentationResult {
  std::vector<QASegment> segments;
  // Interviewer utterances that matched nothing and were dropped.
  std::vector<std::string> unmatched_questions;
  // Participant turns preceding the first matched question.
  std::size_t leading_participant_turns = 0;
};

// Exact matching only.
SegmentationResult segment_transcript(std::span<const TranscriptTurn> turns,
                                      const QuestionTaxonomy& taxonomy);
// Exact matching, then unseen-question mapping for question-like
// utterances; may extend the taxonomy.
SegmentationResult segment_transcript(std::span<const TranscriptTurn> turns, QuestionTaxonomy& taxonomy,
                                      const UnseenQuestionMapper& mapper);

struct HierarchyResult {
  std::vector<HierarchicalPosition> positions;
  // Indexes of follow-up segments with no preceding question.
  std::vector<std::size_t> orphans;
};

HierarchyResult assign_hierarchy(std::span<const QASegment> segments);

struct SlotLayout {
  // Segment index occupying each slot (slot k at position k-1).
  std::array<std::optional<std::size_t>, kNumQuestions> slot_segment{};
  std::array<bool, kNumQuestions> present{};
  // Segments dropped because their slot was already taken.
  std::vector<std::size_t> collisions;
  // Segments matched to extension entries (index > 85), which have no slot.
  std::vector<std::size_t> unplaced;

  int popcount() const;
};

SlotLayout build_slot_layout(const StructuredInterview& interview);

struct StructuringReport {
  StructuredInterview interview;
  SlotLayout layout;
  std::vector<std::string> unmatched_questions;
  std::vector<std::size_t> orphans;
};

// segment -> hierarchy -> layout. Pass a mapper to enable unseen mapping.
StructuringReport structure_interview(std::string participant_id, std::span<const TranscriptTurn> turns,
                                      QuestionTaxonomy& taxonomy, const UnseenQuestionMapper* mapper);

nlohmann::json to_json(const StructuringReport& report);
nlohmann::json to_json(const StructuredInterview& interview);
StructuredInterview structured_interview_from_json(const nlohmann::json& j);

}  // namespace hique

#include "hique/structuring.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hique/errors.hpp"

namespace hique {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open transcript " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void validate_turns(std::span<const TranscriptTurn> turns) {
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& t = turns[i];
    if (t.start_time < 0.0 || t.end_time < t.start_time) {
      throw ValidationError("turn " + std::to_string(i + 1) + ": invalid time span [" +
                            std::to_string(t.start_time) + ", " + std::to_string(t.end_time) + "]");
    }
    if (i > 0 && t.start_time < turns[i - 1].start_time) {
      throw ValidationError("turn " + std::to_string(i + 1) + " is not sorted by start time");
    }
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

double parse_time(const std::string& s, int line_no) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("transcript line " + std::to_string(line_no) + ": invalid time '" + s + "'");
  }
}

const std::set<std::string, std::less<>>& question_openers() {
  static const std::set<std::string, std::less<>> kOpeners{
      "what", "what's", "whats", "why", "how", "how's", "when", "where", "who", "who's", "whom",
      "which", "do", "does", "did", "are", "is", "was", "were", "have", "has", "had", "can",
      "could", "would", "will", "should", "tell", "describe"};
  return kOpeners;
}

struct MatchOutcome {
  std::optional<QuestionEntry> entry;
  double similarity = 0.0;
};

template <typename Matcher>
SegmentationResult segment_with(std::span<const TranscriptTurn> turns, Matcher&& match) {
  if (turns.empty()) throw ValidationError("empty transcript");
  validate_turns(turns);
  if (std::none_of(turns.begin(), turns.end(),
                   [](const TranscriptTurn& t) { return t.speaker == Speaker::kInterviewer; })) {
    throw ValidationError("transcript has no interviewer turns");
  }

  SegmentationResult result;
  for (const auto& turn : turns) {
    if (turn.speaker == Speaker::kInterviewer) {
      MatchOutcome m = match(turn.text);
      if (!m.entry) {
        result.unmatched_questions.push_back(turn.text);
        continue;
      }
      QASegment seg;
      seg.question_text = turn.text;
      seg.question_span = {turn.start_time, turn.end_time};
      seg.answer_span = {turn.end_time, turn.end_time};
      seg.matched_entry = std::move(*m.entry);
      seg.similarity = m.similarity;
      result.segments.push_back(std::move(seg));
    } else if (result.segments.empty()) {
      ++result.leading_participant_turns;
    } else {
      auto& seg = result.segments.back();
      if (seg.answer_turns.empty()) seg.answer_span.start = turn.start_time;
      seg.answer_span.end = std::max(seg.answer_span.end, turn.end_time);
      seg.answer_turns.push_back(turn);
    }
  }

  if (result.segments.empty()) {
    std::string msg = "no interviewer utterance matched a taxonomy question; unmatched:";
    for (const auto& q : result.unmatched_questions) msg += "\n  " + q;
    throw ValidationError(msg);
  }
  return result;
}

nlohmann::json span_json(const TimeSpan& s) { return nlohmann::json::array({s.start, s.end}); }

TimeSpan span_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string QASegment::answer_text() const {
  std::string out;
  for (const auto& t : answer_turns) {
    if (t.text.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += t.text;
  }
  return out;
}

std::vector<TranscriptTurn> parse_transcript_jsonl(std::string_view content) {
  std::vector<TranscriptTurn> turns;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TranscriptTurn t;
      const auto speaker = j.at("speaker").get<std::string>();
      if (speaker == "interviewer") {
        t.speaker = Speaker::kInterviewer;
      } else if (speaker == "participant") {
        t.speaker = Speaker::kParticipant;
      } else {
        throw ParseError("unknown speaker '" + speaker + "'");
      }
      t.start_time = j.at("start").get<double>();
      t.end_time = j.at("end").get<double>();
      t.text = j.at("text").get<std::string>();
      turns.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("transcript line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("transcript line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_turns(turns);
  return turns;
}

std::vector<TranscriptTurn> read_transcript_jsonl(const std::filesystem::path& path) {
  return parse_transcript_jsonl(read_file(path));
}

std::vector<TranscriptTurn> parse_transcript_daic(std::string_view content) {
  std::vector<TranscriptTurn> turns;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  int col_start = 0, col_stop = 1, col_speaker = 2, col_value = 3;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_tabs(line);
    for (auto& f : fields) f = unquote(f);
    if (!header_seen) {
      header_seen = true;
      auto find = [&](std::string_view name) {
        auto it = std::find(fields.begin(), fields.end(), name);
        return it == fields.end() ? -1 : static_cast<int>(it - fields.begin());
      };
      if (find("start_time") >= 0) {
        col_start = find("start_time");
        col_stop = find("stop_time");
        col_speaker = find("speaker");
        col_value = find("value");
        if (col_stop < 0 || col_speaker < 0 || col_value < 0) {
          throw ParseError("transcript header must name start_time, stop_time, speaker, value");
        }
        continue;
      }
    }
    const int needed = std::max({col_start, col_stop, col_speaker, col_value}) + 1;
    if (static_cast<int>(fields.size()) < needed) {
      throw ParseError("transcript line " + std::to_string(line_no) + ": expected " +
                       std::to_string(needed) + " tab-separated fields");
    }
    TranscriptTurn t;
    t.start_time = parse_time(fields[col_start], line_no);
    t.end_time = parse_time(fields[col_stop], line_no);
    std::string speaker = fields[col_speaker];
    std::transform(speaker.begin(), speaker.end(), speaker.begin(), ::tolower);
    t.speaker = (speaker == "ellie" || speaker == "interviewer") ? Speaker::kInterviewer
                                                                 : Speaker::kParticipant;
    t.text = fields[col_value];
    turns.push_back(std::move(t));
  }
  validate_turns(turns);
  return turns;
}

std::vector<TranscriptTurn> read_transcript_daic(const std::filesystem::path& path) {
  return parse_transcript_daic(read_file(path));
}

std::vector<TranscriptTurn> read_transcript(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") return read_transcript_jsonl(path);
  return read_transcript_daic(path);
}

bool looks_like_question(std::string_view text) {
  const auto tokens = tokenize(normalize_question(text));
  if (tokens.empty()) return false;
  return question_openers().count(tokens.front()) > 0;
}

QuestionRole infer_role(std::string_view question) {
  static const std::set<std::string, std::less<>> kDeictic{"that", "it", "this", "them", "they",
                                                           "those", "there", "then"};
  const auto tokens = tokenize(normalize_question(question));
  if (tokens.size() <= 1) return QuestionRole::kFollowUp;
  if (tokens.size() > 5) return QuestionRole::kPrimary;
  const bool deictic = std::any_of(tokens.begin(), tokens.end(),
                                   [](const std::string& t) { return kDeictic.count(t) > 0; });
  return deictic ? QuestionRole::kFollowUp : QuestionRole::kPrimary;
}

UnseenQuestionMapper::UnseenQuestionMapper(const TextEncoder& encoder, const QuestionTaxonomy& reference)
    : encoder_(encoder) {
  for (const auto& e : reference.entries()) {
    canonical_tokens_.push_back(encoder_.token_embeddings(normalize_question(e.text)));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < canonical_tokens_.size(); ++i) {
    double best = 0.0;
    for (std::size_t j = 0; j < canonical_tokens_.size(); ++j) {
      if (i == j) continue;
      best = std::max(best, bert_score(canonical_tokens_[i], canonical_tokens_[j]).f1);
    }
    total += best;
  }
  threshold_ = canonical_tokens_.empty() ? 0.0 : total / static_cast<double>(canonical_tokens_.size());
}

std::vector<double> UnseenQuestionMapper::similarities(std::string_view text) const {
  const auto tokens = encoder_.token_embeddings(normalize_question(text));
  std::vector<double> out;
  out.reserve(canonical_tokens_.size());
  for (const auto& ref : canonical_tokens_) out.push_back(bert_score(tokens, ref).f1);
  return out;
}

MappingResult UnseenQuestionMapper::map(std::string_view text, QuestionTaxonomy& taxonomy) const {
  if (auto exact = taxonomy.lookup_by_text(text)) return {*exact, 1.0, false};

  const std::string normalized = normalize_question(text);
  const auto tokens = encoder_.token_embeddings(normalized);
  double best = -1.0;
  const QuestionEntry* best_entry = nullptr;
  const auto& base = taxonomy.entries();
  for (std::size_t i = 0; i < base.size() && i < canonical_tokens_.size(); ++i) {
    const double s = bert_score(tokens, canonical_tokens_[i]).f1;
    if (s > best) {
      best = s;
      best_entry = &base[i];
    }
  }
  for (const auto& e : taxonomy.extension_entries()) {
    const double s = bert_score(tokens, encoder_.token_embeddings(e.text)).f1;
    if (s > best) {
      best = s;
      best_entry = &e;
    }
  }
  best = std::max(best, 0.0);
  if (best_entry != nullptr && best >= threshold_) return {*best_entry, best, false};

  const auto& added = taxonomy.add_extension(normalized, infer_role(normalized));
  return {added, best, true};
}

MappingResult map_unseen_question(std::string_view text, QuestionTaxonomy& taxonomy,
                                  const TextEncoder& encoder) {
  return UnseenQuestionMapper(encoder, taxonomy).map(text, taxonomy);
}

SegmentationResult segment_transcript(std::span<const TranscriptTurn> turns,
                                      const QuestionTaxonomy& taxonomy) {
  return segment_with(turns, [&](const std::string& text) {
    MatchOutcome m;
    m.entry = taxonomy.lookup_by_text(text);
    m.similarity = m.entry ? 1.0 : 0.0;
    return m;
  });
}

SegmentationResult segment_transcript(std::span<const TranscriptTurn> turns, QuestionTaxonomy& taxonomy,
                                      const UnseenQuestionMapper& mapper) {
  return segment_with(turns, [&](const std::string& text) {
    MatchOutcome m;
    if (auto exact = taxonomy.lookup_by_text(text)) {
      m.entry = std::move(exact);
      m.similarity = 1.0;
    } else if (looks_like_question(text)) {
      auto mapped = mapper.map(text, taxonomy);
      m.entry = std::move(mapped.entry);
      m.similarity = mapped.similarity;
    }
    return m;
  });
}

HierarchyResult assign_hierarchy(std::span<const QASegment> segments) {
  HierarchyResult result;
  result.positions.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& entry = segments[i].matched_entry;
    HierarchicalPosition pos;
    pos.slot_index = entry.index;
    pos.role = entry.role;
    if (entry.role == QuestionRole::kPrimary) {
      pos.effective_topic_slot = entry.index;
      pos.chain_depth = 0;
    } else if (i == 0) {
      pos.effective_topic_slot = entry.index;
      pos.chain_depth = 1;
      result.orphans.push_back(i);
    } else {
      const auto& prev = result.positions.back();
      pos.effective_topic_slot = prev.effective_topic_slot;
      pos.chain_depth = prev.chain_depth + 1;
    }
    result.positions.push_back(pos);
  }
  return result;
}

int SlotLayout::popcount() const {
  return static_cast<int>(std::count(present.begin(), present.end(), true));
}

SlotLayout build_slot_layout(const StructuredInterview& interview) {
  SlotLayout layout;
  for (std::size_t i = 0; i < interview.segments.size(); ++i) {
    const int slot = interview.segments[i].position.slot_index;
    if (slot < 1 || slot > kNumQuestions) {
      layout.unplaced.push_back(i);
      continue;
    }
    if (layout.present[slot - 1]) {
      layout.collisions.push_back(i);
      continue;
    }
    layout.present[slot - 1] = true;
    layout.slot_segment[slot - 1] = i;
  }
  return layout;
}

StructuringReport structure_interview(std::string participant_id, std::span<const TranscriptTurn> turns,
                                      QuestionTaxonomy& taxonomy, const UnseenQuestionMapper* mapper) {
  auto seg = mapper ? segment_transcript(turns, taxonomy, *mapper)
                    : segment_transcript(turns, std::as_const(taxonomy));
  auto hier = assign_hierarchy(seg.segments);

  StructuringReport report;
  report.interview.participant_id = std::move(participant_id);
  for (std::size_t i = 0; i < seg.segments.size(); ++i) {
    report.interview.segments.push_back({std::move(seg.segments[i]), hier.positions[i]});
  }
  report.layout = build_slot_layout(report.interview);
  report.unmatched_questions = std::move(seg.unmatched_questions);
  report.orphans = std::move(hier.orphans);
  return report;
}

nlohmann::json to_json(const StructuredInterview& interview) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : interview.segments) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : s.segment.answer_turns) {
      turns.push_back({{"start", t.start_time}, {"end", t.end_time}, {"text", t.text}});
    }
    segs.push_back({
        {"question_text", s.segment.question_text},
        {"question_span", span_json(s.segment.question_span)},
        {"answer_span", span_json(s.segment.answer_span)},
        {"answer_turns", std::move(turns)},
        {"matched_index", s.segment.matched_entry.index},
        {"matched_text", s.segment.matched_entry.text},
        {"topic_code", s.segment.matched_entry.topic_code},
        {"role", to_string(s.segment.matched_entry.role)},
        {"similarity", s.segment.similarity},
        {"slot_index", s.position.slot_index},
        {"effective_topic_slot", s.position.effective_topic_slot},
        {"chain_depth", s.position.chain_depth},
    });
  }
  nlohmann::json j{{"participant_id", interview.participant_id}, {"segments", std::move(segs)}};
  j["label"] = interview.label ? nlohmann::json(to_string(*interview.label)) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const StructuringReport& report) {
  nlohmann::json j = to_json(report.interview);
  nlohmann::json mask = nlohmann::json::array();
  nlohmann::json occupied = nlohmann::json::array();
  for (int k = 0; k < kNumQuestions; ++k) {
    mask.push_back(report.layout.present[k] ? 1 : 0);
    if (report.layout.present[k]) occupied.push_back(k + 1);
  }
  j["layout"] = {{"mask", std::move(mask)},
                 {"occupied_slots", std::move(occupied)},
                 {"popcount", report.layout.popcount()},
                 {"collisions", report.layout.collisions},
                 {"unplaced", report.layout.unplaced}};
  j["unmatched_questions"] = report.unmatched_questions;
  j["orphans"] = report.orphans;
  return j;
}

StructuredInterview structured_interview_from_json(const nlohmann::json& j) {
  try {
    StructuredInterview out;
    out.participant_id = j.at("participant_id").get<std::string>();
    if (j.contains("label") && !j["label"].is_null()) out.label = parse_label(j["label"].get<std::string>());
    for (const auto& s : j.at("segments")) {
      StructuredSegment seg;
      seg.segment.question_text = s.at("question_text").get<std::string>();
      seg.segment.question_span = span_from_json(s.at("question_span"));
      seg.segment.answer_span = span_from_json(s.at("answer_span"));
      for (const auto& t : s.at("answer_turns")) {
        seg.segment.answer_turns.push_back(
            {Speaker::kParticipant, t.at("start").get<double>(), t.at("end").get<double>(),
             t.at("text").get<std::string>()});
      }
      seg.segment.matched_entry.index = s.at("matched_index").get<int>();
      seg.segment.matched_entry.text = s.at("matched_text").get<std::string>();
      seg.segment.matched_entry.topic_code = s.at("topic_code").get<std::string>();
      seg.segment.matched_entry.role = parse_role(s.at("role").get<std::string>());
      seg.segment.similarity = s.at("similarity").get<double>();
      seg.position.slot_index = s.at("slot_index").get<int>();
      seg.position.role = seg.segment.matched_entry.role;
      seg.position.effective_topic_slot = s.at("effective_topic_slot").get<int>();
      seg.position.chain_depth = s.at("chain_depth").get<int>();
      out.segments.push_back(std::move(seg));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("structured interview: ") + e.what());
  }
}

}  // namespace hique

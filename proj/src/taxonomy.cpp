#include "hique/taxonomy.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "hique/errors.hpp"

namespace hique {

namespace {

struct BuiltinRow {
  int index;
  const char* topic;
  const char* text;
};

// Question texts keep the source spelling, including typographic
// apostrophes and the l_a / p_t_s_d tokens used in the transcripts.
constexpr std::array<BuiltinRow, kNumQuestions> kBuiltinRows{{
    {1, "therapist_affect", "how has seeing a therapist affected you"},
    {2, "happy_last_time_tell", "tell me about the last time you felt really happy"},
    {3, "origin", "where are you from originally"},
    {4, "argued_last_time", "when was the last time you argued with someone and what was it about"},
    {5, "advice_to_self", "what advice would you give to yourself ten or twenty years ago"},
    {6, "temper_control", "how are you at controlling your temper"},
    {7, "la_likes", "what are some things you really like about l_a"},
    {8, "proud_of", "what are you most proud of in your life"},
    {9, "positive_influence", "who’s someone that’s been a positive influence in your life"},
    {10, "friend_describe", "how would your best friend describe you"},
    {11, "la_dislikes", "what are some things you don’t really like about l_a"},
    {12, "study_school", "what did you study at school"},
    {13, "regret", "is there anything you regret"},
    {14, "dream_job", "what’s your dream job"},
    {15, "travel_enjoy", "what do you enjoy about traveling"},
    {16, "sleep_poor_mood", "what are you like when you don’t sleep well"},
    {17, "memorable_experience", "what’s one of your most memorable experiences"},
    {18, "hardest_decision", "tell me about the hardest decision you’ve ever had to make"},
    {19, "fun_activities", "what are some things you like to do for fun"},
    {20, "handled_differently", "tell me about a situation that you wish you had handled differently"},
    {21, "erase_memory", "tell me about an event or something that you wish you could erase from your memory"},
    {22, "la_why_move", "why did you move to l_a"},
    {23, "self_change_wish", "what are some things you wish you could change about yourself"},
    {24, "best_qualities", "what would you say are some of your best qualities"},
    {25, "hometown_visits", "how often do you go back to your home town"},
    {26, "diagnosis_when", "how long ago were you diagnosed"},
    {27, "guilt", "what’s something you feel guilty about"},
    {28, "la_when_move", "when did you move to l_a"},
    {29, "la_adjustment", "how easy was it for you to get used to living in l_a"},
    {30, "happy_last_time", "when was the last time you felt really happy"},
    {31, "parent_hardest", "what’s the hardest thing about being a parent"},
    {32, "therapy_current", "do you still go to therapy now"},
    {33, "travel_often", "do you travel a lot"},
    {34, "military_service", "have you ever served in the military"},
    {35, "last_time_happened", "when was the last time that happened"},
    {36, "parent_best", "what’s the best thing about being a parent"},
    {37, "mad_triggers", "what are some things that make you really mad"},
    {38, "parent_easy", "do you find it easy to be a parent"},
    {39, "occupation_now", "what do you do now"},
    {40, "symptoms", "what were your symptoms"},
    {41, "ideal_weekend", "tell me how you spend your ideal weekend"},
    {42, "annoyed_response", "what do you do when you are annoyed"},
    {43, "kids", "tell me about your kids"},
    {44, "felt_badly", "tell me about a time when someone made you feel really badly about yourself"},
    {45, "parent_difference", "what are some ways that you’re different as a parent than your parents"},
    {46, "kids_today", "what do you think of today’s kids"},
    {47, "feel_down", "do you feel down"},
    {48, "living_situation", "how do you like your living situation"},
    {49, "doing_today", "how are you doing today"},
    {50, "roommates", "do you have roommates"},
    {51, "hard_on_self", "do you think that maybe you’re being a little hard on yourself"},
    {52, "disturbing_thoughts", "do you have disturbing thoughts"},
    {53, "residence", "where do you live"},
    {54, "after_military", "what did you do after the military"},
    {55, "combat", "did you ever see combat"},
    {56, "talk_later", "why don’t we talk about that later"},
    {57, "military_change", "how did serving in the military change you"},
    {58, "behavior_changes", "have you noticed any changes in your behavior or thoughts lately"},
    {59, "depression_diagnosed", "have you been diagnosed with depression"},
    {60, "sleep_ease", "how easy is it for you to get a good night sleep"},
    {61, "family_close", "how close are you to your family"},
    {62, "feeling_lately", "how have you been feeling lately"},
    {63, "introvert", "do you consider yourself an introvert"},
    {64, "ptsd_diagnosed", "have you ever been diagnosed with p_t_s_d"},
    {65, "therapy_useful", "do you feel like therapy is useful"},
    {66, "relax", "what do you do to relax"},
    {67, "inherit", "can you tell me about that"},
    {68, "inherit", "why"},
    {69, "inherit", "how hard is that"},
    {70, "inherit", "what made you decide to do that"},
    {71, "inherit", "are you still doing that"},
    {72, "inherit", "what got you to seek help"},
    {73, "inherit", "how do you cope with them"},
    {74, "inherit", "how does it compare to l_a"},
    {75, "inherit", "are you okay with this"},
    {76, "inherit", "are they triggered by something"},
    {77, "inherit", "are you happy you did that"},
    {78, "inherit", "could you have done anything to avoid it"},
    {79, "inherit", "has that gotten you in trouble"},
    {80, "inherit", "how do you know them"},
    {81, "inherit", "do you feel that way often"},
    {82, "inherit", "did you think you had a problem before you found out"},
    {83, "inherit", "why did you stop"},
    {84, "inherit", "what’s it like for you living with them"},
    {85, "inherit", "can you give me an example of that"},
}};

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

void validate(const std::vector<QuestionEntry>& base, const std::vector<QuestionEntry>& extensions) {
  if (base.size() != static_cast<std::size_t>(kNumQuestions)) {
    throw ValidationError("expected " + std::to_string(kNumQuestions) + " entries, found " +
                          std::to_string(base.size()));
  }
  std::array<bool, kNumQuestions + 1> seen{};
  int primary = 0;
  int follow_up = 0;
  std::set<std::string> primary_topics;
  for (const auto& e : base) {
    if (e.index < 1 || e.index > kNumQuestions) {
      throw ValidationError("entry index " + std::to_string(e.index) + " outside [1, 85]");
    }
    if (seen[e.index]) throw ValidationError("duplicate entry index " + std::to_string(e.index));
    seen[e.index] = true;
    if (e.topic_code.empty()) {
      throw ValidationError("entry " + std::to_string(e.index) + " has an empty topic code");
    }
    if (e.text.empty()) throw ValidationError("entry " + std::to_string(e.index) + " has empty text");
    if (e.role == QuestionRole::kPrimary) {
      ++primary;
      if (!primary_topics.insert(e.topic_code).second) {
        throw ValidationError("duplicate primary topic code '" + e.topic_code + "'");
      }
    } else {
      ++follow_up;
    }
  }
  if (primary != kNumPrimary || follow_up != kNumFollowUp) {
    throw ValidationError("expected 66 primary and 19 follow_up entries, found " +
                          std::to_string(primary) + " primary and " + std::to_string(follow_up) +
                          " follow_up");
  }
  int last = kNumQuestions;
  for (const auto& e : extensions) {
    if (e.index <= last) {
      throw ValidationError("extension index " + std::to_string(e.index) +
                            " is not strictly increasing above " + std::to_string(last));
    }
    last = e.index;
  }
}

}  // namespace

std::string_view to_string(QuestionRole role) {
  return role == QuestionRole::kPrimary ? "primary" : "follow_up";
}

QuestionRole parse_role(std::string_view text) {
  if (text == "primary") return QuestionRole::kPrimary;
  if (text == "follow_up" || text == "follow-up") return QuestionRole::kFollowUp;
  throw ParseError("unknown question role '" + std::string(text) + "'");
}

std::string normalize_question(std::string_view text) {
  std::string folded;
  folded.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    // U+2018 / U+2019 -> '
    if (i + 2 < text.size() && static_cast<unsigned char>(text[i]) == 0xE2 &&
        static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(text[i + 2]) == 0x98 ||
         static_cast<unsigned char>(text[i + 2]) == 0x99)) {
      folded.push_back('\'');
      i += 2;
      continue;
    }
    folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
  }

  std::string out = trim(folded);
  // Drop trailing annotations like "(origin)" and terminal punctuation,
  // repeatedly, since transcripts may carry both.
  for (bool changed = true; changed && !out.empty();) {
    changed = false;
    if (out.back() == ')') {
      auto open = out.rfind('(');
      if (open != std::string::npos && open > 0) {
        out = trim(std::string_view(out).substr(0, open));
        changed = true;
        continue;
      }
    }
    while (!out.empty() && std::string_view(".?!,;:").find(out.back()) != std::string_view::npos) {
      out.pop_back();
      changed = true;
    }
    out = trim(out);
  }

  std::string collapsed;
  collapsed.reserve(out.size());
  bool in_space = false;
  for (char c : out) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !collapsed.empty()) collapsed.push_back(' ');
    in_space = false;
    collapsed.push_back(c);
  }
  return collapsed;
}

QuestionTaxonomy::QuestionTaxonomy(std::vector<QuestionEntry> base, std::vector<QuestionEntry> extensions)
    : base_(std::move(base)), extensions_(std::move(extensions)) {
  validate(base_, extensions_);
  std::sort(base_.begin(), base_.end(),
            [](const QuestionEntry& a, const QuestionEntry& b) { return a.index < b.index; });
}

const QuestionEntry& QuestionTaxonomy::at(int index) const {
  if (index >= 1 && index <= static_cast<int>(base_.size())) return base_[index - 1];
  for (const auto& e : extensions_) {
    if (e.index == index) return e;
  }
  throw std::out_of_range("no taxonomy entry with index " + std::to_string(index));
}

std::optional<QuestionEntry> QuestionTaxonomy::lookup_by_text(std::string_view text) const {
  const std::string key = normalize_question(text);
  if (key.empty()) return std::nullopt;
  for (const auto& e : base_) {
    if (normalize_question(e.text) == key) return e;
  }
  for (const auto& e : extensions_) {
    if (normalize_question(e.text) == key) return e;
  }
  return std::nullopt;
}

const QuestionEntry& QuestionTaxonomy::add_extension(std::string text, QuestionRole role) {
  const int index = extensions_.empty() ? kNumQuestions + 1 : extensions_.back().index + 1;
  QuestionEntry e;
  e.index = index;
  e.text = normalize_question(text);
  e.role = role;
  e.topic_code = role == QuestionRole::kPrimary ? "ext_" + std::to_string(index)
                                                : std::string(kInheritTopic);
  extensions_.push_back(std::move(e));
  return extensions_.back();
}

const QuestionTaxonomy& builtin_taxonomy() {
  static const QuestionTaxonomy taxonomy = [] {
    std::vector<QuestionEntry> entries;
    entries.reserve(kBuiltinRows.size());
    for (const auto& row : kBuiltinRows) {
      entries.push_back({row.index, row.text, row.topic,
                         row.index <= kNumPrimary ? QuestionRole::kPrimary : QuestionRole::kFollowUp});
    }
    return QuestionTaxonomy(std::move(entries));
  }();
  return taxonomy;
}

QuestionTaxonomy parse_taxonomy(std::string_view content) {
  std::vector<QuestionEntry> base;
  std::vector<QuestionEntry> extensions;
  std::istringstream in{std::string(content)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      auto tab = line.find('\t', start);
      if (tab == std::string::npos) break;
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 4) {
      throw ParseError("taxonomy line " + std::to_string(line_no) +
                       ": expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    }

    QuestionEntry e;
    try {
      std::size_t used = 0;
      e.index = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing characters");
      e.role = parse_role(fields[1]);
    } catch (const std::exception& ex) {
      throw ParseError("taxonomy line " + std::to_string(line_no) + ": " + ex.what());
    }
    e.topic_code = fields[2];
    e.text = fields[3];
    (e.index > kNumQuestions ? extensions : base).push_back(std::move(e));
  }
  return QuestionTaxonomy(std::move(base), std::move(extensions));
}

QuestionTaxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open taxonomy file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_taxonomy(ss.str());
}

std::string serialize_taxonomy(const QuestionTaxonomy& taxonomy) {
  std::ostringstream out;
  auto write = [&out](const QuestionEntry& e) {
    out << e.index << '\t' << to_string(e.role) << '\t' << e.topic_code << '\t' << e.text << '\n';
  };
  for (const auto& e : taxonomy.entries()) write(e);
  for (const auto& e : taxonomy.extension_entries()) write(e);
  return out.str();
}

}  // namespace hique

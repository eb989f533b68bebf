#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hique {

inline constexpr int kNumQuestions = 85;
inline constexpr int kNumPrimary = 66;
inline constexpr int kNumFollowUp = 19;

enum class QuestionRole { kPrimary, kFollowUp };

std::string_view to_string(QuestionRole role);
QuestionRole parse_role(std::string_view text);

// Topic code carried by follow-up entries; the real topic is inherited
// from the preceding question when an interview is structured.
inline constexpr std::string_view kInheritTopic = "inherit";

struct QuestionEntry {
  int index = 0;
  std::string text;
  std::string topic_code;
  QuestionRole role = QuestionRole::kPrimary;

  bool operator==(const QuestionEntry&) const = default;
};

// Lowercases ASCII, folds typographic apostrophes, drops trailing
// parenthesised annotations such as "(origin)", strips terminal
// punctuation and collapses whitespace.
std::string normalize_question(std::string_view text);

class QuestionTaxonomy {
 public:
  QuestionTaxonomy() = default;
  // Validates counts and index coverage; throws ValidationError.
  QuestionTaxonomy(std::vector<QuestionEntry> base, std::vector<QuestionEntry> extensions = {});

  const std::vector<QuestionEntry>& entries() const { return base_; }
  const std::vector<QuestionEntry>& extension_entries() const { return extensions_; }
  std::size_t size() const { return base_.size() + extensions_.size(); }

  // Base index 1..85 or extension index > 85.
  const QuestionEntry& at(int index) const;

  std::optional<QuestionEntry> lookup_by_text(std::string_view text) const;

  // Appends a new question after the last index; not thread-safe.
  const QuestionEntry& add_extension(std::string text, QuestionRole role);

  bool operator==(const QuestionTaxonomy& other) const {
    return base_ == other.base_ && extensions_ == other.extensions_;
  }

 private:
  std::vector<QuestionEntry> base_;
  std::vector<QuestionEntry> extensions_;
};

// The 85 DAIC-WOZ interviewer questions (66 primary, 19 follow-up).
const QuestionTaxonomy& builtin_taxonomy();

// Tab-separated `index<TAB>role<TAB>topic_code<TAB>text`, one entry per
// line. Blank lines and lines starting with '#' are ignored.
QuestionTaxonomy parse_taxonomy(std::string_view content);
QuestionTaxonomy load_taxonomy(const std::filesystem::path& path);
std::string serialize_taxonomy(const QuestionTaxonomy& taxonomy);

}  // namespace hique

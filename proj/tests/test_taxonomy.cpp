#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "hique/errors.hpp"
#include "hique/io.hpp"
#include "hique/taxonomy.hpp"

using namespace hique;

TEST_CASE("built-in taxonomy counts and rows") {
  const auto& t = builtin_taxonomy();
  REQUIRE(t.entries().size() == 85);
  int primary = 0;
  for (const auto& e : t.entries()) primary += e.role == QuestionRole::kPrimary;
  CHECK(primary == 66);
  CHECK(t.at(3).text == "where are you from originally");
  CHECK(t.at(3).role == QuestionRole::kPrimary);
  CHECK(t.at(3).topic_code == "origin");
  CHECK(t.at(17).text == "what’s one of your most memorable experiences");
  CHECK(t.at(67).text == "can you tell me about that");
  CHECK(t.at(67).role == QuestionRole::kFollowUp);
  CHECK(t.at(74).text == "how does it compare to l_a");
  CHECK(t.at(85).text == "can you give me an example of that");
  CHECK(t.at(85).role == QuestionRole::kFollowUp);
}

TEST_CASE("primary topic codes are unique") {
  std::set<std::string> codes;
  for (const auto& e : builtin_taxonomy().entries()) {
    CHECK_FALSE(e.topic_code.empty());
    if (e.role == QuestionRole::kPrimary) CHECK(codes.insert(e.topic_code).second);
  }
}

TEST_CASE("normalization") {
  CHECK(normalize_question("  WHERE are   you from Originally? ") == "where are you from originally");
  CHECK(normalize_question("What’s up (origin)") == "what's up");
  CHECK(normalize_question(normalize_question("Why?!")) == "why");
}

TEST_CASE("lookup by text") {
  const auto& t = builtin_taxonomy();
  CHECK(t.lookup_by_text("where are you from originally")->index == 3);
  CHECK(t.lookup_by_text("WHERE ARE YOU FROM ORIGINALLY?")->index == 3);
  CHECK_FALSE(t.lookup_by_text("what is your favorite color").has_value());
  CHECK(t.lookup_by_text("what's one of your most memorable experiences")->index == 17);
  for (const auto& e : t.entries()) CHECK(t.lookup_by_text(normalize_question(e.text))->index == e.index);
}

TEST_CASE("serialize round trip") {
  const auto& t = builtin_taxonomy();
  CHECK(parse_taxonomy(serialize_taxonomy(t)) == t);
  testing_support::TempDir dir("taxonomy");
  write_file_atomic(dir.path / "t.tsv", serialize_taxonomy(t));
  CHECK(load_taxonomy(dir.path / "t.tsv") == t);
}

TEST_CASE("malformed and miscounted files") {
  const std::string full = serialize_taxonomy(builtin_taxonomy());
  // drop the last data line
  std::string short_file = full.substr(0, full.rfind('\n', full.size() - 2) + 1);
  CHECK_THROWS_WITH_AS(parse_taxonomy(short_file), doctest::Contains("expected 85 entries, found 84"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_taxonomy("1\tprimary\torigin\twhere\n2\tbogus"), doctest::Contains("line 2"), ParseError);

  auto t = builtin_taxonomy().entries();
  t[66].role = QuestionRole::kPrimary;
  t[66].topic_code = "tell_more";
  CHECK_THROWS_WITH_AS(QuestionTaxonomy{t}, doctest::Contains("found 67 primary and 18 follow_up"), ValidationError);
}

TEST_CASE("extensions") {
  QuestionTaxonomy t = builtin_taxonomy();
  const auto& a = t.add_extension("describe your morning routine in detail", QuestionRole::kPrimary);
  CHECK(a.index == 86);
  const auto& b = t.add_extension("why not", QuestionRole::kFollowUp);
  CHECK(b.index == 87);
  CHECK(b.topic_code == std::string(kInheritTopic));
  CHECK(t.entries().size() == 85);
  CHECK(t.lookup_by_text("describe your morning routine in detail")->index == 86);
  CHECK(parse_taxonomy(serialize_taxonomy(t)) == t);
  CHECK_THROWS(t.at(88));
}

#include "doctest.h"
#include "xtod/textnorm.hpp"

using namespace xtod::textnorm;

TEST_CASE("fullwidth forms fold to ascii") {
  CHECK(fold_compat("ＡＢＣ１２３") == "ABC123");
  CHECK(fold_compat("ｃineworld") == "cineworld");
  CHECK(fold_compat("a　b") == "a b");  // ideographic space
  CHECK(fold_compat("a b") == "a b");  // no-break space
}

TEST_CASE("case folding covers latin and cyrillic") {
  CHECK(fold_case("Straße") == "strasse");
  CHECK(fold_case("GROSS") == "gross");
  CHECK(fold_case("Äpfel Über") == "äpfel über");
  CHECK(fold_case("МОСКВА Ёлка") == "москва ёлка");
  CHECK(fold_case("Čeština Łódź") == "čeština łódź");
}

TEST_CASE("trim and collapse") {
  CHECK(trim("  hello  ") == "hello");
  CHECK(trim("　中文　") == "中文");
  CHECK(trim("") == "");
  CHECK(collapse_ws("a  b\t c\n") == "a b c");
  CHECK(collapse_ws("   ") == "");
}

TEST_CASE("normalized comparison form") {
  CHECK(normalize_for_compare(" Cineworld ") == "cineworld");
  CHECK(normalize_for_compare("ＣＩＮＥＷＯＲＬＤ") == "cineworld");
  // Hanzi passes through untouched.
  CHECK(normalize_for_compare("电影世界电影院") == "电影世界电影院");
}

TEST_CASE("substring containment after normalization") {
  CHECK(contains_normalized("目前暂无预订。您能帮我找到一个名为电影世界电影院的景点吗？",
                            "电影世界电影院"));
  CHECK(contains_normalized("Ich fahre von Cambridge aus.", "cambridge"));
  CHECK_FALSE(contains_normalized("Ich fahre von Cambridge aus.", "london"));
  CHECK(contains_normalized("anything", ""));  // empty needle matches
}

TEST_CASE("normalization is idempotent") {
  const char* samples[] = {
      "  Hello　Ｗorld  ", "Straße über MÜNCHEN", "电影世界电影院", "ПРИВЕТ, мир!",
      "mixed 中文 and Latin ＴＥＸＴ",
  };
  for (const auto* s : samples) {
    const std::string once = normalize_for_compare(s);
    CHECK(normalize_for_compare(once) == once);
    const std::string tok = normalize_for_tokens(s);
    CHECK(normalize_for_tokens(tok) == tok);
  }
}

TEST_CASE("utf8 decode round trip and error recovery") {
  const std::string good = "aß中\U0001F600";
  CHECK(encode_utf8(decode_utf8(good)) == good);
  // Lone continuation byte decodes to the replacement character.
  const auto cps = decode_utf8(std::string("\x80", 1));
  REQUIRE(cps.size() == 1);
  CHECK(cps[0] == 0xFFFD);
}

TEST_CASE("unspaced script detection") {
  CHECK(is_unspaced_script(U'中'));
  CHECK(is_unspaced_script(U'の'));
  CHECK_FALSE(is_unspaced_script(U'a'));
  CHECK_FALSE(is_unspaced_script(U'я'));
  CHECK_FALSE(is_unspaced_script(U'ب'));  // Arabic is spaced
}

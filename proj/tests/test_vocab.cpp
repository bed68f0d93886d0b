#include <catch2/catch_amalgamated.hpp>

#include "t2tlab/rng.hpp"
#include "t2tlab/vocab.hpp"

using namespace t2t;

TEST_CASE("vocab layout arithmetic") {
  Vocab v = build_vocab({"en"}, 100);
  CHECK(v.size() == 3 + 100 + 1 + 256);
  CHECK(v.size() == 360);
  CHECK(build_vocab({"en", "de"}, 100).size() == 361);
  CHECK(v.byte_offset == 104);
}

TEST_CASE("vocab id space is a disjoint union") {
  Vocab v = build_vocab({"en", "de", "fr"}, 5);
  int pad = 0, eos = 0, sep = 0, sent = 0, lang = 0, byte = 0;
  for (int id = 0; id < v.size(); ++id) {
    int classes = 0;
    if (id == Vocab::kPad) ++pad, ++classes;
    if (id == Vocab::kEos) ++eos, ++classes;
    if (id == Vocab::kSep) ++sep, ++classes;
    if (v.is_sentinel(id)) ++sent, ++classes;
    if (v.is_lang(id)) ++lang, ++classes;
    if (v.is_byte(id)) ++byte, ++classes;
    REQUIRE(classes == 1);
  }
  CHECK(pad == 1);
  CHECK(eos == 1);
  CHECK(sep == 1);
  CHECK(sent == 5);
  CHECK(lang == 3);
  CHECK(byte == 256);
}

TEST_CASE("duplicate language code is rejected naming the duplicate") {
  CHECK_THROWS_WITH(build_vocab({"en", "en"}, 100), Catch::Matchers::ContainsSubstring("\"en\""));
  CHECK_THROWS(build_vocab({}, 100));
  CHECK_THROWS(build_vocab({"en"}, 0));
}

TEST_CASE("encode maps bytes to byte_offset + b") {
  Vocab v = build_vocab({"en"}, 100);
  // byte_offset = 3 + 100 + 1 = 104; 'h' = 104, 'i' = 105
  CHECK(encode(v, "hi") == TokenSeq{208, 209});
  CHECK(encode(v, "").empty());
}

TEST_CASE("decode renders specials as bracketed markers") {
  Vocab v = build_vocab({"en", "de"}, 100);
  TokenSeq t{Vocab::kPad, Vocab::kEos, Vocab::kSep, v.sentinel(0), v.sentinel(7), v.lang_id("de")};
  CHECK(decode(v, t) == "<pad><eos><sep><S_0><S_7><2de>");
  CHECK_THROWS(decode(v, TokenSeq{v.size()}));
  CHECK_THROWS(decode(v, TokenSeq{-1}));
}

TEST_CASE("roundtrip on fixed strings") {
  Vocab v = build_vocab({"en"}, 100);
  for (const char* s : {"", "hällo", "hello world", "日本語テキスト", "a\tb\nc"}) {
    CHECK(decode(v, encode(v, s)) == s);
  }
}

TEST_CASE("roundtrip property over random utf-8 strings") {
  Vocab v = build_vocab({"xx", "yy"}, 16);
  Rng rng(2024);
  for (int iter = 0; iter < 1000; ++iter) {
    std::string s;
    int len = int(rng.below(40));
    for (int i = 0; i < len; ++i) {
      // mix of ascii and multi-byte code points
      switch (rng.below(3)) {
        case 0: s.push_back(char('a' + int(rng.below(26)))); break;
        case 1: s += "ü"; break;
        default: s += "語"; break;
      }
    }
    REQUIRE(decode(v, encode(v, s)) == s);
  }
}

TEST_CASE("vocab build is deterministic") {
  Vocab a = build_vocab({"aa", "bb", "cc"}, 50);
  Vocab b = build_vocab({"aa", "bb", "cc"}, 50);
  CHECK(a.byte_offset == b.byte_offset);
  CHECK(a.lang_ids == b.lang_ids);
  std::string text = "determinism probe";
  CHECK(encode(a, text) == encode(b, text));
}

TEST_CASE("unknown language code errors name the code") {
  Vocab v = build_vocab({"en"}, 10);
  CHECK(v.lang_id("en") == 3 + 10);
  CHECK_THROWS_WITH(v.lang_id("zz"), Catch::Matchers::ContainsSubstring("zz"));
}

#include <catch2/catch_amalgamated.hpp>

#include "t2tlab/corpus.hpp"
#include "testutil.hpp"

using namespace t2t;

TEST_CASE("monolingual loader parses lang<TAB>text records") {
  testutil::TempDir dir;
  auto path = dir.file("mono.tsv", "en\thello\n");
  auto docs = load_monolingual(path);
  REQUIRE(docs.size() == 1);
  CHECK(docs[0].lang == "en");
  CHECK(docs[0].text == "hello");
}

TEST_CASE("empty file yields empty stream; blank lines skipped") {
  testutil::TempDir dir;
  CHECK(load_monolingual(dir.file("empty.tsv", "")).empty());
  auto docs = load_monolingual(dir.file("blanks.tsv", "\nen\ta\n\n\nde\tb\n"));
  REQUIRE(docs.size() == 2);
  CHECK(docs[1].lang == "de");
}

TEST_CASE("malformed monolingual line reports its line number") {
  testutil::TempDir dir;
  auto p1 = dir.file("bad1.tsv", "en\n");
  CHECK_THROWS_WITH(load_monolingual(p1), Catch::Matchers::ContainsSubstring(":1:"));
  auto p3 = dir.file("bad3.tsv", "en\ta\nde\tb\nxx\ta\tb\n");
  CHECK_THROWS_WITH(load_monolingual(p3), Catch::Matchers::ContainsSubstring(":3:"));
  CHECK_THROWS(load_monolingual(dir.file("ws.tsv", "en\t   \n")));
  CHECK_THROWS(load_monolingual(dir.path("no_such_file.tsv")));
}

TEST_CASE("parallel loader parses 4-field records") {
  testutil::TempDir dir;
  auto pairs = load_parallel(dir.file("p.tsv", "en\tde\thello\thallo\n"));
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].src_lang == "en");
  CHECK(pairs[0].tgt_lang == "de");
  CHECK(pairs[0].src_text == "hello");
  CHECK(pairs[0].tgt_text == "hallo");

  auto three = load_parallel(dir.file("p3.tsv", "en\tde\ta\tb\nde\ten\tc\td\nen\tfr\te\tf\n"));
  CHECK(three.size() == 3);
}

TEST_CASE("same-language pair is rejected") {
  testutil::TempDir dir;
  auto p = dir.file("same.tsv", "en\ten\thi\thi\n");
  CHECK_THROWS_WITH(load_parallel(p), Catch::Matchers::ContainsSubstring("same-language"));
}

TEST_CASE("parallel loader line numbers and field counts") {
  testutil::TempDir dir;
  auto p = dir.file("bad.tsv", "en\tde\ta\tb\nen\tde\tc\n");
  CHECK_THROWS_WITH(load_parallel(p), Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("corpus_stats counts by language and pair") {
  testutil::TempDir dir;
  auto mono = dir.file("m.tsv", "en\ta\nen\tb\nde\tc\n");
  auto par = dir.file("p.tsv",
                      "en\tde\t1\t2\nen\tde\t3\t4\nen\tde\t5\t6\nen\tde\t7\t8\nen\tde\t9\t0\n"
                      "de\ten\t1\t2\nde\ten\t3\t4\nde\ten\t5\t6\n");
  CorpusStats s = corpus_stats({mono}, {par});
  CHECK(s.mono_counts == std::map<std::string, long long>{{"en", 2}, {"de", 1}});
  CHECK(s.pair_counts.at({"en", "de"}) == 5);
  CHECK(s.pair_counts.at({"de", "en"}) == 3);
  CHECK(s.mono_total() == 3);
  CHECK(s.pair_total() == 8);

  CorpusStats nopar = corpus_stats({mono}, {});
  CHECK(nopar.pair_counts.empty());
}

TEST_CASE("two passes over the same file yield identical streams") {
  testutil::TempDir dir;
  std::string content;
  for (int i = 0; i < 50; ++i) content += "l" + std::to_string(i % 3) + "\ttext " + std::to_string(i) + "\n";
  auto path = dir.file("m.tsv", content);
  auto a = load_monolingual(path);
  auto b = load_monolingual(path);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].lang == b[i].lang);
    CHECK(a[i].text == b[i].text);
  }
}

TEST_CASE("loaded records satisfy their invariants") {
  testutil::TempDir dir;
  auto docs = load_monolingual(dir.file("m.tsv", "en\t a \nde\tz\n"));
  for (const auto& d : docs) {
    CHECK(!d.lang.empty());
    CHECK(!std::string(trim(d.text)).empty());
  }
  auto pairs = load_parallel(dir.file("p.tsv", "en\tde\ta\tb\n"));
  for (const auto& p : pairs) CHECK(p.src_lang != p.tgt_lang);
}

TEST_CASE("lazy reader yields records in file order") {
  testutil::TempDir dir;
  MonoReader r(dir.file("m.tsv", "a\t1\nb\t2\nc\t3\n"));
  CHECK(r.next()->lang == "a");
  CHECK(r.next()->lang == "b");
  CHECK(r.next()->lang == "c");
  CHECK(!r.next().has_value());
}

#include <catch2/catch_amalgamated.hpp>

#include "t2tlab/metrics.hpp"
#include "t2tlab/rng.hpp"
#include "testutil.hpp"

using namespace t2t;

TEST_CASE("exact_match normalization: casefold and whitespace collapse") {
  CHECK(exact_match("IN:GET_WEATHER", "in:get_weather") == 100.0);
  CHECK(exact_match("a  b", "a b") == 100.0);
  CHECK(exact_match("a", "b") == 0.0);
  CHECK(exact_match("  x\t y ", "x y") == 100.0);
  // no punctuation stripping
  CHECK(exact_match("a.", "a") == 0.0);
  CHECK(exact_match("", "") == 100.0);
}

TEST_CASE("token_f1 hand-derived values") {
  // P = R = 2/3 -> F1 = 2/3
  CHECK(token_f1("a b c", "b c d") == Catch::Approx(66.6667).margin(0.01));
  CHECK(token_f1("same tokens here", "same tokens here") == 100.0);
  CHECK(token_f1("", "") == 100.0);
  CHECK(token_f1("a", "") == 0.0);
  CHECK(token_f1("", "a") == 0.0);
  CHECK(token_f1("x y", "z w") == 0.0);
  // multiset semantics: repeated tokens are not double counted
  // pred {a,a,b}, gold {a,b}: overlap=2, P=2/3, R=1 -> F1=0.8
  CHECK(token_f1("a a b", "a b") == Catch::Approx(80.0).margin(0.01));
}

TEST_CASE("token_f1 and rouge_l are symmetric (P and R swap)") {
  Rng rng(5);
  auto random_sentence = [&](int maxlen) {
    std::string s;
    int n = 1 + int(rng.below(uint64_t(maxlen)));
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += char('a' + int(rng.below(4)));
    }
    return s;
  };
  for (int iter = 0; iter < 300; ++iter) {
    std::string a = random_sentence(8), b = random_sentence(8);
    CHECK(token_f1(a, b) == Catch::Approx(token_f1(b, a)).margin(1e-9));
    CHECK(rouge_l(a, b) == Catch::Approx(rouge_l(b, a)).margin(1e-9));
    CHECK(token_f1(a, b) >= 0.0);
    CHECK(token_f1(a, b) <= 100.0);
    CHECK(rouge_l(a, b) >= 0.0);
    CHECK(rouge_l(a, b) <= 100.0);
  }
}

TEST_CASE("rouge_l hand-derived value") {
  // LCS("the cat sat", "the cat was sat") = 3; P = 1, R = 0.75 -> 85.71
  CHECK(rouge_l("the cat sat", "the cat was sat") == Catch::Approx(85.71).margin(0.01));
  CHECK(rouge_l("identical phrase", "identical phrase") == 100.0);
  CHECK(rouge_l("a b c", "x y z") == 0.0);
}

TEST_CASE("rouge_l DP equals exponential brute-force LCS") {
  Rng rng(31);
  for (int iter = 0; iter < 500; ++iter) {
    auto make_tokens = [&](int n) {
      std::vector<std::string> t;
      for (int i = 0; i < n; ++i) t.push_back(std::string(1, char('a' + int(rng.below(3)))));
      return t;
    };
    auto join = [](const std::vector<std::string>& t) {
      std::string s;
      for (size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + t[i];
      return s;
    };
    std::vector<std::string> a = make_tokens(1 + int(rng.below(8)));
    std::vector<std::string> b = make_tokens(1 + int(rng.below(8)));
    int brute = testutil::lcs_brute_force(a, b);
    REQUIRE(lcs_length(a, b) == brute);
    double p = double(brute) / double(a.size());
    double r = double(brute) / double(b.size());
    double expect = (p + r == 0) ? 0.0 : 100.0 * 2 * p * r / (p + r);
    REQUIRE(rouge_l(join(a), join(b)) == Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("entity tagged-linearization parser") {
  auto e = parse_entities("[LOC paris] [PER marie curie]");
  REQUIRE(e.has_value());
  CHECK(e->size() == 2);
  CHECK(e->count({"LOC", "paris"}) == 1);
  CHECK(e->count({"PER", "marie curie"}) == 1);
  CHECK(parse_entities("").has_value());  // empty set
  CHECK(!parse_entities("garbage output").has_value());
  CHECK(!parse_entities("[LOC paris").has_value());
  CHECK(!parse_entities("[ paris]").has_value());
}

TEST_CASE("entity_f1 hand-derived values") {
  EntitySet gold{{"LOC", "paris"}, {"PER", "marie"}};
  EntitySet pred{{"LOC", "paris"}};
  // P = 1, R = 0.5 -> 2*1*0.5/1.5 = 66.67
  CHECK(entity_f1(pred, gold) == Catch::Approx(66.6667).margin(0.01));
  CHECK(entity_f1(gold, gold) == 100.0);
  CHECK(entity_f1(EntitySet{}, gold) == 0.0);
  // unparseable prediction scores as empty, does not crash
  CHECK(entity_f1("complete garbage", "[LOC paris]") == 0.0);
  CHECK(entity_f1("[LOC paris]", "[LOC paris] [PER marie]") == Catch::Approx(66.6667).margin(0.01));
  // type must match, not just the span
  CHECK(entity_f1("[PER paris]", "[LOC paris]") == 0.0);
}

TEST_CASE("average_languages reproduces the QA per-language table average") {
  // TyDi QA F1, first row of the per-language results
  LangScores tydi{{"en", 75.0}, {"ar", 68.9}, {"bn", 54.5}, {"fi", 70.4}, {"id", 74.3},
                  {"ko", 57.4}, {"ru", 61.5}, {"sw", 69.7}, {"te", 65.5}};
  CHECK(average_languages(tydi) == Catch::Approx(66.4).margin(0.1));
  CHECK(average_languages({{"only", 42.5}}) == 42.5);
  CHECK(average_languages({{"a", 7.0}, {"b", 7.0}, {"c", 7.0}}) == Catch::Approx(7.0));
  CHECK_THROWS(average_languages({}));
}

TEST_CASE("task_average reproduces published aggregate rows") {
  // QA contributes mean(F1, EM); final column is the unweighted task mean
  TaskScores base{{"tydiqa", TaskScore::qa_pair(66.3, 49.8)},
                  {"mtop", TaskScore::single(43.7)},
                  {"ner", TaskScore::single(58.4)},
                  {"wikilingua", TaskScore::single(25.2)}};
  CHECK(task_average(base) == Catch::Approx(46.3).margin(0.05));

  TaskScores mlm{{"tydiqa", TaskScore::qa_pair(71.3, 55.6)},
                 {"mtop", TaskScore::single(48.6)},
                 {"ner", TaskScore::single(59.9)},
                 {"wikilingua", TaskScore::single(26.1)}};
  CHECK(task_average(mlm) == Catch::Approx(49.5).margin(0.05));

  CHECK(task_average({{"solo", TaskScore::single(33.3)}}) == 33.3);
}

TEST_CASE("median_of_runs") {
  CHECK(median_of_runs({1, 2, 3, 4, 5}) == 3.0);
  CHECK(median_of_runs({2, 1}) == 1.5);
  CHECK(median_of_runs({7}) == 7.0);
  CHECK(median_of_runs({5, 1, 4, 2, 3}) == 3.0);  // order independent
  CHECK_THROWS(median_of_runs({}));
}

TEST_CASE("scores stay in [0, 100] on adversarial inputs") {
  for (const char* a : {"", " ", "x", "x x x x x x x x", "ü ö", "[LOC x]"}) {
    for (const char* b : {"", "y", "x", "x y"}) {
      CHECK(exact_match(a, b) >= 0.0);
      CHECK(exact_match(a, b) <= 100.0);
      CHECK(token_f1(a, b) >= 0.0);
      CHECK(token_f1(a, b) <= 100.0);
      CHECK(rouge_l(a, b) >= 0.0);
      CHECK(rouge_l(a, b) <= 100.0);
    }
  }
}

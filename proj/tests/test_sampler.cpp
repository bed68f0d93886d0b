#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "t2tlab/sampler.hpp"
#include "testutil.hpp"

using namespace t2t;

namespace {

// Independent scalar oracle at extended precision.
long double probs_oracle_a(long double ca, long double cb, long double alpha) {
  long double qa = ca / (ca + cb), qb = cb / (ca + cb);
  long double wa = powl(qa, alpha), wb = powl(qb, alpha);
  return wa / (wa + wb);
}

std::vector<Document> mono_corpus(const std::map<std::string, long long>& counts) {
  std::vector<Document> docs;
  for (auto& [lang, n] : counts)
    for (long long i = 0; i < n; ++i) docs.push_back({lang, lang + " text " + std::to_string(i)});
  return docs;
}

std::vector<ParallelPair> pair_corpus(const std::map<PairKey, long long>& counts) {
  std::vector<ParallelPair> pairs;
  for (auto& [key, n] : counts)
    for (long long i = 0; i < n; ++i)
      pairs.push_back({key.first, key.second, "s" + std::to_string(i), "t" + std::to_string(i)});
  return pairs;
}

CorpusStats stats_of(const std::map<std::string, long long>& mono,
                     const std::map<PairKey, long long>& pairs) {
  CorpusStats s;
  s.mono_counts = mono;
  s.pair_counts = pairs;
  return s;
}

}  // namespace

TEST_CASE("language_probs: equal counts give equal probs at any alpha") {
  for (double alpha : {0.0, 0.3, 0.7, 1.0}) {
    auto d = language_probs<std::string>({{"a", 5}, {"b", 5}}, alpha);
    CHECK(d.probs[0] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(d.probs[1] == Catch::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("language_probs: alpha=1 is proportional") {
  auto d = language_probs<std::string>({{"a", 900}, {"b", 100}}, 1.0);
  CHECK(d.probs[0] == Catch::Approx(0.9).margin(1e-12));
  CHECK(d.probs[1] == Catch::Approx(0.1).margin(1e-12));
}

TEST_CASE("language_probs matches the high-precision oracle") {
  // frozen from a 30-digit evaluation of 900^0.3 / (900^0.3 + 100^0.3)
  const double frozen = 0.659073325596037494;
  auto d = language_probs<std::string>({{"a", 900}, {"b", 100}}, 0.3);
  CHECK(d.probs[0] == Catch::Approx(0.6591).margin(1e-3));
  CHECK(d.probs[1] == Catch::Approx(0.3409).margin(1e-3));
  CHECK(std::abs(d.probs[0] - frozen) < 1e-9);
  CHECK(std::abs(d.probs[0] - double(probs_oracle_a(900, 100, 0.3))) < 1e-9);

  // a multi-key configuration against the oracle computed key by key
  std::map<std::string, long long> counts{{"aa", 4000}, {"bb", 900}, {"cc", 250}, {"dd", 50}};
  auto multi = language_probs(counts, 0.3);
  long double total = 0, norm = 0;
  for (auto& [k, c] : counts) total += (long double)c;
  std::vector<long double> expect;
  for (auto& [k, c] : counts) {
    expect.push_back(powl((long double)c / total, 0.3L));
    norm += expect.back();
  }
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(multi.probs[i] - double(expect[i] / norm)) < 1e-9);
}

TEST_CASE("language_probs rejects nonpositive counts naming the key") {
  CHECK_THROWS_WITH((language_probs<std::string>({{"good", 5}, {"bad", 0}}, 0.3)),
                    Catch::Matchers::ContainsSubstring("bad"));
  CHECK_THROWS((language_probs<std::string>({}, 0.3)));
}

TEST_CASE("distribution sums to one within 1e-12") {
  Rng rng(99);
  for (int iter = 0; iter < 50; ++iter) {
    std::map<std::string, long long> counts;
    int k = 2 + int(rng.below(20));
    for (int i = 0; i < k; ++i) counts["k" + std::to_string(i)] = 1 + (long long)rng.below(100000);
    auto d = language_probs(counts, 0.1 + 0.9 * rng.uniform01());
    double sum = 0;
    for (double p : d.probs) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("alpha monotonicity: flattening toward rare languages") {
  std::map<std::string, long long> counts{{"big", 9000}, {"small", 100}};
  double prev_ratio = std::numeric_limits<double>::infinity();
  for (double alpha : {1.0, 0.7, 0.5, 0.3, 0.1}) {
    auto d = language_probs(counts, alpha);
    CHECK(d.probs[0] >= d.probs[1]);  // keys sorted: big < small lexicographically? no:
    // keys are lexicographic: "big" < "small", so probs[0] is "big"
    double ratio = d.probs[0] / d.probs[1];
    CHECK(ratio < prev_ratio);
    CHECK(ratio >= 1.0);
    prev_ratio = ratio;
  }
  auto flat = language_probs(counts, 0.0);
  CHECK(flat.probs[0] == Catch::Approx(flat.probs[1]).epsilon(1e-12));
}

TEST_CASE("sample_language: singleton and degenerate distributions") {
  Rng rng(7);
  Distribution<std::string> singleton{{"only"}, {1.0}};
  for (int i = 0; i < 100; ++i) CHECK(sample_language(singleton, rng) == "only");
  Distribution<std::string> degenerate{{"a", "b"}, {1.0, 0.0}};
  for (int i = 0; i < 1000; ++i) CHECK(sample_language(degenerate, rng) == "a");
}

TEST_CASE("sample_language long-run frequency within the 3-sigma binomial bound") {
  // 3 * sqrt(0.25 / 10000) = 0.015; spec bound 0.02
  Distribution<std::string> d{{"a", "b"}, {0.5, 0.5}};
  Rng rng(12345);
  int a = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) a += sample_language(d, rng) == "a" ? 1 : 0;
  CHECK(std::abs(double(a) / n - 0.5) < 0.02);
}

TEST_CASE("mixed_stream: ratio 0 yields only monolingual, ratio 1 only parallel") {
  auto mono = mono_corpus({{"en", 10}, {"de", 5}});
  auto pairs = pair_corpus({{{"en", "de"}, 8}});
  auto stats = stats_of({{"en", 10}, {"de", 5}}, {{{"en", "de"}, 8}});

  MixtureSpec m0{0.3, 0.0, 42};
  MixedStream s0(mono, pairs, stats, m0);
  for (int i = 0; i < 500; ++i) CHECK(!is_parallel(s0.next()));

  MixtureSpec m1{0.3, 1.0, 42};
  MixedStream s1(mono, pairs, stats, m1);
  for (int i = 0; i < 500; ++i) CHECK(is_parallel(s1.next()));
}

TEST_CASE("mixed_stream rejects an empty side selected with nonzero probability") {
  auto mono = mono_corpus({{"en", 3}});
  auto stats_mono_only = stats_of({{"en", 3}}, {});
  MixtureSpec spec{0.3, 0.1, 1};
  CHECK_THROWS(MixedStream(mono, {}, stats_mono_only, spec));
  MixtureSpec par_only{0.3, 1.0, 1};
  CHECK_THROWS(MixedStream({}, {}, stats_mono_only, par_only));
}

TEST_CASE("mixed_stream parallel fraction within 3-sigma binomial bound") {
  auto mono = mono_corpus({{"en", 40}, {"de", 20}, {"fr", 10}});
  auto pairs = pair_corpus({{{"en", "de"}, 12}, {{"de", "en"}, 6}});
  auto stats = stats_of({{"en", 40}, {"de", 20}, {"fr", 10}},
                        {{{"en", "de"}, 12}, {{"de", "en"}, 6}});
  // 3 * sqrt(0.1*0.9/10000) = 0.009
  MixtureSpec spec{0.3, 0.1, 777};
  MixedStream s(mono, pairs, stats, spec);
  const int n = 10000;
  int par = 0;
  for (int i = 0; i < n; ++i) par += is_parallel(s.next()) ? 1 : 0;
  double frac = double(par) / n;
  CHECK(frac > 0.091);
  CHECK(frac < 0.109);
}

TEST_CASE("mixed_stream is deterministic: identical 10k prefix") {
  auto mono = mono_corpus({{"en", 25}, {"de", 13}});
  auto pairs = pair_corpus({{{"en", "de"}, 9}, {{"de", "en"}, 4}});
  auto stats = stats_of({{"en", 25}, {"de", 13}}, {{{"en", "de"}, 9}, {{"de", "en"}, 4}});
  MixtureSpec spec{0.3, 0.25, 31337};
  MixedStream a(mono, pairs, stats, spec);
  MixedStream b(mono, pairs, stats, spec);
  for (int i = 0; i < 10000; ++i) {
    RawTask ta = a.next(), tb = b.next();
    REQUIRE(is_parallel(ta) == is_parallel(tb));
    if (is_parallel(ta)) {
      auto& pa = std::get<ParallelPair>(ta);
      auto& pb = std::get<ParallelPair>(tb);
      REQUIRE(pa.src_text == pb.src_text);
      REQUIRE(pa.tgt_text == pb.tgt_text);
    } else {
      REQUIRE(std::get<Document>(ta).text == std::get<Document>(tb).text);
    }
  }
}

TEST_CASE("mixed_stream cycles each key through full epochs") {
  // single language: 10k draws over 10 docs must visit each doc exactly 1000x
  auto mono = mono_corpus({{"en", 10}});
  auto stats = stats_of({{"en", 10}}, {});
  MixtureSpec spec{0.3, 0.0, 5};
  MixedStream s(mono, {}, stats, spec);
  std::map<std::string, int> seen;
  for (int i = 0; i < 10000; ++i) seen[std::get<Document>(s.next()).text] += 1;
  REQUIRE(seen.size() == 10);
  for (auto& [text, n] : seen) CHECK(n == 1000);
}

TEST_CASE("chi-squared goodness of fit of key frequencies at the 0.001 level") {
  std::map<std::string, long long> mono_counts{{"aa", 5000}, {"bb", 1200}, {"cc", 300}, {"dd", 80}};
  std::map<PairKey, long long> pair_counts{
      {{"aa", "bb"}, 900}, {{"bb", "aa"}, 500}, {{"aa", "cc"}, 150}, {{"cc", "aa"}, 60}};
  auto mono = mono_corpus(mono_counts);
  auto pairs = pair_corpus(pair_counts);
  auto stats = stats_of(mono_counts, pair_counts);
  MixtureSpec spec{0.3, 0.1, 2718};
  MixedStream s(mono, pairs, stats, spec);

  const int n = 100000;
  std::map<std::string, long long> mono_obs;
  std::map<PairKey, long long> pair_obs;
  long long par_total = 0;
  for (int i = 0; i < n; ++i) {
    RawTask t = s.next();
    if (is_parallel(t)) {
      auto& p = std::get<ParallelPair>(t);
      ++pair_obs[{p.src_lang, p.tgt_lang}];
      ++par_total;
    } else {
      ++mono_obs[std::get<Document>(t).lang];
    }
  }

  // per-language chi-squared against the temperature distribution,
  // conditioned on the realized side totals
  const auto& md = s.mono_dist();
  double chi_mono = 0;
  long long mono_total = n - par_total;
  for (size_t i = 0; i < md.keys.size(); ++i) {
    double expect = md.probs[i] * double(mono_total);
    double diff = double(mono_obs[md.keys[i]]) - expect;
    chi_mono += diff * diff / expect;
  }
  double p_mono = testutil::chi2_sf(chi_mono, int(md.keys.size()) - 1);
  CHECK(p_mono > 0.001);

  const auto& pd = s.pair_dist();
  double chi_pair = 0;
  for (size_t i = 0; i < pd.keys.size(); ++i) {
    double expect = pd.probs[i] * double(par_total);
    double diff = double(pair_obs[pd.keys[i]]) - expect;
    chi_pair += diff * diff / expect;
  }
  double p_pair = testutil::chi2_sf(chi_pair, int(pd.keys.size()) - 1);
  CHECK(p_pair > 0.001);
}

TEST_CASE("target-language pair sampling mode draws every pair") {
  std::map<std::string, long long> mono_counts{{"aa", 10}};
  std::map<PairKey, long long> pair_counts{{{"aa", "bb"}, 50}, {{"cc", "bb"}, 50}, {{"aa", "cc"}, 100}};
  MixtureSpec spec{0.3, 1.0, 11};
  spec.pair_dist = PairDist::TargetLangs;
  MixedStream s(mono_corpus(mono_counts), pair_corpus(pair_counts), stats_of(mono_counts, pair_counts),
                spec);
  std::map<PairKey, int> obs;
  for (int i = 0; i < 4000; ++i) {
    auto p = std::get<ParallelPair>(s.next());
    ++obs[{p.src_lang, p.tgt_lang}];
  }
  CHECK(obs.size() == 3);
  // bb as target pools two pairs: within-target split is proportional (1:1)
  double ratio = double(obs[{"aa", "bb"}]) / double(obs[{"cc", "bb"}]);
  CHECK(ratio > 0.8);
  CHECK(ratio < 1.25);
}

TEST_CASE("chi-squared helper sanity against frozen references") {
  // frozen from a 30-digit evaluation of the regularized incomplete gamma
  CHECK(testutil::chi2_sf(10.0, 5) == Catch::Approx(0.0752352461465122).epsilon(1e-9));
  CHECK(testutil::chi2_sf(3.0, 2) == Catch::Approx(0.2231301601484298).epsilon(1e-9));
  CHECK(testutil::chi2_sf(50.0, 10) == Catch::Approx(2.66908342490450e-7).epsilon(1e-6));
}

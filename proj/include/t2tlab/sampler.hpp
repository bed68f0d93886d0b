#pragma once

#include <cmath>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "t2tlab/corpus.hpp"
#include "t2tlab/rng.hpp"
#include "t2tlab/util.hpp"

namespace t2t {

// How the parallel-side sampling distribution is formed: over language
// pairs, or over target languages (pair picked proportionally within the
// chosen target). Neither reading is privileged; pairs is the default.
enum class PairDist { Pairs, TargetLangs };

struct MixtureSpec {
  double alpha = 0.3;           // temperature exponent: p(k) ~ q(k)^alpha
  double parallel_ratio = 0.10; // fraction of draws taken from parallel data
  uint64_t seed = 0;
  PairDist pair_dist = PairDist::Pairs;

  void validate() const {
    check(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0,1], got ", alpha);
    check(parallel_ratio >= 0.0 && parallel_ratio <= 1.0,
          "parallel_ratio must be in [0,1], got ", parallel_ratio);
  }
};

template <class Key>
struct Distribution {
  std::vector<Key> keys;   // stable (lexicographic) order
  std::vector<double> probs;
};

namespace detail {
inline std::string key_str(const std::string& k) { return k; }
inline std::string key_str(const PairKey& k) { return pair_label(k); }
}  // namespace detail

// p(k) proportional to q(k)^alpha with q(k) = count(k) / sum(counts).
template <class Key>
Distribution<Key> language_probs(const std::map<Key, long long>& counts, double alpha) {
  check(!counts.empty(), "language_probs: empty counts");
  Distribution<Key> d;
  double total = 0;
  for (const auto& [k, c] : counts) total += double(c);
  double norm = 0;
  for (const auto& [k, c] : counts) {
    check(c > 0, "language_probs: nonpositive count for key \"", detail::key_str(k), "\"");
    d.keys.push_back(k);
    double w = std::pow(double(c) / total, alpha);
    d.probs.push_back(w);
    norm += w;
  }
  for (double& p : d.probs) p /= norm;
  return d;
}

template <class Key>
const Key& sample_language(const Distribution<Key>& d, Rng& rng) {
  double u = rng.uniform01();
  double cum = 0;
  for (size_t i = 0; i < d.keys.size(); ++i) {
    cum += d.probs[i];
    if (u < cum) return d.keys[i];
  }
  return d.keys.back();
}

using RawTask = std::variant<Document, ParallelPair>;

inline bool is_parallel(const RawTask& t) { return std::holds_alternative<ParallelPair>(t); }

// Infinite two-stage sampling stream: flip parallel-vs-monolingual with
// probability parallel_ratio, pick a key from the temperature distribution,
// then yield that key's next example. Keys cycle through their examples in
// a seeded per-epoch shuffle. Single consumer; fully deterministic.
class MixedStream {
public:
  MixedStream(std::vector<Document> mono, std::vector<ParallelPair> pairs,
              const CorpusStats& stats, const MixtureSpec& spec)
      : spec_(spec), rng_(Rng(spec.seed).derive(0x6d69786564)), mono_(std::move(mono)), pairs_(std::move(pairs)) {
    spec_.validate();
    if (spec_.parallel_ratio < 1.0) {
      check(!mono_.empty(), "mixed stream: monolingual corpus is empty but parallel_ratio < 1");
      check(!stats.mono_counts.empty(), "mixed stream: empty monolingual stats");
      mono_dist_ = language_probs(stats.mono_counts, spec_.alpha);
    }
    if (spec_.parallel_ratio > 0.0) {
      check(!pairs_.empty(), "mixed stream: parallel corpus is empty but parallel_ratio > 0");
      check(!stats.pair_counts.empty(), "mixed stream: empty parallel stats");
      pair_dist_ = language_probs(stats.pair_counts, spec_.alpha);
      if (spec_.pair_dist == PairDist::TargetLangs) {
        std::map<std::string, long long> tgt_counts;
        for (const auto& [k, c] : stats.pair_counts) tgt_counts[k.second] += c;
        tgt_dist_ = language_probs(tgt_counts, spec_.alpha);
        for (const auto& [k, c] : stats.pair_counts) pairs_by_tgt_[k.second][k] = c;
      }
    }
    for (size_t i = 0; i < mono_.size(); ++i) mono_decks_[mono_[i].lang].members.push_back(int(i));
    for (size_t i = 0; i < pairs_.size(); ++i)
      pair_decks_[{pairs_[i].src_lang, pairs_[i].tgt_lang}].members.push_back(int(i));
    for (const auto& [k, c] : stats.mono_counts)
      check(mono_decks_.count(k), "mixed stream: stats key \"", k, "\" missing from monolingual corpus");
    for (const auto& [k, c] : stats.pair_counts)
      check(pair_decks_.count(k), "mixed stream: stats key \"", detail::key_str(k), "\" missing from parallel corpus");
  }

  RawTask next() {
    bool parallel = rng_.uniform01() < spec_.parallel_ratio;
    if (parallel) {
      ++parallel_drawn_;
      PairKey key = spec_.pair_dist == PairDist::Pairs ? sample_language(pair_dist_, rng_)
                                                       : sample_pair_via_target();
      return pairs_[draw(pair_decks_.at(key), fnv1a64(pair_label(key)))];
    }
    ++mono_drawn_;
    const std::string& key = sample_language(mono_dist_, rng_);
    return mono_[draw(mono_decks_.at(key), fnv1a64(key))];
  }

  void fast_forward(long long n) {
    for (long long i = 0; i < n; ++i) next();
  }

  const Distribution<std::string>& mono_dist() const { return mono_dist_; }
  const Distribution<PairKey>& pair_dist() const { return pair_dist_; }
  long long mono_drawn() const { return mono_drawn_; }
  long long parallel_drawn() const { return parallel_drawn_; }

private:
  struct Deck {
    std::vector<int> members;
    std::vector<int> order;
    size_t pos = 0;
    long long epoch = 0;
  };

  int draw(Deck& d, uint64_t key_hash) {
    if (d.pos >= d.order.size()) {
      d.order = d.members;
      Rng r = Rng(spec_.seed).derive(key_hash, uint64_t(d.epoch));
      r.shuffle(d.order);
      d.pos = 0;
      ++d.epoch;
    }
    return d.order[d.pos++];
  }

  PairKey sample_pair_via_target() {
    const std::string& tgt = sample_language(tgt_dist_, rng_);
    const auto& within = pairs_by_tgt_.at(tgt);
    double total = 0;
    for (const auto& [k, c] : within) total += double(c);
    double u = rng_.uniform01() * total, cum = 0;
    for (const auto& [k, c] : within) {
      cum += double(c);
      if (u < cum) return k;
    }
    return within.rbegin()->first;
  }

  MixtureSpec spec_;
  Rng rng_;
  std::vector<Document> mono_;
  std::vector<ParallelPair> pairs_;
  Distribution<std::string> mono_dist_;
  Distribution<PairKey> pair_dist_;
  Distribution<std::string> tgt_dist_;
  std::map<std::string, std::map<PairKey, long long>> pairs_by_tgt_;
  std::map<std::string, Deck> mono_decks_;
  std::map<PairKey, Deck> pair_decks_;
  long long mono_drawn_ = 0, parallel_drawn_ = 0;
};

}  // namespace t2t

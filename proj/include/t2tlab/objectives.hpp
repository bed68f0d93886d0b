#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "t2tlab/corpus.hpp"
#include "t2tlab/rng.hpp"
#include "t2tlab/vocab.hpp"

namespace t2t {

struct NoiseSpec {
  double density = 0.15;        // fraction of maskable tokens to corrupt
  double mean_span_length = 3.0;

  void validate() const {
    check(density > 0.0 && density < 1.0, "noise density must be in (0,1), got ", density);
    check(mean_span_length >= 1.0, "mean span length must be >= 1, got ", mean_span_length);
  }
};

enum class Objective { MLM, TLM, NMT, DenoisedNMT, DenoisedNMT_LM };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::MLM: return "mlm";
    case Objective::TLM: return "tlm";
    case Objective::NMT: return "nmt";
    case Objective::DenoisedNMT: return "dnmt";
    case Objective::DenoisedNMT_LM: return "dnmt-lm";
  }
  return "?";
}

inline std::optional<Objective> objective_from_name(std::string_view s) {
  for (Objective o : {Objective::MLM, Objective::TLM, Objective::NMT,
                      Objective::DenoisedNMT, Objective::DenoisedNMT_LM})
    if (s == objective_name(o)) return o;
  return std::nullopt;
}

struct Example {
  Objective objective;
  TokenSeq input;
  TokenSeq target;
  std::string src_lang;
  std::string tgt_lang;  // empty = none
};

struct SpanCorruption {
  TokenSeq corrupted;  // spans replaced by S_0, S_1, ...
  TokenSeq target;     // S_0 span_0 S_1 span_1 ... S_s EOS
};

namespace detail {

// Masked-token budget: clamp(round(rho * n_maskable), 1, n_maskable - 1).
inline int masked_count(int n_maskable, double rho) {
  long long m = std::llround(rho * n_maskable);
  return int(std::clamp(m, 1ll, (long long)n_maskable - 1));
}

// Sorted sample of k distinct values from [0, n) (Floyd's algorithm).
inline std::vector<long long> sample_distinct(long long n, int k, Rng& rng) {
  std::set<long long> picked;
  for (long long j = n - k; j < n; ++j) {
    long long t = (long long)rng.below(uint64_t(j + 1));
    if (!picked.insert(t).second) picked.insert(j);
  }
  return {picked.begin(), picked.end()};
}

// m split into s positive parts via s-1 distinct cuts in [1, m-1].
inline std::vector<int> random_composition(int m, int s, Rng& rng) {
  std::vector<long long> cuts = sample_distinct(m - 1, s - 1, rng);
  std::vector<int> parts;
  int prev = 0;
  for (long long c : cuts) {
    parts.push_back(int(c) + 1 - prev);
    prev = int(c) + 1;
  }
  parts.push_back(m - prev);
  return parts;
}

struct Span {
  int start, len;
};

// One uniform draw over placements of spans with the given lengths into a
// sequence of n positions, keeping >= 1 free position between consecutive
// spans. Returns nullopt when the lengths cannot fit.
inline std::optional<std::vector<Span>> place_spans(int n, const std::vector<int>& lens, Rng& rng) {
  int s = int(lens.size());
  int m = 0;
  for (int l : lens) m += l;
  long long free_slots = (long long)n - m - (s - 1);
  if (free_slots < 0) return std::nullopt;
  // stars-and-bars: s sorted distinct picks from [0, free+s) give the gap
  // composition (g_0 .. g_s, inner gaps get +1 reserved)
  std::vector<long long> picks = sample_distinct(free_slots + s, s, rng);
  std::vector<Span> spans(size_t(s), Span{0, 0});
  int cursor = 0;
  long long prev = -1;
  for (int i = 0; i < s; ++i) {
    long long gap = picks[size_t(i)] - prev - 1;  // free slots before span i
    cursor += int(gap) + (i > 0 ? 1 : 0);         // +1 = reserved inner gap
    spans[size_t(i)] = {cursor, lens[size_t(i)]};
    cursor += lens[size_t(i)];
    prev = picks[size_t(i)];
  }
  return spans;
}

inline bool spans_avoid(const std::vector<Span>& spans, const std::vector<char>& maskable) {
  for (const Span& sp : spans)
    for (int p = sp.start; p < sp.start + sp.len; ++p)
      if (!maskable[size_t(p)]) return false;
  return true;
}

// Fallback when random placement cannot satisfy the exemption constraints:
// fill maximal maskable runs left to right, one span per run. Exempt
// positions separate runs, so the unmasked-gap invariant holds.
inline std::vector<Span> greedy_segment_fill(const std::vector<char>& maskable, int m) {
  std::vector<Span> spans;
  int n = int(maskable.size());
  int i = 0;
  while (i < n && m > 0) {
    if (!maskable[size_t(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && maskable[size_t(j)]) ++j;
    int take = std::min(m, j - i);
    spans.push_back({i, take});
    m -= take;
    i = j;
  }
  check(m == 0, "span placement fallback failed to allocate the mask budget");
  return spans;
}

inline std::optional<std::vector<Span>> try_spans(int n, const std::vector<char>& maskable,
                                                  bool has_exempt, int m, int s, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto comp = random_composition(m, s, rng);
    auto spans = place_spans(n, comp, rng);
    if (!spans) return std::nullopt;  // lengths cannot fit at this s at all
    if (!has_exempt || spans_avoid(*spans, maskable)) return spans;
  }
  return std::nullopt;
}

}  // namespace detail

// Span corruption over the maskable positions of `tokens`. The number of
// masked tokens is exactly clamp(round(rho*n_maskable), 1, n_maskable-1);
// the span count starts at max(1, round(m/mu)) and is relaxed when the
// requested spans cannot be placed with a free token between them.
inline SpanCorruption span_corrupt_masked(const TokenSeq& tokens, const std::vector<char>& maskable,
                                          const Vocab& v, const NoiseSpec& noise, Rng& rng) {
  noise.validate();
  int n = int(tokens.size());
  check(int(maskable.size()) == n, "maskable mask size mismatch");
  int n_maskable = 0;
  for (char c : maskable) n_maskable += c ? 1 : 0;
  check(n_maskable >= 2, "span corruption needs >= 2 maskable tokens, got ", n_maskable);
  bool has_exempt = n_maskable != n;

  int m = detail::masked_count(n_maskable, noise.density);
  int s0 = std::max(1, int(std::llround(double(m) / noise.mean_span_length)));
  s0 = std::min(s0, m);
  check(v.sentinel_count >= 2, "need >= 2 sentinel tokens for span corruption");
  s0 = std::min(s0, v.sentinel_count - 1);

  std::optional<std::vector<detail::Span>> spans;
  for (int s = s0; s >= 1 && !spans; --s) spans = detail::try_spans(n, maskable, has_exempt, m, s, rng);
  if (!spans && has_exempt) {
    for (int s = s0 + 1; s <= std::min(m, v.sentinel_count - 1) && !spans; ++s)
      spans = detail::try_spans(n, maskable, has_exempt, m, s, rng);
    if (!spans) spans = detail::greedy_segment_fill(maskable, m);
  }
  check(bool(spans), "span placement failed");

  SpanCorruption out;
  out.corrupted.reserve(size_t(n));
  size_t next = 0;
  for (int i = 0; i < n;) {
    if (next < spans->size() && i == (*spans)[next].start) {
      out.corrupted.push_back(v.sentinel(int(next)));
      out.target.push_back(v.sentinel(int(next)));
      for (int p = i; p < i + (*spans)[next].len; ++p) out.target.push_back(tokens[size_t(p)]);
      i += (*spans)[next].len;
      ++next;
    } else {
      out.corrupted.push_back(tokens[size_t(i)]);
      ++i;
    }
  }
  out.target.push_back(v.sentinel(int(spans->size())));
  out.target.push_back(Vocab::kEos);
  return out;
}

inline SpanCorruption span_corrupt(const TokenSeq& tokens, const Vocab& v, const NoiseSpec& noise,
                                   Rng& rng) {
  for (int id : tokens) check(v.is_byte(id), "span_corrupt input must contain only byte tokens");
  return span_corrupt_masked(tokens, std::vector<char>(tokens.size(), 1), v, noise, rng);
}

// Splices each span from `span_target` back in place of its sentinel.
inline TokenSeq reconstruct(const Vocab& v, const TokenSeq& corrupted, const TokenSeq& span_target) {
  // index span contents by sentinel
  std::map<int, std::pair<size_t, size_t>> spans;  // sentinel idx -> [begin, end) in span_target
  for (size_t i = 0; i < span_target.size(); ++i) {
    if (!v.is_sentinel(span_target[i])) continue;
    size_t j = i + 1;
    while (j < span_target.size() && !v.is_sentinel(span_target[j]) && span_target[j] != Vocab::kEos)
      ++j;
    spans[v.sentinel_index(span_target[i])] = {i + 1, j};
  }
  TokenSeq out;
  int last_sentinel = -1;
  for (int id : corrupted) {
    if (!v.is_sentinel(id)) {
      out.push_back(id);
      continue;
    }
    int idx = v.sentinel_index(id);
    check(idx > last_sentinel, "sentinels out of order in corrupted sequence");
    last_sentinel = idx;
    auto it = spans.find(idx);
    if (it == spans.end()) fail("sentinel S_", idx, " missing from span target");
    for (size_t p = it->second.first; p < it->second.second; ++p) out.push_back(span_target[p]);
  }
  return out;
}

inline std::optional<Example> build_mlm(const Document& doc, const Vocab& v, const NoiseSpec& noise,
                                        Rng& rng) {
  TokenSeq toks = encode(v, doc.text);
  if (toks.size() < 2) return std::nullopt;
  SpanCorruption c = span_corrupt(toks, v, noise, rng);
  return Example{Objective::MLM, std::move(c.corrupted), std::move(c.target), doc.lang, ""};
}

// Span corruption over source ++ SEP ++ target; SEP is exempt from masking
// and no language code is prefixed.
inline std::optional<Example> build_tlm(const ParallelPair& pair, const Vocab& v,
                                        const NoiseSpec& noise, Rng& rng) {
  TokenSeq src = encode(v, pair.src_text), tgt = encode(v, pair.tgt_text);
  if (src.empty() || tgt.empty()) return std::nullopt;
  if (src.size() + tgt.size() < 2) return std::nullopt;
  TokenSeq concat;
  concat.reserve(src.size() + tgt.size() + 1);
  concat.insert(concat.end(), src.begin(), src.end());
  concat.push_back(Vocab::kSep);
  concat.insert(concat.end(), tgt.begin(), tgt.end());
  std::vector<char> maskable(concat.size(), 1);
  maskable[src.size()] = 0;
  SpanCorruption c = span_corrupt_masked(concat, maskable, v, noise, rng);
  return Example{Objective::TLM, std::move(c.corrupted), std::move(c.target), pair.src_lang,
                 pair.tgt_lang};
}

inline Example build_nmt(const ParallelPair& pair, const Vocab& v) {
  TokenSeq input{v.lang_id(pair.tgt_lang)};
  TokenSeq src = encode(v, pair.src_text);
  input.insert(input.end(), src.begin(), src.end());
  TokenSeq target = encode(v, pair.tgt_text);
  target.push_back(Vocab::kEos);
  return Example{Objective::NMT, std::move(input), std::move(target), pair.src_lang, pair.tgt_lang};
}

// NMT with a span-corrupted source; the masked-out content is not predicted.
inline std::optional<Example> build_denoised_nmt(const ParallelPair& pair, const Vocab& v,
                                                 const NoiseSpec& noise, Rng& rng) {
  TokenSeq src = encode(v, pair.src_text);
  if (src.size() < 2) return std::nullopt;
  TokenSeq tgt = encode(v, pair.tgt_text);
  if (tgt.empty()) return std::nullopt;
  SpanCorruption c = span_corrupt(src, v, noise, rng);
  TokenSeq input{v.lang_id(pair.tgt_lang)};
  input.insert(input.end(), c.corrupted.begin(), c.corrupted.end());
  TokenSeq target = std::move(tgt);
  target.push_back(Vocab::kEos);
  return Example{Objective::DenoisedNMT, std::move(input), std::move(target), pair.src_lang,
                 pair.tgt_lang};
}

// Corrupted source in, translation ++ SEP ++ full original source out.
inline std::optional<Example> build_denoised_nmt_lm(const ParallelPair& pair, const Vocab& v,
                                                    const NoiseSpec& noise, Rng& rng) {
  TokenSeq src = encode(v, pair.src_text);
  if (src.size() < 2) return std::nullopt;
  TokenSeq tgt = encode(v, pair.tgt_text);
  if (tgt.empty()) return std::nullopt;
  SpanCorruption c = span_corrupt(src, v, noise, rng);
  TokenSeq input{v.lang_id(pair.tgt_lang)};
  input.insert(input.end(), c.corrupted.begin(), c.corrupted.end());
  TokenSeq target = std::move(tgt);
  target.push_back(Vocab::kSep);
  target.insert(target.end(), src.begin(), src.end());
  target.push_back(Vocab::kEos);
  return Example{Objective::DenoisedNMT_LM, std::move(input), std::move(target), pair.src_lang,
                 pair.tgt_lang};
}

inline std::string render_example(const Vocab& v, const Example& ex) {
  std::string out;
  out += "objective: ";
  out += objective_name(ex.objective);
  out += "\nlangs:     ";
  out += ex.src_lang;
  out += ex.tgt_lang.empty() ? " -> (none)" : (" -> " + ex.tgt_lang);
  out += "\ninput:     " + decode(v, ex.input);
  out += "\ntarget:    " + decode(v, ex.target);
  out += "\n";
  return out;
}

}  // namespace t2t

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "t2tlab/util.hpp"

namespace t2t {

// Scores follow the percentage convention: values in [0, 100].

// trim + collapse internal whitespace runs + ASCII casefold. No punctuation
// stripping: language-specific stripping rules would corrupt non-English
// text.
inline std::string normalize_answer(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // leading spaces dropped
  for (char ch : s) {
    unsigned char c = (unsigned char)ch;
    if (c <= ' ') {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : ch);
  }
  return out;
}

inline double exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 100.0 : 0.0;
}

// Whitespace-token multiset overlap F1. Both empty -> 100, one empty -> 0.
inline double token_f1(std::string_view pred, std::string_view gold) {
  auto p = whitespace_tokens(pred);
  auto g = whitespace_tokens(gold);
  if (p.empty() && g.empty()) return 100.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> gold_counts;
  for (auto& t : g) ++gold_counts[t];
  int overlap = 0;
  for (auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = double(overlap) / double(p.size());
  double recall = double(overlap) / double(g.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sentence-level ROUGE-L F measure over whitespace tokens.
inline double rouge_l(std::string_view pred, std::string_view gold) {
  auto p = whitespace_tokens(pred);
  auto g = whitespace_tokens(gold);
  if (p.empty() && g.empty()) return 100.0;
  if (p.empty() || g.empty()) return 0.0;
  int lcs = lcs_length(p, g);
  double precision = double(lcs) / double(p.size());
  double recall = double(lcs) / double(g.size());
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

using EntitySet = std::set<std::pair<std::string, std::string>>;  // (type, span)

// Parses the `[TYPE span]` linearization. Returns nullopt when the text is
// not a well-formed sequence of bracketed groups; callers score that as an
// empty prediction rather than crashing.
inline std::optional<EntitySet> parse_entities(std::string_view s) {
  EntitySet out;
  size_t i = 0;
  auto skip_ws = [&] { while (i < s.size() && (unsigned char)s[i] <= ' ') ++i; };
  skip_ws();
  while (i < s.size()) {
    if (s[i] != '[') return std::nullopt;
    ++i;
    size_t type_b = i;
    while (i < s.size() && (unsigned char)s[i] > ' ' && s[i] != ']') ++i;
    if (i == type_b || i == s.size() || s[i] == ']') return std::nullopt;
    std::string type(s.substr(type_b, i - type_b));
    ++i;  // single separating space
    size_t span_b = i;
    while (i < s.size() && s[i] != ']' && s[i] != '[') ++i;
    if (i == s.size() || s[i] != ']') return std::nullopt;
    std::string span(trim(s.substr(span_b, i - span_b)));
    if (span.empty()) return std::nullopt;
    out.insert({std::move(type), std::move(span)});
    ++i;
    skip_ws();
  }
  return out;
}

inline double entity_f1(const EntitySet& pred, const EntitySet& gold) {
  if (pred.empty() && gold.empty()) return 100.0;
  if (pred.empty() || gold.empty()) return 0.0;
  size_t tp = 0;
  for (const auto& e : pred) tp += gold.count(e);
  if (tp == 0) return 0.0;
  double precision = double(tp) / double(pred.size());
  double recall = double(tp) / double(gold.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

inline double entity_f1(std::string_view pred_text, std::string_view gold_text) {
  auto gold = parse_entities(gold_text);
  check(bool(gold), "gold entity linearization is malformed: \"", std::string(gold_text), "\"");
  auto pred = parse_entities(pred_text);
  return entity_f1(pred ? *pred : EntitySet{}, *gold);
}

using LangScores = std::map<std::string, double>;

inline double average_languages(const LangScores& ls) {
  check(!ls.empty(), "average_languages: empty score map");
  double sum = 0;
  for (auto& [lang, s] : ls) sum += s;
  return sum / double(ls.size());
}

// One task entry: either a single score or an (F1, EM) pair for QA, which
// contributes mean(F1, EM) to the cross-task average.
struct TaskScore {
  double value = 0;
  bool qa = false;
  double em = 0;

  static TaskScore single(double v) { return {v, false, 0}; }
  static TaskScore qa_pair(double f1, double em) { return {f1, true, em}; }
  double contribution() const { return qa ? 0.5 * (value + em) : value; }
};

using TaskScores = std::map<std::string, TaskScore>;

inline double task_average(const TaskScores& ts) {
  check(!ts.empty(), "task_average: empty score map");
  double sum = 0;
  for (auto& [task, s] : ts) sum += s.contribution();
  return sum / double(ts.size());
}

inline double median_of_runs(std::vector<double> scores) {
  check(!scores.empty(), "median_of_runs: empty score list");
  std::sort(scores.begin(), scores.end());
  size_t n = scores.size();
  return n % 2 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
}

}  // namespace t2t

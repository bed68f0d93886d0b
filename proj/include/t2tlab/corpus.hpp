#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "t2tlab/util.hpp"

namespace t2t {

struct Document {
  std::string lang;
  std::string text;
};

struct ParallelPair {
  std::string src_lang, tgt_lang;
  std::string src_text, tgt_text;
};

using PairKey = std::pair<std::string, std::string>;  // (src_lang, tgt_lang)

inline std::string pair_label(const PairKey& k) { return k.first + ">" + k.second; }

struct CorpusStats {
  std::map<std::string, long long> mono_counts;
  std::map<PairKey, long long> pair_counts;

  long long mono_total() const {
    long long t = 0;
    for (auto& [k, c] : mono_counts) t += c;
    return t;
  }
  long long pair_total() const {
    long long t = 0;
    for (auto& [k, c] : pair_counts) t += c;
    return t;
  }
};

namespace detail {

// Shared line pump for the TSV readers: skips blank lines, tracks line
// numbers for error messages.
class TsvReader {
public:
  explicit TsvReader(std::string path) : path_(std::move(path)), in_(path_) {
    check(in_.good(), "cannot open ", path_);
  }

  std::optional<std::vector<std::string>> next_fields(size_t expect) {
    std::string line;
    while (std::getline(in_, line)) {
      ++lineno_;
      if (line.empty()) continue;
      auto fields = split(line, '\t');
      if (fields.size() != expect)
        fail(path_, ":", lineno_, ": expected ", expect, " tab-separated fields, got ", fields.size());
      return fields;
    }
    return std::nullopt;
  }

  const std::string& path() const { return path_; }
  long long lineno() const { return lineno_; }

private:
  std::string path_;
  std::ifstream in_;
  long long lineno_ = 0;
};

}  // namespace detail

// Lazy, single-consumer stream over a `lang<TAB>text` file.
class MonoReader {
public:
  explicit MonoReader(const std::string& path) : tsv_(path) {}

  std::optional<Document> next() {
    auto f = tsv_.next_fields(2);
    if (!f) return std::nullopt;
    Document d{std::move((*f)[0]), std::move((*f)[1])};
    check(!d.lang.empty(), tsv_.path(), ":", tsv_.lineno(), ": empty language code");
    check(!trim(d.text).empty(), tsv_.path(), ":", tsv_.lineno(), ": empty text");
    return d;
  }

private:
  detail::TsvReader tsv_;
};

// Lazy stream over a `src_lang<TAB>tgt_lang<TAB>src_text<TAB>tgt_text` file.
class ParallelReader {
public:
  explicit ParallelReader(const std::string& path) : tsv_(path) {}

  std::optional<ParallelPair> next() {
    auto f = tsv_.next_fields(4);
    if (!f) return std::nullopt;
    ParallelPair p{std::move((*f)[0]), std::move((*f)[1]), std::move((*f)[2]), std::move((*f)[3])};
    check(!p.src_lang.empty() && !p.tgt_lang.empty(), tsv_.path(), ":", tsv_.lineno(), ": empty language code");
    check(p.src_lang != p.tgt_lang, tsv_.path(), ":", tsv_.lineno(), ": same-language pair \"", p.src_lang, "\"");
    check(!trim(p.src_text).empty() && !trim(p.tgt_text).empty(), tsv_.path(), ":", tsv_.lineno(), ": empty text");
    return p;
  }

private:
  detail::TsvReader tsv_;
};

inline std::vector<Document> load_monolingual(const std::string& path) {
  MonoReader r(path);
  std::vector<Document> out;
  while (auto d = r.next()) out.push_back(std::move(*d));
  return out;
}

inline std::vector<ParallelPair> load_parallel(const std::string& path) {
  ParallelReader r(path);
  std::vector<ParallelPair> out;
  while (auto p = r.next()) out.push_back(std::move(*p));
  return out;
}

inline CorpusStats corpus_stats(const std::vector<std::string>& mono_paths,
                                const std::vector<std::string>& parallel_paths) {
  CorpusStats s;
  for (const auto& path : mono_paths) {
    MonoReader r(path);
    while (auto d = r.next()) ++s.mono_counts[d->lang];
  }
  for (const auto& path : parallel_paths) {
    ParallelReader r(path);
    while (auto p = r.next()) ++s.pair_counts[{p->src_lang, p->tgt_lang}];
  }
  return s;
}

}  // namespace t2t

#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2tlab/metrics.hpp"
#include "t2tlab/trainer.hpp"

namespace t2t {

// ---------------------------------------------------------------------------
// Synthetic cipher languages: each derived language is a fixed byte
// substitution over 'a'..'z' (perm_seed 0 = identity) plus an optional
// word-order reversal, giving exact translation ground truth.
// ---------------------------------------------------------------------------

struct DerivedLang {
  std::string code;
  uint64_t perm_seed = 0;
  bool reverse_words = false;
};

struct CipherSpec {
  std::string base_lang = "aa";
  std::vector<DerivedLang> derived;
  std::vector<std::string> words;
  int min_words = 4, max_words = 6;

  std::vector<std::string> all_langs() const {
    std::vector<std::string> out{base_lang};
    for (const auto& d : derived) out.push_back(d.code);
    return out;
  }

  const DerivedLang& find(const std::string& code) const {
    for (const auto& d : derived)
      if (d.code == code) return d;
    fail("unknown derived language \"", code, "\"");
  }

  void validate() const {
    check(!words.empty(), "cipher spec has no words");
    check(min_words >= 1 && max_words >= min_words, "bad sentence length range");
    std::set<std::string> codes{base_lang};
    for (const auto& d : derived)
      check(codes.insert(d.code).second, "duplicate language code \"", d.code, "\"");
  }

  nlohmann::json to_json() const {
    nlohmann::json derived_json = nlohmann::json::array();
    for (const auto& d : derived)
      derived_json.push_back({{"code", d.code},
                              {"perm_seed", d.perm_seed},
                              {"order", d.reverse_words ? "reverse" : "identity"}});
    return {{"base_lang", base_lang},
            {"min_words", min_words},
            {"max_words", max_words},
            {"words", words},
            {"derived", derived_json}};
  }

  static CipherSpec from_json(const nlohmann::json& j) {
    CipherSpec s;
    s.base_lang = j.at("base_lang").get<std::string>();
    s.min_words = j.at("min_words").get<int>();
    s.max_words = j.at("max_words").get<int>();
    s.words = j.at("words").get<std::vector<std::string>>();
    for (const auto& d : j.at("derived")) {
      s.derived.push_back({d.at("code").get<std::string>(), d.at("perm_seed").get<uint64_t>(),
                           d.at("order").get<std::string>() == "reverse"});
    }
    s.validate();
    return s;
  }
};

// Bijection on letter bytes; everything else maps to itself.
inline std::array<unsigned char, 256> cipher_table(uint64_t perm_seed) {
  std::array<unsigned char, 256> table{};
  for (int i = 0; i < 256; ++i) table[size_t(i)] = (unsigned char)i;
  if (perm_seed == 0) return table;  // identity
  std::array<unsigned char, 26> letters{};
  for (int i = 0; i < 26; ++i) letters[size_t(i)] = (unsigned char)('a' + i);
  Rng rng(perm_seed);
  rng.shuffle(letters);
  for (int i = 0; i < 26; ++i) table[size_t('a' + i)] = letters[size_t(i)];
  return table;
}

inline std::array<unsigned char, 256> invert_table(const std::array<unsigned char, 256>& t) {
  std::array<unsigned char, 256> inv{};
  for (int i = 0; i < 256; ++i) inv[t[size_t(i)]] = (unsigned char)i;
  return inv;
}

inline std::string map_bytes(std::string_view text, const std::array<unsigned char, 256>& table) {
  std::string out(text);
  for (char& c : out) c = char(table[(unsigned char)c]);
  return out;
}

inline std::string reverse_word_order(std::string_view text) {
  auto words = whitespace_tokens(text);
  std::string out;
  for (size_t i = words.size(); i > 0; --i) {
    if (!out.empty()) out += ' ';
    out += words[i - 1];
  }
  return out;
}

inline std::string derive_text(const CipherSpec& spec, std::string_view base_text,
                               const DerivedLang& lang) {
  std::string t = map_bytes(base_text, cipher_table(lang.perm_seed));
  return lang.reverse_words ? reverse_word_order(t) : t;
}

inline std::string to_base_text(const CipherSpec& spec, std::string_view text,
                                const std::string& lang_code) {
  if (lang_code == spec.base_lang) return std::string(text);
  const DerivedLang& d = spec.find(lang_code);
  std::string t = d.reverse_words ? reverse_word_order(text) : std::string(text);
  return map_bytes(t, invert_table(cipher_table(d.perm_seed)));
}

// Exact rule-based translator between any two corpus languages; the oracle
// that proves the synthetic task is solvable and pins EM at 100.
inline std::string translate_rule_based(const CipherSpec& spec, std::string_view text,
                                        const std::string& src, const std::string& tgt) {
  std::string base = to_base_text(spec, text, src);
  if (tgt == spec.base_lang) return base;
  return derive_text(spec, base, spec.find(tgt));
}

// Pronounceable pseudo-words (CV syllables over a narrow alphabet),
// distinct, deterministic. Short words and a small letter inventory keep
// the per-direction substitution burden learnable by the desk model.
inline CipherSpec default_cipher_spec(int derived_count, int word_count, uint64_t seed) {
  check(derived_count >= 1 && derived_count <= 20, "derived_count out of range");
  CipherSpec spec;
  spec.base_lang = "aa";
  spec.min_words = 2;
  spec.max_words = 4;
  Rng rng(Rng(seed).derive(0x776f726473));
  const char* consonants = "bdkmps";
  const char* vowels = "aeiou";
  std::set<std::string> seen;
  while ((int)spec.words.size() < word_count) {
    int syllables = 1 + int(rng.below(2));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += consonants[rng.below(6)];
      w += vowels[rng.below(5)];
    }
    if (seen.insert(w).second) spec.words.push_back(w);
  }
  for (int i = 0; i < derived_count; ++i) {
    std::string code(2, char('b' + i));
    // one derived language also reverses word order
    bool reverse = i == 2;
    spec.derived.push_back({code, Rng(seed).derive(0x7065726d, uint64_t(i)).next_u64() | 1, reverse});
  }
  return spec;
}


struct CorpusSizes {
  long long mono_per_lang = 3000;  // count for the base language
  double mono_decay = 0.65;        // each further language gets this factor fewer
  long long train_pairs_per_direction = 2200;
  long long val_pairs_per_direction = 12;
  long long test_pairs_per_direction = 30;
};

struct DataPaths {
  std::string dir, mono, train_pairs, val_pairs, test_pairs, spec_json;

  static DataPaths in(const std::string& dir) {
    namespace fs = std::filesystem;
    DataPaths p;
    p.dir = dir;
    p.mono = (fs::path(dir) / "mono.tsv").string();
    p.train_pairs = (fs::path(dir) / "train_pairs.tsv").string();
    p.val_pairs = (fs::path(dir) / "val_pairs.tsv").string();
    p.test_pairs = (fs::path(dir) / "test_pairs.tsv").string();
    p.spec_json = (fs::path(dir) / "cipher_spec.json").string();
    return p;
  }
};

// Generates the full desk corpus: monolingual TSV across all languages,
// directed parallel files base<->derived, and held-out val/test pair sets
// whose base sentences are disjoint from every training sentence.
inline DataPaths gen_cipher_corpus(const CipherSpec& spec, const CorpusSizes& sizes,
                                   const std::string& out_dir, Rng& rng) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  DataPaths paths = DataPaths::in(out_dir);

  const long long num_langs = 1 + (long long)spec.derived.size();
  const long long directions = 2 * (long long)spec.derived.size();
  std::vector<long long> mono_counts;
  long long mono_total = 0;
  for (long long i = 0; i < num_langs; ++i) {
    long long n = std::max<long long>(1, (long long)std::llround(double(sizes.mono_per_lang) *
                                                                 std::pow(sizes.mono_decay, double(i))));
    mono_counts.push_back(n);
    mono_total += n;
  }
  const long long pair_sents =
      (sizes.train_pairs_per_direction + sizes.val_pairs_per_direction +
       sizes.test_pairs_per_direction) *
      directions;
  const long long need = mono_total + pair_sents;

  // unique-sentence capacity of the word vocabulary
  double capacity = 0;
  for (int len = spec.min_words; len <= spec.max_words; ++len)
    capacity += std::pow(double(spec.words.size()), double(len));
  check(double(need) <= capacity * 0.5, "requested corpus of ", need,
        " sentences exceeds half the unique-sentence capacity (", (long long)capacity, ")");

  std::set<std::string> used;
  auto fresh_sentence = [&]() {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      int len = int(rng.uniform_int(spec.min_words, spec.max_words));
      std::string s;
      for (int w = 0; w < len; ++w) {
        if (w) s += ' ';
        s += spec.words[rng.below(spec.words.size())];
      }
      if (used.insert(s).second) return s;
    }
    fail("could not mint a fresh sentence; corpus too dense");
  };

  std::ofstream mono(paths.mono, std::ios::binary);
  check(mono.good(), "cannot write ", paths.mono);
  for (long long li = 0; li < num_langs; ++li) {
    const std::string lang = li == 0 ? spec.base_lang : spec.derived[size_t(li - 1)].code;
    for (long long i = 0; i < mono_counts[size_t(li)]; ++i) {
      std::string base = fresh_sentence();
      std::string text = li == 0 ? base : derive_text(spec, base, spec.derived[size_t(li - 1)]);
      mono << lang << '\t' << text << '\n';
    }
  }
  mono.close();

  auto write_pairs = [&](const std::string& path, long long per_direction) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot write ", path);
    for (const auto& d : spec.derived) {
      for (long long i = 0; i < per_direction; ++i) {
        std::string base = fresh_sentence();
        std::string der = derive_text(spec, base, d);
        out << spec.base_lang << '\t' << d.code << '\t' << base << '\t' << der << '\n';
      }
      for (long long i = 0; i < per_direction; ++i) {
        std::string base = fresh_sentence();
        std::string der = derive_text(spec, base, d);
        out << d.code << '\t' << spec.base_lang << '\t' << der << '\t' << base << '\n';
      }
    }
  };
  write_pairs(paths.train_pairs, sizes.train_pairs_per_direction);
  write_pairs(paths.val_pairs, sizes.val_pairs_per_direction);
  write_pairs(paths.test_pairs, sizes.test_pairs_per_direction);

  std::ofstream sj(paths.spec_json);
  check(sj.good(), "cannot write ", paths.spec_json);
  sj << spec.to_json().dump(2) << "\n";
  return paths;
}

// The default desk corpus: 6 languages (base + 5 ciphers) in an
// English-centric-style star of 10 directed pairs. Shared by the CLI's
// build-data defaults and the acceptance experiment.
inline DataPaths build_default_corpus(const std::string& out_dir, uint64_t seed) {
  CipherSpec spec = default_cipher_spec(5, 30, seed);
  CorpusSizes sizes;
  Rng rng(Rng(seed).derive(0x64617461).next_u64());
  return gen_cipher_corpus(spec, sizes, out_dir, rng);
}

// Uniform sample of k examples without replacement; k == size is a
// permutation of the full set.
template <class T>
std::vector<T> few_shot_subsample(const std::vector<T>& pool, long long k, Rng& rng) {
  check(k >= 0, "subsample size must be nonnegative");
  check(k <= (long long)pool.size(), "subsample of ", k, " exceeds pool of ", pool.size());
  std::vector<size_t> idx(pool.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (long long i = 0; i < k; ++i) {
    size_t j = size_t(i) + size_t(rng.below(uint64_t(idx.size() - size_t(i))));
    std::swap(idx[size_t(i)], idx[j]);
  }
  std::vector<T> out;
  out.reserve(size_t(k));
  for (long long i = 0; i < k; ++i) out.push_back(pool[idx[size_t(i)]]);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

enum class Regime { FewShot, Low, High, ZeroShotAnalogue };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::FewShot: return "few-shot";
    case Regime::Low: return "low";
    case Regime::High: return "high";
    case Regime::ZeroShotAnalogue: return "zero-shot-analogue";
  }
  return "?";
}

inline std::optional<Regime> regime_from_name(std::string_view s) {
  for (Regime r : {Regime::FewShot, Regime::Low, Regime::High, Regime::ZeroShotAnalogue})
    if (s == regime_name(r)) return r;
  return std::nullopt;
}

struct ExperimentArm {
  std::string label;
  std::optional<Objective> parallel;  // nullopt: MLM-only baseline
  double parallel_ratio = 0.1;
};

// "mlm" | "nmt" | "tlm@0.5" etc.
inline ExperimentArm parse_arm(const std::string& token, double default_ratio) {
  ExperimentArm arm;
  arm.label = token;
  std::string name = token;
  auto at = token.find('@');
  if (at != std::string::npos) {
    name = token.substr(0, at);
    arm.parallel_ratio = std::stod(token.substr(at + 1));
  } else {
    arm.parallel_ratio = default_ratio;
  }
  if (name == "mlm") {
    arm.parallel = std::nullopt;
    arm.parallel_ratio = 0.0;
    return arm;
  }
  auto obj = objective_from_name(name);
  check(bool(obj) && *obj != Objective::MLM, "unknown objective arm \"", token, "\"");
  arm.parallel = obj;
  return arm;
}

struct ExperimentConfig {
  std::string data_dir;
  std::vector<ExperimentArm> arms;  // arms[0] is the baseline for deltas
  std::vector<Regime> regimes{Regime::FewShot, Regime::Low, Regime::High};
  int runs = 5;
  uint64_t seed = 1;
  double alpha = 0.3;
  PairDist pair_dist = PairDist::Pairs;
  NoiseSpec noise;
  ModelConfig model;  // vocab_size filled in from the data
  int sentinel_count = 100;
  TrainConfig pretrain_cfg{4096, 2000, 500, 1e-3, 0};
  TrainConfig finetune_cfg{1024, 300, 75, 1e-3, 0};  // the few-shot budget
  // larger regimes get proportionally larger fine-tuning budgets so the
  // baseline can actually converge on plentiful supervision
  long long low_steps = 600, high_steps = 2000;
  long long few_shot_k = 100, low_n = 1000, high_n = 20000;
  bool progress = true;

  TrainConfig finetune_for(Regime r) const {
    TrainConfig ft = finetune_cfg;
    if (r == Regime::Low) ft.steps = low_steps;
    if (r == Regime::High) ft.steps = high_steps;
    ft.checkpoint_every = std::max(ft.checkpoint_every, ft.steps / 5);
    ft.checkpoint_every = std::min(ft.checkpoint_every, ft.steps);
    return ft;
  }

  void validate() const {
    check(!arms.empty(), "experiment needs at least one arm");
    check(runs >= 1, "runs must be >= 1");
    check(!regimes.empty(), "experiment needs at least one regime");
  }
};

struct CellResult {
  bool failed = false;
  std::string error;
  std::vector<double> run_scores;
  double median = 0;
  LangScores per_lang;  // per target-pair medians, keyed "src>tgt"
};

struct Report {
  std::vector<std::string> arm_labels;
  std::vector<std::string> regime_labels;
  std::vector<std::vector<CellResult>> cells;  // [arm][regime]
  nlohmann::json manifest;

  // deltas: treatment minus baseline, exactly
  double delta(size_t arm, size_t regime) const {
    return cells[arm][regime].median - cells[0][regime].median;
  }
};

namespace detail {

struct LoadedData {
  CipherSpec spec;
  Vocab vocab;
  std::vector<Document> mono;
  std::vector<ParallelPair> train_pairs, val_pairs, test_pairs;
  CorpusStats stats;
};

inline LoadedData load_data(const std::string& dir, int sentinel_count) {
  DataPaths paths = DataPaths::in(dir);
  LoadedData d;
  std::ifstream sj(paths.spec_json);
  check(sj.good(), "cannot open ", paths.spec_json, " (run build-data first)");
  d.spec = CipherSpec::from_json(nlohmann::json::parse(sj));
  d.vocab = build_vocab(d.spec.all_langs(), sentinel_count);
  d.mono = load_monolingual(paths.mono);
  d.train_pairs = load_parallel(paths.train_pairs);
  d.val_pairs = load_parallel(paths.val_pairs);
  d.test_pairs = load_parallel(paths.test_pairs);
  d.stats = corpus_stats({paths.mono}, {paths.train_pairs});
  return d;
}

inline std::vector<EvalExample> eval_set_from_pairs(const std::vector<ParallelPair>& pairs,
                                                    const Vocab& v) {
  std::vector<EvalExample> out;
  for (const auto& p : pairs) {
    Example ex = build_nmt(p, v);
    out.push_back({std::move(ex.input), p.tgt_text, pair_label({p.src_lang, p.tgt_lang})});
  }
  return out;
}

}  // namespace detail

// Full objective-comparison matrix: per arm and run, second-stage pretrain
// from scratch-initialized desk weights, then per regime a fine-tune with
// validation-based checkpoint selection and a held-out test evaluation.
// Scores are exact-match translation accuracy; cell value is the median
// over runs. Sub-run failures mark the cell instead of aborting the matrix.
inline Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  auto t_start = std::chrono::steady_clock::now();
  detail::LoadedData data = detail::load_data(cfg.data_dir, cfg.sentinel_count);

  ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = data.vocab.size();
  mcfg.validate();

  Report report;
  for (const auto& arm : cfg.arms) report.arm_labels.push_back(arm.label);
  for (Regime r : cfg.regimes) report.regime_labels.push_back(regime_name(r));
  report.cells.assign(cfg.arms.size(), std::vector<CellResult>(cfg.regimes.size()));

  std::vector<EvalExample> val_set = detail::eval_set_from_pairs(data.val_pairs, data.vocab);
  std::vector<EvalExample> test_set = detail::eval_set_from_pairs(data.test_pairs, data.vocab);
  MetricFn em = [](const std::string& a, const std::string& b) { return exact_match(a, b); };

  // per (arm, regime, run) raw scores, then medians
  std::vector<std::vector<std::vector<double>>> scores(
      cfg.arms.size(), std::vector<std::vector<double>>(cfg.regimes.size()));
  std::vector<std::vector<std::map<std::string, std::vector<double>>>> lang_scores(
      cfg.arms.size(), std::vector<std::map<std::string, std::vector<double>>>(cfg.regimes.size()));

  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  for (size_t ai = 0; ai < cfg.arms.size(); ++ai) {
    const ExperimentArm& arm = cfg.arms[ai];
    for (int run = 0; run < cfg.runs; ++run) {
      const uint64_t run_seed = Rng(cfg.seed).derive(fnv1a64(arm.label), uint64_t(run)).next_u64();
      try {
        MixtureSpec mix;
        mix.alpha = cfg.alpha;
        mix.parallel_ratio = arm.parallel ? arm.parallel_ratio : 0.0;
        mix.seed = run_seed;
        mix.pair_dist = cfg.pair_dist;
        MixedStream stream(data.mono, data.train_pairs, data.stats, mix);

        Rng init_rng(Rng(run_seed).derive(0x696e6974).next_u64());
        Params<float> params = init_model<float>(mcfg, init_rng);
        OptState<float> opt = make_opt_state(params, cfg.pretrain_cfg.learning_rate);
        TrainConfig pt_cfg = cfg.pretrain_cfg;
        pt_cfg.seed = run_seed;
        RunManifest manifest;
        manifest.data_seed = run_seed;
        manifest.init_seed = init_rng.seed();
        manifest.mixture = mix;
        manifest.noise = cfg.noise;
        auto pre = pretrain(pt_cfg, stream, arm.parallel.value_or(Objective::NMT), data.vocab,
                            cfg.noise, params, opt, manifest);
        check(!pre.aborted, "pretrain aborted: ", pre.abort_reason);
        check(!pre.checkpoints.empty(), "pretrain produced no checkpoints");
        const Checkpoint& pretrained = pre.checkpoints.back();
        if (cfg.progress)
          std::cerr << "[t2tlab] " << std::fixed << std::setprecision(0) << elapsed() << "s arm="
                    << arm.label << " run=" << run << " pretrain done (final loss "
                    << std::setprecision(3) << pre.history.back().loss << ")\n";

        for (size_t ri = 0; ri < cfg.regimes.size(); ++ri) {
          Regime regime = cfg.regimes[ri];
          try {
            Rng sub_rng(Rng(run_seed).derive(0x726567696d65, uint64_t(ri)).next_u64());
            std::vector<ParallelPair> pool;
            long long want = 0;
            if (regime == Regime::ZeroShotAnalogue) {
              check(!data.spec.derived.empty(), "zero-shot analogue needs a derived language");
              const std::string& first = data.spec.derived.front().code;
              for (const auto& p : data.train_pairs)
                if (p.src_lang == data.spec.base_lang && p.tgt_lang == first) pool.push_back(p);
              want = std::min<long long>(cfg.low_n, (long long)pool.size());
            } else {
              pool = data.train_pairs;
              want = regime == Regime::FewShot ? cfg.few_shot_k
                     : regime == Regime::Low   ? cfg.low_n
                                               : cfg.high_n;
            }
            auto subset = few_shot_subsample(pool, want, sub_rng);
            std::vector<Example> train_examples;
            train_examples.reserve(subset.size());
            for (const auto& p : subset) train_examples.push_back(build_nmt(p, data.vocab));

            TrainConfig ft_cfg = cfg.finetune_for(regime);
            ft_cfg.seed = Rng(run_seed).derive(0x6674, uint64_t(ri)).next_u64();
            auto ft = finetune(ft_cfg, train_examples, val_set, em, pretrained);

            std::map<std::string, double> per_lang;
            double test_score =
                evaluate_decoded(ft.best.params, data.vocab, test_set, em, &per_lang);
            scores[ai][ri].push_back(test_score);
            for (auto& [lang, s] : per_lang) lang_scores[ai][ri][lang].push_back(s);
            if (cfg.progress)
              std::cerr << "[t2tlab] " << std::fixed << std::setprecision(0) << elapsed()
                        << "s arm=" << arm.label << " run=" << run << " "
                        << regime_name(regime) << " test EM " << std::setprecision(1)
                        << test_score << "\n";
          } catch (const std::exception& e) {
            auto& cell = report.cells[ai][ri];
            cell.failed = true;
            cell.error += std::string(e.what()) + "; ";
          }
        }
      } catch (const std::exception& e) {
        for (size_t ri = 0; ri < cfg.regimes.size(); ++ri) {
          auto& cell = report.cells[ai][ri];
          cell.failed = true;
          cell.error += std::string(e.what()) + "; ";
        }
      }
    }
  }

  for (size_t ai = 0; ai < cfg.arms.size(); ++ai) {
    for (size_t ri = 0; ri < cfg.regimes.size(); ++ri) {
      auto& cell = report.cells[ai][ri];
      cell.run_scores = scores[ai][ri];
      if (!cell.run_scores.empty()) cell.median = median_of_runs(cell.run_scores);
      for (auto& [lang, ss] : lang_scores[ai][ri]) cell.per_lang[lang] = median_of_runs(ss);
      if (cell.run_scores.empty()) cell.failed = true;
    }
  }

  nlohmann::json arms_json = nlohmann::json::array();
  for (const auto& a : cfg.arms)
    arms_json.push_back({{"label", a.label},
                         {"objective", a.parallel ? objective_name(*a.parallel) : "mlm-only"},
                         {"parallel_ratio", a.parallel ? a.parallel_ratio : 0.0}});
  report.manifest = {{"data_dir", cfg.data_dir},
                     {"arms", arms_json},
                     {"runs", cfg.runs},
                     {"seed", cfg.seed},
                     {"alpha", cfg.alpha},
                     {"threads", 1},
                     {"pretrain_steps", cfg.pretrain_cfg.steps},
                     {"pretrain_batch_tokens", cfg.pretrain_cfg.batch_tokens},
                     {"finetune_steps", cfg.finetune_cfg.steps},
                     {"finetune_batch_tokens", cfg.finetune_cfg.batch_tokens},
                     {"few_shot_k", cfg.few_shot_k},
                     {"low_n", cfg.low_n},
                     {"high_n", cfg.high_n},
                     {"elapsed_seconds", elapsed()}};
  return report;
}

// ---------------------------------------------------------------------------
// Report rendering: aligned text table plus a TSV twin, one decimal place.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt1(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", x);
  return buf;
}

// display columns, not bytes (the delta rows carry a multi-byte Δ)
inline size_t display_width(const std::string& s) {
  size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xc0) != 0x80) ++w;
  return w;
}

inline std::string pad_to(const std::string& s, size_t width, bool left) {
  size_t w = display_width(s);
  std::string fill(width > w ? width - w : 0, ' ');
  return left ? s + fill : fill + s;
}

}  // namespace detail

inline std::string render_report_text(const Report& r) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"arm"};
  for (const auto& reg : r.regime_labels) header.push_back(reg);
  header.push_back("avg");
  rows.push_back(header);

  auto row_avg = [&](size_t ai) {
    double sum = 0;
    int n = 0;
    for (size_t ri = 0; ri < r.regime_labels.size(); ++ri) {
      if (r.cells[ai][ri].failed) continue;
      sum += r.cells[ai][ri].median;
      ++n;
    }
    return n ? sum / n : 0.0;
  };

  for (size_t ai = 0; ai < r.arm_labels.size(); ++ai) {
    std::vector<std::string> row{r.arm_labels[ai]};
    for (size_t ri = 0; ri < r.regime_labels.size(); ++ri)
      row.push_back(r.cells[ai][ri].failed ? "FAIL" : detail::fmt1(r.cells[ai][ri].median));
    row.push_back(detail::fmt1(row_avg(ai)));
    rows.push_back(row);
    if (ai > 0) {
      std::vector<std::string> drow{"Δ " + r.arm_labels[ai]};
      for (size_t ri = 0; ri < r.regime_labels.size(); ++ri)
        drow.push_back(r.cells[ai][ri].failed || r.cells[0][ri].failed
                           ? "-"
                           : detail::fmt1(r.delta(ai, ri)));
      drow.push_back(detail::fmt1(row_avg(ai) - row_avg(0)));
      rows.push_back(drow);
    }
  }

  std::vector<size_t> widths(rows[0].size(), 0);
  for (auto& row : rows)
    for (size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], detail::display_width(row[c]));
  std::ostringstream os;
  for (auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) os << "  ";
      os << detail::pad_to(row[c], widths[c], c == 0);
    }
    os << "\n";
  }
  return os.str();
}

inline std::string render_report_tsv(const Report& r) {
  std::ostringstream os;
  os << "arm";
  for (const auto& reg : r.regime_labels) os << '\t' << reg;
  os << "\n";
  for (size_t ai = 0; ai < r.arm_labels.size(); ++ai) {
    os << r.arm_labels[ai];
    for (size_t ri = 0; ri < r.regime_labels.size(); ++ri)
      os << '\t' << (r.cells[ai][ri].failed ? "FAIL" : detail::fmt1(r.cells[ai][ri].median));
    os << "\n";
  }
  return os.str();
}

inline Report parse_report_tsv(const std::string& tsv) {
  Report r;
  std::istringstream in(tsv);
  std::string line;
  check(bool(std::getline(in, line)), "empty report TSV");
  auto header = split(line, '\t');
  check(header.size() >= 2 && header[0] == "arm", "malformed report TSV header");
  r.regime_labels.assign(header.begin() + 1, header.end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    check(fields.size() == header.size(), "malformed report TSV row: ", line);
    r.arm_labels.push_back(fields[0]);
    std::vector<CellResult> row;
    for (size_t i = 1; i < fields.size(); ++i) {
      CellResult cell;
      if (fields[i] == "FAIL") {
        cell.failed = true;
      } else {
        cell.median = std::stod(fields[i]);
      }
      row.push_back(cell);
    }
    r.cells.push_back(std::move(row));
  }
  return r;
}

inline std::string render_per_language_text(const Report& r) {
  std::ostringstream os;
  for (size_t ai = 0; ai < r.arm_labels.size(); ++ai) {
    for (size_t ri = 0; ri < r.regime_labels.size(); ++ri) {
      const auto& cell = r.cells[ai][ri];
      if (cell.per_lang.empty()) continue;
      os << r.arm_labels[ai] << " / " << r.regime_labels[ri] << ":\n";
      for (const auto& [lang, s] : cell.per_lang)
        os << "  " << std::left << std::setw(8) << lang << std::right << std::setw(6)
           << detail::fmt1(s) << "\n";
    }
  }
  return os.str();
}

}  // namespace t2t

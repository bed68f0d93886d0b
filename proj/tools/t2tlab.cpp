// t2tlab command-line interface.
//
// Subcommands: build-data, pretrain, finetune, evaluate, experiment,
// inspect-example, report, predict. Every option can also be supplied via a
// flat `key = value` config file (--config FILE); explicit command-line
// flags override the file.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "t2tlab/harness.hpp"
#include "t2tlab/metrics.hpp"
#include "t2tlab/trainer.hpp"

using namespace t2t;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> load_flat_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file ", path);
  std::map<std::string, std::string> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    check(eq != std::string_view::npos, path, ":", lineno, ": expected key = value");
    std::string key(trim(s.substr(0, eq)));
    std::string val(trim(s.substr(eq + 1)));
    check(!key.empty(), path, ":", lineno, ": empty key");
    out[key] = val;
  }
  return out;
}

bool truthy(const std::string& v) {
  return v == "1" || v == "true" || v == "yes" || v == "on";
}

// Injects config values as extra arguments for the active subcommand,
// skipping keys the user already passed explicitly.
std::vector<std::string> merge_config_args(CLI::App& app, const std::vector<std::string>& args) {
  std::string config_path;
  CLI::App* active = nullptr;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    if (!active && !args[i].empty() && args[i][0] != '-') {
      active = app.get_subcommand_no_throw(args[i]);
    }
  }
  if (config_path.empty() || !active) return args;
  auto config = load_flat_config(config_path);
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : config) {
    const std::string flag = "--" + key;
    CLI::Option* opt = active->get_option_no_throw(flag);
    if (!opt) continue;  // key belongs to another subcommand
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (given) continue;
    if (opt->get_expected_min() == 0) {  // flag
      if (truthy(value)) merged.push_back(flag);
    } else {
      merged.push_back(flag);
      merged.push_back(value);
    }
  }
  return merged;
}

struct ModelFlags {
  int layers = 2, d_model = 64, heads = 4, d_ff = 128, max_len = 128, sentinels = 100;

  void attach(CLI::App* cmd) {
    cmd->add_option("--layers", layers, "encoder/decoder layers per stack");
    cmd->add_option("--d-model", d_model, "model width");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--d-ff", d_ff, "feed-forward width");
    cmd->add_option("--max-len", max_len, "maximum sequence length");
    cmd->add_option("--sentinels", sentinels, "sentinel token count");
  }

  ModelConfig config(int vocab_size) const {
    ModelConfig cfg;
    cfg.num_layers = layers;
    cfg.d_model = d_model;
    cfg.num_heads = heads;
    cfg.d_ff = d_ff;
    cfg.max_len = max_len;
    cfg.vocab_size = vocab_size;
    return cfg;
  }
};

Vocab vocab_for_data(const std::string& data_dir, int sentinels) {
  DataPaths paths = DataPaths::in(data_dir);
  std::ifstream sj(paths.spec_json);
  if (sj.good()) {
    CipherSpec spec = CipherSpec::from_json(nlohmann::json::parse(sj));
    return build_vocab(spec.all_langs(), sentinels);
  }
  // arbitrary TSV corpora: language set = sorted union observed in the data
  std::vector<std::string> mono_paths, pair_paths;
  if (fs::exists(paths.mono)) mono_paths.push_back(paths.mono);
  if (fs::exists(paths.train_pairs)) pair_paths.push_back(paths.train_pairs);
  CorpusStats stats = corpus_stats(mono_paths, pair_paths);
  std::set<std::string> langs;
  for (auto& [k, c] : stats.mono_counts) langs.insert(k);
  for (auto& [k, c] : stats.pair_counts) {
    langs.insert(k.first);
    langs.insert(k.second);
  }
  check(!langs.empty(), "no languages found under ", data_dir);
  return build_vocab({langs.begin(), langs.end()}, sentinels);
}

MetricFn metric_by_name(const std::string& name) {
  if (name == "em") return [](const std::string& a, const std::string& b) { return exact_match(a, b); };
  if (name == "f1") return [](const std::string& a, const std::string& b) { return token_f1(a, b); };
  if (name == "rouge-l") return [](const std::string& a, const std::string& b) { return rouge_l(a, b); };
  if (name == "entity-f1")
    return [](const std::string& a, const std::string& b) { return entity_f1(a, b); };
  fail("unknown metric \"", name, "\" (expected em, f1, rouge-l, entity-f1)");
}

struct TsvRow {
  std::string id, lang, text;
};

std::vector<TsvRow> load_id_lang_text(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open ", path);
  std::vector<TsvRow> rows;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line, '\t');
    check(f.size() == 3, path, ":", lineno, ": expected id<TAB>lang<TAB>text");
    rows.push_back({f[0], f[1], f[2]});
  }
  return rows;
}

int run_build_data(const std::string& out, int langs, int words, int min_words, int max_words,
                   long long mono, double decay, long long pairs, long long val, long long test,
                   uint64_t seed) {
  check(langs >= 2, "need at least 2 languages (base + 1 derived)");
  CipherSpec spec = default_cipher_spec(langs - 1, words, seed);
  spec.min_words = min_words;
  spec.max_words = max_words;
  CorpusSizes sizes;
  sizes.mono_per_lang = mono;
  sizes.mono_decay = decay;
  sizes.train_pairs_per_direction = pairs;
  sizes.val_pairs_per_direction = val;
  sizes.test_pairs_per_direction = test;
  Rng rng(Rng(seed).derive(0x64617461).next_u64());
  DataPaths paths = gen_cipher_corpus(spec, sizes, out, rng);
  CorpusStats stats = corpus_stats({paths.mono}, {paths.train_pairs});
  std::cout << "wrote " << out << "\n";
  std::cout << "  languages:";
  for (auto& l : spec.all_langs()) std::cout << " " << l;
  std::cout << "\n  monolingual docs: " << stats.mono_total() << "\n";
  std::cout << "  training pairs:   " << stats.pair_total() << " over " << stats.pair_counts.size()
            << " directions\n";
  std::cout << "  val/test pairs:   " << val * 2 * (langs - 1) << " / " << test * 2 * (langs - 1)
            << "\n";
  return 0;
}

int run_pretrain(const std::string& data_dir, const std::string& out, const std::string& objective,
                 long long steps, long long batch_tokens, long long checkpoint_every, double lr,
                 double alpha, double parallel_ratio, uint64_t seed, const std::string& pair_dist,
                 double rho, double mu, const ModelFlags& mf) {
  auto obj = objective_from_name(objective);
  check(bool(obj), "unknown objective \"", objective, "\"");
  if (*obj == Objective::MLM) parallel_ratio = 0.0;
  DataPaths paths = DataPaths::in(data_dir);
  Vocab vocab = vocab_for_data(data_dir, mf.sentinels);
  auto mono = load_monolingual(paths.mono);
  std::vector<ParallelPair> pairs;
  if (parallel_ratio > 0.0) pairs = load_parallel(paths.train_pairs);
  CorpusStats stats = corpus_stats({paths.mono}, parallel_ratio > 0.0
                                                     ? std::vector<std::string>{paths.train_pairs}
                                                     : std::vector<std::string>{});
  MixtureSpec mix;
  mix.alpha = alpha;
  mix.parallel_ratio = parallel_ratio;
  mix.seed = seed;
  mix.pair_dist = pair_dist == "target-langs" ? PairDist::TargetLangs : PairDist::Pairs;
  MixedStream stream(std::move(mono), std::move(pairs), stats, mix);

  ModelConfig mcfg = mf.config(vocab.size());
  Rng init_rng(Rng(seed).derive(0x696e6974).next_u64());
  Params<float> params = init_model<float>(mcfg, init_rng);
  OptState<float> opt = make_opt_state(params, lr);
  TrainConfig cfg{batch_tokens, steps, checkpoint_every, lr, seed};
  RunManifest manifest;
  manifest.data_seed = seed;
  manifest.init_seed = init_rng.seed();
  manifest.mixture = mix;
  manifest.noise = {rho, mu};

  std::cout << "pretraining " << objective_name(*obj) << " for " << steps << " steps ("
            << batch_tokens << " tokens/batch, vocab " << vocab.size() << ", "
            << params.param_count() << " params)\n";
  auto result = pretrain(cfg, stream, *obj, vocab, {rho, mu}, params, opt, manifest);
  for (const auto& c : result.checkpoints) {
    std::string dir = (fs::path(out) / ("step_" + std::to_string(c.step))).string();
    save_checkpoint(c, dir);
    std::cout << "  checkpoint " << dir << "\n";
  }
  if (result.aborted) {
    std::cerr << "aborted: " << result.abort_reason << "\n";
    return 1;
  }
  std::printf("loss: first %.4f, last %.4f\n", result.history.front().loss,
              result.history.back().loss);
  std::cout << "objective counts:";
  for (auto& [k, c] : result.manifest.objective_counts) std::cout << " " << k << "=" << c;
  std::cout << "\n";
  return 0;
}

int run_finetune(const std::string& from, const std::string& task, const std::string& val_path,
                 const std::string& regime, long long k_override, long long steps,
                 long long batch_tokens, long long checkpoint_every, double lr, uint64_t seed,
                 const std::string& metric_name, const std::string& out) {
  Checkpoint start = load_checkpoint(from);
  Vocab vocab = start.vocab();
  auto task_pairs = load_parallel(task);
  long long k = k_override;
  if (k <= 0) {
    if (regime == "few-shot") k = 100;
    else if (regime == "low") k = std::min<long long>(1000, (long long)task_pairs.size());
    else if (regime == "high") k = std::min<long long>(20000, (long long)task_pairs.size());
    else fail("unknown regime \"", regime, "\" (expected few-shot, low, high)");
  }
  Rng sub_rng(Rng(seed).derive(0x737562).next_u64());
  auto subset = few_shot_subsample(task_pairs, k, sub_rng);
  std::vector<Example> train_examples;
  for (const auto& p : subset) train_examples.push_back(build_nmt(p, vocab));

  std::vector<EvalExample> val_set;
  for (const auto& p : load_parallel(val_path)) {
    Example ex = build_nmt(p, vocab);
    val_set.push_back({std::move(ex.input), p.tgt_text, pair_label({p.src_lang, p.tgt_lang})});
  }
  check(!val_set.empty(), "validation set is empty");

  TrainConfig cfg{batch_tokens, steps, checkpoint_every, lr, seed};
  std::cout << "fine-tuning on " << train_examples.size() << " examples (" << regime
            << "), validating on " << val_set.size() << "\n";
  auto result = finetune(cfg, train_examples, val_set, metric_by_name(metric_name), start);
  for (const auto& pt : result.history)
    std::cout << "  step " << pt.step << ": val " << metric_name << " " << detail::fmt1(pt.score)
              << "\n";
  std::cout << "best checkpoint: step " << result.best.step << "\n";
  if (!out.empty()) {
    save_checkpoint(result.best, out);
    std::cout << "saved to " << out << "\n";
  }
  return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& gold_path,
                 const std::string& metric_name, const std::string& out_prefix) {
  MetricFn metric = metric_by_name(metric_name);
  auto preds = load_id_lang_text(pred_path);
  auto golds = load_id_lang_text(gold_path);
  std::map<std::string, const TsvRow*> pred_by_id;
  for (const auto& r : preds) pred_by_id[r.id] = &r;

  std::map<std::string, std::pair<double, long long>> by_lang;
  for (const auto& g : golds) {
    auto it = pred_by_id.find(g.id);
    check(it != pred_by_id.end(), "prediction missing for id \"", g.id, "\"");
    double s = metric(it->second->text, g.text);
    auto& cell = by_lang[g.lang];
    cell.first += s;
    cell.second += 1;
  }
  check(!by_lang.empty(), "gold file ", gold_path, " is empty");

  LangScores lang_scores;
  for (auto& [lang, cell] : by_lang) lang_scores[lang] = cell.first / double(cell.second);
  double aggregate = average_languages(lang_scores);

  std::ostringstream text, tsv;
  text << std::left << std::setw(10) << "lang" << std::right << std::setw(8) << metric_name
       << std::setw(8) << "n" << "\n";
  tsv << "lang\t" << metric_name << "\tn\n";
  for (auto& [lang, score] : lang_scores) {
    text << std::left << std::setw(10) << lang << std::right << std::setw(8) << detail::fmt1(score)
         << std::setw(8) << by_lang[lang].second << "\n";
    tsv << lang << '\t' << detail::fmt1(score) << '\t' << by_lang[lang].second << "\n";
  }
  text << std::left << std::setw(10) << "avg" << std::right << std::setw(8)
       << detail::fmt1(aggregate) << std::setw(8) << golds.size() << "\n";
  tsv << "avg\t" << detail::fmt1(aggregate) << '\t' << golds.size() << "\n";

  std::cout << text.str();
  if (!out_prefix.empty()) {
    std::ofstream(out_prefix + ".txt") << text.str();
    std::ofstream(out_prefix + ".tsv") << tsv.str();
    std::cout << "wrote " << out_prefix << ".txt and " << out_prefix << ".tsv\n";
  }
  return 0;
}

int run_experiment_cmd(const std::string& data_dir, const std::string& out,
                       const std::string& arms_csv, const std::string& regimes_csv, int runs,
                       uint64_t seed, double alpha, double parallel_ratio,
                       const std::string& pair_dist, double rho, double mu, long long pt_steps,
                       long long pt_batch, long long pt_ce, long long ft_steps, long long ft_batch,
                       long long ft_ce, long long low_steps, long long high_steps, double lr,
                       long long few_k, long long low_n, long long high_n, const ModelFlags& mf,
                       bool quiet) {
  ExperimentConfig cfg;
  cfg.data_dir = data_dir;
  for (const auto& tok : split(arms_csv, ',')) cfg.arms.push_back(parse_arm(std::string(trim(tok)), parallel_ratio));
  cfg.regimes.clear();
  for (const auto& tok : split(regimes_csv, ',')) {
    auto r = regime_from_name(trim(tok));
    check(bool(r), "unknown regime \"", std::string(trim(tok)), "\"");
    cfg.regimes.push_back(*r);
  }
  cfg.runs = runs;
  cfg.seed = seed;
  cfg.alpha = alpha;
  cfg.pair_dist = pair_dist == "target-langs" ? PairDist::TargetLangs : PairDist::Pairs;
  cfg.noise = {rho, mu};
  cfg.model = mf.config(0);
  cfg.sentinel_count = mf.sentinels;
  cfg.pretrain_cfg = {pt_batch, pt_steps, pt_ce, lr, 0};
  cfg.finetune_cfg = {ft_batch, ft_steps, ft_ce, lr, 0};
  cfg.low_steps = low_steps;
  cfg.high_steps = high_steps;
  cfg.few_shot_k = few_k;
  cfg.low_n = low_n;
  cfg.high_n = high_n;
  cfg.progress = !quiet;

  Report report = run_experiment(cfg);
  std::string text = render_report_text(report);
  std::cout << text;
  std::string langs = render_per_language_text(report);

  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream((fs::path(out) / "report.txt").string()) << text << "\n" << langs;
    std::ofstream((fs::path(out) / "report.tsv").string()) << render_report_tsv(report);
    nlohmann::json cells = nlohmann::json::array();
    for (size_t ai = 0; ai < report.arm_labels.size(); ++ai) {
      for (size_t ri = 0; ri < report.regime_labels.size(); ++ri) {
        const auto& c = report.cells[ai][ri];
        cells.push_back({{"arm", report.arm_labels[ai]},
                         {"regime", report.regime_labels[ri]},
                         {"failed", c.failed},
                         {"error", c.error},
                         {"median", c.median},
                         {"runs", c.run_scores},
                         {"per_lang", c.per_lang}});
      }
    }
    nlohmann::json full{{"manifest", report.manifest}, {"cells", cells}};
    std::ofstream((fs::path(out) / "report.json").string()) << full.dump(2) << "\n";
    std::cout << "wrote " << out << "/report.{txt,tsv,json}\n";
  }
  for (const auto& row : report.cells)
    for (const auto& c : row)
      if (c.failed) return 1;
  return 0;
}

int run_inspect(const std::string& data_dir, const std::string& kind, long long line,
                const std::string& objective, uint64_t seed, double rho, double mu, int sentinels) {
  auto obj = objective_from_name(objective);
  check(bool(obj), "unknown objective \"", objective, "\"");
  Vocab vocab = vocab_for_data(data_dir, sentinels);
  DataPaths paths = DataPaths::in(data_dir);
  NoiseSpec noise{rho, mu};
  Rng rng(Rng(seed).derive(0x696e7370).next_u64());
  std::optional<Example> ex;
  if (kind == "mono") {
    check(*obj == Objective::MLM, "monolingual records only support the mlm objective");
    auto docs = load_monolingual(paths.mono);
    check(line >= 1 && line <= (long long)docs.size(), "line out of range (1..", docs.size(), ")");
    ex = build_mlm(docs[size_t(line - 1)], vocab, noise, rng);
  } else if (kind == "pair") {
    auto pairs = load_parallel(paths.train_pairs);
    check(line >= 1 && line <= (long long)pairs.size(), "line out of range (1..", pairs.size(), ")");
    const ParallelPair& p = pairs[size_t(line - 1)];
    switch (*obj) {
      case Objective::TLM: ex = build_tlm(p, vocab, noise, rng); break;
      case Objective::NMT: ex = build_nmt(p, vocab); break;
      case Objective::DenoisedNMT: ex = build_denoised_nmt(p, vocab, noise, rng); break;
      case Objective::DenoisedNMT_LM: ex = build_denoised_nmt_lm(p, vocab, noise, rng); break;
      case Objective::MLM: ex = build_mlm({p.src_lang, p.src_text}, vocab, noise, rng); break;
    }
  } else {
    fail("unknown kind \"", kind, "\" (expected mono or pair)");
  }
  check(bool(ex), "record is too short for this objective (skip signal)");
  std::cout << render_example(vocab, *ex);
  return 0;
}

int run_predict(const std::string& from, const std::string& input_path, const std::string& out) {
  Checkpoint c = load_checkpoint(from);
  Vocab vocab = c.vocab();
  std::ifstream in(input_path);
  check(in.good(), "cannot open ", input_path);
  std::ofstream outf(out);
  check(outf.good(), "cannot write ", out);
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line, '\t');
    check(f.size() == 4, input_path, ":", lineno, ": expected id<TAB>src_lang<TAB>tgt_lang<TAB>text");
    Example ex = build_nmt({f[1], f[2], f[3], "x"}, vocab);
    TokenSeq pred = greedy_decode(c.params, ex.input, c.params.cfg.max_len);
    outf << f[0] << '\t' << f[2] << '\t' << decode(vocab, pred) << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_report(const std::string& in_path) {
  std::ifstream in(in_path);
  check(in.good(), "cannot open ", in_path);
  std::stringstream buf;
  buf << in.rdbuf();
  Report r = parse_report_tsv(buf.str());
  std::cout << render_report_text(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"t2tlab: desk-scale multilingual text-to-text pre-training laboratory"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "flat key = value config file (flags override)");

  // build-data
  auto* bd = app.add_subcommand("build-data", "generate a synthetic cipher-language corpus");
  std::string bd_out = "data";
  int bd_langs = 6, bd_words = 30, bd_min = 2, bd_max = 4;
  long long bd_mono = 3000, bd_pairs = 2200, bd_val = 12, bd_test = 30;
  double bd_decay = 0.65;
  uint64_t bd_seed = 1;
  bd->add_option("--out", bd_out, "output directory");
  bd->add_option("--langs", bd_langs, "total languages including the base");
  bd->add_option("--words", bd_words, "base-language word vocabulary size");
  bd->add_option("--min-words", bd_min, "minimum sentence length");
  bd->add_option("--max-words", bd_max, "maximum sentence length");
  bd->add_option("--mono", bd_mono, "monolingual sentences for the base language");
  bd->add_option("--mono-decay", bd_decay, "per-language monolingual count decay factor");
  bd->add_option("--pairs", bd_pairs, "training pairs per direction");
  bd->add_option("--val", bd_val, "validation pairs per direction");
  bd->add_option("--test", bd_test, "test pairs per direction");
  bd->add_option("--seed", bd_seed, "generation seed");

  // pretrain
  auto* pt = app.add_subcommand("pretrain", "second-stage pre-training on the mixture");
  std::string pt_data = "data", pt_out = "runs/pretrain", pt_obj = "nmt", pt_pd = "pairs";
  long long pt_steps = 2000, pt_batch = 4096, pt_ce = 500;
  double pt_lr = 0.001, pt_alpha = 0.3, pt_ratio = 0.10, pt_rho = 0.15, pt_mu = 3.0;
  uint64_t pt_seed = 1;
  ModelFlags pt_mf;
  pt->add_option("--data", pt_data, "corpus directory");
  pt->add_option("--out", pt_out, "checkpoint output directory");
  pt->add_option("--objective", pt_obj, "parallel objective: mlm, tlm, nmt, dnmt, dnmt-lm");
  pt->add_option("--steps", pt_steps, "optimizer steps");
  pt->add_option("--batch-tokens", pt_batch, "token budget per batch");
  pt->add_option("--checkpoint-every", pt_ce, "steps between checkpoints");
  pt->add_option("--lr", pt_lr, "constant learning rate");
  pt->add_option("--alpha", pt_alpha, "language sampling temperature");
  pt->add_option("--parallel-ratio", pt_ratio, "fraction of examples from parallel data");
  pt->add_option("--seed", pt_seed, "run seed");
  pt->add_option("--pair-dist", pt_pd, "pair sampling distribution: pairs or target-langs");
  pt->add_option("--rho", pt_rho, "span corruption noise density");
  pt->add_option("--mu", pt_mu, "mean corrupted span length");
  pt_mf.attach(pt);

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune from a checkpoint on a translation task");
  std::string ft_from, ft_task, ft_val, ft_regime = "low", ft_metric = "em", ft_out;
  long long ft_k = 0, ft_steps = 300, ft_batch = 1024, ft_ce = 75;
  double ft_lr = 0.001;
  uint64_t ft_seed = 1;
  ft->add_option("--from", ft_from, "checkpoint directory")->check(CLI::ExistingDirectory);
  ft->add_option("--task", ft_task, "training pairs TSV");
  ft->add_option("--val", ft_val, "validation pairs TSV (checkpoint selection)");
  ft->add_option("--regime", ft_regime, "few-shot (k=100), low (1000), high (20000)");
  ft->add_option("--k", ft_k, "override the regime subsample size");
  ft->add_option("--steps", ft_steps, "optimizer steps");
  ft->add_option("--batch-tokens", ft_batch, "token budget per batch");
  ft->add_option("--checkpoint-every", ft_ce, "steps between validation evaluations");
  ft->add_option("--lr", ft_lr, "constant learning rate");
  ft->add_option("--seed", ft_seed, "run seed");
  ft->add_option("--metric", ft_metric, "validation metric: em, f1, rouge-l, entity-f1");
  ft->add_option("--out", ft_out, "where to save the selected checkpoint");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a predictions file against gold");
  std::string ev_pred, ev_gold, ev_metric = "em", ev_out;
  ev->add_option("--pred", ev_pred, "predictions TSV: id<TAB>lang<TAB>prediction");
  ev->add_option("--gold", ev_gold, "gold TSV: id<TAB>lang<TAB>gold");
  ev->add_option("--metric", ev_metric, "em, f1, rouge-l, entity-f1");
  ev->add_option("--out", ev_out, "output prefix for .txt and .tsv tables");

  // experiment
  auto* ex = app.add_subcommand("experiment", "full objective-comparison matrix");
  std::string ex_data = "data", ex_out = "runs/experiment", ex_arms = "mlm,nmt",
              ex_regimes = "few-shot,low,high", ex_pd = "pairs";
  int ex_runs = 5;
  uint64_t ex_seed = 1;
  double ex_alpha = 0.3, ex_ratio = 0.10, ex_rho = 0.15, ex_mu = 3.0, ex_lr = 0.001;
  long long ex_pt_steps = 2000, ex_pt_batch = 4096, ex_pt_ce = 500;
  long long ex_ft_steps = 300, ex_ft_batch = 1024, ex_ft_ce = 75;
  long long ex_low_steps = 600, ex_high_steps = 2000;
  long long ex_few = 100, ex_low = 1000, ex_high = 20000;
  bool ex_quiet = false;
  ModelFlags ex_mf;
  ex->add_option("--data", ex_data, "corpus directory");
  ex->add_option("--out", ex_out, "report output directory");
  ex->add_option("--arms", ex_arms, "comma list; first is the baseline (e.g. mlm,nmt,nmt@0.5)");
  ex->add_option("--regimes", ex_regimes, "comma list of few-shot, low, high, zero-shot-analogue");
  ex->add_option("--runs", ex_runs, "runs per cell (median reported)");
  ex->add_option("--seed", ex_seed, "experiment seed");
  ex->add_option("--alpha", ex_alpha, "language sampling temperature");
  ex->add_option("--parallel-ratio", ex_ratio, "default parallel ratio for arms");
  ex->add_option("--pair-dist", ex_pd, "pairs or target-langs");
  ex->add_option("--rho", ex_rho, "span corruption noise density");
  ex->add_option("--mu", ex_mu, "mean corrupted span length");
  ex->add_option("--lr", ex_lr, "constant learning rate");
  ex->add_option("--pretrain-steps", ex_pt_steps, "pre-training steps");
  ex->add_option("--pretrain-batch-tokens", ex_pt_batch, "pre-training batch tokens");
  ex->add_option("--pretrain-checkpoint-every", ex_pt_ce, "pre-training checkpoint interval");
  ex->add_option("--finetune-steps", ex_ft_steps, "few-shot fine-tuning steps");
  ex->add_option("--low-steps", ex_low_steps, "low-regime fine-tuning steps");
  ex->add_option("--high-steps", ex_high_steps, "high-regime fine-tuning steps");
  ex->add_option("--finetune-batch-tokens", ex_ft_batch, "fine-tuning batch tokens");
  ex->add_option("--finetune-checkpoint-every", ex_ft_ce, "fine-tuning evaluation interval");
  ex->add_option("--few-shot-k", ex_few, "few-shot regime sample size");
  ex->add_option("--low-n", ex_low, "low regime sample size");
  ex->add_option("--high-n", ex_high, "high regime sample size");
  ex->add_flag("--quiet", ex_quiet, "suppress progress lines");
  ex_mf.attach(ex);

  // inspect-example
  auto* ins = app.add_subcommand("inspect-example", "render one training example, specials bracketed");
  std::string in_data = "data", in_kind = "pair", in_obj = "nmt";
  long long in_line = 1;
  uint64_t in_seed = 1;
  double in_rho = 0.15, in_mu = 3.0;
  int in_sent = 100;
  ins->add_option("--data", in_data, "corpus directory");
  ins->add_option("--kind", in_kind, "mono or pair");
  ins->add_option("--line", in_line, "record number, 1-based");
  ins->add_option("--objective", in_obj, "mlm, tlm, nmt, dnmt, dnmt-lm");
  ins->add_option("--seed", in_seed, "corruption seed");
  ins->add_option("--rho", in_rho, "noise density");
  ins->add_option("--mu", in_mu, "mean span length");
  ins->add_option("--sentinels", in_sent, "sentinel token count");

  // report
  auto* rp = app.add_subcommand("report", "re-render a report TSV as an aligned table");
  std::string rp_in;
  rp->add_option("--in", rp_in, "report.tsv path");

  // predict
  auto* pr = app.add_subcommand("predict", "decode translations with a checkpoint");
  std::string pr_from, pr_in, pr_out = "predictions.tsv";
  pr->add_option("--from", pr_from, "checkpoint directory");
  pr->add_option("--input", pr_in, "TSV: id<TAB>src_lang<TAB>tgt_lang<TAB>text");
  pr->add_option("--out", pr_out, "predictions TSV output");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::vector<std::string> merged = merge_config_args(app, args);
    std::reverse(merged.begin(), merged.end());
    app.parse(merged);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (bd->parsed())
      return run_build_data(bd_out, bd_langs, bd_words, bd_min, bd_max, bd_mono, bd_decay, bd_pairs,
                            bd_val, bd_test, bd_seed);
    if (pt->parsed())
      return run_pretrain(pt_data, pt_out, pt_obj, pt_steps, pt_batch, pt_ce, pt_lr, pt_alpha,
                          pt_ratio, pt_seed, pt_pd, pt_rho, pt_mu, pt_mf);
    if (ft->parsed())
      return run_finetune(ft_from, ft_task, ft_val, ft_regime, ft_k, ft_steps, ft_batch, ft_ce,
                          ft_lr, ft_seed, ft_metric, ft_out);
    if (ev->parsed()) return run_evaluate(ev_pred, ev_gold, ev_metric, ev_out);
    if (ex->parsed())
      return run_experiment_cmd(ex_data, ex_out, ex_arms, ex_regimes, ex_runs, ex_seed, ex_alpha,
                                ex_ratio, ex_pd, ex_rho, ex_mu, ex_pt_steps, ex_pt_batch, ex_pt_ce,
                                ex_ft_steps, ex_ft_batch, ex_ft_ce, ex_low_steps, ex_high_steps,
                                ex_lr, ex_few, ex_low, ex_high, ex_mf, ex_quiet);
    if (ins->parsed())
      return run_inspect(in_data, in_kind, in_line, in_obj, in_seed, in_rho, in_mu, in_sent);
    if (rp->parsed()) return run_report(rp_in);
    if (pr->parsed()) return run_predict(pr_from, pr_in, pr_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

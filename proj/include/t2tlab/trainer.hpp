#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2tlab/model.hpp"
#include "t2tlab/objectives.hpp"
#include "t2tlab/sampler.hpp"

namespace t2t {

struct TrainConfig {
  long long batch_tokens = 4096;  // fine-tuning runs use 1024
  long long steps = 0;
  long long checkpoint_every = 0;
  double learning_rate = 0.001;
  uint64_t seed = 0;

  void validate() const {
    check(batch_tokens > 0 && steps > 0 && checkpoint_every > 0, "train config fields must be positive");
    check(checkpoint_every <= steps, "checkpoint_every (", checkpoint_every, ") must be <= steps (",
          steps, ")");
  }
};

// Everything needed to reproduce or resume a run.
struct RunManifest {
  uint64_t data_seed = 0;
  uint64_t init_seed = 0;
  int threads = 1;  // kernels are single-threaded by construction
  MixtureSpec mixture;
  NoiseSpec noise;
  std::string parallel_objective = "none";
  long long raw_tasks_consumed = 0;  // replay position for the next batch
  long long truncated_examples = 0;
  long long oversize_batches = 0;
  std::map<std::string, long long> objective_counts;
};

struct Checkpoint {
  long long step = 0;
  Params<float> params;
  OptState<float> opt;
  std::vector<std::string> lang_codes;
  int sentinel_count = 100;
  RunManifest manifest;
  bool hash_ok = true;  // set by load_checkpoint

  Vocab vocab() const { return build_vocab(lang_codes, sentinel_count); }
};

namespace detail {

inline std::pair<TokenSeq, TokenSeq> truncate_example(const Example& ex, int max_len,
                                                      long long* truncated) {
  TokenSeq in = ex.input, tgt = ex.target;
  bool cut = false;
  if (int(in.size()) > max_len) {
    in.resize(size_t(max_len));
    cut = true;
  }
  if (int(tgt.size()) > max_len) {
    tgt.resize(size_t(max_len) - 1);
    tgt.push_back(Vocab::kEos);
    cut = true;
  }
  if (cut && truncated) ++*truncated;
  return {std::move(in), std::move(tgt)};
}

// Greedy token-budget packer. The batch footprint counts padding: adding an
// example costs (n+1) * (max_enc + max_dec) after the length maxima are
// updated. The example that would overflow is handed back to the caller.
class BatchBuilder {
public:
  explicit BatchBuilder(long long batch_tokens) : budget_(batch_tokens) {}

  // returns false when ex does not fit (and the batch should be emitted)
  bool offer(const std::pair<TokenSeq, TokenSeq>& ex) {
    long long enc = std::max<long long>(max_enc_, (long long)ex.first.size());
    long long dec = std::max<long long>(max_dec_, (long long)ex.second.size());
    long long footprint = ((long long)items_.size() + 1) * (enc + dec);
    if (!items_.empty() && footprint > budget_) return false;
    if (items_.empty() && footprint > budget_) oversize_ = true;
    items_.push_back(ex);
    max_enc_ = enc;
    max_dec_ = dec;
    return true;
  }

  bool empty() const { return items_.empty(); }
  bool oversize() const { return oversize_; }

  Batch take() {
    Batch b = make_batch(items_);
    items_.clear();
    max_enc_ = max_dec_ = 0;
    oversize_ = false;
    return b;
  }

private:
  long long budget_;
  long long max_enc_ = 0, max_dec_ = 0;
  bool oversize_ = false;
  std::vector<std::pair<TokenSeq, TokenSeq>> items_;
};

}  // namespace detail

// Eager batching of a finite example list (fine-tuning, tests). Oversize
// singletons are emitted with a warning rather than dropped.
inline std::vector<Batch> make_batches(const std::vector<Example>& examples, long long batch_tokens,
                                       int max_len, long long* truncated = nullptr,
                                       long long* oversize = nullptr) {
  check(batch_tokens > 0, "batch_tokens must be positive");
  std::vector<Batch> out;
  detail::BatchBuilder builder(batch_tokens);
  for (const Example& ex : examples) {
    auto item = detail::truncate_example(ex, max_len, truncated);
    if (!builder.offer(item)) {
      out.push_back(builder.take());
      builder.offer(item);
    }
    if (builder.oversize()) {
      std::cerr << "[t2tlab] warning: single example of " << item.first.size() + item.second.size()
                << " tokens exceeds batch_tokens=" << batch_tokens << "; emitting singleton batch\n";
      if (oversize) ++*oversize;
      out.push_back(builder.take());
    }
  }
  if (!builder.empty()) out.push_back(builder.take());
  return out;
}

namespace detail {

// Pulls raw tasks from the mixture, applies the objective builders, and
// tracks the replay position (count of raw tasks consumed). Every example's
// corruption RNG derives from (data_seed, raw task index), so replaying
// from a recorded position reproduces the data stream exactly.
class PretrainSource {
public:
  PretrainSource(MixedStream& stream, const Vocab& vocab, const NoiseSpec& noise,
                 Objective parallel_objective, uint64_t data_seed)
      : stream_(stream), vocab_(vocab), noise_(noise), parallel_obj_(parallel_objective),
        base_(Rng(data_seed)) {}

  Example next() {
    if (buffered_) {
      Example e = std::move(buffered_->first);
      buffered_.reset();
      return e;
    }
    for (;;) {
      const long long task_index = raw_consumed_;
      RawTask task = stream_.next();
      ++raw_consumed_;
      Rng rng = base_.derive(uint64_t(task_index));
      std::optional<Example> ex;
      if (is_parallel(task)) {
        const ParallelPair& pair = std::get<ParallelPair>(task);
        switch (parallel_obj_) {
          case Objective::TLM: ex = build_tlm(pair, vocab_, noise_, rng); break;
          case Objective::NMT: ex = build_nmt(pair, vocab_); break;
          case Objective::DenoisedNMT: ex = build_denoised_nmt(pair, vocab_, noise_, rng); break;
          case Objective::DenoisedNMT_LM: ex = build_denoised_nmt_lm(pair, vocab_, noise_, rng); break;
          case Objective::MLM:
            ex = build_mlm({pair.src_lang, pair.src_text}, vocab_, noise_, rng);
            break;
        }
      } else {
        ex = build_mlm(std::get<Document>(task), vocab_, noise_, rng);
      }
      if (!ex) continue;  // skip signal: corpus noise must not abort the run
      ++counts_[objective_name(ex->objective)];
      last_pos_ = task_index;
      return std::move(*ex);
    }
  }

  void unread(Example ex) { buffered_ = {{std::move(ex), last_pos_}}; }

  // raw-task index at which the next served example's chain starts
  long long position() const { return buffered_ ? buffered_->second : raw_consumed_; }

  const std::map<std::string, long long>& objective_counts() const { return counts_; }

  void fast_forward(long long raw_tasks) {
    stream_.fast_forward(raw_tasks);
    raw_consumed_ = raw_tasks;
  }

private:
  MixedStream& stream_;
  const Vocab& vocab_;
  NoiseSpec noise_;
  Objective parallel_obj_;
  Rng base_;
  long long raw_consumed_ = 0;
  long long last_pos_ = 0;
  std::optional<std::pair<Example, long long>> buffered_;
  std::map<std::string, long long> counts_;
};

}  // namespace detail

struct StepRecord {
  long long step;
  double loss;
};

struct PretrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<StepRecord> history;
  RunManifest manifest;
  bool aborted = false;
  std::string abort_reason;
};

// Multi-task pre-training: monolingual tasks become MLM examples, parallel
// tasks become the configured parallel objective. Checkpoints are written
// every checkpoint_every steps. A non-finite loss aborts the run with the
// last good checkpoint retained.
inline PretrainResult pretrain(const TrainConfig& cfg, MixedStream& stream,
                               Objective parallel_objective, const Vocab& vocab,
                               const NoiseSpec& noise, Params<float>& params, OptState<float>& opt,
                               RunManifest manifest, long long start_step = 0) {
  cfg.validate();
  noise.validate();
  PretrainResult result;
  detail::PretrainSource source(stream, vocab, noise, parallel_objective, manifest.data_seed);
  if (manifest.raw_tasks_consumed > 0) source.fast_forward(manifest.raw_tasks_consumed);
  manifest.parallel_objective =
      manifest.mixture.parallel_ratio == 0.0 ? "none" : objective_name(parallel_objective);
  // counts merge onto resumed totals
  std::map<std::string, long long> base_counts = manifest.objective_counts;

  detail::BatchBuilder builder(cfg.batch_tokens);
  Params<float> grads = Params<float>::shaped(params.cfg);
  Workspace<float> ws;
  opt.lr = cfg.learning_rate;

  for (long long step = start_step; step < cfg.steps; ++step) {
    // assemble one batch; the overflow example is handed back so the
    // recorded replay position stays exact
    for (;;) {
      Example ex = source.next();
      auto item = detail::truncate_example(ex, params.cfg.max_len, &manifest.truncated_examples);
      if (!builder.offer(item)) {
        source.unread(std::move(ex));
        break;
      }
      if (builder.oversize()) {
        std::cerr << "[t2tlab] warning: oversize example emitted as singleton batch\n";
        ++manifest.oversize_batches;
        break;
      }
    }
    Batch batch = builder.take();
    double loss;
    try {
      loss = loss_and_grads(params, batch, grads, ws);
    } catch (const Error& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      std::cerr << "[t2tlab] aborting pretrain at step " << step << ": " << e.what() << "\n";
      break;
    }
    adam_step(params, grads, opt);
    result.history.push_back({step + 1, loss});
    if ((step + 1) % cfg.checkpoint_every == 0) {
      manifest.raw_tasks_consumed = source.position();
      manifest.objective_counts = base_counts;
      for (const auto& [k, c] : source.objective_counts()) manifest.objective_counts[k] += c;
      Checkpoint c{step + 1, params, opt, vocab.lang_codes, vocab.sentinel_count, manifest, true};
      result.checkpoints.push_back(std::move(c));
    }
  }
  manifest.raw_tasks_consumed = source.position();
  manifest.objective_counts = base_counts;
  for (const auto& [k, c] : source.objective_counts()) manifest.objective_counts[k] += c;
  result.manifest = manifest;
  return result;
}

struct EvalExample {
  TokenSeq input;
  std::string gold;
  std::string lang;  // grouping key for per-language reports
};

using MetricFn = std::function<double(const std::string& pred, const std::string& gold)>;

// Mean metric over greedy-decoded predictions; optional per-language means.
inline double evaluate_decoded(const Params<float>& params, const Vocab& vocab,
                               const std::vector<EvalExample>& eval_set, const MetricFn& metric,
                               std::map<std::string, double>* per_lang = nullptr) {
  check(!eval_set.empty(), "evaluate_decoded: empty eval set");
  double total = 0;
  std::map<std::string, std::pair<double, long long>> groups;
  for (const EvalExample& e : eval_set) {
    TokenSeq pred = greedy_decode(params, e.input, params.cfg.max_len);
    double score = metric(decode(vocab, pred), e.gold);
    total += score;
    auto& g = groups[e.lang];
    g.first += score;
    g.second += 1;
  }
  if (per_lang) {
    per_lang->clear();
    for (auto& [lang, g] : groups) (*per_lang)[lang] = g.first / double(g.second);
  }
  return total / double(eval_set.size());
}

struct EvalPoint {
  long long step;
  double score;
};

struct FinetuneResult {
  Checkpoint best;
  std::vector<EvalPoint> history;
  std::vector<StepRecord> loss_history;
};

// Fine-tunes from a checkpoint with a fresh optimizer, evaluating on the
// validation set at every checkpoint; returns the snapshot with the best
// validation score (ties broken by earliest step).
inline FinetuneResult finetune(const TrainConfig& cfg, const std::vector<Example>& train_examples,
                               const std::vector<EvalExample>& val, const MetricFn& metric,
                               const Checkpoint& start) {
  cfg.validate();
  check(!train_examples.empty(), "finetune: empty training set");
  Vocab vocab = start.vocab();

  Params<float> params = start.params;
  OptState<float> opt = make_opt_state(params, cfg.learning_rate);

  FinetuneResult result;
  result.best.step = -1;
  double best_score = -1;

  // epoch deck over the (truncated) training examples
  std::vector<std::pair<TokenSeq, TokenSeq>> items;
  long long truncated = 0;
  for (const Example& ex : train_examples)
    items.push_back(detail::truncate_example(ex, params.cfg.max_len, &truncated));
  if (truncated > 0)
    std::cerr << "[t2tlab] warning: truncated " << truncated << " fine-tuning examples to max_len\n";

  std::vector<size_t> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t pos = order.size();  // forces a shuffle on first use
  long long epoch = 0;
  auto next_item = [&]() -> const std::pair<TokenSeq, TokenSeq>& {
    if (pos >= order.size()) {
      Rng r = Rng(cfg.seed).derive(0x66696e65, uint64_t(epoch++));
      r.shuffle(order);
      pos = 0;
    }
    return items[order[pos++]];
  };

  detail::BatchBuilder builder(cfg.batch_tokens);
  Params<float> grads = Params<float>::shaped(params.cfg);
  Workspace<float> ws;
  std::optional<std::pair<TokenSeq, TokenSeq>> carry;

  auto maybe_eval = [&](long long step_now) {
    double score = evaluate_decoded(params, vocab, val, metric);
    result.history.push_back({step_now, score});
    if (score > best_score) {
      best_score = score;
      result.best = Checkpoint{step_now,          params,
                               opt,               start.lang_codes,
                               start.sentinel_count, start.manifest,
                               true};
    }
  };

  for (long long step = 0; step < cfg.steps; ++step) {
    for (;;) {
      std::pair<TokenSeq, TokenSeq> item = carry ? std::move(*carry) : next_item();
      carry.reset();
      if (!builder.offer(item)) {
        carry = std::move(item);
        break;
      }
      if (builder.oversize()) break;
    }
    Batch batch = builder.take();
    double loss = loss_and_grads(params, batch, grads, ws);
    adam_step(params, grads, opt);
    result.loss_history.push_back({step + 1, loss});
    if ((step + 1) % cfg.checkpoint_every == 0) maybe_eval(step + 1);
  }
  if (cfg.steps % cfg.checkpoint_every != 0) maybe_eval(cfg.steps);
  check(result.best.step >= 0, "finetune: no evaluation points recorded");
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: a human-readable JSON manifest listing every
// tensor (name, shape, dtype, byte offset) plus a little-endian float32
// blob, guarded by an FNV-1a content hash.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f32_le(std::ostream& out, float x) {
  auto bits = std::bit_cast<uint32_t>(x);
  char b[4] = {char(bits & 0xff), char((bits >> 8) & 0xff), char((bits >> 16) & 0xff),
               char((bits >> 24) & 0xff)};
  out.write(b, 4);
}

inline float read_f32_le(const unsigned char* p) {
  uint32_t bits = uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
                  (uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline nlohmann::json mixture_json(const MixtureSpec& m) {
  return {{"alpha", m.alpha},
          {"parallel_ratio", m.parallel_ratio},
          {"seed", m.seed},
          {"pair_dist", m.pair_dist == PairDist::Pairs ? "pairs" : "target-langs"}};
}

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
  MixtureSpec m;
  m.alpha = j.at("alpha").get<double>();
  m.parallel_ratio = j.at("parallel_ratio").get<double>();
  m.seed = j.at("seed").get<uint64_t>();
  m.pair_dist = j.at("pair_dist").get<std::string>() == "pairs" ? PairDist::Pairs
                                                                : PairDist::TargetLangs;
  return m;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string bin_path = (fs::path(dir) / "tensors.bin").string();

  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream bin(bin_path, std::ios::binary);
  check(bin.good(), "cannot open ", bin_path, " for writing");
  long long offset = 0;
  uint64_t hash = 0xcbf29ce484222325ull;
  auto dump = [&](const std::string& group, const Params<float>& p) {
    p.for_each([&](const std::string& name, const Tensor<float>& t) {
      tensors.push_back({{"name", group + "/" + name},
                         {"rows", t.rows},
                         {"cols", t.cols},
                         {"dtype", "f32"},
                         {"offset", offset}});
      for (float x : t.data) {
        detail::write_f32_le(bin, x);
        uint32_t bits = std::bit_cast<uint32_t>(x);
        unsigned char b[4] = {(unsigned char)(bits & 0xff), (unsigned char)((bits >> 8) & 0xff),
                              (unsigned char)((bits >> 16) & 0xff),
                              (unsigned char)((bits >> 24) & 0xff)};
        hash = fnv1a64(b, 4, hash);
      }
      offset += (long long)t.size() * 4;
    });
  };
  dump("param", c.params);
  dump("adam_m", c.opt.m);
  dump("adam_v", c.opt.v);
  bin.close();

  nlohmann::json manifest{
      {"format", "t2tlab-checkpoint-v1"},
      {"step", c.step},
      {"model",
       {{"num_layers", c.params.cfg.num_layers},
        {"d_model", c.params.cfg.d_model},
        {"num_heads", c.params.cfg.num_heads},
        {"d_ff", c.params.cfg.d_ff},
        {"vocab_size", c.params.cfg.vocab_size},
        {"max_len", c.params.cfg.max_len}}},
      {"vocab", {{"lang_codes", c.lang_codes}, {"sentinel_count", c.sentinel_count}}},
      {"adam",
       {{"step", c.opt.step}, {"lr", c.opt.lr}, {"beta1", c.opt.beta1}, {"beta2", c.opt.beta2},
        {"eps", c.opt.eps}}},
      {"run",
       {{"data_seed", c.manifest.data_seed},
        {"init_seed", c.manifest.init_seed},
        {"threads", c.manifest.threads},
        {"mixture", detail::mixture_json(c.manifest.mixture)},
        {"noise", {{"density", c.manifest.noise.density}, {"mean_span_length", c.manifest.noise.mean_span_length}}},
        {"parallel_objective", c.manifest.parallel_objective},
        {"raw_tasks_consumed", c.manifest.raw_tasks_consumed},
        {"truncated_examples", c.manifest.truncated_examples},
        {"oversize_batches", c.manifest.oversize_batches},
        {"objective_counts", c.manifest.objective_counts}}},
      {"data_file", "tensors.bin"},
      {"fnv64", [&] {
         char buf[17];
         std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)hash);
         return std::string(buf);
       }()},
      {"tensors", tensors}};

  std::ofstream mf((fs::path(dir) / "manifest.json").string());
  check(mf.good(), "cannot write manifest in ", dir);
  mf << manifest.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf((fs::path(dir) / "manifest.json").string());
  check(mf.good(), "cannot open checkpoint manifest in ", dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  check(manifest.at("format") == "t2tlab-checkpoint-v1", "unknown checkpoint format");

  Checkpoint c;
  c.step = manifest.at("step").get<long long>();
  const auto& jm = manifest.at("model");
  ModelConfig cfg;
  cfg.num_layers = jm.at("num_layers").get<int>();
  cfg.d_model = jm.at("d_model").get<int>();
  cfg.num_heads = jm.at("num_heads").get<int>();
  cfg.d_ff = jm.at("d_ff").get<int>();
  cfg.vocab_size = jm.at("vocab_size").get<int>();
  cfg.max_len = jm.at("max_len").get<int>();
  c.params = Params<float>::shaped(cfg);
  c.opt.m = Params<float>::shaped(cfg);
  c.opt.v = Params<float>::shaped(cfg);
  c.lang_codes = manifest.at("vocab").at("lang_codes").get<std::vector<std::string>>();
  c.sentinel_count = manifest.at("vocab").at("sentinel_count").get<int>();
  const auto& ja = manifest.at("adam");
  c.opt.step = ja.at("step").get<long long>();
  c.opt.lr = ja.at("lr").get<double>();
  c.opt.beta1 = ja.at("beta1").get<double>();
  c.opt.beta2 = ja.at("beta2").get<double>();
  c.opt.eps = ja.at("eps").get<double>();
  const auto& jr = manifest.at("run");
  c.manifest.data_seed = jr.at("data_seed").get<uint64_t>();
  c.manifest.init_seed = jr.at("init_seed").get<uint64_t>();
  c.manifest.threads = jr.at("threads").get<int>();
  c.manifest.mixture = detail::mixture_from_json(jr.at("mixture"));
  c.manifest.noise.density = jr.at("noise").at("density").get<double>();
  c.manifest.noise.mean_span_length = jr.at("noise").at("mean_span_length").get<double>();
  c.manifest.parallel_objective = jr.at("parallel_objective").get<std::string>();
  c.manifest.raw_tasks_consumed = jr.at("raw_tasks_consumed").get<long long>();
  c.manifest.truncated_examples = jr.at("truncated_examples").get<long long>();
  c.manifest.oversize_batches = jr.at("oversize_batches").get<long long>();
  c.manifest.objective_counts =
      jr.at("objective_counts").get<std::map<std::string, long long>>();

  const std::string bin_path = (fs::path(dir) / manifest.at("data_file").get<std::string>()).string();
  std::ifstream bin(bin_path, std::ios::binary);
  check(bin.good(), "cannot open tensor data ", bin_path);
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)),
                                  std::istreambuf_iterator<char>());

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;

  auto restore = [&](const std::string& group, Params<float>& p) {
    p.for_each([&](const std::string& name, Tensor<float>& t) {
      auto it = by_name.find(group + "/" + name);
      if (it == by_name.end()) fail("checkpoint manifest is missing tensor ", group, "/", name);
      const auto& jt = *it->second;
      check(jt.at("rows").get<int>() == t.rows && jt.at("cols").get<int>() == t.cols,
            "checkpoint shape mismatch for tensor ", group, "/", name);
      check(jt.at("dtype") == "f32", "unsupported dtype for tensor ", group, "/", name);
      long long offset = jt.at("offset").get<long long>();
      check(offset >= 0 && size_t(offset) + t.size() * 4 <= blob.size(),
            "checkpoint data out of bounds for tensor ", group, "/", name);
      for (size_t i = 0; i < t.size(); ++i)
        t.data[i] = detail::read_f32_le(blob.data() + size_t(offset) + i * 4);
    });
  };
  restore("param", c.params);
  restore("adam_m", c.opt.m);
  restore("adam_v", c.opt.v);

  uint64_t hash = fnv1a64(blob.data(), blob.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)hash);
  c.hash_ok = manifest.at("fnv64").get<std::string>() == buf;
  if (!c.hash_ok)
    std::cerr << "[t2tlab] warning: checkpoint content hash mismatch in " << dir
              << " (data corrupted?)\n";
  return c;
}

}  // namespace t2t

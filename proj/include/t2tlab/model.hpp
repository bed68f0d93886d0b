#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "t2tlab/rng.hpp"
#include "t2tlab/tensor.hpp"
#include "t2tlab/vocab.hpp"

namespace t2t {

struct ModelConfig {
  int num_layers = 2;  // per stack
  int d_model = 64;
  int num_heads = 4;
  int d_ff = 128;
  int vocab_size = 0;
  int max_len = 128;

  int head_dim() const { return d_model / num_heads; }

  void validate() const {
    check(num_layers > 0 && d_model > 0 && num_heads > 0 && d_ff > 0 && vocab_size > 0 && max_len > 0,
          "model config fields must be positive");
    check(d_model % num_heads == 0, "d_model (", d_model, ") must be divisible by num_heads (",
          num_heads, ")");
  }
};

template <class T>
struct AttnParams {
  Tensor<T> wq, wk, wv, wo;  // all [d_model, d_model], applied as x*W
};

template <class T>
struct EncLayerParams {
  Tensor<T> ln1;
  AttnParams<T> attn;
  Tensor<T> ln2;
  Tensor<T> w1, w2;  // [D,F], [F,D]
};

template <class T>
struct DecLayerParams {
  Tensor<T> ln1;
  AttnParams<T> self_attn;
  Tensor<T> ln2;
  AttnParams<T> cross_attn;
  Tensor<T> ln3;
  Tensor<T> w1, w2;
};

// All trainable tensors. The token embedding is shared between encoder
// input, decoder input and the output projection. Norms are scale-only
// (gain) RMS norms.
template <class T>
struct Params {
  ModelConfig cfg;
  Tensor<T> embed;             // [V, D]
  Tensor<T> pos_enc, pos_dec;  // [max_len, D]
  std::vector<EncLayerParams<T>> enc;
  std::vector<DecLayerParams<T>> dec;
  Tensor<T> enc_final_ln, dec_final_ln;

  static Params shaped(const ModelConfig& cfg) {
    cfg.validate();
    Params p;
    p.cfg = cfg;
    const int D = cfg.d_model, F = cfg.d_ff;
    p.embed = Tensor<T>(cfg.vocab_size, D);
    p.pos_enc = Tensor<T>(cfg.max_len, D);
    p.pos_dec = Tensor<T>(cfg.max_len, D);
    p.enc.resize(size_t(cfg.num_layers));
    p.dec.resize(size_t(cfg.num_layers));
    for (auto& l : p.enc) {
      l.ln1 = Tensor<T>(1, D);
      l.attn = {Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D)};
      l.ln2 = Tensor<T>(1, D);
      l.w1 = Tensor<T>(D, F);
      l.w2 = Tensor<T>(F, D);
    }
    for (auto& l : p.dec) {
      l.ln1 = Tensor<T>(1, D);
      l.self_attn = {Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D)};
      l.ln2 = Tensor<T>(1, D);
      l.cross_attn = {Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D), Tensor<T>(D, D)};
      l.ln3 = Tensor<T>(1, D);
      l.w1 = Tensor<T>(D, F);
      l.w2 = Tensor<T>(F, D);
    }
    p.enc_final_ln = Tensor<T>(1, D);
    p.dec_final_ln = Tensor<T>(1, D);
    return p;
  }

  // Visits every tensor in a fixed order; the order defines the layout of
  // checkpoints and the traversal of the optimizer.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("embed", self.embed);
    f("pos_enc", self.pos_enc);
    f("pos_dec", self.pos_dec);
    auto attn = [&](const std::string& prefix, auto& a) {
      f(prefix + ".wq", a.wq);
      f(prefix + ".wk", a.wk);
      f(prefix + ".wv", a.wv);
      f(prefix + ".wo", a.wo);
    };
    for (size_t i = 0; i < self.enc.size(); ++i) {
      auto& l = self.enc[i];
      std::string b = "enc." + std::to_string(i);
      f(b + ".ln1", l.ln1);
      attn(b + ".attn", l.attn);
      f(b + ".ln2", l.ln2);
      f(b + ".w1", l.w1);
      f(b + ".w2", l.w2);
    }
    for (size_t i = 0; i < self.dec.size(); ++i) {
      auto& l = self.dec[i];
      std::string b = "dec." + std::to_string(i);
      f(b + ".ln1", l.ln1);
      attn(b + ".self", l.self_attn);
      f(b + ".ln2", l.ln2);
      attn(b + ".cross", l.cross_attn);
      f(b + ".ln3", l.ln3);
      f(b + ".w1", l.w1);
      f(b + ".w2", l.w2);
    }
    f("enc_final_ln", self.enc_final_ln);
    f("dec_final_ln", self.dec_final_ln);
  }

  template <class F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  long long param_count() const {
    long long n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += (long long)t.size(); });
    return n;
  }

  void zero() {
    for_each([](const std::string&, Tensor<T>& t) { t.zero(); });
  }

  template <class U>
  Params<U> cast() const {
    Params<U> out = Params<U>::shaped(cfg);
    std::vector<const Tensor<T>*> src;
    for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    size_t i = 0;
    out.for_each([&](const std::string&, Tensor<U>& t) {
      for (size_t j = 0; j < t.size(); ++j) t.data[j] = U(src[i]->data[j]);
      ++i;
    });
    return out;
  }
};

template <class T>
std::vector<Tensor<T>*> tensor_list(Params<T>& p) {
  std::vector<Tensor<T>*> out;
  p.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}
template <class T>
std::vector<const Tensor<T>*> tensor_list(const Params<T>& p) {
  std::vector<const Tensor<T>*> out;
  p.for_each([&](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
  return out;
}

// Scaled uniform init, scale 1/sqrt(fan_in). Norm gains start at 1.
template <class T>
Params<T> init_model(const ModelConfig& cfg, Rng& rng) {
  Params<T> p = Params<T>::shaped(cfg);
  p.for_each([&](const std::string& name, Tensor<T>& t) {
    if (t.rows == 1) {  // norm gain
      std::fill(t.data.begin(), t.data.end(), T(1));
      return;
    }
    // embedding and position tables feed D-wide dot products; weight
    // matrices consume their row dimension
    int fan_in = (name == "embed" || name == "pos_enc" || name == "pos_dec") ? t.cols : t.rows;
    double scale = 1.0 / std::sqrt(double(fan_in));
    for (T& x : t.data) x = T((rng.uniform01() * 2.0 - 1.0) * scale);
  });
  return p;
}

// One padded batch. Decoder input is the target shifted right with PAD in
// the first slot (BOS == PAD convention).
struct Batch {
  int batch = 0, enc_len = 0, dec_len = 0;
  std::vector<int> enc_ids;       // [B, enc_len]
  std::vector<uint8_t> enc_mask;  // 1 = real token
  std::vector<int> dec_in;        // [B, dec_len]
  std::vector<int> dec_tgt;       // [B, dec_len]
  std::vector<uint8_t> tgt_mask;  // 1 = scored position

  long long target_tokens() const {
    long long n = 0;
    for (uint8_t m : tgt_mask) n += m;
    return n;
  }
};

inline Batch make_batch(const std::vector<std::pair<TokenSeq, TokenSeq>>& examples) {
  check(!examples.empty(), "make_batch: no examples");
  Batch b;
  b.batch = int(examples.size());
  for (const auto& [in, tgt] : examples) {
    check(!in.empty(), "make_batch: empty encoder input");
    check(!tgt.empty(), "make_batch: empty target");
    b.enc_len = std::max(b.enc_len, int(in.size()));
    b.dec_len = std::max(b.dec_len, int(tgt.size()));
  }
  b.enc_ids.assign(size_t(b.batch) * size_t(b.enc_len), Vocab::kPad);
  b.enc_mask.assign(size_t(b.batch) * size_t(b.enc_len), 0);
  b.dec_in.assign(size_t(b.batch) * size_t(b.dec_len), Vocab::kPad);
  b.dec_tgt.assign(size_t(b.batch) * size_t(b.dec_len), Vocab::kPad);
  b.tgt_mask.assign(size_t(b.batch) * size_t(b.dec_len), 0);
  for (int e = 0; e < b.batch; ++e) {
    const auto& [in, tgt] = examples[size_t(e)];
    for (size_t t = 0; t < in.size(); ++t) {
      b.enc_ids[size_t(e) * size_t(b.enc_len) + t] = in[t];
      b.enc_mask[size_t(e) * size_t(b.enc_len) + t] = 1;
    }
    for (size_t t = 0; t < tgt.size(); ++t) {
      size_t idx = size_t(e) * size_t(b.dec_len) + t;
      b.dec_tgt[idx] = tgt[t];
      b.tgt_mask[idx] = 1;
      if (t + 1 < tgt.size()) b.dec_in[size_t(e) * size_t(b.dec_len) + t + 1] = tgt[t];
    }
  }
  return b;
}

namespace nn {

constexpr double kNormEps = 1e-6;

// Reuse-friendly reshape: no zeroing, callers overwrite or zero explicitly.
template <class T>
void ensure(Tensor<T>& t, int rows, int cols) {
  if (t.rows != rows || t.cols != cols) {
    t.rows = rows;
    t.cols = cols;
    t.data.resize(size_t(rows) * size_t(cols));
  }
}

template <class T>
void rmsnorm_forward(const Tensor<T>& x, const Tensor<T>& gain, Tensor<T>& y, std::vector<T>& inv) {
  const int D = x.cols;
  ensure(y, x.rows, D);
  inv.assign(size_t(x.rows), T(0));
  for (int r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    T ms = dot_span(xr, xr, D) / T(D);
    T iv = T(1) / std::sqrt(ms + T(kNormEps));
    inv[size_t(r)] = iv;
    T* yr = y.row(r);
    const T* g = gain.row(0);
    for (int i = 0; i < D; ++i) yr[i] = g[i] * xr[i] * iv;
  }
}

template <class T>
void rmsnorm_backward(const Tensor<T>& x, const Tensor<T>& gain, const std::vector<T>& inv,
                      const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgain) {
  const int D = x.cols;
  for (int r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    const T* dyr = dy.row(r);
    const T* g = gain.row(0);
    T* dxr = dx.row(r);
    T* dg = dgain.row(0);
    const T iv = inv[size_t(r)];
    T dot_ax = 0;
    for (int i = 0; i < D; ++i) dot_ax += dyr[i] * g[i] * xr[i];
    const T coeff = dot_ax * iv * iv * iv / T(D);
    for (int i = 0; i < D; ++i) {
      dxr[i] += dyr[i] * g[i] * iv - coeff * xr[i];
      dg[i] += dyr[i] * xr[i] * iv;
    }
  }
}

// [B*T, D] -> head-major [(b*H + h)*T + t, dk]: each (b, h) block is a
// contiguous [T, dk] matrix, so per-head attention runs as dense GEMMs.
template <class T>
void split_heads(const Tensor<T>& x, int B, int Tlen, int H, Tensor<T>& out) {
  const int D = x.cols, dk = D / H;
  ensure(out, B * H * Tlen, dk);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < Tlen; ++t) {
      const T* src = x.row(b * Tlen + t);
      for (int h = 0; h < H; ++h) {
        T* dst = out.row((b * H + h) * Tlen + t);
        const T* s = src + h * dk;
        for (int i = 0; i < dk; ++i) dst[i] = s[i];
      }
    }
}

template <class T>
void merge_heads(const Tensor<T>& xh, int B, int Tlen, int H, Tensor<T>& out) {
  const int dk = xh.cols, D = dk * H;
  ensure(out, B * Tlen, D);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < Tlen; ++t) {
      T* dst = out.row(b * Tlen + t);
      for (int h = 0; h < H; ++h) {
        const T* src = xh.row((b * H + h) * Tlen + t);
        T* d = dst + h * dk;
        for (int i = 0; i < dk; ++i) d[i] = src[i];
      }
    }
}

template <class T>
struct AttnCache {
  Tensor<T> q, k, v;     // projected, model-major
  Tensor<T> qh, kh, vh;  // head-major blocks
  Tensor<T> probs;       // [B*H*Tq, Tk], normalized; masked entries zero
  Tensor<T> ctxh, ctx;
  // backward scratch
  Tensor<T> s_dctx, s_dctxh, s_dqh, s_dkh, s_dvh, s_dq, s_dk, s_dv;
};

// [Tk, dk] block -> [dk, Tk]; scores and dp then accumulate along the key
// axis with vector axpys instead of per-key horizontal dots.
template <class T>
void transpose_block(const T* src, int rows, int cols, Tensor<T>& dst) {
  ensure(dst, cols, rows);
  for (int r = 0; r < rows; ++r)
    for (int c0 = 0; c0 < cols; ++c0) dst.data[size_t(c0) * size_t(rows) + size_t(r)] = src[size_t(r) * size_t(cols) + c0];
}

// Multi-head scaled dot-product attention over head-major GEMM blocks.
// key_mask (may be null) marks real key positions per (b, u); causal
// restricts keys to u <= t.
template <class T>
void attention_forward(const AttnParams<T>& w, const Tensor<T>& x_q, const Tensor<T>& x_kv, int B,
                       int Tq, int Tk, const uint8_t* key_mask, bool causal, int num_heads,
                       AttnCache<T>& c, Tensor<T>& out) {
  const int D = x_q.cols;
  const int dk = D / num_heads;
  const T scale = T(1) / std::sqrt(T(dk));
  ensure(c.q, x_q.rows, D);
  ensure(c.k, x_kv.rows, D);
  ensure(c.v, x_kv.rows, D);
  gemm_nn(x_q, w.wq, c.q, false);
  gemm_nn(x_kv, w.wk, c.k, false);
  gemm_nn(x_kv, w.wv, c.v, false);
  split_heads(c.q, B, Tq, num_heads, c.qh);
  split_heads(c.k, B, Tk, num_heads, c.kh);
  split_heads(c.v, B, Tk, num_heads, c.vh);
  ensure(c.probs, B * num_heads * Tq, Tk);
  ensure(c.ctxh, B * num_heads * Tq, dk);
  WorkerPool::instance().run(B, 2, [&](long long b_lo, long long b_hi) {
  Tensor<T> kt;  // per-worker transpose scratch
  for (int b = int(b_lo); b < int(b_hi); ++b) {
    const uint8_t* km = key_mask ? key_mask + size_t(b) * size_t(Tk) : nullptr;
    for (int h = 0; h < num_heads; ++h) {
      const int blk = (b * num_heads + h);
      const T* V = c.vh.row(blk * Tk);
      transpose_block(c.kh.row(blk * Tk), Tk, dk, kt);
      for (int t = 0; t < Tq; ++t) {
        const T* qt = c.qh.row(blk * Tq + t);
        T* pr = c.probs.row(blk * Tq + t);
        const int k_hi = causal ? std::min(t + 1, Tk) : Tk;
        std::fill(pr, pr + Tk, T(0));
        for (int i = 0; i < dk; ++i)
          axpy_span(qt[i], kt.row(0) + size_t(i) * size_t(Tk), pr, k_hi);
        // masked keys get a score that underflows to an exact zero prob
        if (km)
          for (int u = 0; u < k_hi; ++u)
            if (!km[u]) pr[u] = T(-1e30);
        T mx = -std::numeric_limits<T>::infinity();
        for (int u = 0; u < k_hi; ++u) mx = std::max(mx, pr[u] * scale);
        T* ct = c.ctxh.row(blk * Tq + t);
        std::fill(ct, ct + dk, T(0));
        if (!(mx > T(-1e28))) {  // no keys at all: zero context
          std::fill(pr, pr + Tk, T(0));
          continue;
        }
        T denom = 0;
        for (int u = 0; u < k_hi; ++u) {
          pr[u] = softmax_exp(pr[u] * scale - mx);
          denom += pr[u];
        }
        const T dinv = T(1) / denom;
        for (int u = 0; u < k_hi; ++u) {
          if (pr[u] == T(0)) continue;
          pr[u] *= dinv;
          axpy_span(pr[u], V + size_t(u) * size_t(dk), ct, dk);
        }
      }
    }
  }
  });
  merge_heads(c.ctxh, B, Tq, num_heads, c.ctx);
  ensure(out, x_q.rows, D);
  gemm_nn(c.ctx, w.wo, out, false);
}

template <class T>
void attention_backward(const AttnParams<T>& w, const Tensor<T>& x_q, const Tensor<T>& x_kv, int B,
                        int Tq, int Tk, int num_heads, AttnCache<T>& c, const Tensor<T>& dout,
                        AttnParams<T>& gw, Tensor<T>& dx_q, Tensor<T>& dx_kv) {
  const int D = x_q.cols;
  const int dk = D / num_heads;
  const T scale = T(1) / std::sqrt(T(dk));
  ensure(c.s_dctx, x_q.rows, D);
  gemm_nt(dout, w.wo, c.s_dctx, false);
  gemm_tn(c.ctx, dout, gw.wo, true);
  split_heads(c.s_dctx, B, Tq, num_heads, c.s_dctxh);
  ensure(c.s_dqh, B * num_heads * Tq, dk);
  ensure(c.s_dkh, B * num_heads * Tk, dk);
  ensure(c.s_dvh, B * num_heads * Tk, dk);
  WorkerPool::instance().run(B, 2, [&](long long b_lo, long long b_hi) {
  Tensor<T> vt;  // per-worker transpose scratch
  std::vector<T> dp_buf(size_t(Tk), T(0));
  T* dp = dp_buf.data();
  for (int b = int(b_lo); b < int(b_hi); ++b) {
    for (int h = 0; h < num_heads; ++h) {
      const int blk = (b * num_heads + h);
      const T* K = c.kh.row(blk * Tk);
      transpose_block(c.vh.row(blk * Tk), Tk, dk, vt);
      T* dK = c.s_dkh.row(blk * Tk);
      T* dV = c.s_dvh.row(blk * Tk);
      std::fill(dK, dK + size_t(Tk) * size_t(dk), T(0));
      std::fill(dV, dV + size_t(Tk) * size_t(dk), T(0));
      for (int t = 0; t < Tq; ++t) {
        const T* pt = c.probs.row(blk * Tq + t);
        const T* dct = c.s_dctxh.row(blk * Tq + t);
        const T* qt = c.qh.row(blk * Tq + t);
        T* dqt = c.s_dqh.row(blk * Tq + t);
        std::fill(dqt, dqt + dk, T(0));
        std::fill(dp, dp + Tk, T(0));
        for (int i = 0; i < dk; ++i)
          axpy_span(dct[i], vt.row(0) + size_t(i) * size_t(Tk), dp, Tk);
        // masked entries carry p == 0 and drop out of every sum
        T dsum = 0;
        for (int u = 0; u < Tk; ++u) dsum += pt[u] * dp[u];
        for (int u = 0; u < Tk; ++u) {
          if (pt[u] == T(0)) continue;
          const T ds = pt[u] * (dp[u] - dsum) * scale;
          axpy_span(ds, K + size_t(u) * size_t(dk), dqt, dk);
          axpy_span(ds, qt, dK + size_t(u) * size_t(dk), dk);
          axpy_span(pt[u], dct, dV + size_t(u) * size_t(dk), dk);
        }
      }
    }
  }
  });
  merge_heads(c.s_dqh, B, Tq, num_heads, c.s_dq);
  merge_heads(c.s_dkh, B, Tk, num_heads, c.s_dk);
  merge_heads(c.s_dvh, B, Tk, num_heads, c.s_dv);
  gemm_nt(c.s_dq, w.wq, dx_q, true);
  gemm_tn(x_q, c.s_dq, gw.wq, true);
  gemm_nt(c.s_dk, w.wk, dx_kv, true);
  gemm_tn(x_kv, c.s_dk, gw.wk, true);
  gemm_nt(c.s_dv, w.wv, dx_kv, true);
  gemm_tn(x_kv, c.s_dv, gw.wv, true);
}

}  // namespace nn

template <class T>
struct LayerCache {
  Tensor<T> x_in;
  std::vector<T> inv1, inv2, inv3;
  Tensor<T> norm1;
  nn::AttnCache<T> self_attn;
  Tensor<T> x_mid1;
  Tensor<T> norm2;
  nn::AttnCache<T> cross_attn;  // decoder only
  Tensor<T> x_mid2;             // decoder only
  Tensor<T> norm3;              // decoder only
  Tensor<T> h1, h1_relu;
  Tensor<T> s_branch;  // attention / FF branch output scratch
  Tensor<T> s_dnorm1, s_dnorm2, s_dnorm3, s_dh;
};

template <class T>
struct Workspace {
  Tensor<T> enc_x0, dec_x0;
  std::vector<LayerCache<T>> enc, dec;
  Tensor<T> enc_prefinal, dec_prefinal;
  std::vector<T> enc_final_inv, dec_final_inv;
  Tensor<T> enc_out, dec_out;
  Tensor<T> logits;  // [B*Td, V]
  Tensor<T> probs;   // softmax of logits at scored rows
  Tensor<T> s_dx, s_dex, s_denc_out, s_ddec_out;
};

namespace nn {

template <class T>
void ff_forward(const Tensor<T>& normed, const Tensor<T>& w1, const Tensor<T>& w2,
                LayerCache<T>& c, Tensor<T>& out) {
  ensure(c.h1, normed.rows, w1.cols);
  gemm_nn(normed, w1, c.h1, false);
  c.h1_relu = c.h1;
  for (T& x : c.h1_relu.data) x = x > T(0) ? x : T(0);
  ensure(out, normed.rows, w2.cols);
  gemm_nn(c.h1_relu, w2, out, false);
}

// dnormed is overwritten (not accumulated); gw1/gw2 accumulate.
template <class T>
void ff_backward(const Tensor<T>& normed, const Tensor<T>& w1, const Tensor<T>& w2,
                 LayerCache<T>& c, const Tensor<T>& dout, Tensor<T>& gw1, Tensor<T>& gw2,
                 Tensor<T>& dnormed) {
  ensure(c.s_dh, c.h1.rows, c.h1.cols);
  gemm_nt(dout, w2, c.s_dh, false);
  gemm_tn(c.h1_relu, dout, gw2, true);
  for (size_t i = 0; i < c.s_dh.data.size(); ++i)
    if (c.h1.data[i] <= T(0)) c.s_dh.data[i] = T(0);
  ensure(dnormed, normed.rows, normed.cols);
  gemm_nt(c.s_dh, w1, dnormed, false);
  gemm_tn(normed, c.s_dh, gw1, true);
}

}  // namespace nn

namespace detail {

template <class T>
void embed_rows(const Params<T>& p, const std::vector<int>& ids, const Tensor<T>& pos, int B,
                int Tlen, Tensor<T>& out) {
  nn::ensure(out, B * Tlen, p.cfg.d_model);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < Tlen; ++t) {
      int id = ids[size_t(b) * size_t(Tlen) + size_t(t)];
      check(id >= 0 && id < p.cfg.vocab_size, "token id ", id, " out of range for vocab size ",
            p.cfg.vocab_size);
      T* r = out.row(b * Tlen + t);
      const T* e = p.embed.row(id);
      const T* q = pos.row(t);
      for (int i = 0; i < p.cfg.d_model; ++i) r[i] = e[i] + q[i];
    }
  }
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <class T>
void encode_stack(const Params<T>& p, const Batch& b, Workspace<T>& ws) {
  check(b.enc_len <= p.cfg.max_len, "encoder length ", b.enc_len, " exceeds max_len ", p.cfg.max_len);
  embed_rows(p, b.enc_ids, p.pos_enc, b.batch, b.enc_len, ws.enc_x0);
  if (int(ws.enc.size()) != p.cfg.num_layers) ws.enc.resize(size_t(p.cfg.num_layers));
  const Tensor<T>* x = &ws.enc_x0;
  for (int l = 0; l < p.cfg.num_layers; ++l) {
    auto& lp = p.enc[size_t(l)];
    auto& c = ws.enc[size_t(l)];
    c.x_in = *x;
    nn::rmsnorm_forward(c.x_in, lp.ln1, c.norm1, c.inv1);
    nn::attention_forward(lp.attn, c.norm1, c.norm1, b.batch, b.enc_len, b.enc_len,
                          b.enc_mask.data(), false, p.cfg.num_heads, c.self_attn, c.s_branch);
    c.x_mid1 = c.x_in;
    add_into(c.x_mid1, c.s_branch);
    nn::rmsnorm_forward(c.x_mid1, lp.ln2, c.norm2, c.inv2);
    nn::ff_forward(c.norm2, lp.w1, lp.w2, c, c.s_branch);
    Tensor<T>& x_out = l + 1 < p.cfg.num_layers ? ws.enc[size_t(l) + 1].x_in : ws.enc_prefinal;
    x_out = c.x_mid1;
    add_into(x_out, c.s_branch);
    x = &x_out;
  }
  nn::rmsnorm_forward(ws.enc_prefinal, p.enc_final_ln, ws.enc_out, ws.enc_final_inv);
}

template <class T>
void decode_stack(const Params<T>& p, const Batch& b, Workspace<T>& ws) {
  check(b.dec_len <= p.cfg.max_len, "decoder length ", b.dec_len, " exceeds max_len ", p.cfg.max_len);
  embed_rows(p, b.dec_in, p.pos_dec, b.batch, b.dec_len, ws.dec_x0);
  if (int(ws.dec.size()) != p.cfg.num_layers) ws.dec.resize(size_t(p.cfg.num_layers));
  const Tensor<T>* x = &ws.dec_x0;
  for (int l = 0; l < p.cfg.num_layers; ++l) {
    auto& lp = p.dec[size_t(l)];
    auto& c = ws.dec[size_t(l)];
    c.x_in = *x;
    nn::rmsnorm_forward(c.x_in, lp.ln1, c.norm1, c.inv1);
    nn::attention_forward(lp.self_attn, c.norm1, c.norm1, b.batch, b.dec_len, b.dec_len, nullptr,
                          true, p.cfg.num_heads, c.self_attn, c.s_branch);
    c.x_mid1 = c.x_in;
    add_into(c.x_mid1, c.s_branch);
    nn::rmsnorm_forward(c.x_mid1, lp.ln2, c.norm2, c.inv2);
    nn::attention_forward(lp.cross_attn, c.norm2, ws.enc_out, b.batch, b.dec_len, b.enc_len,
                          b.enc_mask.data(), false, p.cfg.num_heads, c.cross_attn, c.s_branch);
    c.x_mid2 = c.x_mid1;
    add_into(c.x_mid2, c.s_branch);
    nn::rmsnorm_forward(c.x_mid2, lp.ln3, c.norm3, c.inv3);
    nn::ff_forward(c.norm3, lp.w1, lp.w2, c, c.s_branch);
    Tensor<T>& x_out = l + 1 < p.cfg.num_layers ? ws.dec[size_t(l) + 1].x_in : ws.dec_prefinal;
    x_out = c.x_mid2;
    add_into(x_out, c.s_branch);
    x = &x_out;
  }
  nn::rmsnorm_forward(ws.dec_prefinal, p.dec_final_ln, ws.dec_out, ws.dec_final_inv);
}

}  // namespace detail

// Cross-entropy over scored target positions, averaged per token. Fills
// ws.logits (raw) and ws.probs (softmax at scored rows, zero elsewhere).
template <class T>
double forward(const Params<T>& p, const Batch& b, Workspace<T>& ws) {
  p.cfg.validate();
  check(b.batch > 0, "empty batch");
  for (int id : b.dec_tgt) check(id >= 0 && id < p.cfg.vocab_size, "target id ", id, " out of range");
  const long long n_tgt = b.target_tokens();
  check(n_tgt > 0, "whole batch is masked: no scored target positions");

  detail::encode_stack(p, b, ws);
  detail::decode_stack(p, b, ws);

  const int rows = b.batch * b.dec_len, V = p.cfg.vocab_size;
  nn::ensure(ws.logits, rows, V);
  gemm_nt(ws.dec_out, p.embed, ws.logits, false);
  nn::ensure(ws.probs, rows, V);
  double loss = 0;
  for (int r = 0; r < rows; ++r) {
    T* pr = ws.probs.row(r);
    if (!b.tgt_mask[size_t(r)]) {
      std::fill(pr, pr + V, T(0));
      continue;
    }
    const T* lr = ws.logits.row(r);
    T mx = lr[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, lr[v]);
    T denom = 0;
    for (int v = 0; v < V; ++v) {
      pr[v] = softmax_exp(lr[v] - mx);
      denom += pr[v];
    }
    const T dinv = T(1) / denom;
    for (int v = 0; v < V; ++v) pr[v] *= dinv;
    loss -= std::log(double(pr[b.dec_tgt[size_t(r)]]));
  }
  return loss / double(n_tgt);
}

template <class T>
double forward(const Params<T>& p, const Batch& b) {
  Workspace<T> ws;
  return forward(p, b, ws);
}

// Full backward pass; grads is overwritten. Throws (naming the tensor) if
// any gradient turns non-finite, and on non-finite loss.
template <class T>
double loss_and_grads(const Params<T>& p, const Batch& b, Params<T>& grads, Workspace<T>& ws) {
  double loss = forward(p, b, ws);
  check(std::isfinite(loss), "non-finite loss");
  grads.zero();

  const int rows = b.batch * b.dec_len;
  const long long n_tgt = b.target_tokens();
  const T inv_n = T(1.0 / double(n_tgt));

  // dlogits, reusing ws.probs in place
  Tensor<T>& dlogits = ws.probs;
  for (int r = 0; r < rows; ++r) {
    if (!b.tgt_mask[size_t(r)]) continue;  // rows already zero
    T* pr = dlogits.row(r);
    pr[b.dec_tgt[size_t(r)]] -= T(1);
    for (int v = 0; v < p.cfg.vocab_size; ++v) pr[v] *= inv_n;
  }

  nn::ensure(ws.s_ddec_out, rows, p.cfg.d_model);
  gemm_nn(dlogits, p.embed, ws.s_ddec_out, false);
  gemm_tn(dlogits, ws.dec_out, grads.embed, true);

  // decoder stack backward
  Tensor<T>& dx = ws.s_dx;
  nn::ensure(dx, rows, p.cfg.d_model);
  dx.zero();
  nn::rmsnorm_backward(ws.dec_prefinal, p.dec_final_ln, ws.dec_final_inv, ws.s_ddec_out, dx,
                       grads.dec_final_ln);
  nn::ensure(ws.s_denc_out, b.batch * b.enc_len, p.cfg.d_model);
  ws.s_denc_out.zero();
  for (int l = p.cfg.num_layers - 1; l >= 0; --l) {
    auto& lp = p.dec[size_t(l)];
    auto& gp = grads.dec[size_t(l)];
    auto& c = ws.dec[size_t(l)];
    // FF branch: dx covers both the residual path and the branch output
    nn::ff_backward(c.norm3, lp.w1, lp.w2, c, dx, gp.w1, gp.w2, c.s_dnorm3);
    nn::rmsnorm_backward(c.x_mid2, lp.ln3, c.inv3, c.s_dnorm3, dx, gp.ln3);
    // cross-attention: gradient flows into the decoder stream and enc_out
    nn::ensure(c.s_dnorm2, rows, p.cfg.d_model);
    c.s_dnorm2.zero();
    nn::attention_backward(lp.cross_attn, c.norm2, ws.enc_out, b.batch, b.dec_len, b.enc_len,
                           p.cfg.num_heads, c.cross_attn, dx, gp.cross_attn, c.s_dnorm2,
                           ws.s_denc_out);
    nn::rmsnorm_backward(c.x_mid1, lp.ln2, c.inv2, c.s_dnorm2, dx, gp.ln2);
    // causal self-attention
    nn::ensure(c.s_dnorm1, rows, p.cfg.d_model);
    c.s_dnorm1.zero();
    nn::attention_backward(lp.self_attn, c.norm1, c.norm1, b.batch, b.dec_len, b.dec_len,
                           p.cfg.num_heads, c.self_attn, dx, gp.self_attn, c.s_dnorm1, c.s_dnorm1);
    nn::rmsnorm_backward(c.x_in, lp.ln1, c.inv1, c.s_dnorm1, dx, gp.ln1);
  }
  // decoder embeddings
  for (int bb = 0; bb < b.batch; ++bb) {
    for (int t = 0; t < b.dec_len; ++t) {
      const int r = bb * b.dec_len + t;
      axpy_span(T(1), dx.row(r), grads.embed.row(b.dec_in[size_t(r)]), p.cfg.d_model);
      axpy_span(T(1), dx.row(r), grads.pos_dec.row(t), p.cfg.d_model);
    }
  }

  // encoder stack backward, seeded by the cross-attention gradient
  const int erows = b.batch * b.enc_len;
  Tensor<T>& dex = ws.s_dex;
  nn::ensure(dex, erows, p.cfg.d_model);
  dex.zero();
  nn::rmsnorm_backward(ws.enc_prefinal, p.enc_final_ln, ws.enc_final_inv, ws.s_denc_out, dex,
                       grads.enc_final_ln);
  for (int l = p.cfg.num_layers - 1; l >= 0; --l) {
    auto& lp = p.enc[size_t(l)];
    auto& gp = grads.enc[size_t(l)];
    auto& c = ws.enc[size_t(l)];
    nn::ff_backward(c.norm2, lp.w1, lp.w2, c, dex, gp.w1, gp.w2, c.s_dnorm2);
    nn::rmsnorm_backward(c.x_mid1, lp.ln2, c.inv2, c.s_dnorm2, dex, gp.ln2);
    nn::ensure(c.s_dnorm1, erows, p.cfg.d_model);
    c.s_dnorm1.zero();
    nn::attention_backward(lp.attn, c.norm1, c.norm1, b.batch, b.enc_len, b.enc_len,
                           p.cfg.num_heads, c.self_attn, dex, gp.attn, c.s_dnorm1, c.s_dnorm1);
    nn::rmsnorm_backward(c.x_in, lp.ln1, c.inv1, c.s_dnorm1, dex, gp.ln1);
  }
  for (int bb = 0; bb < b.batch; ++bb) {
    for (int t = 0; t < b.enc_len; ++t) {
      const int r = bb * b.enc_len + t;
      axpy_span(T(1), dex.row(r), grads.embed.row(b.enc_ids[size_t(r)]), p.cfg.d_model);
      axpy_span(T(1), dex.row(r), grads.pos_enc.row(t), p.cfg.d_model);
    }
  }

  grads.for_each([](const std::string& name, const Tensor<T>& t) {
    for (const T& x : t.data)
      if (!std::isfinite(double(x))) fail("non-finite gradient in tensor ", name);
  });
  return loss;
}

template <class T>
double loss_and_grads(const Params<T>& p, const Batch& b, Params<T>& grads) {
  Workspace<T> ws;
  return loss_and_grads(p, b, grads, ws);
}

template <class T>
struct OptState {
  long long step = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Params<T> m, v;
};

template <class T>
OptState<T> make_opt_state(const Params<T>& p, double lr) {
  OptState<T> st;
  st.lr = lr;
  st.m = Params<T>::shaped(p.cfg);
  st.v = Params<T>::shaped(p.cfg);
  return st;
}

// Standard Adam with bias correction.
template <class T>
void adam_step(Params<T>& p, const Params<T>& grads, OptState<T>& st) {
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
  auto pt = tensor_list(p);
  auto gt = tensor_list(grads);
  auto mt = tensor_list(st.m);
  auto vt = tensor_list(st.v);
  for (size_t i = 0; i < pt.size(); ++i) {
    check(gt[i]->size() == pt[i]->size(), "adam_step: gradient shape mismatch");
    for (size_t j = 0; j < pt[i]->size(); ++j) {
      const double g = double(gt[i]->data[j]);
      double m = st.beta1 * double(mt[i]->data[j]) + (1.0 - st.beta1) * g;
      double v = st.beta2 * double(vt[i]->data[j]) + (1.0 - st.beta2) * g * g;
      mt[i]->data[j] = T(m);
      vt[i]->data[j] = T(v);
      const double update = st.lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
      pt[i]->data[j] = T(double(pt[i]->data[j]) - update);
    }
  }
}

// Central-difference gradient verification at 64-bit precision. Samples at
// least min_coords coordinates, stratified across tensors. The relative
// error is guarded at 1e-4 so near-zero gradients are compared absolutely.
inline double finite_diff_check(const Params<double>& p, const Batch& b, double eps = 1e-5,
                                int min_coords = 200, uint64_t seed = 1) {
  Params<double> work = p;
  Params<double> grads = Params<double>::shaped(p.cfg);
  Workspace<double> ws;
  loss_and_grads(work, b, grads, ws);
  auto wt = tensor_list(work);
  auto gt = tensor_list(grads);
  const int per_tensor = std::max(2, int((min_coords + int(wt.size()) - 1) / int(wt.size())));
  Rng rng(seed);
  double max_err = 0;
  for (size_t i = 0; i < wt.size(); ++i) {
    for (int s = 0; s < per_tensor; ++s) {
      const size_t j = size_t(rng.below(wt[i]->size()));
      const double saved = wt[i]->data[j];
      wt[i]->data[j] = saved + eps;
      const double lp = forward(work, b, ws);
      wt[i]->data[j] = saved - eps;
      const double lm = forward(work, b, ws);
      wt[i]->data[j] = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = gt[i]->data[j];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      max_err = std::max(max_err, std::abs(numeric - analytic) / denom);
    }
  }
  return max_err;
}

// Single-query multi-head attention against cached K/V rows (used by
// greedy_decode). Uses the same dot, exp and accumulation order as the
// batched attention path, so the two agree bit for bit.
template <class T>
void attend_row(const T* q, const Tensor<T>& K, const Tensor<T>& V, int n_keys, int H, int dk,
                T scale, std::vector<T>& probs, T* ctx) {
  probs.assign(size_t(n_keys), T(0));
  for (int h = 0; h < H; ++h) {
    const int off = h * dk;
    T mx = -std::numeric_limits<T>::infinity();
    for (int u = 0; u < n_keys; ++u) {
      // sequential over the head dim: same per-element order as the batch
      // path's transposed-key accumulation
      const T* kr = K.row(u) + off;
      const T* qh = q + off;
      T acc = 0;
      for (int i = 0; i < dk; ++i) acc += qh[i] * kr[i];
      probs[size_t(u)] = acc;
      mx = std::max(mx, acc * scale);
    }
    T denom = 0;
    for (int u = 0; u < n_keys; ++u) {
      probs[size_t(u)] = softmax_exp(probs[size_t(u)] * scale - mx);
      denom += probs[size_t(u)];
    }
    const T dinv = T(1) / denom;
    for (int u = 0; u < n_keys; ++u) {
      T pu = probs[size_t(u)] * dinv;
      axpy_span(pu, V.row(u) + off, ctx + off, dk);
    }
  }
}

// Greedy argmax decoding with incrementally cached decoder self-attention
// and precomputed cross-attention keys/values. Stops at EOS or after
// max_len tokens; EOS is not part of the output.
template <class T>
TokenSeq greedy_decode(const Params<T>& p, const TokenSeq& input, int max_len) {
  p.cfg.validate();
  check(!input.empty(), "greedy_decode: empty input");
  check(int(input.size()) <= p.cfg.max_len, "greedy_decode: input length ", input.size(),
        " exceeds max_len ", p.cfg.max_len);
  const int D = p.cfg.d_model, H = p.cfg.num_heads, dk = D / H;
  const int Te = int(input.size());
  const int limit = std::min(max_len, p.cfg.max_len);

  Batch eb;
  eb.batch = 1;
  eb.enc_len = Te;
  eb.enc_ids = input;
  eb.enc_mask.assign(size_t(Te), 1);
  Workspace<T> ws;
  detail::encode_stack(p, eb, ws);

  const int L = p.cfg.num_layers;
  std::vector<Tensor<T>> cross_k, cross_v;
  cross_k.resize(size_t(L));
  cross_v.resize(size_t(L));
  for (int l = 0; l < L; ++l) {
    cross_k[size_t(l)] = Tensor<T>(Te, D);
    cross_v[size_t(l)] = Tensor<T>(Te, D);
    gemm_nn(ws.enc_out, p.dec[size_t(l)].cross_attn.wk, cross_k[size_t(l)], false);
    gemm_nn(ws.enc_out, p.dec[size_t(l)].cross_attn.wv, cross_v[size_t(l)], false);
  }
  std::vector<Tensor<T>> self_k(size_t(L), Tensor<T>(limit, D)),
      self_v(size_t(L), Tensor<T>(limit, D));

  const T scale = T(1) / std::sqrt(T(dk));
  TokenSeq out;
  int cur = Vocab::kPad;
  Tensor<T> x(1, D), tmp(1, D), normed(1, D), q(1, D), ctx(1, D), h1(1, p.cfg.d_ff);
  std::vector<T> inv, probs;
  Tensor<T> logits(1, p.cfg.vocab_size);
  for (int t = 0; t < limit; ++t) {
    const T* e = p.embed.row(cur);
    const T* ps = p.pos_dec.row(t);
    for (int i = 0; i < D; ++i) x.data[size_t(i)] = e[i] + ps[i];
    for (int l = 0; l < L; ++l) {
      const auto& lp = p.dec[size_t(l)];
      // causal self-attention over cached positions 0..t
      nn::rmsnorm_forward(x, lp.ln1, normed, inv);
      gemm_nn(normed, lp.self_attn.wq, q, false);
      gemm_nn(normed, lp.self_attn.wk, tmp, false);
      std::copy(tmp.data.begin(), tmp.data.end(), self_k[size_t(l)].row(t));
      gemm_nn(normed, lp.self_attn.wv, tmp, false);
      std::copy(tmp.data.begin(), tmp.data.end(), self_v[size_t(l)].row(t));
      ctx.zero();
      attend_row(q.row(0), self_k[size_t(l)], self_v[size_t(l)], t + 1, H, dk, scale, probs,
                 ctx.row(0));
      gemm_nn(ctx, lp.self_attn.wo, tmp, false);
      for (int i = 0; i < D; ++i) x.data[size_t(i)] += tmp.data[size_t(i)];
      // cross-attention over the encoder outputs
      nn::rmsnorm_forward(x, lp.ln2, normed, inv);
      gemm_nn(normed, lp.cross_attn.wq, q, false);
      ctx.zero();
      attend_row(q.row(0), cross_k[size_t(l)], cross_v[size_t(l)], Te, H, dk, scale, probs,
                 ctx.row(0));
      gemm_nn(ctx, lp.cross_attn.wo, tmp, false);
      for (int i = 0; i < D; ++i) x.data[size_t(i)] += tmp.data[size_t(i)];
      // feed-forward
      nn::rmsnorm_forward(x, lp.ln3, normed, inv);
      gemm_nn(normed, lp.w1, h1, false);
      for (T& y : h1.data) y = y > T(0) ? y : T(0);
      gemm_nn(h1, lp.w2, tmp, false);
      for (int i = 0; i < D; ++i) x.data[size_t(i)] += tmp.data[size_t(i)];
    }
    nn::rmsnorm_forward(x, p.dec_final_ln, normed, inv);
    gemm_nt(normed, p.embed, logits, false);
    int best = 0;
    for (int v = 1; v < p.cfg.vocab_size; ++v)
      if (logits.data[size_t(v)] > logits.data[size_t(best)]) best = v;
    if (best == Vocab::kEos) break;
    out.push_back(best);
    cur = best;
  }
  return out;
}

}  // namespace t2t

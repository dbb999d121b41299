// Self-supervised pretraining: nearest-codeword quantization with a
// stop-gradient loss, Fourier-spectrum prediction targets and heads,
// patch masking, and the optimizer loop around the encoder.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hear/autodiff.hpp"
#include "hear/errors.hpp"
#include "hear/model.hpp"
#include "hear/rng.hpp"
#include "hear/tensor.hpp"

namespace hear {

inline constexpr double kDefaultMaskRatio = 0.5;
// Bins whose amplitude falls below this get their phase pinned to zero.
inline constexpr double kSpectrumPhaseEps = 1e-12;
inline constexpr double kPretrainPi = 3.14159265358979323846;

inline std::size_t spectrum_bins(std::size_t window_len) {
  return window_len / 2 + 1;
}

// Adds the pretraining-only parameters to a model: the learnable mask
// token, the codebook (unit-normal rows, l2-normalized), and the two
// spectrum heads. Safe to call on a store that already has them.
template <typename T>
void add_pretrain_params(Model<T>& model, std::uint64_t seed) {
  if (model.params.has("mask_token")) return;
  Rng rng(mix64(seed, 0x70726574726e, 0));
  ParamStore<T>& ps = model.params;
  const std::size_t d = model.config.hidden_dim;
  const std::size_t k = model.config.codebook_size;
  const std::size_t f = spectrum_bins(model.config.window_len);

  detail::add_weight(ps, "mask_token", {d}, rng);
  Tensor<T> codebook = Tensor<T>::randn({k, d}, rng, T(1));
  for (std::size_t r = 0; r < k; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s += static_cast<double>(codebook[r * d + j]) *
           static_cast<double>(codebook[r * d + j]);
    }
    const double nrm = std::sqrt(s);
    if (nrm > 0.0) {
      for (std::size_t j = 0; j < d; ++j) {
        codebook[r * d + j] = static_cast<T>(codebook[r * d + j] / nrm);
      }
    }
  }
  ps.add("codebook", std::move(codebook));
  detail::add_weight(ps, "amp_head.w", {d, f}, rng);
  detail::add_zeros(ps, "amp_head.b", {f});
  detail::add_weight(ps, "phase_head.w", {d, f}, rng);
  detail::add_zeros(ps, "phase_head.b", {f});
}

namespace detail {

// Normalizes src[d] into dst; returns false for an exactly-zero vector,
// which is left as zeros.
template <typename T>
bool l2_normalize(const T* src, std::size_t d, double* dst) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    s += static_cast<double>(src[j]) * static_cast<double>(src[j]);
  }
  if (s == 0.0) {
    for (std::size_t j = 0; j < d; ++j) dst[j] = 0.0;
    return false;
  }
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t j = 0; j < d; ++j) {
    dst[j] = static_cast<double>(src[j]) * inv;
  }
  return true;
}

}  // namespace detail

// Nearest codeword after l2-normalizing both sides; ties break to the
// lowest index. A zero representation is equidistant from every unit
// codeword, so the tie rule assigns index 0 directly; the degenerate
// case is reported on stderr.
template <typename T>
std::vector<std::size_t> quantize(const Tensor<T>& reps,
                                  const Tensor<T>& codebook) {
  if (reps.rank() != 2 || codebook.rank() != 2 ||
      reps.dim(1) != codebook.dim(1)) {
    throw ShapeMismatch("quantize: reps " + shape_str(reps.shape()) +
                        " vs codebook " + shape_str(codebook.shape()));
  }
  const std::size_t n = reps.dim(0);
  const std::size_t d = reps.dim(1);
  const std::size_t k = codebook.dim(0);
  if (k == 0) throw ShapeMismatch("quantize: empty codebook");

  std::vector<double> cb(k * d);
  for (std::size_t r = 0; r < k; ++r) {
    detail::l2_normalize(codebook.data() + r * d, d, cb.data() + r * d);
  }
  std::vector<std::size_t> out(n);
  std::vector<double> pn(d);
  std::size_t zero_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::l2_normalize(reps.data() + i * d, d, pn.data())) {
      ++zero_count;
      out[i] = 0;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t r = 0; r < k; ++r) {
      double dist = 0.0;
      const double* vr = cb.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = pn[j] - vr[j];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_idx = r;
      }
    }
    out[i] = best_idx;
  }
  if (zero_count > 0) {
    std::fprintf(stderr,
                 "hear: quantize saw %zu zero representation(s), assigned "
                 "index 0\n",
                 zero_count);
  }
  return out;
}

template <typename T>
std::size_t quantize_one(const Tensor<T>& rep, const Tensor<T>& codebook) {
  Tensor<T> row({1, rep.size()}, rep.vec());
  return quantize(row, codebook)[0];
}

template <typename T>
struct QuantizationLoss {
  Var total;
  Var codebook_term;  // moves only the codebook
  Var commit_term;    // moves only the encoder
};

// Sum over rows of ||sg[l2(x)] - l2(v_z)||^2 + ||l2(x) - sg[l2(v_z)]||,
// with the second term an unsquared per-row norm.
template <typename T>
QuantizationLoss<T> quantization_loss(GraphBuilder<T>& gb, Var reps,
                                      const std::vector<std::size_t>& indices) {
  Tape<T>& tp = gb.tape();
  const Shape rs = tp.value(reps).shape();
  if (rs.size() != 2) {
    throw ShapeMismatch("quantization_loss: expected [N,D] reps");
  }
  if (indices.size() != rs[0]) {
    throw ShapeMismatch("quantization_loss: " + std::to_string(indices.size()) +
                        " indices for " + std::to_string(rs[0]) + " rows");
  }
  Var vz = tp.l2norm_rows(tp.gather_rows(gb.p("codebook"), indices));
  Var xn = tp.l2norm_rows(reps);
  QuantizationLoss<T> out;
  out.codebook_term = tp.sum(tp.square(tp.sub(tp.detach(xn), vz)));
  out.commit_term = tp.sum(tp.norm_rows(tp.sub(xn, tp.detach(vz))));
  out.total = tp.add(out.codebook_term, out.commit_term);
  return out;
}

template <typename T>
struct SpectrumTarget {
  Tensor<T> amplitude;  // [N, F], |DFT| / w
  Tensor<T> phase;      // [N, F], principal argument in (-pi, pi]
};

// Real DFT of each length-w row over bins 0..floor(w/2). Amplitude is
// magnitude over w; bins below kSpectrumPhaseEps get phase zero.
template <typename T>
SpectrumTarget<T> spectrum_targets(const Tensor<T>& patches) {
  const std::size_t w = patches.last_dim();
  if (patches.rank() < 1 || w < 2) {
    throw ShapeMismatch("spectrum_targets: rows must hold at least 2 samples");
  }
  const std::size_t n = patches.rows();
  const std::size_t f = spectrum_bins(w);
  SpectrumTarget<T> out{Tensor<T>({n, f}), Tensor<T>({n, f})};

  std::vector<double> cos_tab(f * w);
  std::vector<double> sin_tab(f * w);
  for (std::size_t k = 0; k < f; ++k) {
    for (std::size_t t = 0; t < w; ++t) {
      const double ang = -2.0 * kPretrainPi * static_cast<double>(k * t) /
                         static_cast<double>(w);
      cos_tab[k * w + t] = std::cos(ang);
      sin_tab[k * w + t] = std::sin(ang);
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = patches.data() + r * w;
    for (std::size_t k = 0; k < f; ++k) {
      double re = 0.0;
      double im = 0.0;
      const double* ct = cos_tab.data() + k * w;
      const double* st = sin_tab.data() + k * w;
      for (std::size_t t = 0; t < w; ++t) {
        const double v = static_cast<double>(x[t]);
        re += v * ct[t];
        im += v * st[t];
      }
      const double amp = std::sqrt(re * re + im * im) / static_cast<double>(w);
      out.amplitude[r * f + k] = static_cast<T>(amp);
      const double ph = amp < kSpectrumPhaseEps
                            ? 0.0
                            : detail::wrap_to_pi(std::atan2(im, re));
      out.phase[r * f + k] = static_cast<T>(ph);
    }
  }
  return out;
}

// Inverse of spectrum_targets for a real signal: every interior bin
// contributes twice (conjugate pair), bin 0 and the Nyquist bin once.
template <typename T>
Tensor<T> spectrum_reconstruct(const SpectrumTarget<T>& st,
                               std::size_t window_len) {
  const std::size_t w = window_len;
  const std::size_t f = spectrum_bins(w);
  if (st.amplitude.rank() != 2 || st.amplitude.dim(1) != f ||
      !st.amplitude.same_shape(st.phase)) {
    throw ShapeMismatch("spectrum_reconstruct: target shape");
  }
  const std::size_t n = st.amplitude.dim(0);
  Tensor<T> out({n, w});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < f; ++k) {
      const double a = static_cast<double>(st.amplitude[r * f + k]);
      const double ph = static_cast<double>(st.phase[r * f + k]);
      const bool single = k == 0 || (w % 2 == 0 && k == w / 2);
      const double scale = single ? 1.0 : 2.0;
      for (std::size_t t = 0; t < w; ++t) {
        const double ang = 2.0 * kPretrainPi * static_cast<double>(k * t) /
                               static_cast<double>(w) +
                           ph;
        out[r * w + t] += static_cast<T>(scale * a * std::cos(ang));
      }
    }
  }
  return out;
}

// ||A~ - A||^2 + ||wrap(psi~ - psi)|| summed over masked rows only;
// unmasked predictions receive exactly zero gradient.
template <typename T>
Var spectrum_loss(Tape<T>& tp, Var amp_pred, Var phase_pred,
                  const Tensor<T>& amp_target, const Tensor<T>& phase_target,
                  const std::vector<std::uint8_t>& masked) {
  const Shape as = tp.value(amp_pred).shape();
  if (as.size() != 2 || tp.value(phase_pred).shape() != as ||
      amp_target.shape() != as || phase_target.shape() != as) {
    throw ShapeMismatch("spectrum_loss: prediction/target shapes differ");
  }
  if (masked.size() != as[0]) {
    throw ShapeMismatch("spectrum_loss: mask length " +
                        std::to_string(masked.size()) + " for " +
                        std::to_string(as[0]) + " rows");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) rows.push_back(i);
  }
  if (rows.empty()) return tp.constant(Tensor<T>::scalar(T(0)));

  const std::size_t f = as[1];
  Tensor<T> at({rows.size(), f});
  Tensor<T> pt({rows.size(), f});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(amp_target.data() + rows[i] * f, f, at.data() + i * f);
    std::copy_n(phase_target.data() + rows[i] * f, f, pt.data() + i * f);
  }
  Var amp_err = tp.sum(
      tp.square(tp.sub(tp.gather_rows(amp_pred, rows), tp.constant(at))));
  Var phase_err = tp.sum(tp.norm_rows(tp.wrap_phase(
      tp.sub(tp.gather_rows(phase_pred, rows), tp.constant(pt)))));
  return tp.add(amp_err, phase_err);
}

struct MaskPlan {
  std::vector<std::uint8_t> mask;  // [C * N_t], channel-major
  std::size_t channels = 0;
  std::size_t time_patches = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t masked_count() const {
    std::size_t n = 0;
    for (std::uint8_t m : mask) n += m;
    return n;
  }
};

// Uniform patch-level masking without structure; the masked count is
// round(ratio * C * N_t) with half rounding up.
inline MaskPlan make_mask_plan(std::size_t channels, std::size_t time_patches,
                               double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("mask ratio must lie in (0, 1)");
  }
  MaskPlan plan;
  plan.channels = channels;
  plan.time_patches = time_patches;
  plan.ratio = ratio;
  plan.seed = seed;
  const std::size_t n = channels * time_patches;
  plan.mask.assign(n, 0);
  const std::size_t want = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(n) + 0.5));
  Rng rng(mix64(seed, 0x6d61736b, 0));
  const std::vector<std::size_t> order = rng.permutation(n);
  for (std::size_t i = 0; i < want && i < n; ++i) plan.mask[order[i]] = 1;
  return plan;
}

// --- optimizer ------------------------------------------------------------

// Decoupled weight decay over adaptive moments; moment state is kept in
// double regardless of the parameter scalar type.
template <typename T>
class AdamW {
 public:
  explicit AdamW(const ParamStore<T>& params, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8,
                 double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params.value(i).size(), 0.0);
      v_[i].assign(params.value(i).size(), 0.0);
    }
  }

  std::size_t steps_taken() const { return t_; }

  // Parameters whose flag is false are skipped entirely: no moment
  // update, no weight decay. Frozen-backbone fine-tuning uses this.
  void set_trainable(std::vector<char> mask) {
    if (mask.size() != m_.size()) {
      throw ConfigError("trainable mask does not match parameter store");
    }
    trainable_ = std::move(mask);
  }

  void step(ParamStore<T>& params, double lr) {
    if (params.count() != m_.size()) {
      throw ConfigError("optimizer state does not match parameter store");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (!trainable_.empty() && !trainable_[i]) continue;
      Tensor<T>& p = params.value(i);
      const Tensor<T>& g = params.grad(i);
      std::vector<double>& m = m_[i];
      std::vector<double>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        const double pj = static_cast<double>(p[j]);
        p[j] = static_cast<T>(
            pj - lr * (mh / (std::sqrt(vh) + eps_) + weight_decay_ * pj));
      }
    }
  }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  double weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::vector<char> trainable_;
};

inline double cosine_lr(double base, std::size_t step,
                        std::size_t total_steps) {
  if (total_steps == 0) return base;
  const double frac = std::min(
      1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base * 0.5 * (1.0 + std::cos(kPretrainPi * frac));
}

// --- the training step ----------------------------------------------------

struct PretrainConfig {
  double mask_ratio = kDefaultMaskRatio;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t total_steps = 1;  // cosine horizon
  std::uint64_t seed = 0;
};

template <typename T>
struct PretrainBatch {
  Tensor<T> patches;  // [B, C, N_t, w], layout-homogeneous
  Tensor<T> coords;   // [C, 3]
  std::vector<std::uint64_t> sample_ids;
  std::string layout_signature;
};

template <typename T>
struct PretrainLosses {
  Var total;
  Var loss_q;
  Var loss_s;
  Var reps;                              // [B*C*N_t, D] encoder outputs
  std::vector<std::uint8_t> mask_rows;   // [B*C*N_t]
  std::vector<std::size_t> indices;      // codeword per patch row
};

// Builds the joint objective on the caller's tape: masked forward pass,
// quantization of all patch outputs, and spectrum heads supervised on
// the masked rows only. Masks are keyed on (run seed, sample id), so a
// sample keeps one plan for the whole run.
template <typename T>
PretrainLosses<T> pretrain_losses(GraphBuilder<T>& gb,
                                  const PretrainBatch<T>& batch,
                                  const PretrainConfig& cfg) {
  Tape<T>& tp = gb.tape();
  if (batch.patches.rank() != 4) {
    throw ShapeMismatch("pretrain_losses: expected [B,C,N_t,w] patches");
  }
  const std::size_t b = batch.patches.dim(0);
  const std::size_t c = batch.patches.dim(1);
  const std::size_t nt = batch.patches.dim(2);
  const std::size_t w = batch.patches.dim(3);
  if (batch.sample_ids.size() != b) {
    throw ShapeMismatch("pretrain_losses: " +
                        std::to_string(batch.sample_ids.size()) +
                        " sample ids for batch of " + std::to_string(b));
  }
  const std::size_t d = gb.config().hidden_dim;

  PretrainLosses<T> out;
  out.mask_rows.assign(b * c * nt, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const MaskPlan plan = make_mask_plan(
        c, nt, cfg.mask_ratio, mix64(cfg.seed, batch.sample_ids[i], 0));
    std::copy(plan.mask.begin(), plan.mask.end(),
              out.mask_rows.begin() + i * c * nt);
  }

  ForwardOptions<T> opt;
  opt.mask_rows = &out.mask_rows;
  ForwardResult<T> fr = full_forward(gb, tp.constant(batch.patches),
                                     tp.constant(batch.coords), opt);
  out.reps = tp.reshape(fr.patch_hidden, {b * c * nt, d});
  out.indices =
      quantize(tp.value(out.reps), gb.model().params.value("codebook"));
  QuantizationLoss<T> ql = quantization_loss(gb, out.reps, out.indices);

  Tensor<T> rows({b * c * nt, w}, batch.patches.vec());
  const SpectrumTarget<T> target = spectrum_targets(rows);
  Var amp_pred = gb.affine(out.reps, "amp_head.w", "amp_head.b");
  Var phase_pred = gb.affine(out.reps, "phase_head.w", "phase_head.b");
  out.loss_s = spectrum_loss(tp, amp_pred, phase_pred, target.amplitude,
                             target.phase, out.mask_rows);
  out.loss_q = ql.total;
  out.total = tp.add(out.loss_q, out.loss_s);
  return out;
}

struct PretrainStepResult {
  double loss_q = 0.0;
  double loss_s = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

// One optimizer step. A non-finite loss aborts before any state is
// touched: parameters, gradients, and moments all stay as they were.
template <typename T>
PretrainStepResult pretrain_step(Model<T>& model, AdamW<T>& opt,
                                 const PretrainBatch<T>& batch,
                                 const PretrainConfig& cfg,
                                 std::size_t step_index) {
  Tape<T> tape;
  GraphBuilder<T> gb(tape, model);
  PretrainLosses<T> losses = pretrain_losses(gb, batch, cfg);
  PretrainStepResult res;
  res.loss_q = static_cast<double>(tape.value(losses.loss_q)[0]);
  res.loss_s = static_cast<double>(tape.value(losses.loss_s)[0]);
  res.total = static_cast<double>(tape.value(losses.total)[0]);
  if (!std::isfinite(res.total)) {
    throw NonFiniteLoss("pretrain step " + std::to_string(step_index) +
                        ": loss " + std::to_string(res.total));
  }
  model.params.zero_grads();
  tape.backward(losses.total);
  res.lr = cosine_lr(cfg.lr, step_index, cfg.total_steps);
  opt.step(model.params, res.lr);
  return res;
}

// Append-only training log: `step, L_Q, L_S, total, lr, layout_signature`.
class TrainLog {
 public:
  explicit TrainLog(const std::string& path)
      : os_(path, std::ios::out | std::ios::app) {
    if (!os_) throw ParseError("cannot open training log: " + path);
  }

  void append(std::size_t step, const PretrainStepResult& r,
              const std::string& layout_signature) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%zu, %.6e, %.6e, %.6e, %.6e, %s\n", step,
                  r.loss_q, r.loss_s, r.total, r.lr, layout_signature.c_str());
    os_ << buf;
    os_.flush();
  }

 private:
  std::ofstream os_;
};

}  // namespace hear

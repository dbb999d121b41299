// Deterministic preprocessing: average reference, rational-rate
// resampling, zero-phase bandpass filtering, and segmentation into
// non-overlapping fixed-length patches. All operations are pure
// functions; intermediate arithmetic runs in double regardless of the
// stored scalar type.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

#include "hear/dictionary.hpp"
#include "hear/errors.hpp"
#include "hear/tensor.hpp"

namespace hear {

// Multichannel recording, samples in microvolts, data laid out [C, T].
template <typename T>
struct Recording {
  Tensor<T> data;
  double sample_rate = 0.0;
  LayoutMapping layout;

  std::size_t channels() const { return data.rank() ? data.dim(0) : 0; }
  std::size_t samples() const { return data.rank() > 1 ? data.dim(1) : 0; }
};

// Segmented view of a recording: patches laid out [C, N_t, w].
template <typename T>
struct PatchTensor {
  Tensor<T> patches;
  std::size_t window_len = 0;
  LayoutMapping layout;

  std::size_t channels() const { return patches.rank() ? patches.dim(0) : 0; }
  std::size_t time_patches() const {
    return patches.rank() > 1 ? patches.dim(1) : 0;
  }
};

struct PipelineConfig {
  double target_rate = 200.0;
  double band_lo = 1.0;
  double band_hi = 75.0;
  std::size_t window_len = 200;
  // Applied after filtering; input samples are microvolts, so 0.01
  // rescales to units of 100 microvolts.
  double scale = 0.01;
};

// Subtracts the per-timepoint mean across channels from every channel.
template <typename T>
Recording<T> average_reference(const Recording<T>& rec) {
  const std::size_t c = rec.channels();
  const std::size_t t = rec.samples();
  Recording<T> out = rec;
  if (c == 0) return out;
  for (std::size_t j = 0; j < t; ++j) {
    double mean = 0.0;
    for (std::size_t e = 0; e < c; ++e) {
      mean += static_cast<double>(rec.data[e * t + j]);
    }
    mean /= static_cast<double>(c);
    for (std::size_t e = 0; e < c; ++e) {
      out.data[e * t + j] =
          static_cast<T>(static_cast<double>(rec.data[e * t + j]) - mean);
    }
  }
  return out;
}

namespace detail {

inline long long ceil_div_ll(long long a, long long b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Reduces a source/target rate pair to the coprime upsample/downsample
// factors (L, M) with target/source = L/M. Non-integer rates are
// resolved at millihertz granularity.
inline std::pair<std::uint64_t, std::uint64_t> rational_rate(double source,
                                                             double target) {
  auto near_int = [](double r) {
    return std::abs(r - std::round(r)) < 1e-9 * std::max(1.0, std::abs(r));
  };
  std::uint64_t s = 0;
  std::uint64_t d = 0;
  if (near_int(source) && near_int(target)) {
    s = static_cast<std::uint64_t>(std::llround(source));
    d = static_cast<std::uint64_t>(std::llround(target));
  } else {
    s = static_cast<std::uint64_t>(std::llround(source * 1000.0));
    d = static_cast<std::uint64_t>(std::llround(target * 1000.0));
  }
  const std::uint64_t g = std::gcd(s, d);
  return {d / g, s / g};
}

// Windowed-sinc interpolation kernels for rational resampling.
inline constexpr std::size_t kResampleZeroCrossings = 32;
inline constexpr double kResampleCutoffFactor = 0.95;

// Prototype low-pass kernel on the L-fold upsampled grid, indices
// shifted so the table covers j in [-half, half]. Blackman window.
inline std::vector<double> resample_kernel(std::uint64_t up, std::uint64_t down,
                                           std::size_t& half_out) {
  const double pi = std::numbers::pi;
  const auto lm = static_cast<double>(std::max(up, down));
  const std::size_t half =
      kResampleZeroCrossings * static_cast<std::size_t>(std::max(up, down));
  const double wc = kResampleCutoffFactor * pi / lm;
  std::vector<double> h(2 * half + 1);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double j = static_cast<double>(i) - static_cast<double>(half);
    const double sinc = j == 0.0 ? wc / pi : std::sin(wc * j) / (pi * j);
    const double x = pi * j / static_cast<double>(half);
    const double win = 0.42 + 0.5 * std::cos(x) + 0.08 * std::cos(2.0 * x);
    h[i] = sinc * win;
  }
  half_out = half;
  return h;
}

}  // namespace detail

// Rational-rate polyphase resampler. Output length is exactly
// floor(T * target / source); equal rates return the input bitwise.
// Each polyphase branch is normalized to unit DC gain.
template <typename T>
Recording<T> resample(const Recording<T>& rec, double target_rate) {
  if (!std::isfinite(rec.sample_rate) || rec.sample_rate <= 0.0) {
    throw InvalidRate("resample: non-positive source rate");
  }
  if (!std::isfinite(target_rate) || target_rate <= 0.0) {
    throw InvalidRate("resample: non-positive target rate");
  }
  const auto [up, down] = detail::rational_rate(rec.sample_rate, target_rate);
  Recording<T> out = rec;
  out.sample_rate = target_rate;
  if (up == down) return out;

  const std::size_t c = rec.channels();
  const std::size_t t_in = rec.samples();
  const auto t_out = static_cast<std::size_t>(
      static_cast<std::uint64_t>(t_in) * up / down);
  std::size_t half = 0;
  const std::vector<double> h = detail::resample_kernel(up, down, half);
  const auto half_ll = static_cast<long long>(half);
  const auto up_ll = static_cast<long long>(up);
  const auto down_ll = static_cast<long long>(down);

  std::vector<double> inv_branch(up, 1.0);
  for (long long r = 0; r < up_ll; ++r) {
    double sum = 0.0;
    for (long long j = r; j <= half_ll; j += up_ll) sum += h[j + half_ll];
    for (long long j = r - up_ll; j >= -half_ll; j -= up_ll) {
      sum += h[j + half_ll];
    }
    inv_branch[r] = 1.0 / sum;
  }

  Tensor<T> y({c, t_out});
  for (std::size_t e = 0; e < c; ++e) {
    const T* x = rec.data.data() + e * t_in;
    for (std::size_t n = 0; n < t_out; ++n) {
      const long long center = static_cast<long long>(n) * down_ll;
      const long long branch = center % up_ll;
      long long m_lo = detail::ceil_div_ll(center - half_ll, up_ll);
      long long m_hi = (center + half_ll) / up_ll;
      m_lo = std::max(m_lo, 0LL);
      m_hi = std::min(m_hi, static_cast<long long>(t_in) - 1);
      double acc = 0.0;
      for (long long m = m_lo; m <= m_hi; ++m) {
        acc += static_cast<double>(x[m]) * h[center - m * up_ll + half_ll];
      }
      y[e * t_out + n] = static_cast<T>(acc * inv_branch[branch]);
    }
  }
  out.data = std::move(y);
  return out;
}

// Linear-phase Hamming-window FIR bandpass. Odd tap count spanning one
// second at the working rate (201 taps at 200 Hz). The upper edge is
// clamped to 0.999 of Nyquist before validation.
struct BandpassDesign {
  std::vector<double> taps;
  double lo = 0.0;
  double hi = 0.0;
};

inline BandpassDesign design_bandpass(double sample_rate, double lo_hz,
                                      double hi_hz) {
  if (!std::isfinite(sample_rate) || sample_rate <= 0.0) {
    throw InvalidRate("bandpass: non-positive sample rate");
  }
  const double pi = std::numbers::pi;
  const double nyquist = sample_rate / 2.0;
  const double hi_eff = std::min(hi_hz, 0.999 * nyquist);
  if (!(lo_hz > 0.0) || !(lo_hz < hi_eff)) {
    throw InvalidBand("bandpass: invalid band " + std::to_string(lo_hz) +
                      ".." + std::to_string(hi_eff) + " Hz");
  }
  std::size_t n_taps = static_cast<std::size_t>(std::llround(sample_rate)) + 1;
  if (n_taps % 2 == 0) ++n_taps;
  const std::size_t half = n_taps / 2;

  BandpassDesign d;
  d.lo = lo_hz;
  d.hi = hi_eff;
  d.taps.resize(n_taps);
  const double w1 = 2.0 * pi * lo_hz / sample_rate;
  const double w2 = 2.0 * pi * hi_eff / sample_rate;
  for (std::size_t i = 0; i < n_taps; ++i) {
    const double j = static_cast<double>(i) - static_cast<double>(half);
    const double ideal =
        j == 0.0 ? (w2 - w1) / pi : (std::sin(w2 * j) - std::sin(w1 * j)) / (pi * j);
    const double win =
        0.54 + 0.46 * std::cos(pi * j / static_cast<double>(half));
    d.taps[i] = ideal * win;
  }
  return d;
}

namespace detail {

// Causal FIR pass over the whole buffer; samples before the start are
// treated as zero.
inline void fir_causal(const std::vector<double>& x,
                       const std::vector<double>& taps,
                       std::vector<double>& y) {
  const std::size_t n = x.size();
  const std::size_t k = taps.size();
  y.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j_max = std::min(k - 1, i);
    double acc = 0.0;
    for (std::size_t j = 0; j <= j_max; ++j) acc += taps[j] * x[i - j];
    y[i] = acc;
  }
}

}  // namespace detail

// Zero-phase bandpass: the FIR is applied forward and backward over an
// odd-reflection extension of exactly the filter warm-up length, so the
// retained span never sees a cold start.
template <typename T>
Recording<T> bandpass_filter(const Recording<T>& rec, double lo_hz,
                             double hi_hz) {
  const BandpassDesign d = design_bandpass(rec.sample_rate, lo_hz, hi_hz);
  const std::size_t n_taps = d.taps.size();
  const std::size_t t = rec.samples();
  if (t < 3 * n_taps) {
    throw SignalTooShort("bandpass: " + std::to_string(t) +
                         " samples, need at least " +
                         std::to_string(3 * n_taps));
  }
  const std::size_t pad = n_taps - 1;
  const std::size_t c = rec.channels();
  Recording<T> out = rec;
  std::vector<double> ext(t + 2 * pad);
  std::vector<double> fwd;
  std::vector<double> bwd;
  for (std::size_t e = 0; e < c; ++e) {
    const T* x = rec.data.data() + e * t;
    for (std::size_t i = 0; i < pad; ++i) {
      ext[i] = 2.0 * static_cast<double>(x[0]) -
               static_cast<double>(x[pad - i]);
    }
    for (std::size_t i = 0; i < t; ++i) {
      ext[pad + i] = static_cast<double>(x[i]);
    }
    for (std::size_t i = 0; i < pad; ++i) {
      ext[pad + t + i] = 2.0 * static_cast<double>(x[t - 1]) -
                         static_cast<double>(x[t - 2 - i]);
    }
    detail::fir_causal(ext, d.taps, fwd);
    std::reverse(fwd.begin(), fwd.end());
    detail::fir_causal(fwd, d.taps, bwd);
    std::reverse(bwd.begin(), bwd.end());
    T* o = out.data.data() + e * t;
    for (std::size_t i = 0; i < t; ++i) o[i] = static_cast<T>(bwd[pad + i]);
  }
  return out;
}

// Splits each channel into floor(T / w) non-overlapping windows of w
// samples; the trailing remainder is discarded.
template <typename T>
PatchTensor<T> segment_patches(const Recording<T>& rec, std::size_t w) {
  if (w < 1) throw ShapeMismatch("segment_patches: window length must be >= 1");
  const std::size_t c = rec.channels();
  const std::size_t t = rec.samples();
  const std::size_t n_t = t / w;
  PatchTensor<T> out;
  out.window_len = w;
  out.layout = rec.layout;
  out.patches = Tensor<T>({c, n_t, w});
  for (std::size_t e = 0; e < c; ++e) {
    for (std::size_t p = 0; p < n_t; ++p) {
      std::copy_n(rec.data.data() + e * t + p * w, w,
                  out.patches.data() + (e * n_t + p) * w);
    }
  }
  return out;
}

template <typename T>
Recording<T> apply_scale(const Recording<T>& rec, double factor) {
  Recording<T> out = rec;
  for (auto& v : out.data.vec()) {
    v = static_cast<T>(static_cast<double>(v) * factor);
  }
  return out;
}

// Full pipeline in fixed order: reference, resample, filter, scale,
// segment.
template <typename T>
PatchTensor<T> preprocess(const Recording<T>& rec,
                          const PipelineConfig& cfg = {}) {
  Recording<T> r = average_reference(rec);
  r = resample(r, cfg.target_rate);
  r = bandpass_filter(r, cfg.band_lo, cfg.band_hi);
  if (cfg.scale != 1.0) r = apply_scale(r, cfg.scale);
  return segment_patches(r, cfg.window_len);
}

}  // namespace hear

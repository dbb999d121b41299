#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "hear/signal.hpp"
#include "hear/tensor.hpp"

using hear::Recording;
using hear::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

Recording<double> make_recording(std::size_t c, std::size_t t, double rate) {
  Recording<double> rec;
  rec.data = Tensor<double>({c, t});
  rec.sample_rate = rate;
  return rec;
}

Recording<double> sine_recording(std::size_t t, double rate, double freq,
                                 double amplitude = 1.0, double phase = 0.0) {
  Recording<double> rec = make_recording(1, t, rate);
  for (std::size_t i = 0; i < t; ++i) {
    rec.data[i] =
        amplitude * std::sin(2.0 * kPi * freq * static_cast<double>(i) / rate +
                             phase);
  }
  return rec;
}

// Least-squares fit of a sin + b cos at a fixed frequency; returns the
// fitted amplitude. Exact for a pure sinusoid even over a non-integer
// number of periods.
double fit_amplitude(const double* y, std::size_t n, double freq, double rate) {
  double sss = 0.0, scc = 0.0, ssc = 0.0, sys = 0.0, syc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 2.0 * kPi * freq * static_cast<double>(i) / rate;
    const double s = std::sin(w);
    const double c = std::cos(w);
    sss += s * s;
    scc += c * c;
    ssc += s * c;
    sys += y[i] * s;
    syc += y[i] * c;
  }
  const double det = sss * scc - ssc * ssc;
  const double a = (sys * scc - syc * ssc) / det;
  const double b = (sss * syc - ssc * sys) / det;
  return std::hypot(a, b);
}

}  // namespace

TEST_CASE("average reference subtracts per-timepoint channel mean") {
  Recording<double> rec = make_recording(2, 2, 200.0);
  rec.data.vec() = {1.0, 3.0, 3.0, 5.0};
  const Recording<double> out = hear::average_reference(rec);
  CHECK(out.data.vec() == std::vector<double>{-1.0, -1.0, 1.0, 1.0});
  CHECK(out.sample_rate == 200.0);
}

TEST_CASE("average reference on a single channel yields zeros") {
  Recording<double> rec = make_recording(1, 5, 200.0);
  rec.data.vec() = {4.0, -2.0, 7.0, 0.5, 3.25};
  const Recording<double> out = hear::average_reference(rec);
  for (double v : out.data.vec()) CHECK(v == 0.0);
}

TEST_CASE("average reference leaves zero-mean columns unchanged") {
  Recording<double> rec = make_recording(2, 3, 200.0);
  rec.data.vec() = {1.0, -2.0, 0.5, -1.0, 2.0, -0.5};
  const Recording<double> out = hear::average_reference(rec);
  CHECK(out.data.vec() == rec.data.vec());
}

TEST_CASE("average reference output has near-zero channel mean and is "
          "idempotent") {
  hear::Rng rng(77);
  Recording<double> rec = make_recording(7, 64, 200.0);
  double peak = 0.0;
  for (auto& v : rec.data.vec()) {
    v = 50.0 * rng.next_normal();
    peak = std::max(peak, std::abs(v));
  }
  const Recording<double> once = hear::average_reference(rec);
  for (std::size_t j = 0; j < 64; ++j) {
    double mean = 0.0;
    for (std::size_t e = 0; e < 7; ++e) mean += once.data[e * 64 + j];
    mean /= 7.0;
    CHECK(std::abs(mean) <= 1e-6 * peak);
  }
  const Recording<double> twice = hear::average_reference(once);
  for (std::size_t i = 0; i < once.data.size(); ++i) {
    CHECK(twice.data[i] == Catch::Approx(once.data[i]).margin(1e-9 * peak));
  }
}

TEST_CASE("resample output length is the floor of the exact ratio") {
  struct Case {
    std::size_t t;
    double src, dst;
    std::size_t expect;
  };
  const Case cases[] = {
      {800, 400.0, 200.0, 400}, {801, 400.0, 200.0, 400},
      {799, 400.0, 200.0, 399}, {1000, 250.0, 200.0, 800},
      {1001, 250.0, 200.0, 800}, {100, 200.0, 512.0, 256},
      {101, 200.0, 512.0, 258},
  };
  for (const Case& c : cases) {
    Recording<double> rec = make_recording(1, c.t, c.src);
    const Recording<double> out = hear::resample(rec, c.dst);
    INFO(c.t << " samples at " << c.src << " -> " << c.dst);
    CHECK(out.samples() == c.expect);
    CHECK(out.sample_rate == c.dst);
  }
}

TEST_CASE("resample at the source rate is a bitwise identity") {
  hear::Rng rng(3);
  Recording<double> rec = make_recording(3, 500, 200.0);
  for (auto& v : rec.data.vec()) v = rng.next_normal();
  const Recording<double> out = hear::resample(rec, 200.0);
  REQUIRE(out.data.size() == rec.data.size());
  CHECK(std::memcmp(out.data.data(), rec.data.data(),
                    rec.data.size() * sizeof(double)) == 0);
}

TEST_CASE("resample rejects non-positive rates") {
  Recording<double> rec = make_recording(1, 100, 200.0);
  CHECK_THROWS_AS(hear::resample(rec, 0.0), hear::InvalidRate);
  CHECK_THROWS_AS(hear::resample(rec, -5.0), hear::InvalidRate);
  rec.sample_rate = 0.0;
  CHECK_THROWS_AS(hear::resample(rec, 200.0), hear::InvalidRate);
}

TEST_CASE("downsampling a pure sine matches the analytic sine") {
  const double phase = 0.7;
  const Recording<double> rec = sine_recording(800, 400.0, 10.0, 1.0, phase);
  const Recording<double> out = hear::resample(rec, 200.0);
  REQUIRE(out.samples() == 400);
  for (std::size_t n = 64; n + 64 < 400; ++n) {
    const double expect =
        std::sin(2.0 * kPi * 10.0 * static_cast<double>(n) / 200.0 + phase);
    CHECK(std::abs(out.data[n] - expect) < 1e-3);
  }
}

TEST_CASE("upsampling a pure sine matches the analytic sine") {
  const Recording<double> rec = sine_recording(800, 200.0, 10.0, 1.0, 0.3);
  const Recording<double> out = hear::resample(rec, 400.0);
  REQUIRE(out.samples() == 1600);
  for (std::size_t n = 128; n + 128 < 1600; ++n) {
    const double expect =
        std::sin(2.0 * kPi * 10.0 * static_cast<double>(n) / 400.0 + 0.3);
    CHECK(std::abs(out.data[n] - expect) < 1e-3);
  }
}

TEST_CASE("rational-rate resampling matches the analytic sine") {
  const Recording<double> rec = sine_recording(1000, 250.0, 10.0, 2.0, 1.1);
  const Recording<double> out = hear::resample(rec, 200.0);
  REQUIRE(out.samples() == 800);
  for (std::size_t n = 100; n + 100 < 800; ++n) {
    const double expect =
        2.0 * std::sin(2.0 * kPi * 10.0 * static_cast<double>(n) / 200.0 + 1.1);
    CHECK(std::abs(out.data[n] - expect) < 1e-3 * 2.0);
  }
}

TEST_CASE("bandpass design uses an odd one-second tap count") {
  const hear::BandpassDesign d200 = hear::design_bandpass(200.0, 1.0, 75.0);
  CHECK(d200.taps.size() == 201);
  CHECK(d200.lo == 1.0);
  CHECK(d200.hi == 75.0);
  const hear::BandpassDesign d250 = hear::design_bandpass(250.0, 1.0, 75.0);
  CHECK(d250.taps.size() == 251);
  CHECK(d250.taps.size() % 2 == 1);
}

TEST_CASE("bandpass upper edge clamps below Nyquist") {
  const hear::BandpassDesign d = hear::design_bandpass(120.0, 1.0, 75.0);
  CHECK(d.taps.size() == 121);
  CHECK(d.hi == Catch::Approx(0.999 * 60.0));
  CHECK(d.hi < 60.0);
}

TEST_CASE("bandpass rejects an empty band") {
  CHECK_THROWS_AS(hear::design_bandpass(200.0, 40.0, 40.0),
                  hear::InvalidBand);
  CHECK_THROWS_AS(hear::design_bandpass(200.0, 50.0, 40.0),
                  hear::InvalidBand);
  CHECK_THROWS_AS(hear::design_bandpass(200.0, 0.0, 75.0), hear::InvalidBand);
  // Clamping pulls the upper edge below the lower one.
  CHECK_THROWS_AS(hear::design_bandpass(120.0, 60.0, 75.0),
                  hear::InvalidBand);
}

TEST_CASE("bandpass rejects signals shorter than three filter lengths") {
  Recording<double> rec = make_recording(1, 602, 200.0);
  CHECK_THROWS_AS(hear::bandpass_filter(rec, 1.0, 75.0),
                  hear::SignalTooShort);
  Recording<double> ok = make_recording(1, 603, 200.0);
  CHECK_NOTHROW(hear::bandpass_filter(ok, 1.0, 75.0));
}

TEST_CASE("passband tone passes with near-unit gain") {
  const Recording<double> rec = sine_recording(1000, 200.0, 40.0, 5.0);
  const Recording<double> out = hear::bandpass_filter(rec, 1.0, 75.0);
  const double amp = fit_amplitude(out.data.data() + 201, 1000 - 402, 40.0,
                                   200.0);
  const double ratio = amp / 5.0;
  CHECK(ratio >= 0.89);
  CHECK(ratio <= 1.12);
}

TEST_CASE("slow drift is attenuated by at least 20 dB") {
  const Recording<double> rec = sine_recording(4000, 200.0, 0.1, 3.0);
  const Recording<double> out = hear::bandpass_filter(rec, 1.0, 75.0);
  const double amp = fit_amplitude(out.data.data() + 300, 4000 - 600, 0.1,
                                   200.0);
  CHECK(amp / 3.0 <= 0.1);
}

TEST_CASE("stopband tone above the band is attenuated by at least 20 dB") {
  // 1.5x the 60 Hz upper edge at a 200 Hz rate.
  const Recording<double> rec = sine_recording(2000, 200.0, 90.0, 2.0);
  const Recording<double> out = hear::bandpass_filter(rec, 1.0, 60.0);
  const double amp = fit_amplitude(out.data.data() + 300, 2000 - 600, 90.0,
                                   200.0);
  CHECK(amp / 2.0 <= 0.1);
}

TEST_CASE("filter response is symmetric around a centered impulse") {
  Recording<double> rec = make_recording(1, 700, 200.0);
  rec.data[350] = 1.0;
  const Recording<double> out = hear::bandpass_filter(rec, 1.0, 75.0);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < 700; ++i) {
    if (std::abs(out.data[i]) > std::abs(out.data[peak])) peak = i;
  }
  CHECK(peak == 350);
  for (std::size_t k = 1; k <= 300; ++k) {
    CHECK(out.data[350 + k] ==
          Catch::Approx(out.data[350 - k]).margin(1e-12));
  }
}

TEST_CASE("zero-phase filtering leaves the cross-correlation peak at lag "
          "zero") {
  Recording<double> rec = make_recording(1, 1200, 200.0);
  for (std::size_t i = 0; i < 1200; ++i) {
    const double t = static_cast<double>(i) / 200.0;
    rec.data[i] = std::sin(2.0 * kPi * 5.0 * t) +
                  0.7 * std::sin(2.0 * kPi * 15.0 * t + 0.4) +
                  0.5 * std::sin(2.0 * kPi * 30.0 * t + 1.9);
  }
  const Recording<double> out = hear::bandpass_filter(rec, 1.0, 75.0);
  double best = 0.0;
  int best_lag = -99;
  for (int lag = -5; lag <= 5; ++lag) {
    double corr = 0.0;
    for (std::size_t i = 300; i < 900; ++i) {
      corr += rec.data[i] * out.data[static_cast<std::size_t>(
                                static_cast<long long>(i) + lag)];
    }
    if (corr > best) {
      best = corr;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);
}

TEST_CASE("segmentation splits into floor(T/w) verbatim patches") {
  Recording<double> rec = make_recording(2, 450, 200.0);
  for (std::size_t i = 0; i < rec.data.size(); ++i) {
    rec.data[i] = static_cast<double>(i);
  }
  const hear::PatchTensor<double> pt = hear::segment_patches(rec, 200);
  REQUIRE(pt.patches.shape() == hear::Shape{2, 2, 200});
  CHECK(pt.window_len == 200);
  for (std::size_t e = 0; e < 2; ++e) {
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t k = 0; k < 200; ++k) {
        REQUIRE(pt.patches.at({e, p, k}) == rec.data[e * 450 + p * 200 + k]);
      }
    }
  }
}

TEST_CASE("segmentation boundary cases") {
  Recording<double> exact = make_recording(3, 200, 200.0);
  CHECK(hear::segment_patches(exact, 200).patches.shape() ==
        hear::Shape{3, 1, 200});
  Recording<double> shorter = make_recording(3, 199, 200.0);
  const hear::PatchTensor<double> empty = hear::segment_patches(shorter, 200);
  CHECK(empty.patches.shape() == hear::Shape{3, 0, 200});
  CHECK(empty.patches.size() == 0);
}

TEST_CASE("concatenating patches reproduces the segmented prefix") {
  hear::Rng rng(11);
  Recording<double> rec = make_recording(2, 333, 200.0);
  for (auto& v : rec.data.vec()) v = rng.next_normal();
  const hear::PatchTensor<double> pt = hear::segment_patches(rec, 50);
  REQUIRE(pt.patches.shape() == hear::Shape{2, 6, 50});
  for (std::size_t e = 0; e < 2; ++e) {
    for (std::size_t i = 0; i < 300; ++i) {
      REQUIRE(pt.patches[(e * 6 + i / 50) * 50 + i % 50] ==
              rec.data[e * 333 + i]);
    }
  }
}

TEST_CASE("pipeline output is bit-identical across runs") {
  hear::Rng rng(5);
  Recording<double> rec = make_recording(4, 1300, 250.0);
  for (auto& v : rec.data.vec()) v = 20.0 * rng.next_normal();
  const hear::PipelineConfig cfg;
  const hear::PatchTensor<double> a = hear::preprocess(rec, cfg);
  const hear::PatchTensor<double> b = hear::preprocess(rec, cfg);
  REQUIRE(a.patches.size() == b.patches.size());
  CHECK(std::memcmp(a.patches.data(), b.patches.data(),
                    a.patches.size() * sizeof(double)) == 0);
}

TEST_CASE("pipeline resamples, scales, and segments end to end") {
  hear::Rng rng(9);
  // 3.2 s at 400 Hz: resampling to 200 Hz gives 640 samples, three
  // one-second patches.
  Recording<double> rec = make_recording(2, 1280, 400.0);
  for (auto& v : rec.data.vec()) v = 30.0 * rng.next_normal();
  hear::PipelineConfig cfg;
  const hear::PatchTensor<double> scaled = hear::preprocess(rec, cfg);
  REQUIRE(scaled.patches.shape() == hear::Shape{2, 3, 200});
  cfg.scale = 1.0;
  const hear::PatchTensor<double> raw = hear::preprocess(rec, cfg);
  for (std::size_t i = 0; i < raw.patches.size(); ++i) {
    REQUIRE(scaled.patches[i] == Catch::Approx(0.01 * raw.patches[i])
                                     .epsilon(1e-12)
                                     .margin(1e-300));
  }
}

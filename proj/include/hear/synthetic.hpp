// Synthetic EEG corpus with planted, layout-dependent class structure.
// Class c rides a 10+2c Hz sinusoid on one hemisphere, keyed to the
// sign of the electrode x-coordinate, so labels are recoverable only
// through electrode geometry. Containers are byte-identical per seed.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "hear/container.hpp"
#include "hear/dictionary.hpp"
#include "hear/errors.hpp"
#include "hear/rng.hpp"
#include "hear/tensor.hpp"

namespace hear {

struct SynthSpec {
  std::vector<std::vector<std::string>> layouts;
  std::size_t samples_per_layout = 0;
  std::size_t classes = 2;
  double sample_rate = 200.0;
  double duration = 3.2;  // seconds
  double noise_sigma = 1.0;
  std::size_t window_len = 200;  // samples must cover one model window
  std::uint64_t seed = 0;
};

inline constexpr double kSynthBaseHz = 10.0;
inline constexpr double kSynthStepHz = 2.0;
inline constexpr double kPlantedAmplitudeFactor = 3.0;
// With zero noise the planted tone still needs a nonzero amplitude.
inline constexpr double kNoiselessAmplitude = 1.0;

namespace detail {
inline constexpr std::uint64_t kSynthSubsetTag = 0x73796e7468;  // "synth"
inline constexpr double kSynthPi = 3.14159265358979323846;
}  // namespace detail

inline double planted_frequency(std::size_t cls) {
  return kSynthBaseHz + kSynthStepHz * static_cast<double>(cls);
}

inline double planted_amplitude(double noise_sigma) {
  return noise_sigma > 0.0 ? kPlantedAmplitudeFactor * noise_sigma
                           : kNoiselessAmplitude;
}

// Even classes live on the left hemisphere (x < 0), odd on the right;
// midline electrodes (x == 0) never carry the tone.
inline bool channel_planted(std::size_t cls, double x) {
  return cls % 2 == 0 ? x < 0.0 : x > 0.0;
}

namespace detail {

inline void validate_synth(const SynthSpec& spec) {
  if (spec.layouts.empty()) {
    throw ConfigError("generate: spec has no layouts");
  }
  if (spec.samples_per_layout < 1) {
    throw ConfigError("generate: samples_per_layout must be >= 1");
  }
  if (spec.classes < 1) {
    throw ConfigError("generate: classes must be >= 1");
  }
  if (!(spec.sample_rate > 0.0) || !std::isfinite(spec.sample_rate)) {
    throw ConfigError("generate: sample rate must be positive");
  }
  if (!(spec.duration > 0.0) || !std::isfinite(spec.duration)) {
    throw ConfigError("generate: duration must be positive");
  }
  if (spec.noise_sigma < 0.0 || !std::isfinite(spec.noise_sigma)) {
    throw ConfigError("generate: noise sigma must be >= 0");
  }
  const double timepoints = spec.duration * spec.sample_rate;
  if (timepoints < static_cast<double>(spec.window_len)) {
    throw ConfigError("generate: duration * sample_rate = " +
                      std::to_string(timepoints) +
                      " is shorter than one window of " +
                      std::to_string(spec.window_len));
  }
  const double top_hz = planted_frequency(spec.classes - 1);
  if (top_hz >= spec.sample_rate / 2.0) {
    throw ConfigError("generate: class frequency " + std::to_string(top_hz) +
                      " Hz reaches the Nyquist rate");
  }
}

inline LayoutMapping resolve_layout(const GlobalDictionary& dict,
                                    const std::vector<std::string>& channels,
                                    const std::string& subset_id) {
  LayoutMapping mapping;
  try {
    mapping = map_layout(dict, channels, subset_id);
  } catch (const EmptyLayout&) {
    throw UnresolvableLayout("subset '" + subset_id +
                             "': no channel resolves in the dictionary");
  }
  if (!mapping.dropped.empty()) {
    const std::size_t bad = mapping.dropped.front().first;
    throw UnresolvableLayout("subset '" + subset_id + "': channel '" +
                             channels[bad] + "' does not resolve");
  }
  if (mapping.channel_count() < 2) {
    throw UnresolvableLayout("subset '" + subset_id +
                             "': needs at least 2 EEG channels, has " +
                             std::to_string(mapping.channel_count()));
  }
  return mapping;
}

}  // namespace detail

// Writes the dataset container (manifest, one subset file per layout,
// labels sidecar) into `dir` and returns the manifest. Labels cycle
// through the classes within each subset.
inline Manifest generate(const SynthSpec& spec, const GlobalDictionary& dict,
                         const std::string& dir) {
  detail::validate_synth(spec);
  const std::size_t timepoints = static_cast<std::size_t>(
      std::llround(spec.duration * spec.sample_rate));

  std::vector<LayoutMapping> mappings;
  std::vector<std::string> subset_ids;
  for (std::size_t k = 0; k < spec.layouts.size(); ++k) {
    char id[16];
    std::snprintf(id, sizeof(id), "s%03zu", k);
    subset_ids.emplace_back(id);
    mappings.push_back(
        detail::resolve_layout(dict, spec.layouts[k], subset_ids.back()));
  }

  std::filesystem::create_directories(dir);
  Manifest manifest;
  std::vector<int> labels;
  const double amp = planted_amplitude(spec.noise_sigma);
  for (std::size_t k = 0; k < spec.layouts.size(); ++k) {
    const LayoutMapping& mapping = mappings[k];
    const std::size_t c = mapping.channel_count();
    SubsetInfo info;
    info.subset_id = subset_ids[k];
    info.layout_signature = layout_signature(mapping);
    info.channels = spec.layouts[k];
    info.sample_rate = spec.sample_rate;
    info.num_samples = spec.samples_per_layout;

    std::vector<float> payload(spec.samples_per_layout * c * timepoints);
    Rng rng(mix64(spec.seed, detail::kSynthSubsetTag, k));
    for (std::size_t i = 0; i < spec.samples_per_layout; ++i) {
      const std::size_t cls = i % spec.classes;
      labels.push_back(static_cast<int>(cls));
      const double hz = planted_frequency(cls);
      for (std::size_t e = 0; e < c; ++e) {
        float* row = payload.data() + (i * c + e) * timepoints;
        const bool planted = channel_planted(cls, mapping.coordinates[e][0]);
        const double phase =
            planted ? 2.0 * detail::kSynthPi * rng.next_double() : 0.0;
        for (std::size_t t = 0; t < timepoints; ++t) {
          double v = spec.noise_sigma * rng.next_normal();
          if (planted) {
            v += amp * std::sin(2.0 * detail::kSynthPi * hz *
                                    static_cast<double>(t) / spec.sample_rate +
                                phase);
          }
          row[t] = static_cast<float>(v);
        }
      }
    }
    SubsetHeader header;
    header.channels = c;
    header.samples_per_channel = timepoints;
    header.sample_rate = spec.sample_rate;
    header.channel_names = spec.layouts[k];
    write_subset(subset_path(dir, info.subset_id), header, payload);
    manifest.subsets.push_back(std::move(info));
  }
  write_manifest(dir, manifest);
  write_labels(dir, labels);
  return manifest;
}

// --- bandpower reference classifier -----------------------------------------

// Power of `signal` at `hz` from direct correlation with a complex
// exponential; frequencies between DFT bins are fine.
template <typename T>
double bandpower(const T* signal, std::size_t n, double rate, double hz) {
  double re = 0.0;
  double im = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double angle =
        2.0 * detail::kSynthPi * hz * static_cast<double>(t) / rate;
    re += static_cast<double>(signal[t]) * std::cos(angle);
    im -= static_cast<double>(signal[t]) * std::sin(angle);
  }
  const double scale = static_cast<double>(n);
  return (re * re + im * im) / (scale * scale);
}

// Model-free reference classifier over a raw [channels, timepoints]
// frame: score each class by the mean power at its frequency across its
// hemisphere's channels, highest score wins (ties to the lowest class).
template <typename T>
std::size_t classify_by_bandpower(
    const Tensor<T>& frame, const std::vector<std::array<double, 3>>& coords,
    double rate, std::size_t classes) {
  if (frame.rank() != 2 || frame.dim(0) != coords.size()) {
    throw ShapeMismatch("classify_by_bandpower: frame does not match coords");
  }
  if (classes < 1) throw ConfigError("classify_by_bandpower: no classes");
  const std::size_t c = frame.dim(0);
  const std::size_t n = frame.dim(1);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t cls = 0; cls < classes; ++cls) {
    const double hz = planted_frequency(cls);
    double score = 0.0;
    std::size_t members = 0;
    for (std::size_t e = 0; e < c; ++e) {
      if (!channel_planted(cls, coords[e][0])) continue;
      score += bandpower(frame.data() + e * n, n, rate, hz);
      ++members;
    }
    if (members > 0) score /= static_cast<double>(members);
    if (score > best_score) {
      best_score = score;
      best = cls;
    }
  }
  return best;
}

}  // namespace hear

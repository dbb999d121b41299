#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "hear/container.hpp"
#include "hear/dictionary.hpp"
#include "hear/pretrain.hpp"
#include "hear/scheduler.hpp"
#include "hear/synthetic.hpp"
#include "test_util.hpp"

using hear::testutil::fixture_dictionary_path;
using hear::testutil::TempDir;

namespace {

hear::GlobalDictionary fixture_dict() {
  return hear::load_dictionary(fixture_dictionary_path());
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

hear::SynthSpec small_spec() {
  hear::SynthSpec spec;
  spec.layouts = {{"F3", "F4", "C3", "C4"}, {"O1", "O2", "P3", "P4"}};
  spec.samples_per_layout = 4;
  spec.classes = 2;
  spec.sample_rate = 200.0;
  spec.duration = 1.0;
  spec.noise_sigma = 1.0;
  spec.window_len = 200;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST_CASE("generated container has the promised shape") {
  const auto dict = fixture_dict();
  TempDir dir;
  const hear::SynthSpec spec = small_spec();
  const hear::Manifest manifest = hear::generate(spec, dict, dir.path());

  REQUIRE(manifest.subsets.size() == 2);
  CHECK(manifest.total_samples() == 8);
  for (std::size_t k = 0; k < 2; ++k) {
    const hear::SubsetInfo& info = manifest.subsets[k];
    CHECK(info.subset_id == (k == 0 ? "s000" : "s001"));
    CHECK(info.channels == spec.layouts[k]);
    CHECK(info.sample_rate == 200.0);
    CHECK(info.num_samples == 4);
    const hear::LayoutMapping mapping =
        hear::map_layout(dict, spec.layouts[k]);
    CHECK(info.layout_signature == hear::layout_signature(mapping));
  }

  // The on-disk manifest round-trips to the returned one.
  const hear::Manifest reread = hear::read_manifest(dir.path());
  REQUIRE(reread.subsets.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(reread.subsets[k].subset_id == manifest.subsets[k].subset_id);
    CHECK(reread.subsets[k].layout_signature ==
          manifest.subsets[k].layout_signature);
    CHECK(reread.subsets[k].channels == manifest.subsets[k].channels);
    CHECK(reread.subsets[k].num_samples == manifest.subsets[k].num_samples);
  }

  // Subset payloads have the declared geometry.
  for (std::size_t k = 0; k < 2; ++k) {
    hear::SubsetReader reader(
        hear::subset_path(dir.path(), manifest.subsets[k].subset_id));
    CHECK(reader.header().channels == 4);
    CHECK(reader.header().samples_per_channel == 200);
    CHECK(reader.num_samples() == 4);
  }

  // Labels cycle through the classes within each subset.
  const std::vector<int> labels = hear::read_labels(dir.path());
  CHECK(labels == std::vector<int>{0, 1, 0, 1, 0, 1, 0, 1});
}

TEST_CASE("zero noise plants one pure tone per hemisphere") {
  const auto dict = fixture_dict();
  TempDir dir;
  hear::SynthSpec spec = small_spec();
  spec.layouts = {{"F3", "F4", "C3", "C4", "O1", "O2"}};
  spec.noise_sigma = 0.0;
  spec.samples_per_layout = 4;
  const hear::Manifest manifest = hear::generate(spec, dict, dir.path());

  const hear::LayoutMapping mapping = hear::map_layout(dict, spec.layouts[0]);
  hear::SubsetReader reader(hear::subset_path(dir.path(), "s000"));

  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t cls = i % 2;
    const double hz = hear::planted_frequency(cls);
    // Duration 1 s at 200 Hz puts every planted tone on an exact DFT bin.
    const std::size_t tone_bin = static_cast<std::size_t>(hz);
    const hear::Tensor<float> frame = reader.read_sample(i);
    for (std::size_t e = 0; e < mapping.channel_count(); ++e) {
      const bool planted =
          hear::channel_planted(cls, mapping.coordinates[e][0]);
      hear::Tensor<float> row({1, 200});
      std::copy_n(frame.data() + e * 200, 200, row.data());
      const auto st = hear::spectrum_targets(row);
      for (std::size_t f = 0; f < st.amplitude.dim(1); ++f) {
        const double a = st.amplitude[f];
        if (planted && f == tone_bin) {
          // Unit amplitude sinusoid: |X_k|/w == 1/2 at the tone bin.
          CHECK(std::abs(a - 0.5) < 1e-4);
        } else {
          CHECK(std::abs(a) < 1e-4);
        }
      }
    }
  }

  // Sanity: the fixture coordinates actually split this layout 3/3.
  std::size_t left = 0;
  for (const auto& p : mapping.coordinates) left += p[0] < 0.0 ? 1 : 0;
  CHECK(left == 3);
  CHECK(manifest.subsets.size() == 1);
}

TEST_CASE("same seed reproduces the container byte for byte") {
  const auto dict = fixture_dict();
  const hear::SynthSpec spec = small_spec();

  TempDir a, b;
  hear::generate(spec, dict, a.path());
  hear::generate(spec, dict, b.path());
  for (const char* name : {"manifest", "s000.hsub", "s001.hsub", "labels"}) {
    CHECK(read_bytes(a.file(name)) == read_bytes(b.file(name)));
  }

  hear::SynthSpec other = spec;
  other.seed = 8;
  TempDir c;
  hear::generate(other, dict, c.path());
  CHECK(read_bytes(a.file("s000.hsub")) != read_bytes(c.file("s000.hsub")));
}

TEST_CASE("layouts that do not resolve cleanly are rejected") {
  const auto dict = fixture_dict();
  TempDir dir;
  hear::SynthSpec spec = small_spec();

  SECTION("unknown channel name") {
    spec.layouts = {{"F3", "F4", "Bogus"}};
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::UnresolvableLayout);
  }
  SECTION("non-EEG channel") {
    spec.layouts = {{"F3", "F4", "LO1"}};
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::UnresolvableLayout);
  }
  SECTION("duplicate channel") {
    spec.layouts = {{"F3", "F4", "F3"}};
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::UnresolvableLayout);
  }
  SECTION("single channel is too few") {
    spec.layouts = {{"F3"}};
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::UnresolvableLayout);
  }
  SECTION("empty layout") {
    spec.layouts = {{}};
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::UnresolvableLayout);
  }
}

TEST_CASE("impossible settings are rejected up front") {
  const auto dict = fixture_dict();
  TempDir dir;

  const auto expect_config_error = [&](void (*tweak)(hear::SynthSpec&)) {
    hear::SynthSpec spec = small_spec();
    tweak(spec);
    CHECK_THROWS_AS(hear::generate(spec, dict, dir.path()),
                    hear::ConfigError);
  };

  expect_config_error([](hear::SynthSpec& s) { s.layouts.clear(); });
  expect_config_error([](hear::SynthSpec& s) { s.samples_per_layout = 0; });
  expect_config_error([](hear::SynthSpec& s) { s.classes = 0; });
  expect_config_error([](hear::SynthSpec& s) { s.noise_sigma = -0.5; });
  expect_config_error([](hear::SynthSpec& s) { s.sample_rate = 0.0; });
  expect_config_error([](hear::SynthSpec& s) { s.sample_rate = -200.0; });
  expect_config_error(
      [](hear::SynthSpec& s) { s.duration = 0.5; });  // 100 < window 200
  // 10 + 2*45 = 100 Hz collides with Nyquist at 200 Hz sampling.
  expect_config_error([](hear::SynthSpec& s) { s.classes = 46; });

  // The boundary cases just inside the limits are accepted.
  hear::SynthSpec ok = small_spec();
  ok.duration = 1.0;
  ok.classes = 45;
  ok.samples_per_layout = 45;  // cover every class at least once
  CHECK_NOTHROW(hear::generate(ok, dict, dir.path()));
}

TEST_CASE("bandpower oracle separates the planted classes") {
  const auto dict = fixture_dict();
  TempDir dir;
  hear::SynthSpec spec = small_spec();
  spec.samples_per_layout = 100;
  spec.noise_sigma = 1.0;
  spec.seed = 11;
  const hear::Manifest manifest = hear::generate(spec, dict, dir.path());

  const std::vector<int> labels = hear::read_labels(dir.path());
  REQUIRE(labels.size() == manifest.total_samples());
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t global = 0;
  for (std::size_t k = 0; k < manifest.subsets.size(); ++k) {
    const hear::LayoutMapping mapping =
        hear::map_layout(dict, spec.layouts[k]);
    hear::SubsetReader reader(
        hear::subset_path(dir.path(), manifest.subsets[k].subset_id));
    for (std::size_t i = 0; i < reader.num_samples(); ++i, ++global) {
      const hear::Tensor<float> frame = reader.read_sample(i);
      const std::size_t pred = hear::classify_by_bandpower(
          frame, mapping.coordinates, spec.sample_rate, spec.classes);
      correct += pred == static_cast<std::size_t>(labels[global]) ? 1 : 0;
      ++total;
    }
  }
  REQUIRE(total == 200);
  CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("generated data flows through the loader") {
  const auto dict = fixture_dict();
  TempDir dir;
  hear::SynthSpec spec = small_spec();
  spec.duration = 3.2;  // 640 samples: three windows after preprocessing
  hear::generate(spec, dict, dir.path());

  hear::ContainerLoader<double> loader(dir.path(), dict);
  REQUIRE(loader.has_labels());
  const hear::DatasetIndex& index = loader.index();
  REQUIRE(index.groups.size() == 2);

  // Groups sort by signature, so find layout 0 by its signature.
  const hear::LayoutMapping mapping = hear::map_layout(dict, spec.layouts[0]);
  const std::string want = hear::layout_signature(mapping);
  const auto it = std::find_if(
      index.groups.begin(), index.groups.end(),
      [&](const auto& g) { return g.first == want; });
  REQUIRE(it != index.groups.end());
  const std::vector<std::uint64_t>& ids = it->second;
  hear::Batch batch{want, {ids[0], ids[1], ids[2]}};
  const hear::LoadedBatch<double> loaded = loader.load(batch);
  REQUIRE(loaded.batch.patches.shape() ==
          hear::Shape({3, 4, 3, 200}));
  CHECK(loaded.labels == std::vector<int>{0, 1, 0});

  for (std::size_t e = 0; e < 4; ++e) {
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(loaded.batch.coords[e * 3 + d] == mapping.coordinates[e][d]);
    }
  }
}

// Layout-aware batching: groups container samples by electrode layout,
// builds deterministic layout-homogeneous epoch schedules, streams
// batches through a bounded prefetch pipeline, and simulates the
// layout-index broadcast used by data-parallel workers.
#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "hear/container.hpp"
#include "hear/dictionary.hpp"
#include "hear/errors.hpp"
#include "hear/pretrain.hpp"
#include "hear/rng.hpp"
#include "hear/signal.hpp"
#include "hear/tensor.hpp"

namespace hear {

// --- dataset index ----------------------------------------------------------

struct SampleRef {
  std::uint64_t sample_id = 0;  // global, assigned in manifest order
  std::string layout_signature;
  std::size_t subset_index = 0;  // row in the manifest
  std::size_t record_index = 0;  // frame position within the subset file
};

struct DatasetIndex {
  std::vector<SampleRef> samples;
  // signature -> member sample ids, lexicographic by signature
  std::vector<std::pair<std::string, std::vector<std::uint64_t>>> groups;

  std::size_t total_samples() const { return samples.size(); }
};

inline DatasetIndex group_by_layout(const Manifest& manifest) {
  DatasetIndex index;
  std::map<std::string, std::vector<std::uint64_t>> groups;
  std::uint64_t next_id = 0;
  for (std::size_t k = 0; k < manifest.subsets.size(); ++k) {
    const SubsetInfo& s = manifest.subsets[k];
    if (s.channels.empty()) {
      throw ManifestError("subset '" + s.subset_id + "' declares no channels");
    }
    for (std::size_t j = 0; j < s.num_samples; ++j) {
      index.samples.push_back({next_id, s.layout_signature, k, j});
      groups[s.layout_signature].push_back(next_id);
      ++next_id;
    }
  }
  index.groups.assign(groups.begin(), groups.end());
  return index;
}

// Index restricted to `keep` (e.g. one side of a train/val/test split).
// Group order is preserved; groups left empty disappear.
inline DatasetIndex restrict_index(const DatasetIndex& index,
                                   const std::vector<std::uint64_t>& keep) {
  std::vector<char> wanted(index.samples.size(), 0);
  for (std::uint64_t id : keep) {
    if (id >= index.samples.size()) {
      throw IndexOutOfRange("restrict_index: unknown sample id " +
                            std::to_string(id));
    }
    wanted[static_cast<std::size_t>(id)] = 1;
  }
  DatasetIndex out;
  for (const SampleRef& s : index.samples) {
    if (wanted[static_cast<std::size_t>(s.sample_id)]) out.samples.push_back(s);
  }
  for (const auto& [sig, ids] : index.groups) {
    std::vector<std::uint64_t> members;
    for (std::uint64_t id : ids) {
      if (wanted[static_cast<std::size_t>(id)]) members.push_back(id);
    }
    if (!members.empty()) out.groups.emplace_back(sig, std::move(members));
  }
  return out;
}

// --- epoch schedule ---------------------------------------------------------

struct Batch {
  std::string layout_signature;
  std::vector<std::uint64_t> sample_ids;
};

struct BatchPlan {
  std::vector<Batch> batches;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

namespace detail {
inline constexpr std::uint64_t kGroupShuffleTag = 0x67726f7570;  // "group"
inline constexpr std::uint64_t kSlotDrawTag = 0x736c6f74;        // "slot"
}  // namespace detail

// Shuffles each layout group with its own seeded stream, then fills the
// plan by drawing the next slot from the remaining groups with
// probability proportional to their remaining batch count. Final
// partial batches are kept so every sample appears exactly once.
inline BatchPlan make_epoch_schedule(const DatasetIndex& index,
                                     std::size_t batch_size,
                                     std::uint64_t seed) {
  if (batch_size < 1) {
    throw ConfigError("make_epoch_schedule: batch_size must be >= 1");
  }
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  struct GroupCursor {
    const std::string* signature;
    std::vector<std::uint64_t> ids;
    std::size_t next = 0;
    std::size_t batches_left = 0;
  };
  std::vector<GroupCursor> cursors;
  std::size_t total_left = 0;
  for (std::size_t g = 0; g < index.groups.size(); ++g) {
    GroupCursor cur;
    cur.signature = &index.groups[g].first;
    cur.ids = index.groups[g].second;
    Rng rng(mix64(seed, detail::kGroupShuffleTag, g));
    rng.shuffle(cur.ids);
    cur.batches_left = (cur.ids.size() + batch_size - 1) / batch_size;
    total_left += cur.batches_left;
    cursors.push_back(std::move(cur));
  }
  Rng pick(mix64(seed, detail::kSlotDrawTag, 0));
  while (total_left > 0) {
    std::uint64_t r = pick.next_below(total_left);
    std::size_t g = 0;
    while (r >= cursors[g].batches_left) {
      r -= cursors[g].batches_left;
      ++g;
    }
    GroupCursor& cur = cursors[g];
    const std::size_t n =
        std::min(batch_size, cur.ids.size() - cur.next);
    Batch b;
    b.layout_signature = *cur.signature;
    b.sample_ids.assign(cur.ids.begin() + static_cast<std::ptrdiff_t>(cur.next),
                        cur.ids.begin() +
                            static_cast<std::ptrdiff_t>(cur.next + n));
    plan.batches.push_back(std::move(b));
    cur.next += n;
    --cur.batches_left;
    --total_left;
  }
  return plan;
}

// --- prefetch pipeline ------------------------------------------------------

inline constexpr std::size_t kDefaultPrefetchDepth = 2;

// Runs `loader(k)` for every batch index and hands results to
// `consumer(k, data)` strictly in plan order. With depth > 0 a
// background thread loads ahead, holding at most `prefetch_depth`
// undelivered batches; depth 0 loads synchronously. A loader failure is
// rethrown as LoadError at the failed batch's delivery point and
// nothing after it is delivered.
template <typename Loader, typename Consumer>
void run_prefetch_pipeline(std::size_t batch_count, Loader&& loader,
                           Consumer&& consumer,
                           std::size_t prefetch_depth = kDefaultPrefetchDepth) {
  using BatchData = std::decay_t<decltype(loader(std::size_t{0}))>;
  if (batch_count == 0) return;

  if (prefetch_depth == 0) {
    for (std::size_t k = 0; k < batch_count; ++k) {
      std::optional<BatchData> data;
      try {
        data.emplace(loader(k));
      } catch (const LoadError&) {
        throw;
      } catch (const std::exception& e) {
        throw LoadError(k, e.what());
      }
      consumer(k, std::move(*data));
    }
    return;
  }

  struct Slot {
    std::optional<BatchData> data;
    std::exception_ptr error;
  };
  std::mutex mu;
  std::condition_variable queue_filled;
  std::condition_variable queue_drained;
  std::deque<Slot> queue;
  bool cancelled = false;

  std::thread producer([&] {
    for (std::size_t k = 0; k < batch_count; ++k) {
      Slot slot;
      try {
        slot.data.emplace(loader(k));
      } catch (const LoadError&) {
        slot.error = std::current_exception();
      } catch (const std::exception& e) {
        slot.error = std::make_exception_ptr(LoadError(k, e.what()));
      }
      const bool failed = slot.error != nullptr;
      {
        std::unique_lock<std::mutex> lk(mu);
        queue_drained.wait(
            lk, [&] { return cancelled || queue.size() < prefetch_depth; });
        if (cancelled) return;
        queue.push_back(std::move(slot));
      }
      queue_filled.notify_one();
      if (failed) return;
    }
  });

  try {
    for (std::size_t k = 0; k < batch_count; ++k) {
      Slot slot;
      {
        std::unique_lock<std::mutex> lk(mu);
        queue_filled.wait(lk, [&] { return !queue.empty(); });
        slot = std::move(queue.front());
        queue.pop_front();
      }
      queue_drained.notify_one();
      if (slot.error) std::rethrow_exception(slot.error);
      consumer(k, std::move(*slot.data));
    }
  } catch (...) {
    {
      std::lock_guard<std::mutex> lk(mu);
      cancelled = true;
    }
    queue_drained.notify_one();
    producer.join();
    throw;
  }
  producer.join();
}

// --- simulated data-parallel workers ----------------------------------------

// Deterministic stand-in for data-parallel loading: every rank derives
// the epoch plan from its own copy of the sampler seed, and the
// broadcast step is simulated by checking agreement across ranks.
class WorkerSim {
public:
  WorkerSim(const DatasetIndex& index, std::size_t batch_size,
            std::size_t worker_count, std::uint64_t seed)
      : index_(index), batch_size_(batch_size), worker_count_(worker_count) {
    if (worker_count < 1) {
      throw ConfigError("WorkerSim: worker_count must be >= 1");
    }
    seeds_.assign(worker_count, seed);
    rebuild();
  }

  std::size_t worker_count() const { return worker_count_; }
  std::size_t step_count() const { return plans_[0].batches.size(); }
  const BatchPlan& plan(std::size_t rank) const { return plans_.at(rank); }

  // Test hook: desynchronize one rank's sampler.
  void corrupt_worker_seed(std::size_t rank, std::uint64_t seed) {
    seeds_.at(rank) = seed;
    rebuild();
  }

  // Contiguous slice of the step's sample list owned by `rank`;
  // remainder samples go to the lowest ranks.
  std::vector<std::uint64_t> shard(std::size_t step, std::size_t rank) const {
    const Batch& b = plans_.at(rank).batches.at(step);
    const std::size_t n = b.sample_ids.size();
    const std::size_t base = n / worker_count_;
    const std::size_t rem = n % worker_count_;
    const std::size_t begin = rank * base + std::min(rank, rem);
    const std::size_t len = base + (rank < rem ? 1 : 0);
    return {b.sample_ids.begin() + static_cast<std::ptrdiff_t>(begin),
            b.sample_ids.begin() + static_cast<std::ptrdiff_t>(begin + len)};
  }

  // Verifies that every rank sees the same batch at `step` and returns
  // the agreed layout signature.
  std::string sync_layout_index(std::size_t step) {
    if (step >= step_count()) {
      throw IndexOutOfRange("sync_layout_index: step " + std::to_string(step) +
                            " out of range");
    }
    const Batch& ref = plans_[0].batches[step];
    for (std::size_t r = 1; r < worker_count_; ++r) {
      const Batch& b = plans_[r].batches[step];
      if (b.layout_signature != ref.layout_signature ||
          b.sample_ids != ref.sample_ids) {
        throw DesyncDetected("worker " + std::to_string(r) +
                             " diverged at step " + std::to_string(step));
      }
    }
    return ref.layout_signature;
  }

private:
  void rebuild() {
    plans_.clear();
    for (std::uint64_t s : seeds_) {
      plans_.push_back(make_epoch_schedule(index_, batch_size_, s));
    }
  }

  DatasetIndex index_;
  std::size_t batch_size_ = 0;
  std::size_t worker_count_ = 0;
  std::vector<std::uint64_t> seeds_;
  std::vector<BatchPlan> plans_;
};

inline std::string sync_layout_index(WorkerSim& sim, std::size_t step) {
  return sim.sync_layout_index(step);
}

// --- container-backed batch loading -----------------------------------------

template <typename T>
struct LoadedBatch {
  PretrainBatch<T> batch;
  std::vector<int> labels;  // aligned with batch.sample_ids; empty if no sidecar
};

// Reads planned batches out of a dataset container, runs the signal
// pipeline per sample, and stacks the result for the model. Caches each
// subset file on first touch. One instance must not be used from
// multiple threads at once; the prefetch pipeline's single producer is
// fine.
template <typename T>
class ContainerLoader {
public:
  ContainerLoader(std::string dir, const GlobalDictionary& dict,
                  PipelineConfig pipeline = {})
      : dir_(std::move(dir)),
        pipeline_(pipeline),
        manifest_(read_manifest(dir_)),
        index_(group_by_layout(manifest_)) {
    for (const SubsetInfo& s : manifest_.subsets) {
      LayoutMapping mapping = map_layout(dict, s.channels, s.subset_id);
      const std::string computed = layout_signature(mapping);
      if (computed != s.layout_signature) {
        throw ManifestError("subset '" + s.subset_id +
                            "' signature mismatch: manifest says " +
                            s.layout_signature + ", channels give " + computed);
      }
      mappings_.push_back(std::move(mapping));
    }
    cache_.resize(manifest_.subsets.size());
    if (std::filesystem::exists(labels_path(dir_))) {
      labels_ = read_labels(dir_);
      if (labels_.size() != index_.total_samples()) {
        throw ManifestError("labels file covers " +
                            std::to_string(labels_.size()) + " samples, " +
                            "manifest declares " +
                            std::to_string(index_.total_samples()));
      }
    }
  }

  const Manifest& manifest() const { return manifest_; }
  const DatasetIndex& index() const { return index_; }
  bool has_labels() const { return !labels_.empty(); }
  const std::vector<int>& labels() const { return labels_; }

  LoadedBatch<T> load(const Batch& b) {
    if (b.sample_ids.empty()) throw EmptyBatch("load: batch has no samples");
    std::vector<PatchTensor<T>> processed;
    processed.reserve(b.sample_ids.size());
    for (std::uint64_t id : b.sample_ids) {
      processed.push_back(load_sample(id, b.layout_signature));
    }
    const std::size_t bsz = processed.size();
    const std::size_t c = processed[0].channels();
    const std::size_t nt = processed[0].time_patches();
    const std::size_t w = processed[0].window_len;
    for (const auto& p : processed) {
      if (p.channels() != c || p.time_patches() != nt || p.window_len != w) {
        throw ShapeMismatch(
            "load: samples in one batch disagree on patch shape");
      }
    }
    LoadedBatch<T> out;
    out.batch.patches = Tensor<T>({bsz, c, nt, w});
    for (std::size_t i = 0; i < bsz; ++i) {
      std::copy_n(processed[i].patches.data(), c * nt * w,
                  out.batch.patches.data() + i * c * nt * w);
    }
    const LayoutMapping& mapping = processed[0].layout;
    out.batch.coords = Tensor<T>({c, 3});
    for (std::size_t e = 0; e < c; ++e) {
      for (std::size_t a = 0; a < 3; ++a) {
        out.batch.coords[e * 3 + a] = static_cast<T>(mapping.coordinates[e][a]);
      }
    }
    out.batch.sample_ids = b.sample_ids;
    out.batch.layout_signature = b.layout_signature;
    if (!labels_.empty()) {
      out.labels.reserve(bsz);
      for (std::uint64_t id : b.sample_ids) {
        out.labels.push_back(labels_[static_cast<std::size_t>(id)]);
      }
    }
    return out;
  }

private:
  PatchTensor<T> load_sample(std::uint64_t id,
                             const std::string& expected_signature) {
    if (id >= index_.samples.size()) {
      throw IndexOutOfRange("load: unknown sample id " + std::to_string(id));
    }
    const SampleRef& ref = index_.samples[static_cast<std::size_t>(id)];
    if (ref.layout_signature != expected_signature) {
      throw ShapeMismatch("load: sample " + std::to_string(id) +
                          " does not belong to batch layout " +
                          expected_signature);
    }
    const SubsetInfo& info = manifest_.subsets[ref.subset_index];
    const LayoutMapping& mapping = mappings_[ref.subset_index];
    const CachedSubset& sub = subset(ref.subset_index);
    const std::size_t t = sub.samples_per_channel;
    const std::size_t frame = sub.channels * t;
    const float* src = sub.payload.data() + ref.record_index * frame;
    Recording<T> rec;
    rec.sample_rate = info.sample_rate;
    rec.layout = mapping;
    rec.data = Tensor<T>({mapping.channel_count(), t});
    for (std::size_t e = 0; e < mapping.channel_count(); ++e) {
      const float* row = src + mapping.kept_indices[e] * t;
      for (std::size_t j = 0; j < t; ++j) {
        rec.data[e * t + j] = static_cast<T>(row[j]);
      }
    }
    return preprocess(rec, pipeline_);
  }

  struct CachedSubset {
    std::size_t channels = 0;
    std::size_t samples_per_channel = 0;
    std::vector<float> payload;
  };

  const CachedSubset& subset(std::size_t k) {
    if (!cache_[k]) {
      const SubsetInfo& info = manifest_.subsets[k];
      SubsetReader reader(subset_path(dir_, info.subset_id));
      const SubsetHeader& h = reader.header();
      if (h.channels != info.channels.size()) {
        throw ManifestError("subset '" + info.subset_id +
                            "' channel count disagrees with manifest");
      }
      if (reader.num_samples() != info.num_samples) {
        throw ManifestError("subset '" + info.subset_id +
                            "' sample count disagrees with manifest");
      }
      CachedSubset sub;
      sub.channels = h.channels;
      sub.samples_per_channel = h.samples_per_channel;
      sub.payload.resize(info.num_samples * h.frame_size());
      for (std::size_t i = 0; i < info.num_samples; ++i) {
        Tensor<float> frame = reader.read_sample(i);
        std::copy_n(frame.data(), h.frame_size(),
                    sub.payload.data() + i * h.frame_size());
      }
      cache_[k] = std::move(sub);
    }
    return *cache_[k];
  }

  std::string dir_;
  PipelineConfig pipeline_;
  Manifest manifest_;
  DatasetIndex index_;
  std::vector<LayoutMapping> mappings_;
  std::vector<int> labels_;
  std::vector<std::optional<CachedSubset>> cache_;
};

}  // namespace hear

// Supervised evaluation: 3:1:1 splitting, the linear classification
// head on the CLS state, fine-tuning with best-validation checkpoint
// selection, the three classification metrics, and the multi-seed
// protocol with a text results table.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hear/errors.hpp"
#include "hear/model.hpp"
#include "hear/pretrain.hpp"
#include "hear/rng.hpp"
#include "hear/scheduler.hpp"
#include "hear/tensor.hpp"

namespace hear {

// --- dataset splitting ------------------------------------------------------

struct SplitSpec {
  std::uint64_t seed = 0;  // ratios are fixed at 3:1:1
};

struct DatasetSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;
};

namespace detail {
inline constexpr std::uint64_t kSplitTag = 0x73706c6974;       // "split"
inline constexpr std::uint64_t kFinetuneEpochTag = 0x65706f63;  // "epoc"
}  // namespace detail

inline DatasetSplit split_dataset(std::vector<std::uint64_t> sample_ids,
                                  const SplitSpec& spec) {
  const std::size_t n = sample_ids.size();
  if (n < 5) {
    throw TooFewSamples("split_dataset: need at least 5 samples, got " +
                        std::to_string(n));
  }
  Rng rng(mix64(spec.seed, detail::kSplitTag, 0));
  rng.shuffle(sample_ids);
  const std::size_t n_train = 3 * n / 5;
  const std::size_t n_val = n / 5;
  DatasetSplit split;
  split.train.assign(sample_ids.begin(),
                     sample_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(
      sample_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
      sample_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(
      sample_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
      sample_ids.end());
  return split;
}

// --- confusion matrix and metrics -------------------------------------------

class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes) {
    if (classes < 1) throw ConfigError("ConfusionMatrix: needs >= 1 class");
    counts_.assign(classes * classes, 0);
  }

  explicit ConfusionMatrix(const std::vector<std::vector<std::uint64_t>>& rows)
      : ConfusionMatrix(rows.size()) {
    for (std::size_t i = 0; i < classes_; ++i) {
      if (rows[i].size() != classes_) {
        throw ShapeMismatch("ConfusionMatrix: ragged rows");
      }
      for (std::size_t j = 0; j < classes_; ++j) counts_[i * classes_ + j] =
          rows[i][j];
    }
  }

  void add(std::size_t true_class, std::size_t predicted) {
    if (true_class >= classes_ || predicted >= classes_) {
      throw IndexOutOfRange("ConfusionMatrix: class out of range");
    }
    ++counts_[true_class * classes_ + predicted];
  }

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t true_class, std::size_t predicted) const {
    return counts_[true_class * classes_ + predicted];
  }
  std::uint64_t support(std::size_t true_class) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes_; ++j) {
      s += counts_[true_class * classes_ + j];
    }
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (std::uint64_t v : counts_) s += v;
    return s;
  }

private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

namespace detail {

struct ClassF1 {
  double f1 = 0.0;
  std::uint64_t support = 0;
};

inline std::vector<ClassF1> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<ClassF1> rows(cm.classes());
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t tp = cm.at(i, i);
    const std::uint64_t support = cm.support(i);
    std::uint64_t predicted = 0;
    for (std::size_t r = 0; r < cm.classes(); ++r) predicted += cm.at(r, i);
    const double precision =
        predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    const double recall =
        support > 0 ? static_cast<double>(tp) / support : 0.0;
    rows[i].support = support;
    rows[i].f1 = precision + recall > 0.0
                     ? 2.0 * precision * recall / (precision + recall)
                     : 0.0;
  }
  return rows;
}

inline void require_nonempty(const ConfusionMatrix& cm, const char* who) {
  if (cm.total() == 0) {
    throw EmptyMatrix(std::string(who) + ": empty confusion matrix");
  }
}

}  // namespace detail

// Mean per-class recall; classes that never occur are excluded.
inline double balanced_accuracy(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm, "balanced_accuracy");
  double sum = 0.0;
  std::size_t populated = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t support = cm.support(i);
    if (support == 0) continue;
    sum += static_cast<double>(cm.at(i, i)) / support;
    ++populated;
  }
  return sum / static_cast<double>(populated);
}

// Unweighted mean of per-class F1 over populated classes.
inline double macro_f1(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm, "macro_f1");
  const auto rows = detail::per_class_f1(cm);
  double sum = 0.0;
  std::size_t populated = 0;
  for (const auto& r : rows) {
    if (r.support == 0) continue;
    sum += r.f1;
    ++populated;
  }
  return sum / static_cast<double>(populated);
}

// Support-weighted mean of per-class F1.
inline double weighted_f1(const ConfusionMatrix& cm) {
  detail::require_nonempty(cm, "weighted_f1");
  const auto rows = detail::per_class_f1(cm);
  double sum = 0.0;
  for (const auto& r : rows) {
    sum += r.f1 * static_cast<double>(r.support);
  }
  return sum / static_cast<double>(cm.total());
}

// --- classification head ----------------------------------------------------

// Zero-initialized linear head on the CLS state, so an untrained head
// emits all-zero logits.
template <typename T>
void add_classifier_head(Model<T>& model, std::size_t classes) {
  if (classes < 1) throw ConfigError("add_classifier_head: needs >= 1 class");
  if (model.params.has("classifier.w")) {
    throw ConfigError("add_classifier_head: head already present");
  }
  const std::size_t d = model.config.hidden_dim;
  model.params.add("classifier.w", Tensor<T>({d, classes}));
  model.params.add("classifier.b", Tensor<T>({classes}));
}

// Class logits [B, L] for a layout-homogeneous batch.
template <typename T>
Var finetune_forward(GraphBuilder<T>& gb, const Tensor<T>& patches,
                     const Tensor<T>& coords) {
  if (!gb.model().params.has("classifier.w")) {
    throw ShapeMismatch("finetune_forward: model has no classifier head");
  }
  Tape<T>& tp = gb.tape();
  ForwardOptions<T> opt;
  ForwardResult<T> fr =
      full_forward(gb, tp.constant(patches), tp.constant(coords), opt);
  return gb.affine(fr.cls, "classifier.w", "classifier.b");
}

namespace detail {

template <typename T>
std::size_t argmax_row(const T* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace detail

// Confusion matrix of the model over the given samples.
template <typename T>
ConfusionMatrix evaluate_split(Model<T>& model, ContainerLoader<T>& loader,
                               const std::vector<std::uint64_t>& sample_ids,
                               std::size_t classes,
                               std::size_t batch_size = 32) {
  if (!loader.has_labels()) {
    throw ManifestError("evaluate_split: container has no labels sidecar");
  }
  if (sample_ids.empty()) {
    throw ConfigError("evaluate_split: no samples to evaluate");
  }
  const DatasetIndex idx = restrict_index(loader.index(), sample_ids);
  const BatchPlan plan = make_epoch_schedule(idx, batch_size, 0);
  ConfusionMatrix cm(classes);
  for (const Batch& b : plan.batches) {
    LoadedBatch<T> loaded = loader.load(b);
    Tape<T> tp;
    GraphBuilder<T> gb(tp, model);
    const Var logits =
        finetune_forward(gb, loaded.batch.patches, loaded.batch.coords);
    const Tensor<T>& lv = tp.value(logits);
    const std::size_t bsz = lv.dim(0);
    for (std::size_t i = 0; i < bsz; ++i) {
      const int label = loaded.labels[i];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw IndexOutOfRange("evaluate_split: label " +
                              std::to_string(label) + " out of range");
      }
      cm.add(static_cast<std::size_t>(label),
             detail::argmax_row(lv.data() + i * classes, classes));
    }
  }
  return cm;
}

// --- fine-tuning ------------------------------------------------------------

struct FinetuneConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  bool linear_probe = false;  // freeze everything but the head
  std::uint64_t seed = 0;
};

template <typename T>
struct FinetuneResult {
  Model<T> best_model;
  double best_val_balanced_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> epoch_losses;  // mean train loss per epoch
};

// Fine-tunes a copy of `model` on `train_ids`, checkpointing at the
// best validation balanced accuracy. Adds the classifier head if the
// model does not carry one yet.
template <typename T>
FinetuneResult<T> finetune(Model<T> model, ContainerLoader<T>& loader,
                           const std::vector<std::uint64_t>& train_ids,
                           const std::vector<std::uint64_t>& val_ids,
                           std::size_t classes, const FinetuneConfig& cfg) {
  if (!loader.has_labels()) {
    throw ManifestError("finetune: container has no labels sidecar");
  }
  if (train_ids.empty() || val_ids.empty()) {
    throw ConfigError("finetune: empty train or validation set");
  }
  if (cfg.epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (!model.params.has("classifier.w")) {
    add_classifier_head(model, classes);
  }

  AdamW<T> opt(model.params, 0.9, 0.999, 1e-8, cfg.weight_decay);
  if (cfg.linear_probe) {
    std::vector<char> trainable(model.params.count(), 0);
    for (std::size_t i = 0; i < model.params.count(); ++i) {
      if (model.params.name(i).rfind("classifier.", 0) == 0) trainable[i] = 1;
    }
    opt.set_trainable(std::move(trainable));
  }

  const DatasetIndex train_idx = restrict_index(loader.index(), train_ids);
  const std::size_t steps_per_epoch =
      make_epoch_schedule(train_idx, cfg.batch_size, 0).batches.size();
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;

  FinetuneResult<T> result;
  result.best_model = model;
  result.best_val_balanced_accuracy = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BatchPlan plan = make_epoch_schedule(
        train_idx, cfg.batch_size,
        mix64(cfg.seed, detail::kFinetuneEpochTag, epoch));
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const Batch& b : plan.batches) {
      LoadedBatch<T> loaded = loader.load(b);
      Tape<T> tp;
      GraphBuilder<T> gb(tp, model);
      const Var logits =
          finetune_forward(gb, loaded.batch.patches, loaded.batch.coords);
      const Var loss = tp.cross_entropy_mean(logits, loaded.labels);
      const double value = static_cast<double>(tp.value(loss)[0]);
      if (!std::isfinite(value)) {
        throw NonFiniteLoss("finetune epoch " + std::to_string(epoch) +
                            ": loss " + std::to_string(value));
      }
      loss_sum += value * static_cast<double>(b.sample_ids.size());
      loss_count += b.sample_ids.size();
      model.params.zero_grads();
      tp.backward(loss);
      opt.step(model.params, cosine_lr(cfg.lr, step, total_steps));
      ++step;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(loss_count));

    const ConfusionMatrix cm =
        evaluate_split(model, loader, val_ids, classes, cfg.batch_size);
    const double val_ba = balanced_accuracy(cm);
    if (val_ba > result.best_val_balanced_accuracy) {
      result.best_val_balanced_accuracy = val_ba;
      result.best_epoch = epoch;
      result.best_model = model;
    }
  }
  return result;
}

// --- seed protocol ----------------------------------------------------------

struct ProtocolMetrics {
  double balanced_accuracy = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
};

inline ProtocolMetrics metrics_from(const ConfusionMatrix& cm) {
  return {balanced_accuracy(cm), macro_f1(cm), weighted_f1(cm)};
}

struct ProtocolResult {
  std::vector<std::uint64_t> seeds;
  std::vector<ProtocolMetrics> per_seed;
  ProtocolMetrics mean;
  ProtocolMetrics stddev;  // sample standard deviation over seeds
};

namespace detail {

inline void mean_std(const std::vector<double>& xs, double& mean,
                     double& std_out) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) {
    std_out = 0.0;
    return;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  std_out = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace detail

// Per seed: split, fine-tune, evaluate the best-validation checkpoint
// on the test split. Reports mean and sample standard deviation.
template <typename T>
ProtocolResult run_protocol(const Model<T>& base, ContainerLoader<T>& loader,
                            std::size_t classes, const FinetuneConfig& cfg,
                            const std::vector<std::uint64_t>& seeds = {0, 1,
                                                                       2}) {
  if (seeds.empty()) throw ConfigError("run_protocol: no seeds");
  std::vector<std::uint64_t> all_ids(loader.index().total_samples());
  for (std::size_t i = 0; i < all_ids.size(); ++i) all_ids[i] = i;

  ProtocolResult result;
  result.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    const DatasetSplit split = split_dataset(all_ids, SplitSpec{seed});
    FinetuneConfig run_cfg = cfg;
    run_cfg.seed = seed;
    FinetuneResult<T> ft =
        finetune(base, loader, split.train, split.val, classes, run_cfg);
    const ConfusionMatrix cm = evaluate_split(ft.best_model, loader,
                                              split.test, classes,
                                              cfg.batch_size);
    result.per_seed.push_back(metrics_from(cm));
  }

  std::vector<double> ba, mf1, wf1;
  for (const auto& m : result.per_seed) {
    ba.push_back(m.balanced_accuracy);
    mf1.push_back(m.macro_f1);
    wf1.push_back(m.weighted_f1);
  }
  detail::mean_std(ba, result.mean.balanced_accuracy,
                   result.stddev.balanced_accuracy);
  detail::mean_std(mf1, result.mean.macro_f1, result.stddev.macro_f1);
  detail::mean_std(wf1, result.mean.weighted_f1, result.stddev.weighted_f1);
  return result;
}

// Text table: `dataset, metric, mean, std, seed_values`.
inline void write_results(const std::string& path, const std::string& dataset,
                          const ProtocolResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open results file: " + path);
  const auto row = [&](const char* metric, double mean, double std_v,
                       const std::vector<double>& values) {
    char buf[64];
    out << dataset << ", " << metric << ", ";
    std::snprintf(buf, sizeof(buf), "%.6f", mean);
    out << buf << ", ";
    std::snprintf(buf, sizeof(buf), "%.6f", std_v);
    out << buf << ",";
    for (double v : values) {
      std::snprintf(buf, sizeof(buf), " %.6f", v);
      out << buf;
    }
    out << "\n";
  };
  std::vector<double> ba, mf1, wf1;
  for (const auto& m : r.per_seed) {
    ba.push_back(m.balanced_accuracy);
    mf1.push_back(m.macro_f1);
    wf1.push_back(m.weighted_f1);
  }
  row("balanced_accuracy", r.mean.balanced_accuracy,
      r.stddev.balanced_accuracy, ba);
  row("macro_f1", r.mean.macro_f1, r.stddev.macro_f1, mf1);
  row("weighted_f1", r.mean.weighted_f1, r.stddev.weighted_f1, wf1);
  if (!out) throw ParseError("results write failed: " + path);
}

}  // namespace hear

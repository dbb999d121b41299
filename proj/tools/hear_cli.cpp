// hear: one binary for the whole workflow. Subcommands cover dictionary
// validation and lookup, synthetic dataset generation, masked
// pretraining, supervised fine-tuning, the multi-seed evaluation
// protocol, finite-difference gradient checking, and scalp-map export.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or parse
// failure, 3 gradient check above tolerance.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hear/config.hpp"
#include "hear/container.hpp"
#include "hear/dictionary.hpp"
#include "hear/errors.hpp"
#include "hear/evaluate.hpp"
#include "hear/gradcheck.hpp"
#include "hear/model.hpp"
#include "hear/pretrain.hpp"
#include "hear/scheduler.hpp"
#include "hear/signal.hpp"
#include "hear/synthetic.hpp"
#include "hear/topomap.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;
constexpr int kGradcheckFailure = 3;

constexpr double kGradcheckTolerance = 1e-4;

std::string default_path(const hear::RunConfig& cfg, const std::string& flag,
                         const char* leaf) {
  if (!flag.empty()) return flag;
  return cfg.get("data_dir") + "/" + leaf;
}

std::string dataset_label(const std::string& data_dir) {
  const std::filesystem::path p =
      std::filesystem::path(data_dir).lexically_normal();
  const std::string leaf = p.filename().string();
  if (!leaf.empty() && leaf != ".") return leaf;
  const std::string parent = p.parent_path().filename().string();
  return parent.empty() ? data_dir : parent;
}

hear::ModelConfig model_config_from(const hear::RunConfig& cfg) {
  const std::string& variant = cfg.get("variant");
  hear::ModelVariant v;
  if (variant == "tiny") {
    v = hear::ModelVariant::tiny;
  } else if (variant == "base") {
    v = hear::ModelVariant::base;
  } else {
    throw hear::ConfigError("variant: expected tiny or base, got '" +
                            variant + "'");
  }
  return hear::make_config(v, cfg.get_size("hidden_dim"),
                           cfg.get_size("window_len"),
                           cfg.get_size("max_time_patches"),
                           cfg.get_size("codebook_size"));
}

hear::PipelineConfig pipeline_from(const hear::RunConfig& cfg) {
  hear::PipelineConfig p;
  p.target_rate = cfg.get_real("target_rate");
  p.band_lo = cfg.get_real("band_lo");
  p.band_hi = cfg.get_real("band_hi");
  p.window_len = cfg.get_size("window_len");
  p.scale = cfg.get_real("signal_scale");
  return p;
}

hear::PretrainConfig pretrain_config_from(const hear::RunConfig& cfg) {
  hear::PretrainConfig p;
  p.mask_ratio = cfg.get_real("mask_ratio");
  p.lr = cfg.get_real("lr");
  p.weight_decay = cfg.get_real("weight_decay");
  p.seed = cfg.get_u64("seed");
  return p;
}

hear::FinetuneConfig finetune_config_from(const hear::RunConfig& cfg) {
  hear::FinetuneConfig f;
  f.epochs = cfg.get_size("epochs");
  f.batch_size = cfg.get_size("batch_size");
  f.lr = cfg.get_real("lr");
  f.weight_decay = cfg.get_real("weight_decay");
  f.linear_probe = cfg.get_bool("linear_probe");
  f.seed = cfg.get_u64("seed");
  return f;
}

hear::Model<double> model_from_checkpoint_or_fresh(
    const hear::RunConfig& cfg, const std::string& checkpoint) {
  if (!checkpoint.empty()) {
    return hear::load_checkpoint<double>(checkpoint);
  }
  return hear::init_model<double>(model_config_from(cfg),
                                  cfg.get_u64("seed"));
}

// --- dict -------------------------------------------------------------------

int cmd_dict(const hear::RunConfig& cfg, const std::string& lookup,
             const std::string& validate_path) {
  if (!validate_path.empty()) {
    try {
      const hear::GlobalDictionary dict =
          hear::load_dictionary(validate_path);
      std::cout << "ok: " << dict.size() << " entries\n";
      return kOk;
    } catch (const hear::Error& e) {
      std::cout << "invalid: " << e.what() << "\n";
      return kConfigFailure;
    }
  }

  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  if (!lookup.empty()) {
    const hear::ElectrodeEntry* entry = dict.lookup(lookup);
    if (entry == nullptr) {
      std::cout << "not found: " << lookup << "\n";
      return kConfigFailure;
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s %s %g %g %g\n", entry->name.c_str(),
                  hear::to_string(entry->channel_type), entry->position[0],
                  entry->position[1], entry->position[2]);
    std::cout << buf;
    return kOk;
  }
  std::cout << dict.size() << " entries\n";
  return kOk;
}

// --- gen --------------------------------------------------------------------

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> names;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) names.push_back(s.substr(i, j - i));
    i = j;
  }
  return names;
}

int cmd_gen(const hear::RunConfig& cfg,
            const std::vector<std::string>& layout_flags,
            const std::string& out_flag) {
  hear::SynthSpec spec;
  if (layout_flags.empty()) {
    spec.layouts = {{"F3", "F4", "C3", "C4", "P3", "P4"},
                    {"F7", "F8", "T7", "T8", "O1", "O2"}};
  } else {
    for (const std::string& flag : layout_flags) {
      spec.layouts.push_back(split_names(flag));
    }
  }
  spec.samples_per_layout = cfg.get_size("samples_per_layout");
  spec.classes = cfg.get_size("classes");
  spec.sample_rate = cfg.get_real("target_rate");
  spec.duration = cfg.get_real("duration");
  spec.noise_sigma = cfg.get_real("noise_sigma");
  spec.window_len = cfg.get_size("window_len");
  spec.seed = cfg.get_u64("seed");

  const std::string out = default_path(cfg, out_flag, "synthetic");
  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  const hear::Manifest manifest = hear::generate(spec, dict, out);
  std::cout << "wrote " << out << ": " << manifest.subsets.size()
            << " subsets, " << manifest.total_samples() << " samples\n";
  return kOk;
}

// --- pretrain ---------------------------------------------------------------

hear::PretrainBatch<double> shard_rows(const hear::PretrainBatch<double>& b,
                                       std::size_t begin, std::size_t len) {
  const std::size_t c = b.patches.dim(1);
  const std::size_t nt = b.patches.dim(2);
  const std::size_t w = b.patches.dim(3);
  const std::size_t row = c * nt * w;
  hear::PretrainBatch<double> out;
  out.patches = hear::Tensor<double>({len, c, nt, w});
  std::copy_n(b.patches.data() + begin * row, len * row, out.patches.data());
  out.coords = b.coords;
  out.sample_ids.assign(b.sample_ids.begin() + begin,
                        b.sample_ids.begin() + begin + len);
  out.layout_signature = b.layout_signature;
  return out;
}

// Logical data-parallel step: contiguous shards, one backward pass per
// shard accumulating into the shared gradients, then a single update.
hear::PretrainStepResult sharded_step(hear::Model<double>& model,
                                      hear::AdamW<double>& opt,
                                      const hear::PretrainBatch<double>& batch,
                                      const hear::PretrainConfig& pcfg,
                                      std::size_t step_index,
                                      std::size_t workers) {
  const std::size_t n = batch.sample_ids.size();
  const std::size_t base = n / workers;
  const std::size_t rem = n % workers;
  model.params.zero_grads();
  hear::PretrainStepResult res;
  for (std::size_t rank = 0; rank < workers; ++rank) {
    const std::size_t begin = rank * base + std::min(rank, rem);
    const std::size_t len = base + (rank < rem ? 1 : 0);
    if (len == 0) continue;
    const hear::PretrainBatch<double> shard = shard_rows(batch, begin, len);
    hear::Tape<double> tape;
    hear::GraphBuilder<double> gb(tape, model);
    auto losses = hear::pretrain_losses(gb, shard, pcfg);
    const double total = tape.value(losses.total)[0];
    if (!std::isfinite(total)) {
      throw hear::NonFiniteLoss("pretrain step " +
                                std::to_string(step_index) + ": loss " +
                                std::to_string(total));
    }
    res.loss_q += tape.value(losses.loss_q)[0];
    res.loss_s += tape.value(losses.loss_s)[0];
    res.total += total;
    tape.backward(losses.total);
  }
  res.lr = hear::cosine_lr(pcfg.lr, step_index, pcfg.total_steps);
  opt.step(model.params, res.lr);
  return res;
}

int cmd_pretrain(const hear::RunConfig& cfg, const std::string& data_flag,
                 const std::string& out_flag, const std::string& log_flag) {
  const std::string data = default_path(cfg, data_flag, "synthetic");
  const std::string ckpt = default_path(cfg, out_flag, "pretrain.ckpt");
  const std::string log_path = default_path(cfg, log_flag, "pretrain_log.csv");
  const std::size_t steps = cfg.get_size("steps");
  const std::size_t batch_size = cfg.get_size("batch_size");
  const std::size_t workers = cfg.get_size("workers");
  const std::size_t prefetch = cfg.get_size("prefetch_depth");
  if (workers < 1) throw hear::ConfigError("workers: must be >= 1");
  const hear::ModelConfig mc = model_config_from(cfg);
  const hear::PipelineConfig pipe = pipeline_from(cfg);
  hear::PretrainConfig pcfg = pretrain_config_from(cfg);
  pcfg.total_steps = std::max<std::size_t>(steps, 1);

  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  hear::ContainerLoader<double> loader(data, dict, pipe);

  hear::Model<double> model =
      hear::init_model<double>(mc, cfg.get_u64("seed"));
  hear::add_pretrain_params(model, cfg.get_u64("seed") + 1);
  hear::AdamW<double> opt(model.params, pcfg.beta1, pcfg.beta2, pcfg.adam_eps,
                          pcfg.weight_decay);

  std::filesystem::remove(log_path);
  hear::TrainLog log(log_path);

  if (steps > 0) {
    // Enough epoch plans to cover `steps` batches, truncated exactly.
    std::vector<hear::Batch> batches;
    for (std::size_t epoch = 0; batches.size() < steps; ++epoch) {
      const hear::BatchPlan plan = hear::make_epoch_schedule(
          loader.index(), batch_size, hear::mix64(pcfg.seed, epoch));
      if (plan.batches.empty()) {
        throw hear::EmptyBatch("container has no samples to pretrain on");
      }
      batches.insert(batches.end(), plan.batches.begin(), plan.batches.end());
    }
    batches.resize(steps);

    std::size_t step = 0;
    hear::run_prefetch_pipeline(
        batches.size(),
        [&](std::size_t k) { return loader.load(batches[k]); },
        [&](std::size_t, const hear::LoadedBatch<double>& loaded) {
          const hear::PretrainStepResult r =
              workers == 1
                  ? hear::pretrain_step(model, opt, loaded.batch, pcfg, step)
                  : sharded_step(model, opt, loaded.batch, pcfg, step,
                                 workers);
          log.append(step, r, loaded.batch.layout_signature);
          ++step;
        },
        prefetch);
  }

  hear::save_checkpoint(ckpt, model);
  std::cout << "pretrained " << steps << " steps, checkpoint " << ckpt
            << ", log " << log_path << "\n";
  return kOk;
}

// --- finetune ---------------------------------------------------------------

int cmd_finetune(const hear::RunConfig& cfg, const std::string& data_flag,
                 const std::string& checkpoint, const std::string& out_flag,
                 const std::string& log_flag) {
  const std::string data = default_path(cfg, data_flag, "synthetic");
  const std::string out = default_path(cfg, out_flag, "finetuned.ckpt");
  const std::string log_path = default_path(cfg, log_flag, "finetune_log.csv");
  const std::size_t classes = cfg.get_size("classes");
  const hear::PipelineConfig pipe = pipeline_from(cfg);
  const hear::FinetuneConfig fcfg = finetune_config_from(cfg);

  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  hear::ContainerLoader<double> loader(data, dict, pipe);

  hear::Model<double> model = model_from_checkpoint_or_fresh(cfg, checkpoint);

  std::vector<std::uint64_t> ids(loader.index().total_samples());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const hear::DatasetSplit split =
      hear::split_dataset(ids, hear::SplitSpec{fcfg.seed});

  const hear::FinetuneResult<double> result = hear::finetune(
      std::move(model), loader, split.train, split.val, classes, fcfg);

  std::filesystem::remove(log_path);
  std::ofstream log(log_path);
  if (!log) throw hear::ParseError("cannot open training log: " + log_path);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu, %.6e\n", e, result.epoch_losses[e]);
    log << buf;
  }

  hear::Model<double> best = result.best_model;
  hear::save_checkpoint(out, best);
  const hear::ConfusionMatrix cm =
      hear::evaluate_split(best, loader, split.test, classes, fcfg.batch_size);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "best epoch %zu, val balanced accuracy %.4f, "
                "test balanced accuracy %.4f\n",
                result.best_epoch, result.best_val_balanced_accuracy,
                hear::balanced_accuracy(cm));
  std::cout << buf << "checkpoint " << out << ", log " << log_path << "\n";
  return kOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const hear::RunConfig& cfg, const std::string& data_flag,
             const std::string& checkpoint, const std::string& results_flag) {
  const std::string data = default_path(cfg, data_flag, "synthetic");
  const std::string results = default_path(cfg, results_flag, "results.txt");
  const std::size_t classes = cfg.get_size("classes");
  const hear::PipelineConfig pipe = pipeline_from(cfg);
  const hear::FinetuneConfig fcfg = finetune_config_from(cfg);
  const std::vector<std::uint64_t> seeds = cfg.get_seed_list("eval_seeds");

  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  hear::ContainerLoader<double> loader(data, dict, pipe);

  const hear::Model<double> base =
      model_from_checkpoint_or_fresh(cfg, checkpoint);

  const hear::ProtocolResult r =
      hear::run_protocol(base, loader, classes, fcfg, seeds);
  hear::write_results(results, dataset_label(data), r);

  std::ifstream echo(results);
  std::cout << echo.rdbuf();
  return kOk;
}

// --- gradcheck --------------------------------------------------------------

// Finite-difference check of the full pretraining objective on a tiny
// double-precision model. The discrete branches the stop-gradients pin
// (mask plan, codeword assignment, detached normalized vectors) are
// frozen at the base point so the surrogate is differentiable.
int cmd_gradcheck(std::uint64_t seed) {
  const hear::ModelConfig mc =
      hear::make_config(hear::ModelVariant::tiny, 8, 8, 4, 16);
  hear::Model<double> m = hear::init_model<double>(mc, seed);
  hear::add_pretrain_params(m, seed + 1);

  hear::Rng rng(hear::mix64(seed, 0x67726164));
  hear::PretrainBatch<double> batch;
  batch.patches = hear::Tensor<double>::randn({1, 2, 1, 8}, rng, 1.0);
  batch.coords = hear::Tensor<double>::randn({2, 3}, rng, 0.05);
  batch.sample_ids = {0};
  batch.layout_signature = "0000000000000000";

  hear::PretrainConfig pcfg;
  pcfg.seed = seed;

  hear::Tape<double> tape;
  hear::GraphBuilder<double> gb(tape, m);
  auto pl = hear::pretrain_losses(gb, batch, pcfg);
  m.params.zero_grads();
  tape.backward(pl.total);

  const hear::Tensor<double> reps0 = tape.value(pl.reps);
  const std::size_t n = reps0.dim(0);
  const std::size_t d = reps0.dim(1);
  hear::Tensor<double> xn0({n, d});
  hear::Tensor<double> vn0({n, d});
  const hear::Tensor<double>& cb = m.params.value("codebook");
  for (std::size_t i = 0; i < n; ++i) {
    hear::detail::l2_normalize(reps0.data() + i * d, d, xn0.data() + i * d);
    hear::detail::l2_normalize(cb.data() + pl.indices[i] * d, d,
                               vn0.data() + i * d);
  }
  hear::Tensor<double> rows({n, 8}, batch.patches.vec());
  const hear::SpectrumTarget<double> target = hear::spectrum_targets(rows);

  const auto surrogate = [&]() {
    hear::Tape<double> t2;
    hear::GraphBuilder<double> g2(t2, m);
    hear::ForwardOptions<double> opt;
    opt.mask_rows = &pl.mask_rows;
    auto fr = hear::full_forward(g2, t2.constant(batch.patches),
                                 t2.constant(batch.coords), opt);
    hear::Var reps = t2.reshape(fr.patch_hidden, {n, d});
    hear::Var vz =
        t2.l2norm_rows(t2.gather_rows(g2.p("codebook"), pl.indices));
    hear::Var term1 = t2.sum(t2.square(t2.sub(t2.constant(xn0), vz)));
    hear::Var term2 = t2.sum(
        t2.norm_rows(t2.sub(t2.l2norm_rows(reps), t2.constant(vn0))));
    hear::Var amp = g2.affine(reps, "amp_head.w", "amp_head.b");
    hear::Var phase = g2.affine(reps, "phase_head.w", "phase_head.b");
    hear::Var ls = hear::spectrum_loss(t2, amp, phase, target.amplitude,
                                       target.phase, pl.mask_rows);
    return t2.value(t2.add(t2.add(term1, term2), ls))[0];
  };

  hear::FdReport worst;
  for (std::size_t i = 0; i < m.params.count(); ++i) {
    worst.merge(hear::fd_check(surrogate, m.params.value(i),
                               m.params.grad(i), 1e-5, 1e-3));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf),
                "max relative error %.3e over %zu gradient entries\n",
                worst.max_rel, worst.checked);
  std::cout << buf;
  return worst.max_rel < kGradcheckTolerance ? kOk : kGradcheckFailure;
}

// --- topomap ----------------------------------------------------------------

int cmd_topomap(const hear::RunConfig& cfg, const std::string& data_flag,
                const std::string& checkpoint_flag,
                const std::string& subset_flag, const std::string& csv_flag,
                const std::string& svg_flag) {
  const std::string data = default_path(cfg, data_flag, "synthetic");
  const std::string ckpt = default_path(cfg, checkpoint_flag, "pretrain.ckpt");
  const std::string csv = default_path(cfg, csv_flag, "topomap.csv");
  const std::string svg = default_path(cfg, svg_flag, "topomap.svg");

  const hear::GlobalDictionary dict =
      hear::load_dictionary(cfg.dictionary_path());
  const hear::PipelineConfig pipe = pipeline_from(cfg);
  hear::ContainerLoader<double> loader(data, dict, pipe);
  hear::Model<double> model = hear::load_checkpoint<double>(ckpt);
  if (model.config.window_len != pipe.window_len) {
    throw hear::ConfigError(
        "checkpoint window_len " + std::to_string(model.config.window_len) +
        " does not match pipeline window_len " +
        std::to_string(pipe.window_len));
  }

  // Pick the subset, defaulting to the manifest's first.
  const hear::Manifest& manifest = loader.manifest();
  std::size_t subset_index = 0;
  if (!subset_flag.empty()) {
    bool found = false;
    for (std::size_t k = 0; k < manifest.subsets.size(); ++k) {
      if (manifest.subsets[k].subset_id == subset_flag) {
        subset_index = k;
        found = true;
        break;
      }
    }
    if (!found) {
      throw hear::ConfigError("subset not in manifest: " + subset_flag);
    }
  }
  const hear::SubsetInfo& info = manifest.subsets[subset_index];

  // Sample ids for that subset, capped at one batch.
  std::vector<std::uint64_t> ids;
  for (const hear::SampleRef& ref : loader.index().samples) {
    if (ref.subset_index == subset_index) ids.push_back(ref.sample_id);
  }
  if (ids.empty()) {
    throw hear::EmptyBatch("subset " + info.subset_id + " has no samples");
  }
  ids.resize(std::min<std::size_t>(ids.size(), cfg.get_size("batch_size")));

  const hear::LoadedBatch<double> loaded =
      loader.load(hear::Batch{info.layout_signature, ids});
  const std::vector<double> scores = hear::export_channel_activation(
      model, loaded.batch.patches, loaded.batch.coords);

  const hear::LayoutMapping mapping = hear::map_layout(dict, info.channels);
  std::vector<hear::TopomapChannel> channels(mapping.channel_count());
  for (std::size_t i = 0; i < channels.size(); ++i) {
    channels[i] = {mapping.kept_names[i], mapping.coordinates[i], scores[i]};
  }
  hear::write_topomap_csv(csv, channels);
  hear::write_topomap_svg(svg, channels);
  std::cout << "wrote " << csv << " and " << svg << " ("
            << channels.size() << " channels, " << ids.size()
            << " samples)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "EEG representation toolkit: channel dictionary, synthetic data, "
      "masked pretraining, fine-tuning, evaluation, and scalp maps"};
  app.require_subcommand(0, 1);

  std::string config_path;
  app.add_option("--config", config_path, "flat `key = value` config file");

  // Every run-config key doubles as a global flag; flags override the
  // config file.
  std::map<std::string, std::string> overrides;
  for (const hear::ConfigKey& key : hear::config_registry()) {
    const std::string name = "--" + key.key;
    const std::string help =
        key.help + " [default: " +
        (key.default_value.empty() ? "none" : key.default_value) + "]";
    app.add_option_function<std::string>(
        name,
        [&overrides, k = key.key](const std::string& v) { overrides[k] = v; },
        help);
  }

  auto* dict_cmd =
      app.add_subcommand("dict", "validate or query the channel dictionary");
  dict_cmd->fallthrough();
  std::string lookup;
  std::string validate_path;
  dict_cmd->add_option("--lookup", lookup, "resolve one raw channel label");
  dict_cmd->add_option("--validate", validate_path,
                       "check a dictionary file and report the first error");

  auto* gen_cmd =
      app.add_subcommand("gen", "generate a planted-tone synthetic dataset");
  gen_cmd->fallthrough();
  std::vector<std::string> layout_flags;
  std::string gen_out;
  gen_cmd->add_option("--layout", layout_flags,
                      "space-separated channel names; repeat per layout");
  gen_cmd->add_option("--out", gen_out, "output container directory");

  auto* pre_cmd =
      app.add_subcommand("pretrain", "masked pretraining on a container");
  pre_cmd->fallthrough();
  std::string pre_data, pre_out, pre_log;
  pre_cmd->add_option("--data", pre_data, "container directory");
  pre_cmd->add_option("--out", pre_out, "checkpoint output path");
  pre_cmd->add_option("--log", pre_log, "loss log output path");

  auto* fin_cmd =
      app.add_subcommand("finetune", "supervised fine-tuning with a "
                                     "classification head");
  fin_cmd->fallthrough();
  std::string fin_data, fin_ckpt, fin_out, fin_log;
  fin_cmd->add_option("--data", fin_data, "labeled container directory");
  fin_cmd->add_option("--checkpoint", fin_ckpt,
                      "pretrained checkpoint to start from (default: fresh "
                      "initialization)");
  fin_cmd->add_option("--out", fin_out, "fine-tuned checkpoint output path");
  fin_cmd->add_option("--log", fin_log, "epoch loss log output path");

  auto* eval_cmd = app.add_subcommand(
      "eval", "multi-seed fine-tuning protocol with a results table");
  eval_cmd->fallthrough();
  std::string eval_data, eval_ckpt, eval_results;
  eval_cmd->add_option("--data", eval_data, "labeled container directory");
  eval_cmd->add_option("--checkpoint", eval_ckpt,
                       "pretrained checkpoint to start from (default: fresh "
                       "initialization)");
  eval_cmd->add_option("--results", eval_results, "results table path");

  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of the pretraining objective");
  grad_cmd->fallthrough();

  auto* topo_cmd = app.add_subcommand(
      "topomap", "per-channel attention scores as CSV plus an SVG scalp map");
  topo_cmd->fallthrough();
  std::string topo_data, topo_ckpt, topo_subset, topo_csv, topo_svg;
  topo_cmd->add_option("--data", topo_data, "container directory");
  topo_cmd->add_option("--checkpoint", topo_ckpt, "model checkpoint");
  topo_cmd->add_option("--subset", topo_subset,
                       "subset id to visualize (default: first in manifest)");
  topo_cmd->add_option("--csv", topo_csv, "score table output path");
  topo_cmd->add_option("--svg", topo_svg, "scalp map output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    hear::RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [key, value] : overrides) cfg.set(key, value);

    if (dict_cmd->parsed()) return cmd_dict(cfg, lookup, validate_path);
    if (gen_cmd->parsed()) return cmd_gen(cfg, layout_flags, gen_out);
    if (pre_cmd->parsed()) return cmd_pretrain(cfg, pre_data, pre_out, pre_log);
    if (fin_cmd->parsed()) {
      return cmd_finetune(cfg, fin_data, fin_ckpt, fin_out, fin_log);
    }
    if (eval_cmd->parsed()) return cmd_eval(cfg, eval_data, eval_ckpt,
                                            eval_results);
    if (grad_cmd->parsed()) return cmd_gradcheck(cfg.get_u64("seed"));
    if (topo_cmd->parsed()) {
      return cmd_topomap(cfg, topo_data, topo_ckpt, topo_subset, topo_csv,
                         topo_svg);
    }

    std::cout << app.help();
    return kConfigFailure;
  } catch (const hear::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

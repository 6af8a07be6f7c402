/**
 * @file cli.hpp
 * @brief Command-line front end: reproducible experiment plumbing over the
 *        dataset generator, training/generation pipelines, evaluation and
 *        motion export.
 *
 * Every subcommand resolves its settings in three layers — built-in defaults,
 * then a JSON config file (--config), then explicitly passed flags — and
 * writes the resolved document as a snapshot next to its outputs.  Feeding a
 * snapshot back through --config reproduces the run.  Exit codes: 0 success,
 * 1 runtime failure, 2 usage error.
 */
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moreact/common.hpp"
#include "moreact/evalharness.hpp"
#include "moreact/motion_io.hpp"
#include "moreact/pipelines.hpp"
#include "moreact/plotting.hpp"
#include "moreact/synthdata.hpp"

namespace moreact {

inline constexpr int kExitSuccess = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace cli_detail {

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad config JSON in " + path.string() + ": " + e.what());
  }
}

/**
 * Resolves one command's configuration: `defaults` patched by the config
 * file (when given), patched by the explicitly passed flags.  A bare config
 * file that is neither a snapshot (no "command" key) nor already shaped like
 * one (no `nest_key` subobject) is treated as the `nest_key` subdocument, so
 * `--config train_settings.json` works without wrapper boilerplate.
 */
inline nlohmann::json resolve_config(nlohmann::json defaults,
                                     const std::string& config_path,
                                     const nlohmann::json& flag_patch,
                                     const char* nest_key = nullptr) {
  if (!config_path.empty()) {
    nlohmann::json file = parse_json_file(config_path);
    if (nest_key != nullptr && !file.contains(nest_key) &&
        !file.contains("command"))
      file = nlohmann::json{{nest_key, std::move(file)}};
    defaults.merge_patch(file);
  }
  defaults.merge_patch(flag_patch);
  return defaults;
}

inline void write_snapshot(const std::filesystem::path& path,
                           const nlohmann::json& resolved) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot " + path.string());
  out << resolved.dump(2) << "\n";
  if (!out) throw IoError("failed writing config snapshot " + path.string());
}

/// Snapshot path for a file-producing command: the output with its
/// extension replaced by ".config.json".
inline std::filesystem::path sibling_snapshot(std::filesystem::path out) {
  out.replace_extension(".config.json");
  return out;
}

/**
 * A dataset argument accepts a manifest file or a dataset root directory;
 * with neither flag nor config value, MOREACT_DATA_DIR provides the root.
 * Directories resolve to `leaf` (train.json / test.json) inside them.
 */
inline std::filesystem::path resolve_manifest(const std::string& given,
                                              const char* leaf) {
  std::filesystem::path p;
  if (!given.empty()) {
    p = given;
  } else if (const char* env = std::getenv("MOREACT_DATA_DIR")) {
    p = env;
  } else {
    throw ConfigError(
        "no dataset given: pass a manifest or set MOREACT_DATA_DIR");
  }
  if (std::filesystem::is_directory(p)) p /= leaf;
  return p;
}

inline std::string path_string(const nlohmann::json& j, const char* key) {
  return j.at(key).get<std::string>();
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const nlohmann::json& resolved) {
  const std::filesystem::path out = path_string(resolved, "out");
  if (out.empty()) throw ConfigError("gen-data needs --out");
  const auto& catalog = scenario_catalog();
  const std::vector<int> counts(catalog.size(),
                                resolved.at("count").get<int>());
  const DatasetPaths paths = build_dataset(
      catalog, counts, resolved.at("seed").get<std::uint64_t>(),
      resolved.at("split").get<double>(), out,
      resolved.at("frames").get<int>(), resolved.at("fps").get<double>());
  write_snapshot(out / "resolved_config.json", resolved);
  std::printf("train manifest: %s\n", paths.train_manifest.c_str());
  std::printf("test manifest:  %s\n", paths.test_manifest.c_str());
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(nlohmann::json resolved) {
  const std::string stage = path_string(resolved, "stage");
  const std::filesystem::path manifest =
      resolve_manifest(path_string(resolved, "data"), "train.json");
  resolved["data"] = manifest.string();
  const std::vector<InteractionSample> dataset = load_dataset(manifest);

  if (stage == "embedder") {
    resolved.erase("train");
    const EmbedderConfig config =
        EmbedderConfig::from_json(resolved.at("embedder"));
    resolved["embedder"] = config.to_json();
    const std::filesystem::path out = path_string(resolved, "out");
    const EmbedderTrainResult result = train_embedder(dataset, config);

    const std::filesystem::path ckpt = out / "embedder.ckpt";
    save_embedder_checkpoint(
        ckpt, result.embedder,
        {{"holdout_accuracy", result.holdout_accuracy},
         {"traj_holdout_accuracy", result.traj_holdout_accuracy}});
    const std::filesystem::path metrics = out / "embedder_metrics.jsonl";
    std::ofstream mout(metrics);
    if (!mout) throw IoError("cannot open metrics file: " + metrics.string());
    for (const auto& rec : result.records) mout << rec.dump() << "\n";
    write_snapshot(out / "resolved_config.json", resolved);

    std::printf("checkpoint: %s\n", ckpt.c_str());
    std::printf("holdout accuracy: %.4f (trajectory head %.4f)\n",
                result.holdout_accuracy, result.traj_holdout_accuracy);
    return kExitSuccess;
  }

  resolved.erase("embedder");
  resolved.erase("out");
  const TrainConfig config = TrainConfig::from_json(resolved.at("train"));
  resolved["train"] = config.to_json();

  TrainResult result;
  if (stage == "traj") {
    result = train_trajectory(dataset, config);
  } else if (stage == "full") {
    result = train_fullbody(dataset, config);
  } else if (stage == "single") {
    result = train_single_stage(dataset, config);
  } else if (stage == "pair") {
    result = train_pair(dataset, config);
  } else {
    throw ConfigError("unknown training stage: " + stage);
  }
  write_snapshot(config.out_dir / "resolved_config.json", resolved);

  std::printf("checkpoint: %s\n", result.checkpoint.c_str());
  std::printf("metrics: %s\n", result.metrics.c_str());
  std::printf("steps: %d\n", result.steps);
  std::printf("final eval loss: %.6f\n", result.final_eval_loss);
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

inline int cmd_sample(const nlohmann::json& resolved) {
  const std::string actor_path = path_string(resolved, "actor");
  if (actor_path.empty()) throw ConfigError("sample needs --actor");

  GenerationRequest request;
  request.actor = load_motion(actor_path);
  request.text = path_string(resolved, "text");
  request.mode = generation_mode_from_string(path_string(resolved, "mode"));
  request.seed = resolved.at("seed").get<std::uint64_t>();
  request.frames = resolved.at("frames").get<int>();
  request.use_ema = resolved.at("use_ema").get<bool>();
  const nlohmann::json& sj = resolved.at("sampler");
  request.sampler.ddim_steps = sj.at("ddim_steps").get<int>();
  request.sampler.eta = sj.at("eta").get<double>();
  request.sampler.guidance_scale = sj.at("guidance_scale").get<double>();
  request.sampler.clamp = sj.value("clamp", request.sampler.clamp);

  const nlohmann::json& cj = resolved.at("checkpoints");
  CheckpointSet checkpoints;
  checkpoints.trajectory = cj.at("trajectory").get<std::string>();
  checkpoints.fullbody = cj.at("fullbody").get<std::string>();
  checkpoints.single_stage = cj.at("single_stage").get<std::string>();
  checkpoints.pair = cj.at("pair").get<std::string>();

  const GenerationResult result = generate(request, checkpoints);
  const std::filesystem::path out = path_string(resolved, "out");
  save_motion(out, result.reactor);

  const std::string plot = path_string(resolved, "plot");
  if (!plot.empty())
    write_trajectory_plot_svg(plot, "root trajectories",
                              {{"actor", request.actor.features},
                               {"reaction", result.reactor.features}});
  const std::string strip = path_string(resolved, "strip");
  if (!strip.empty())
    write_skeleton_strip_svg(strip, "generated reaction",
                             {{"actor", request.actor},
                              {"reaction", result.reactor}});
  write_snapshot(sibling_snapshot(out), resolved);
  std::printf("reaction: %s\n", out.c_str());
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(nlohmann::json resolved) {
  const std::string gen_path = path_string(resolved, "gen");
  if (gen_path.empty()) throw ConfigError("eval needs --gen");
  const std::filesystem::path real_manifest =
      resolve_manifest(path_string(resolved, "real"), "test.json");
  resolved["real"] = real_manifest.string();

  const std::vector<InteractionSample> gen_set = load_dataset(gen_path);
  const std::vector<InteractionSample> real_set = load_dataset(real_manifest);
  const MotionEmbedder embedder =
      load_embedder_checkpoint(path_string(resolved, "embedder"));

  EvalOptions opts;
  opts.diversity_pairs = resolved.at("pairs").get<int>();
  opts.bootstrap_resamples = resolved.at("resamples").get<int>();
  opts.contact_radius = resolved.at("contact_radius").get<double>();
  opts.metadata = {{"gen", gen_path},
                   {"real", real_manifest.string()},
                   {"embedder", path_string(resolved, "embedder")}};
  const EvalReport report = evaluate(
      gen_set, real_set, embedder, resolved.at("seed").get<std::uint64_t>(),
      opts);

  const std::filesystem::path out = path_string(resolved, "out");
  save_eval_report(out, report);
  write_snapshot(sibling_snapshot(out), resolved);
  std::printf("report: %s\n", out.c_str());
  std::printf(
      "fid=%.4f diversity=%.4f accuracy=%.4f foot_skate=%.4f "
      "contact_alignment=%.4f\n",
      report.fid.value, report.diversity.value,
      report.recognition_accuracy.value, report.foot_skate.value,
      report.contact_alignment.value);
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// perturb-study
// ---------------------------------------------------------------------------

inline int cmd_perturb_study(nlohmann::json resolved) {
  const std::filesystem::path manifest =
      resolve_manifest(path_string(resolved, "data"), "test.json");
  resolved["data"] = manifest.string();
  const std::vector<InteractionSample> dataset = load_dataset(manifest);
  const MotionEmbedder embedder =
      load_embedder_checkpoint(path_string(resolved, "embedder"));

  const nlohmann::json& sj = resolved.at("schedule");
  const DiffusionSchedule sched =
      make_schedule(schedule_kind_from_string(sj.at("kind").get<std::string>()),
                    sj.at("steps").get<int>());
  const std::vector<int> t_grid = resolved.at("t").get<std::vector<int>>();

  const std::filesystem::path plot = path_string(resolved, "plot");
  const PerturbationStudy study = perturbation_study(
      dataset, embedder, sched, t_grid,
      resolved.at("seed").get<std::uint64_t>(), plot);

  const std::filesystem::path out = path_string(resolved, "out");
  if (out.has_parent_path())
    std::filesystem::create_directories(out.parent_path());
  std::ofstream jout(out);
  if (!jout) throw IoError("cannot write study " + out.string());
  jout << study.to_json().dump(2) << "\n";
  if (!jout) throw IoError("failed writing study " + out.string());
  write_snapshot(sibling_snapshot(out), resolved);

  std::printf("study: %s\n", out.c_str());
  if (!plot.empty()) std::printf("plot: %s\n", plot.c_str());
  for (const auto& curve : study.curves) {
    std::printf("%-6s", perturb_mode_to_string(curve.mode).c_str());
    for (size_t i = 0; i < curve.fid.size(); ++i)
      std::printf(" t=%d:%.4f", t_grid[i], curve.fid[i]);
    std::printf("\n");
  }
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

inline int cmd_export(nlohmann::json resolved) {
  const std::string in = path_string(resolved, "in");
  if (in.empty()) throw ConfigError("export needs --in");
  const std::string format = path_string(resolved, "format");
  std::filesystem::path out = path_string(resolved, "out");
  if (out.empty())
    out = std::filesystem::path(in).replace_extension(
        format == "bvh" ? ".bvh" : ".json");
  resolved["out"] = out.string();

  const MotionSequence motion = load_motion(in);
  if (format == "bvh")
    export_bvh(out, motion);
  else
    save_motion_json(out, motion);
  write_snapshot(sibling_snapshot(out), resolved);
  std::printf("exported: %s\n", out.c_str());
  return kExitSuccess;
}

// ---------------------------------------------------------------------------
// Subcommand wiring
// ---------------------------------------------------------------------------

/// Collects an option's value into the explicit-flag patch when (and only
/// when) the user actually passed it, preserving file-over-default and
/// flag-over-file precedence.
class FlagPatch {
 public:
  explicit FlagPatch(nlohmann::json& patch) : patch_(patch) {}

  template <typename T>
  void take(const CLI::Option* opt, const nlohmann::json::json_pointer& where,
            const T& value) {
    if (opt != nullptr && opt->count() > 0) patch_[where] = value;
  }

 private:
  nlohmann::json& patch_;
};

struct GenDataOpts {
  std::string out, config;
  int count = 0, frames = 0;
  double split = 0.0, fps = 0.0;
  std::uint64_t seed = 0;
  CLI::Option *o_out = nullptr, *o_count = nullptr, *o_frames = nullptr,
              *o_split = nullptr, *o_fps = nullptr, *o_seed = nullptr;
};

inline void setup_gen_data(CLI::App& app) {
  auto opts = std::make_shared<GenDataOpts>();
  CLI::App* sub = app.add_subcommand(
      "gen-data", "Generate a scripted interaction dataset");
  opts->o_out = sub->add_option("--out", opts->out, "output dataset root");
  opts->o_count =
      sub->add_option("--count", opts->count, "samples per scenario");
  opts->o_seed = sub->add_option("--seed", opts->seed, "dataset seed");
  opts->o_split =
      sub->add_option("--split", opts->split, "train share per scenario");
  opts->o_frames = sub->add_option("--frames", opts->frames, "clip length");
  opts->o_fps = sub->add_option("--fps", opts->fps, "clip frame rate");
  sub->add_option("--config", opts->config, "JSON config file");

  sub->callback([opts]() {
    nlohmann::json patch;
    FlagPatch flags(patch);
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);
    flags.take(opts->o_count, "/count"_json_pointer, opts->count);
    flags.take(opts->o_seed, "/seed"_json_pointer, opts->seed);
    flags.take(opts->o_split, "/split"_json_pointer, opts->split);
    flags.take(opts->o_frames, "/frames"_json_pointer, opts->frames);
    flags.take(opts->o_fps, "/fps"_json_pointer, opts->fps);
    const nlohmann::json defaults{
        {"command", "gen-data"}, {"out", ""},     {"count", 20},
        {"seed", 1},             {"split", 0.8},  {"frames", 64},
        {"fps", 20.0}};
    cmd_gen_data(resolve_config(defaults, opts->config, patch));
  });
}

struct TrainOpts {
  std::string stage = "full", data, config, out, schedule, traj_param, resume;
  int epochs = 0, batch_size = 0, window = 0, blocks = 0, latent_dim = 0,
      heads = 0, schedule_steps = 0, checkpoint_every = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  bool no_ema = false;
  CLI::Option *o_data = nullptr, *o_out = nullptr, *o_epochs = nullptr,
              *o_batch = nullptr, *o_lr = nullptr, *o_seed = nullptr,
              *o_window = nullptr, *o_blocks = nullptr, *o_latent = nullptr,
              *o_heads = nullptr, *o_schedule = nullptr, *o_steps = nullptr,
              *o_param = nullptr, *o_resume = nullptr, *o_every = nullptr,
              *o_no_ema = nullptr;
};

inline void setup_train(CLI::App& app) {
  auto opts = std::make_shared<TrainOpts>();
  CLI::App* sub = app.add_subcommand("train", "Train a model stage");
  sub->add_option("--stage", opts->stage,
                  "traj | full | single | pair | embedder")
      ->check(CLI::IsMember({"traj", "full", "single", "pair", "embedder"}));
  opts->o_data =
      sub->add_option("--data", opts->data, "training manifest or dataset root");
  sub->add_option("--config", opts->config, "JSON config file");
  opts->o_out = sub->add_option("--out", opts->out, "run output directory");
  opts->o_epochs = sub->add_option("--epochs", opts->epochs, "epoch budget");
  opts->o_batch =
      sub->add_option("--batch-size", opts->batch_size, "batch size");
  opts->o_lr = sub->add_option("--lr", opts->lr, "learning rate");
  opts->o_seed = sub->add_option("--seed", opts->seed, "training seed");
  opts->o_window =
      sub->add_option("--window", opts->window, "training crop length");
  opts->o_blocks = sub->add_option("--blocks", opts->blocks, "encoder blocks");
  opts->o_latent =
      sub->add_option("--latent-dim", opts->latent_dim, "token width");
  opts->o_heads = sub->add_option("--heads", opts->heads, "attention heads");
  opts->o_schedule = sub->add_option("--schedule", opts->schedule,
                                     "diffusion schedule: cosine | linear")
                         ->check(CLI::IsMember({"cosine", "linear"}));
  opts->o_steps = sub->add_option("--schedule-steps", opts->schedule_steps,
                                  "diffusion steps");
  opts->o_param = sub->add_option("--traj-param", opts->traj_param,
                                  "trajectory parameterization: eps | x0")
                      ->check(CLI::IsMember({"eps", "x0"}));
  opts->o_resume =
      sub->add_option("--resume", opts->resume, "checkpoint to continue from");
  opts->o_every = sub->add_option("--checkpoint-every", opts->checkpoint_every,
                                  "epochs between periodic checkpoints");
  opts->o_no_ema =
      sub->add_flag("--no-ema", opts->no_ema, "disable weight averaging");

  sub->callback([opts]() {
    nlohmann::json patch;
    patch["stage"] = opts->stage;  // subcommand choice always wins
    FlagPatch flags(patch);
    flags.take(opts->o_data, "/data"_json_pointer, opts->data);
    // Shared knobs patch both training documents; the snapshot keeps only
    // the one its stage consumed.
    for (const char* doc : {"/train", "/embedder"}) {
      const std::string base(doc);
      flags.take(opts->o_epochs,
                 nlohmann::json::json_pointer(base + "/epochs"), opts->epochs);
      flags.take(opts->o_batch,
                 nlohmann::json::json_pointer(base + "/batch_size"),
                 opts->batch_size);
      flags.take(opts->o_lr, nlohmann::json::json_pointer(base + "/lr"),
                 opts->lr);
      flags.take(opts->o_seed, nlohmann::json::json_pointer(base + "/seed"),
                 opts->seed);
    }
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);
    flags.take(opts->o_out, "/train/out_dir"_json_pointer, opts->out);
    flags.take(opts->o_window, "/train/window"_json_pointer, opts->window);
    flags.take(opts->o_blocks, "/train/blocks"_json_pointer, opts->blocks);
    flags.take(opts->o_latent, "/train/latent_dim"_json_pointer,
               opts->latent_dim);
    flags.take(opts->o_heads, "/train/heads"_json_pointer, opts->heads);
    flags.take(opts->o_schedule, "/train/schedule/kind"_json_pointer,
               opts->schedule);
    flags.take(opts->o_steps, "/train/schedule/steps"_json_pointer,
               opts->schedule_steps);
    flags.take(opts->o_param, "/train/traj_parameterization"_json_pointer,
               opts->traj_param);
    flags.take(opts->o_resume, "/train/resume_from"_json_pointer, opts->resume);
    flags.take(opts->o_every, "/train/checkpoint_every"_json_pointer,
               opts->checkpoint_every);
    if (opts->o_no_ema->count() > 0) patch["/train/use_ema"_json_pointer] = false;

    const nlohmann::json defaults{{"command", "train"},
                                  {"stage", "full"},
                                  {"data", ""},
                                  {"out", "runs"},
                                  {"train", TrainConfig{}.to_json()},
                                  {"embedder", EmbedderConfig{}.to_json()}};
    cmd_train(resolve_config(defaults, opts->config, patch, "train"));
  });
}

struct SampleOpts {
  std::string actor, text, mode, config, out, plot, strip;
  std::string ckpt_traj, ckpt_full, ckpt_single, ckpt_pair;
  int steps = 0, frames = 0;
  double eta = 0.0, guidance = 0.0;
  std::uint64_t seed = 0;
  bool no_ema = false;
  CLI::Option *o_actor = nullptr, *o_text = nullptr, *o_mode = nullptr,
              *o_steps = nullptr, *o_eta = nullptr, *o_guidance = nullptr,
              *o_seed = nullptr, *o_frames = nullptr, *o_out = nullptr,
              *o_plot = nullptr, *o_strip = nullptr, *o_traj = nullptr,
              *o_full = nullptr, *o_single = nullptr, *o_pair = nullptr,
              *o_no_ema = nullptr;
};

inline void setup_sample(CLI::App& app) {
  auto opts = std::make_shared<SampleOpts>();
  CLI::App* sub =
      app.add_subcommand("sample", "Generate a reaction to an actor motion");
  opts->o_actor = sub->add_option("--actor", opts->actor, "actor motion file");
  opts->o_text = sub->add_option("--text", opts->text, "reaction description");
  opts->o_mode =
      sub->add_option("--mode", opts->mode,
                      "two_stage | single_stage | actor_infill_baseline")
          ->check(CLI::IsMember(
              {"two_stage", "single_stage", "actor_infill_baseline"}));
  opts->o_seed = sub->add_option("--seed", opts->seed, "sampling seed");
  opts->o_steps = sub->add_option("--steps", opts->steps, "DDIM steps");
  opts->o_eta = sub->add_option("--eta", opts->eta, "DDIM eta");
  opts->o_guidance =
      sub->add_option("--guidance", opts->guidance, "guidance scale");
  opts->o_frames =
      sub->add_option("--frames", opts->frames, "output length (0 = actor's)");
  opts->o_traj = sub->add_option("--trajectory-ckpt", opts->ckpt_traj,
                                 "trajectory checkpoint");
  opts->o_full = sub->add_option("--fullbody-ckpt", opts->ckpt_full,
                                 "full-body checkpoint");
  opts->o_single = sub->add_option("--single-ckpt", opts->ckpt_single,
                                   "single-stage checkpoint");
  opts->o_pair =
      sub->add_option("--pair-ckpt", opts->ckpt_pair, "pair checkpoint");
  opts->o_out = sub->add_option("--out", opts->out, "output motion file");
  opts->o_plot =
      sub->add_option("--plot", opts->plot, "top-down trajectory plot (SVG)");
  opts->o_strip =
      sub->add_option("--strip", opts->strip, "skeleton strip render (SVG)");
  opts->o_no_ema =
      sub->add_flag("--no-ema", opts->no_ema, "sample raw (non-EMA) weights");
  sub->add_option("--config", opts->config, "JSON config file");

  sub->callback([opts]() {
    nlohmann::json patch;
    FlagPatch flags(patch);
    flags.take(opts->o_actor, "/actor"_json_pointer, opts->actor);
    flags.take(opts->o_text, "/text"_json_pointer, opts->text);
    flags.take(opts->o_mode, "/mode"_json_pointer, opts->mode);
    flags.take(opts->o_seed, "/seed"_json_pointer, opts->seed);
    flags.take(opts->o_frames, "/frames"_json_pointer, opts->frames);
    flags.take(opts->o_steps, "/sampler/ddim_steps"_json_pointer, opts->steps);
    flags.take(opts->o_eta, "/sampler/eta"_json_pointer, opts->eta);
    flags.take(opts->o_guidance, "/sampler/guidance_scale"_json_pointer,
               opts->guidance);
    flags.take(opts->o_traj, "/checkpoints/trajectory"_json_pointer,
               opts->ckpt_traj);
    flags.take(opts->o_full, "/checkpoints/fullbody"_json_pointer,
               opts->ckpt_full);
    flags.take(opts->o_single, "/checkpoints/single_stage"_json_pointer,
               opts->ckpt_single);
    flags.take(opts->o_pair, "/checkpoints/pair"_json_pointer,
               opts->ckpt_pair);
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);
    flags.take(opts->o_plot, "/plot"_json_pointer, opts->plot);
    flags.take(opts->o_strip, "/strip"_json_pointer, opts->strip);
    if (opts->o_no_ema->count() > 0) patch["use_ema"] = false;

    const nlohmann::json defaults{
        {"command", "sample"},
        {"actor", ""},
        {"text", ""},
        {"mode", "two_stage"},
        {"seed", 0},
        {"frames", 0},
        {"use_ema", true},
        {"sampler",
         {{"ddim_steps", 50}, {"eta", 0.0}, {"guidance_scale", 3.5}}},
        {"checkpoints",
         {{"trajectory", ""},
          {"fullbody", ""},
          {"single_stage", ""},
          {"pair", ""}}},
        {"out", "reaction.json"},
        {"plot", ""},
        {"strip", ""}};
    cmd_sample(resolve_config(defaults, opts->config, patch));
  });
}

struct EvalOpts {
  std::string gen, real, embedder, config, out;
  int pairs = 0, resamples = 0;
  double contact_radius = 0.0;
  std::uint64_t seed = 0;
  CLI::Option *o_gen = nullptr, *o_real = nullptr, *o_embedder = nullptr,
              *o_pairs = nullptr, *o_resamples = nullptr, *o_radius = nullptr,
              *o_seed = nullptr, *o_out = nullptr;
};

inline void setup_eval(CLI::App& app) {
  auto opts = std::make_shared<EvalOpts>();
  CLI::App* sub = app.add_subcommand(
      "eval", "Score a generated set against a reference set");
  opts->o_gen = sub->add_option("--gen", opts->gen, "generated-set manifest");
  opts->o_real =
      sub->add_option("--real", opts->real, "reference manifest or dataset root");
  opts->o_embedder =
      sub->add_option("--embedder", opts->embedder, "embedder checkpoint");
  opts->o_seed = sub->add_option("--seed", opts->seed, "evaluation seed");
  opts->o_pairs =
      sub->add_option("--pairs", opts->pairs, "diversity pair budget");
  opts->o_resamples =
      sub->add_option("--resamples", opts->resamples, "bootstrap resamples");
  opts->o_radius = sub->add_option("--contact-radius", opts->contact_radius,
                                   "contact alignment radius (m)");
  opts->o_out = sub->add_option("--out", opts->out, "report JSON path");
  sub->add_option("--config", opts->config, "JSON config file");

  sub->callback([opts]() {
    nlohmann::json patch;
    FlagPatch flags(patch);
    flags.take(opts->o_gen, "/gen"_json_pointer, opts->gen);
    flags.take(opts->o_real, "/real"_json_pointer, opts->real);
    flags.take(opts->o_embedder, "/embedder"_json_pointer, opts->embedder);
    flags.take(opts->o_seed, "/seed"_json_pointer, opts->seed);
    flags.take(opts->o_pairs, "/pairs"_json_pointer, opts->pairs);
    flags.take(opts->o_resamples, "/resamples"_json_pointer, opts->resamples);
    flags.take(opts->o_radius, "/contact_radius"_json_pointer,
               opts->contact_radius);
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);

    const nlohmann::json defaults{{"command", "eval"},
                                  {"gen", ""},
                                  {"real", ""},
                                  {"embedder", ""},
                                  {"seed", 0},
                                  {"pairs", 300},
                                  {"resamples", 20},
                                  {"contact_radius", kContactAlignmentRadius},
                                  {"out", "eval_report.json"}};
    cmd_eval(resolve_config(defaults, opts->config, patch));
  });
}

struct PerturbOpts {
  std::string data, embedder, config, out, plot, schedule;
  std::vector<int> t;
  int schedule_steps = 0;
  std::uint64_t seed = 0;
  CLI::Option *o_data = nullptr, *o_embedder = nullptr, *o_t = nullptr,
              *o_seed = nullptr, *o_schedule = nullptr, *o_steps = nullptr,
              *o_out = nullptr, *o_plot = nullptr;
};

inline void setup_perturb_study(CLI::App& app) {
  auto opts = std::make_shared<PerturbOpts>();
  CLI::App* sub = app.add_subcommand(
      "perturb-study", "Masked-noise FID curves over diffusion steps");
  opts->o_data =
      sub->add_option("--data", opts->data, "manifest or dataset root");
  opts->o_embedder =
      sub->add_option("--embedder", opts->embedder, "embedder checkpoint");
  opts->o_t = sub->add_option("--t", opts->t, "diffusion step grid");
  opts->o_seed = sub->add_option("--seed", opts->seed, "noise seed");
  opts->o_schedule = sub->add_option("--schedule", opts->schedule,
                                     "diffusion schedule: cosine | linear")
                         ->check(CLI::IsMember({"cosine", "linear"}));
  opts->o_steps = sub->add_option("--schedule-steps", opts->schedule_steps,
                                  "diffusion steps");
  opts->o_out = sub->add_option("--out", opts->out, "study JSON path");
  opts->o_plot = sub->add_option("--plot", opts->plot, "curve plot (SVG)");
  sub->add_option("--config", opts->config, "JSON config file");

  sub->callback([opts]() {
    nlohmann::json patch;
    FlagPatch flags(patch);
    flags.take(opts->o_data, "/data"_json_pointer, opts->data);
    flags.take(opts->o_embedder, "/embedder"_json_pointer, opts->embedder);
    flags.take(opts->o_t, "/t"_json_pointer, opts->t);
    flags.take(opts->o_seed, "/seed"_json_pointer, opts->seed);
    flags.take(opts->o_schedule, "/schedule/kind"_json_pointer,
               opts->schedule);
    flags.take(opts->o_steps, "/schedule/steps"_json_pointer,
               opts->schedule_steps);
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);
    flags.take(opts->o_plot, "/plot"_json_pointer, opts->plot);

    const nlohmann::json defaults{
        {"command", "perturb-study"},
        {"data", ""},
        {"embedder", ""},
        {"t", {0, 200, 400, 600, 800}},
        {"seed", 0},
        {"schedule", {{"kind", "cosine"}, {"steps", 1000}}},
        {"out", "perturbation.json"},
        {"plot", "perturbation.svg"}};
    cmd_perturb_study(resolve_config(defaults, opts->config, patch));
  });
}

struct ExportOpts {
  std::string in, format, out, config;
  CLI::Option *o_in = nullptr, *o_format = nullptr, *o_out = nullptr;
};

inline void setup_export(CLI::App& app) {
  auto opts = std::make_shared<ExportOpts>();
  CLI::App* sub =
      app.add_subcommand("export", "Convert a motion file to BVH or JSON");
  opts->o_in = sub->add_option("--in", opts->in, "input motion file");
  opts->o_format = sub->add_option("--format", opts->format, "bvh | json")
                       ->check(CLI::IsMember({"bvh", "json"}));
  opts->o_out = sub->add_option("--out", opts->out, "output path");
  sub->add_option("--config", opts->config, "JSON config file");

  sub->callback([opts]() {
    nlohmann::json patch;
    FlagPatch flags(patch);
    flags.take(opts->o_in, "/in"_json_pointer, opts->in);
    flags.take(opts->o_format, "/format"_json_pointer, opts->format);
    flags.take(opts->o_out, "/out"_json_pointer, opts->out);

    const nlohmann::json defaults{{"command", "export"},
                                  {"in", ""},
                                  {"format", "bvh"},
                                  {"out", ""}};
    cmd_export(resolve_config(defaults, opts->config, patch));
  });
}

}  // namespace cli_detail

/**
 * Parses and runs one invocation.  Usage problems (unknown flags, bad enum
 * values, missing subcommand) exit with 2; --help exits 0; runtime failures
 * (missing files, failed training, invalid motions) exit with 1.
 */
inline int run_cli(int argc, char** argv) {
  CLI::App app{"moreact: text-driven human reaction generation"};
  app.require_subcommand(1);
  cli_detail::setup_gen_data(app);
  cli_detail::setup_train(app);
  cli_detail::setup_sample(app);
  cli_detail::setup_eval(app);
  cli_detail::setup_perturb_study(app);
  cli_detail::setup_export(app);

  try {
    app.parse(argc, argv);
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitSuccess : kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "moreact: %s\n", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "moreact: unexpected error: %s\n", e.what());
    return kExitFailure;
  }
}

}  // namespace moreact

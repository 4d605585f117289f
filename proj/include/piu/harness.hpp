#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "piu/baselines.hpp"
#include "piu/diffusion.hpp"
#include "piu/idspace.hpp"
#include "piu/metrics.hpp"
#include "piu/unlearn.hpp"

// Config-driven orchestration of the full experiment: build the synthetic
// world, train or fetch the cached base model, analyze layers, pick the
// anchor, run the chosen unlearning method, evaluate, and report. Every stage
// is deterministic from the resolved config, so run directories are
// reproducible byte for byte.

namespace piu::harness {

struct WorldConfig {
  int num_identities = 64;
  int samples_per_identity = 12;
  double spread = 0.05;
  int embed_dim = 32;
  int style_dim = 32;
  double style_scale = 0.5;
  std::uint64_t seed = 0;  // resolved from the master seed unless given
};

struct ScheduleConfig {
  int timesteps = 100;
  double beta_min = 1e-3;
  double beta_max = 0.12;
};

struct BaseTrainConfig {
  long steps = 4000;
  int batch = 32;
  double lr = 2e-3;
  double null_drop = 0.1;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int n_samples = 25;
  double guidance = 1.0;
  std::uint64_t seed = 0;
};

struct SweepSpec {
  std::string param;  // lambda_preserve, eta, tau, surgical_top_k, or method
  std::vector<double> values;
  std::vector<std::string> method_values;  // used when param == "method"
};

struct SeedPins {
  bool world = false;
  bool base_train = false;
  bool unl = false;
  bool siss = false;
  bool uce = false;
  bool wid = false;
  bool eval = false;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  WorldConfig world;
  ScheduleConfig schedule;
  BaseTrainConfig base_train;
  int forget_identity = 0;
  std::string method = "piu";  // piu, naive, siss, uce, wid
  unlearn::UnlearnConfig unl;
  baselines::SissConfig siss;
  baselines::UceConfig uce;
  baselines::WidConfig wid;
  EvalConfig eval;
  std::string out_dir = "runs/exp";
  std::optional<SweepSpec> sweep;
  SeedPins pins;  // which stage seeds the config text fixed explicitly
};

// Defaults with every per-stage seed fanned out from the master seed.
ExperimentConfig default_config(std::uint64_t master_seed = 0);

// Strict parse: unknown keys are rejected by their dotted path, wrong types
// by key name, and absent keys fall back to the defaults above.
ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig parse_config(const std::string& path);

// Re-derives every seed that was not explicitly pinned in the original text.
void override_master_seed(ExperimentConfig& cfg, std::uint64_t master_seed);

std::string resolved_config_json(const ExperimentConfig& cfg);

struct RunContext {
  ExperimentConfig cfg;
  diffusion::SynthWorld world;
  diffusion::NoiseSchedule sched;
  idspace::IdentityDataset dataset;  // splits assigned around forget_identity
  diffusion::DenoiserParams base;
};

// World, schedule, dataset, and base model (trained, or loaded from the
// PIU_CACHE_DIR cache keyed by a content hash of the world, schedule, and
// base-train blocks). The base model never sees the forget split assignment.
RunContext prepare(const ExperimentConfig& cfg);

// Per-stage artifact writers; each ensures the run directory plus the
// dataset and base checkpoint, then adds its own files.
void stage_train_base(const RunContext& ctx);
std::vector<metrics::LayerScore> stage_analyze_layers(const RunContext& ctx);
int stage_select_anchor(const RunContext& ctx);
diffusion::DenoiserParams stage_unlearn(const RunContext& ctx);
metrics::MetricsReport stage_evaluate(const RunContext& ctx);

// The whole protocol in order, including the pre-unlearning evaluation that
// anchors the kernel-distance deltas. Returns 0 on success.
int run_pipeline(const ExperimentConfig& cfg);

// One pipeline per sweep value in its own subdirectory, aggregated into
// sweep.json, a flat table, and a gnuplot-friendly data file. Returns 0 only
// if every run succeeded.
int run_sweep(const ExperimentConfig& cfg);

}  // namespace piu::harness

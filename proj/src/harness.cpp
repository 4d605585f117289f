#include "piu/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"
#include "piu/errors.hpp"
#include "piu/hash.hpp"
#include "piu/rng.hpp"

namespace piu::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Seed fan-out streams off the master seed. All method blocks share one
// stream: only one of them runs per experiment.
constexpr std::uint64_t kStreamWorld = 1;
constexpr std::uint64_t kStreamBase = 2;
constexpr std::uint64_t kStreamMethod = 3;
constexpr std::uint64_t kStreamEval = 4;

[[noreturn]] void rethrow_tagged(const char* stage) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(stage) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string(stage) + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(stage) + ": " + e.what());
  }
}

template <class F>
auto run_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (...) {
    rethrow_tagged(stage);
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return text;
}

std::string join_key(const std::string& prefix, const char* key) {
  return prefix.empty() ? std::string(key) : prefix + "." + key;
}

void check_keys(const json& obj, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown config key: " +
                        (prefix.empty() ? it.key() : prefix + "." + it.key()));
    }
  }
}

const json* block_at(const json& obj, const std::string& prefix,
                     const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) return nullptr;
  if (!it->is_object()) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected an object");
  }
  return &*it;
}

double num_at(const json& obj, const std::string& prefix, const char* key,
              double dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number()) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected a number");
  }
  return it->get<double>();
}

long int_at(const json& obj, const std::string& prefix, const char* key,
            long dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number_integer()) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected an integer");
  }
  return it->get<long>();
}

bool bool_at(const json& obj, const std::string& prefix, const char* key,
             bool dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_boolean()) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected a boolean");
  }
  return it->get<bool>();
}

std::string str_at(const json& obj, const std::string& prefix, const char* key,
                   const std::string& dflt) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_string()) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected a string");
  }
  return it->get<std::string>();
}

std::uint64_t seed_at(const json& obj, const std::string& prefix,
                      const char* key, std::uint64_t dflt, bool* pinned) {
  auto it = obj.find(key);
  if (it == obj.end()) return dflt;
  if (!it->is_number_integer() ||
      (it->is_number_integer() && !it->is_number_unsigned() &&
       it->get<long long>() < 0)) {
    throw ConfigError("config key " + join_key(prefix, key) +
                      ": expected a non-negative integer");
  }
  if (pinned) *pinned = true;
  return it->get<std::uint64_t>();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

bool known_method(const std::string& m) {
  return m == "piu" || m == "naive" || m == "siss" || m == "uce" || m == "wid";
}

json world_json(const WorldConfig& w) {
  json j;
  j["num_identities"] = w.num_identities;
  j["samples_per_identity"] = w.samples_per_identity;
  j["spread"] = w.spread;
  j["embed_dim"] = w.embed_dim;
  j["style_dim"] = w.style_dim;
  j["style_scale"] = w.style_scale;
  j["seed"] = w.seed;
  return j;
}

json schedule_json(const ScheduleConfig& s) {
  json j;
  j["timesteps"] = s.timesteps;
  j["beta_min"] = s.beta_min;
  j["beta_max"] = s.beta_max;
  return j;
}

json base_train_json(const BaseTrainConfig& b) {
  json j;
  j["steps"] = b.steps;
  j["batch"] = b.batch;
  j["lr"] = b.lr;
  j["null_drop"] = b.null_drop;
  j["seed"] = b.seed;
  return j;
}

}  // namespace

ExperimentConfig default_config(std::uint64_t master_seed) {
  ExperimentConfig cfg;
  cfg.master_seed = master_seed;
  cfg.world.seed = mix_seed(master_seed, kStreamWorld);
  cfg.base_train.seed = mix_seed(master_seed, kStreamBase);
  cfg.unl.seed = mix_seed(master_seed, kStreamMethod);
  cfg.siss.seed = mix_seed(master_seed, kStreamMethod);
  cfg.uce.seed = mix_seed(master_seed, kStreamMethod);
  cfg.wid.seed = mix_seed(master_seed, kStreamMethod);
  cfg.eval.seed = mix_seed(master_seed, kStreamEval);
  return cfg;
}

void override_master_seed(ExperimentConfig& cfg, std::uint64_t master_seed) {
  cfg.master_seed = master_seed;
  if (!cfg.pins.world) cfg.world.seed = mix_seed(master_seed, kStreamWorld);
  if (!cfg.pins.base_train)
    cfg.base_train.seed = mix_seed(master_seed, kStreamBase);
  if (!cfg.pins.unl) cfg.unl.seed = mix_seed(master_seed, kStreamMethod);
  if (!cfg.pins.siss) cfg.siss.seed = mix_seed(master_seed, kStreamMethod);
  if (!cfg.pins.uce) cfg.uce.seed = mix_seed(master_seed, kStreamMethod);
  if (!cfg.pins.wid) cfg.wid.seed = mix_seed(master_seed, kStreamMethod);
  if (!cfg.pins.eval) cfg.eval.seed = mix_seed(master_seed, kStreamEval);
}

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  check_keys(j, "",
             {"seed", "world", "schedule", "base_train", "forget_identity",
              "method", "unlearn", "siss", "uce", "wid", "eval", "out_dir",
              "sweep"});

  ExperimentConfig cfg = default_config(seed_at(j, "", "seed", 0, nullptr));

  if (const json* w = block_at(j, "", "world")) {
    const std::string p = "world";
    check_keys(*w, p,
               {"num_identities", "samples_per_identity", "spread", "embed_dim",
                "style_dim", "style_scale", "seed"});
    cfg.world.num_identities =
        static_cast<int>(int_at(*w, p, "num_identities", cfg.world.num_identities));
    cfg.world.samples_per_identity = static_cast<int>(
        int_at(*w, p, "samples_per_identity", cfg.world.samples_per_identity));
    cfg.world.spread = num_at(*w, p, "spread", cfg.world.spread);
    cfg.world.embed_dim =
        static_cast<int>(int_at(*w, p, "embed_dim", cfg.world.embed_dim));
    cfg.world.style_dim =
        static_cast<int>(int_at(*w, p, "style_dim", cfg.world.style_dim));
    cfg.world.style_scale = num_at(*w, p, "style_scale", cfg.world.style_scale);
    cfg.world.seed = seed_at(*w, p, "seed", cfg.world.seed, &cfg.pins.world);
    require(cfg.world.num_identities >= 2,
            "config key world.num_identities: must be at least 2");
    require(cfg.world.samples_per_identity >= 2,
            "config key world.samples_per_identity: must be at least 2");
    require(cfg.world.embed_dim >= 1,
            "config key world.embed_dim: must be positive");
    require(cfg.world.style_dim >= 0,
            "config key world.style_dim: must be non-negative");
    require(cfg.world.spread > 0.0, "config key world.spread: must be positive");
    require(cfg.world.style_scale >= 0.0,
            "config key world.style_scale: must be non-negative");
  }

  if (const json* s = block_at(j, "", "schedule")) {
    const std::string p = "schedule";
    check_keys(*s, p, {"timesteps", "beta_min", "beta_max"});
    cfg.schedule.timesteps =
        static_cast<int>(int_at(*s, p, "timesteps", cfg.schedule.timesteps));
    cfg.schedule.beta_min = num_at(*s, p, "beta_min", cfg.schedule.beta_min);
    cfg.schedule.beta_max = num_at(*s, p, "beta_max", cfg.schedule.beta_max);
    require(cfg.schedule.timesteps >= 1,
            "config key schedule.timesteps: must be positive");
    require(cfg.schedule.beta_min > 0.0 &&
                cfg.schedule.beta_max >= cfg.schedule.beta_min &&
                cfg.schedule.beta_max < 1.0,
            "config key schedule: betas must satisfy 0 < beta_min <= beta_max < 1");
  }

  if (const json* b = block_at(j, "", "base_train")) {
    const std::string p = "base_train";
    check_keys(*b, p, {"steps", "batch", "lr", "null_drop", "seed"});
    cfg.base_train.steps = int_at(*b, p, "steps", cfg.base_train.steps);
    cfg.base_train.batch =
        static_cast<int>(int_at(*b, p, "batch", cfg.base_train.batch));
    cfg.base_train.lr = num_at(*b, p, "lr", cfg.base_train.lr);
    cfg.base_train.null_drop =
        num_at(*b, p, "null_drop", cfg.base_train.null_drop);
    cfg.base_train.seed =
        seed_at(*b, p, "seed", cfg.base_train.seed, &cfg.pins.base_train);
    require(cfg.base_train.steps >= 0,
            "config key base_train.steps: must be non-negative");
    require(cfg.base_train.batch >= 1,
            "config key base_train.batch: must be positive");
    require(cfg.base_train.lr > 0.0, "config key base_train.lr: must be positive");
    require(cfg.base_train.null_drop >= 0.0 && cfg.base_train.null_drop <= 1.0,
            "config key base_train.null_drop: must lie in [0, 1]");
  }

  cfg.forget_identity = static_cast<int>(
      int_at(j, "", "forget_identity", cfg.forget_identity));
  require(cfg.forget_identity >= 0 &&
              cfg.forget_identity < cfg.world.num_identities,
          "config key forget_identity: must name an identity in the world");

  cfg.method = str_at(j, "", "method", cfg.method);
  require(known_method(cfg.method),
          "config key method: unknown method \"" + cfg.method + "\"");

  if (const json* u = block_at(j, "", "unlearn")) {
    const std::string p = "unlearn";
    check_keys(*u, p,
               {"lambda_preserve", "eta", "tau", "anchor_tolerance", "steps",
                "lr", "batch_forget", "batch_retain", "dirichlet_alpha",
                "mix_K", "surgical", "surgical_top_k", "weight_decay", "seed"});
    cfg.unl.lambda_preserve =
        num_at(*u, p, "lambda_preserve", cfg.unl.lambda_preserve);
    cfg.unl.eta = num_at(*u, p, "eta", cfg.unl.eta);
    cfg.unl.tau = num_at(*u, p, "tau", cfg.unl.tau);
    cfg.unl.anchor_tolerance =
        num_at(*u, p, "anchor_tolerance", cfg.unl.anchor_tolerance);
    cfg.unl.steps = int_at(*u, p, "steps", cfg.unl.steps);
    cfg.unl.lr = num_at(*u, p, "lr", cfg.unl.lr);
    cfg.unl.batch_forget =
        static_cast<int>(int_at(*u, p, "batch_forget", cfg.unl.batch_forget));
    cfg.unl.batch_retain =
        static_cast<int>(int_at(*u, p, "batch_retain", cfg.unl.batch_retain));
    cfg.unl.dirichlet_alpha =
        num_at(*u, p, "dirichlet_alpha", cfg.unl.dirichlet_alpha);
    cfg.unl.mix_K = static_cast<int>(int_at(*u, p, "mix_K", cfg.unl.mix_K));
    cfg.unl.surgical = bool_at(*u, p, "surgical", cfg.unl.surgical);
    cfg.unl.surgical_top_k = static_cast<int>(
        int_at(*u, p, "surgical_top_k", cfg.unl.surgical_top_k));
    cfg.unl.weight_decay = num_at(*u, p, "weight_decay", cfg.unl.weight_decay);
    cfg.unl.seed = seed_at(*u, p, "seed", cfg.unl.seed, &cfg.pins.unl);
    require(cfg.unl.lambda_preserve >= 0.0,
            "config key unlearn.lambda_preserve: must be non-negative");
    require(cfg.unl.eta >= 0.0, "config key unlearn.eta: must be non-negative");
    require(cfg.unl.anchor_tolerance > 0.0,
            "config key unlearn.anchor_tolerance: must be positive");
    require(cfg.unl.steps >= 0, "config key unlearn.steps: must be non-negative");
    require(cfg.unl.lr > 0.0, "config key unlearn.lr: must be positive");
    require(cfg.unl.batch_forget >= 1,
            "config key unlearn.batch_forget: must be positive");
    require(cfg.unl.batch_retain >= 1,
            "config key unlearn.batch_retain: must be positive");
    require(cfg.unl.dirichlet_alpha > 0.0,
            "config key unlearn.dirichlet_alpha: must be positive");
    require(cfg.unl.mix_K >= 1, "config key unlearn.mix_K: must be positive");
    require(cfg.unl.surgical_top_k >= 1,
            "config key unlearn.surgical_top_k: must be positive");
    require(cfg.unl.weight_decay >= 0.0,
            "config key unlearn.weight_decay: must be non-negative");
  }

  if (const json* s = block_at(j, "", "siss")) {
    const std::string p = "siss";
    check_keys(*s, p, {"beta", "lr", "steps", "batch", "seed"});
    cfg.siss.beta = num_at(*s, p, "beta", cfg.siss.beta);
    cfg.siss.lr = num_at(*s, p, "lr", cfg.siss.lr);
    cfg.siss.steps = int_at(*s, p, "steps", cfg.siss.steps);
    cfg.siss.batch = static_cast<int>(int_at(*s, p, "batch", cfg.siss.batch));
    cfg.siss.seed = seed_at(*s, p, "seed", cfg.siss.seed, &cfg.pins.siss);
    require(cfg.siss.beta > 0.0, "config key siss.beta: must be positive");
    require(cfg.siss.lr > 0.0, "config key siss.lr: must be positive");
    require(cfg.siss.steps >= 0, "config key siss.steps: must be non-negative");
    require(cfg.siss.batch >= 1, "config key siss.batch: must be positive");
  }

  if (const json* u = block_at(j, "", "uce")) {
    const std::string p = "uce";
    check_keys(*u, p,
               {"alpha_e", "alpha_p", "lambda_reg", "surgical_only",
                "surgical_top_k", "tau", "anchor_tolerance", "seed"});
    cfg.uce.alpha_e = num_at(*u, p, "alpha_e", cfg.uce.alpha_e);
    cfg.uce.alpha_p = num_at(*u, p, "alpha_p", cfg.uce.alpha_p);
    cfg.uce.lambda_reg = num_at(*u, p, "lambda_reg", cfg.uce.lambda_reg);
    cfg.uce.surgical_only =
        bool_at(*u, p, "surgical_only", cfg.uce.surgical_only);
    cfg.uce.surgical_top_k = static_cast<int>(
        int_at(*u, p, "surgical_top_k", cfg.uce.surgical_top_k));
    cfg.uce.tau = num_at(*u, p, "tau", cfg.uce.tau);
    cfg.uce.anchor_tolerance =
        num_at(*u, p, "anchor_tolerance", cfg.uce.anchor_tolerance);
    cfg.uce.seed = seed_at(*u, p, "seed", cfg.uce.seed, &cfg.pins.uce);
    require(cfg.uce.alpha_e > 0.0, "config key uce.alpha_e: must be positive");
    require(cfg.uce.alpha_p >= 0.0,
            "config key uce.alpha_p: must be non-negative");
    require(cfg.uce.lambda_reg > 0.0,
            "config key uce.lambda_reg: must be positive");
    require(cfg.uce.surgical_top_k >= 1,
            "config key uce.surgical_top_k: must be positive");
    require(cfg.uce.anchor_tolerance > 0.0,
            "config key uce.anchor_tolerance: must be positive");
  }

  if (const json* w = block_at(j, "", "wid")) {
    const std::string p = "wid";
    check_keys(*w, p,
               {"lambda_id", "lr", "steps", "batch", "tau", "anchor_tolerance",
                "seed"});
    cfg.wid.lambda_id = num_at(*w, p, "lambda_id", cfg.wid.lambda_id);
    cfg.wid.lr = num_at(*w, p, "lr", cfg.wid.lr);
    cfg.wid.steps = int_at(*w, p, "steps", cfg.wid.steps);
    cfg.wid.batch = static_cast<int>(int_at(*w, p, "batch", cfg.wid.batch));
    cfg.wid.tau = num_at(*w, p, "tau", cfg.wid.tau);
    cfg.wid.anchor_tolerance =
        num_at(*w, p, "anchor_tolerance", cfg.wid.anchor_tolerance);
    cfg.wid.seed = seed_at(*w, p, "seed", cfg.wid.seed, &cfg.pins.wid);
    require(cfg.wid.lambda_id >= 0.0,
            "config key wid.lambda_id: must be non-negative");
    require(cfg.wid.lr > 0.0, "config key wid.lr: must be positive");
    require(cfg.wid.steps >= 0, "config key wid.steps: must be non-negative");
    require(cfg.wid.batch >= 1, "config key wid.batch: must be positive");
    require(cfg.wid.anchor_tolerance > 0.0,
            "config key wid.anchor_tolerance: must be positive");
  }

  if (const json* e = block_at(j, "", "eval")) {
    const std::string p = "eval";
    check_keys(*e, p, {"n_samples", "guidance", "seed"});
    cfg.eval.n_samples =
        static_cast<int>(int_at(*e, p, "n_samples", cfg.eval.n_samples));
    cfg.eval.guidance = num_at(*e, p, "guidance", cfg.eval.guidance);
    cfg.eval.seed = seed_at(*e, p, "seed", cfg.eval.seed, &cfg.pins.eval);
    require(cfg.eval.n_samples >= 1,
            "config key eval.n_samples: must be positive");
    require(cfg.eval.guidance > 0.0,
            "config key eval.guidance: must be positive");
  }

  cfg.out_dir = str_at(j, "", "out_dir", cfg.out_dir);
  require(!cfg.out_dir.empty(), "config key out_dir: must be non-empty");

  if (const json* s = block_at(j, "", "sweep")) {
    const std::string p = "sweep";
    check_keys(*s, p, {"param", "values"});
    SweepSpec spec;
    spec.param = str_at(*s, p, "param", "");
    require(spec.param == "lambda_preserve" || spec.param == "eta" ||
                spec.param == "tau" || spec.param == "surgical_top_k" ||
                spec.param == "method",
            "config key sweep.param: unknown sweep parameter \"" + spec.param +
                "\"");
    auto it = s->find("values");
    if (it == s->end() || !it->is_array() || it->empty()) {
      throw ConfigError("config key sweep.values: must be a non-empty array");
    }
    for (const auto& v : *it) {
      if (spec.param == "method") {
        if (!v.is_string()) {
          throw ConfigError("config key sweep.values: expected method names");
        }
        std::string m = v.get<std::string>();
        require(known_method(m),
                "config key sweep.values: unknown method \"" + m + "\"");
        spec.method_values.push_back(m);
      } else if (spec.param == "surgical_top_k") {
        if (!v.is_number_integer()) {
          throw ConfigError("config key sweep.values: expected integers");
        }
        spec.values.push_back(v.get<double>());
      } else {
        if (!v.is_number()) {
          throw ConfigError("config key sweep.values: expected numbers");
        }
        spec.values.push_back(v.get<double>());
      }
    }
    cfg.sweep = std::move(spec);
  }

  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  return parse_config_text(read_file(path));
}

std::string resolved_config_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.master_seed;
  j["world"] = world_json(cfg.world);
  j["schedule"] = schedule_json(cfg.schedule);
  j["base_train"] = base_train_json(cfg.base_train);
  j["forget_identity"] = cfg.forget_identity;
  j["method"] = cfg.method;
  {
    json u;
    u["lambda_preserve"] = cfg.unl.lambda_preserve;
    u["eta"] = cfg.unl.eta;
    u["tau"] = cfg.unl.tau;
    u["anchor_tolerance"] = cfg.unl.anchor_tolerance;
    u["steps"] = cfg.unl.steps;
    u["lr"] = cfg.unl.lr;
    u["batch_forget"] = cfg.unl.batch_forget;
    u["batch_retain"] = cfg.unl.batch_retain;
    u["dirichlet_alpha"] = cfg.unl.dirichlet_alpha;
    u["mix_K"] = cfg.unl.mix_K;
    u["surgical"] = cfg.unl.surgical;
    u["surgical_top_k"] = cfg.unl.surgical_top_k;
    u["weight_decay"] = cfg.unl.weight_decay;
    u["seed"] = cfg.unl.seed;
    j["unlearn"] = std::move(u);
  }
  {
    json s;
    s["beta"] = cfg.siss.beta;
    s["lr"] = cfg.siss.lr;
    s["steps"] = cfg.siss.steps;
    s["batch"] = cfg.siss.batch;
    s["seed"] = cfg.siss.seed;
    j["siss"] = std::move(s);
  }
  {
    json u;
    u["alpha_e"] = cfg.uce.alpha_e;
    u["alpha_p"] = cfg.uce.alpha_p;
    u["lambda_reg"] = cfg.uce.lambda_reg;
    u["surgical_only"] = cfg.uce.surgical_only;
    u["surgical_top_k"] = cfg.uce.surgical_top_k;
    u["tau"] = cfg.uce.tau;
    u["anchor_tolerance"] = cfg.uce.anchor_tolerance;
    u["seed"] = cfg.uce.seed;
    j["uce"] = std::move(u);
  }
  {
    json w;
    w["lambda_id"] = cfg.wid.lambda_id;
    w["lr"] = cfg.wid.lr;
    w["steps"] = cfg.wid.steps;
    w["batch"] = cfg.wid.batch;
    w["tau"] = cfg.wid.tau;
    w["anchor_tolerance"] = cfg.wid.anchor_tolerance;
    w["seed"] = cfg.wid.seed;
    j["wid"] = std::move(w);
  }
  {
    json e;
    e["n_samples"] = cfg.eval.n_samples;
    e["guidance"] = cfg.eval.guidance;
    e["seed"] = cfg.eval.seed;
    j["eval"] = std::move(e);
  }
  j["out_dir"] = cfg.out_dir;
  if (cfg.sweep) {
    json s;
    s["param"] = cfg.sweep->param;
    json vals = json::array();
    if (cfg.sweep->param == "method") {
      for (const auto& m : cfg.sweep->method_values) vals.push_back(m);
    } else {
      for (double v : cfg.sweep->values) vals.push_back(v);
    }
    s["values"] = std::move(vals);
    j["sweep"] = std::move(s);
  }
  return j.dump(2) + "\n";
}

namespace {

std::string base_cache_key(const ExperimentConfig& cfg) {
  json j;
  j["world"] = world_json(cfg.world);
  j["schedule"] = schedule_json(cfg.schedule);
  j["base_train"] = base_train_json(cfg.base_train);
  const std::string text = j.dump();
  const std::uint64_t h = fnv1a64(text.data(), text.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

diffusion::DenoiserParams obtain_base(const ExperimentConfig& cfg,
                                      const idspace::IdentityDataset& ds,
                                      const diffusion::SynthWorld& world,
                                      const diffusion::NoiseSchedule& sched) {
  diffusion::TrainConfig tc;
  tc.steps = cfg.base_train.steps;
  tc.batch = cfg.base_train.batch;
  tc.lr = cfg.base_train.lr;
  tc.style_scale = cfg.world.style_scale;
  tc.null_drop_prob = cfg.base_train.null_drop;
  tc.seed = cfg.base_train.seed;

  const char* cache_dir = std::getenv("PIU_CACHE_DIR");
  if (cache_dir == nullptr || *cache_dir == '\0') {
    return diffusion::train_base(ds, world, sched, tc);
  }

  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  if (ec) {
    throw IoError(std::string("cannot create cache directory ") + cache_dir +
                  ": " + ec.message());
  }
  const std::string path =
      std::string(cache_dir) + "/base-" + base_cache_key(cfg) + ".ckpt";
  if (fs::exists(path)) return diffusion::load_checkpoint(path);

  diffusion::DenoiserParams p = diffusion::train_base(ds, world, sched, tc);
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  diffusion::save_checkpoint(p, tmp);
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " into place: " + ec.message());
  return p;
}

void ensure_run_dir(const RunContext& ctx) {
  const std::string& out = ctx.cfg.out_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    throw IoError("cannot create output directory " + out + ": " + ec.message());
  }
  write_file(out + "/config.json", resolved_config_json(ctx.cfg));
  idspace::save_idset(ctx.dataset, out + "/dataset.idset");
  diffusion::save_checkpoint(ctx.base, out + "/base.ckpt");
}

idspace::AnchorQuery anchor_query_for(const ExperimentConfig& cfg) {
  idspace::AnchorQuery q;
  q.forget_identity = cfg.forget_identity;
  if (cfg.method == "uce") {
    q.tau = cfg.uce.tau;
    q.tolerance = cfg.uce.anchor_tolerance;
    q.rng_seed = mix_seed(cfg.uce.seed, 0);
  } else if (cfg.method == "wid") {
    q.tau = cfg.wid.tau;
    q.tolerance = cfg.wid.anchor_tolerance;
    q.rng_seed = mix_seed(cfg.wid.seed, 0);
  } else {
    q.tau = cfg.unl.tau;
    q.tolerance = cfg.unl.anchor_tolerance;
    q.rng_seed = mix_seed(cfg.unl.seed, 0);
  }
  return q;
}

}  // namespace

RunContext prepare(const ExperimentConfig& cfg) {
  return run_stage("train-base", [&] {
    RunContext ctx;
    ctx.cfg = cfg;
    const int latent_dim = cfg.world.embed_dim + cfg.world.style_dim;
    ctx.world = diffusion::make_axis_world(latent_dim, cfg.world.embed_dim,
                                           cfg.world.style_dim);
    ctx.sched = diffusion::make_schedule(cfg.schedule.timesteps,
                                         cfg.schedule.beta_min,
                                         cfg.schedule.beta_max);
    ctx.dataset = idspace::generate_identities(
        cfg.world.num_identities, cfg.world.samples_per_identity,
        cfg.world.spread, cfg.world.embed_dim, cfg.world.seed);
    ctx.base = obtain_base(cfg, ctx.dataset, ctx.world, ctx.sched);
    idspace::assign_splits(ctx.dataset, cfg.forget_identity, 0.35, 0.10);
    return ctx;
  });
}

void stage_train_base(const RunContext& ctx) {
  run_stage("train-base", [&] { ensure_run_dir(ctx); });
}

std::vector<metrics::LayerScore> stage_analyze_layers(const RunContext& ctx) {
  return run_stage("analyze-layers", [&] {
    ensure_run_dir(ctx);
    const auto probe = metrics::make_probe(ctx.dataset, ctx.sched,
                                           mix_seed(ctx.cfg.eval.seed, 1));
    auto scores = metrics::layer_separation(ctx.base, probe);
    json arr = json::array();
    for (const auto& s : scores) {
      json row;
      row["tag"] = s.tag;
      row["s_kv"] = s.s_kv;
      row["s_q"] = s.s_q;
      arr.push_back(std::move(row));
    }
    write_file(ctx.cfg.out_dir + "/layers.json", arr.dump(2) + "\n");
    return scores;
  });
}

int stage_select_anchor(const RunContext& ctx) {
  return run_stage("select-anchor", [&] {
    ensure_run_dir(ctx);
    const auto q = anchor_query_for(ctx.cfg);
    const int anchor = idspace::select_anchor(ctx.dataset, q);
    json j;
    j["forget_identity"] = ctx.cfg.forget_identity;
    j["anchor_identity"] = anchor;
    j["tau"] = q.tau;
    j["tolerance"] = q.tolerance;
    j["cosine_similarity"] = idspace::cosine_sim(
        ctx.dataset.centroids[ctx.cfg.forget_identity],
        ctx.dataset.centroids[anchor]);
    write_file(ctx.cfg.out_dir + "/anchor.json", j.dump(2) + "\n");
    return anchor;
  });
}

diffusion::DenoiserParams stage_unlearn(const RunContext& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const bool need_scores =
      (cfg.method == "piu" || cfg.method == "naive")
          ? cfg.unl.surgical
          : (cfg.method == "uce" && cfg.uce.surgical_only);
  std::vector<metrics::LayerScore> scores;
  if (need_scores) scores = stage_analyze_layers(ctx);

  return run_stage("unlearn", [&] {
    ensure_run_dir(ctx);
    diffusion::DenoiserParams result;
    std::vector<unlearn::StepLog> log;
    if (cfg.method == "piu" || cfg.method == "naive") {
      unlearn::UnlearnConfig u = cfg.unl;
      if (cfg.method == "naive") {
        u.lambda_preserve = 0.0;
        u.eta = 0.0;
      }
      auto out = unlearn::run_unlearning(ctx.base, ctx.dataset,
                                         cfg.forget_identity, u, ctx.sched,
                                         need_scores ? &scores : nullptr);
      result = std::move(out.first);
      log = std::move(out.second);
    } else if (cfg.method == "siss") {
      baselines::SissConfig s = cfg.siss;
      s.style_scale = cfg.world.style_scale;
      auto out = baselines::run_siss(ctx.base, ctx.dataset,
                                     cfg.forget_identity, s, ctx.sched,
                                     ctx.world);
      result = std::move(out.first);
      log = std::move(out.second);
    } else if (cfg.method == "uce") {
      result = baselines::run_uce(ctx.base, ctx.dataset, cfg.forget_identity,
                                  cfg.uce, need_scores ? &scores : nullptr);
    } else {
      baselines::WidConfig w = cfg.wid;
      w.style_scale = cfg.world.style_scale;
      auto out = baselines::run_wid(ctx.base, ctx.dataset, cfg.forget_identity,
                                    w, ctx.sched, ctx.world);
      result = std::move(out.first);
      log = std::move(out.second);
    }
    write_file(cfg.out_dir + "/unlearn.log", unlearn::render_log(log));
    diffusion::save_checkpoint(result, cfg.out_dir + "/unlearned.ckpt");
    return result;
  });
}

metrics::MetricsReport stage_evaluate(const RunContext& ctx) {
  return run_stage("evaluate", [&] {
    ensure_run_dir(ctx);
    const std::string upath = ctx.cfg.out_dir + "/unlearned.ckpt";
    diffusion::DenoiserParams subject =
        fs::exists(upath) ? diffusion::load_checkpoint(upath) : ctx.base;
    auto r = metrics::evaluate(subject, ctx.base, ctx.dataset, ctx.world,
                               ctx.sched, ctx.cfg.forget_identity,
                               ctx.cfg.eval.n_samples, ctx.cfg.eval.seed,
                               ctx.cfg.eval.guidance);
    write_file(ctx.cfg.out_dir + "/metrics.json", metrics::report_json(r));
    return r;
  });
}

int run_pipeline(const ExperimentConfig& cfg) {
  RunContext ctx = prepare(cfg);
  stage_train_base(ctx);
  stage_analyze_layers(ctx);
  const int anchor = stage_select_anchor(ctx);

  const auto base_report = run_stage("evaluate", [&] {
    auto r = metrics::evaluate(ctx.base, ctx.base, ctx.dataset, ctx.world,
                               ctx.sched, cfg.forget_identity,
                               cfg.eval.n_samples, cfg.eval.seed,
                               cfg.eval.guidance);
    write_file(cfg.out_dir + "/metrics_base.json", metrics::report_json(r));
    return r;
  });

  stage_unlearn(ctx);
  const auto report = stage_evaluate(ctx);

  std::printf("method=%s anchor=%d out=%s\n", cfg.method.c_str(), anchor,
              cfg.out_dir.c_str());
  std::printf("ism_forget %.4f -> %.4f   ism_retain %.4f -> %.4f\n",
              base_report.ism_forget, report.ism_forget, base_report.ism_retain,
              report.ism_retain);
  std::printf("acc_u %.4f -> %.4f   acc_r %.4f -> %.4f   srk %.4f -> %.4f\n",
              base_report.acc_u, report.acc_u, base_report.acc_r, report.acc_r,
              base_report.srk, report.srk);
  std::printf("delta_kd_forget %+.6g   delta_kd_retain %+.6g\n",
              report.mmd2_forget - base_report.mmd2_forget,
              report.mmd2_retain - base_report.mmd2_retain);
  return 0;
}

int run_sweep(const ExperimentConfig& cfg) {
  if (!cfg.sweep) throw ConfigError("sweep: config has no sweep block");
  const SweepSpec& spec = *cfg.sweep;
  const bool is_method = spec.param == "method";
  const std::size_t n =
      is_method ? spec.method_values.size() : spec.values.size();

  struct Row {
    double value = 0.0;
    std::string label;
    bool ok = false;
    metrics::MetricsReport report;
    std::string message;
    int code = 0;
  };
  std::vector<Row> rows;
  rows.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    ExperimentConfig sub = cfg;
    sub.sweep.reset();
    Row row;
    if (is_method) {
      sub.method = spec.method_values[i];
      row.label = sub.method;
      row.value = static_cast<double>(i);
    } else {
      const double v = spec.values[i];
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%g", v);
      row.label = buf;
      row.value = v;
      if (spec.param == "lambda_preserve") {
        sub.unl.lambda_preserve = v;
      } else if (spec.param == "eta") {
        sub.unl.eta = v;
      } else if (spec.param == "tau") {
        sub.unl.tau = v;
      } else {
        sub.unl.surgical_top_k = static_cast<int>(std::llround(v));
        sub.unl.surgical = true;
      }
    }
    sub.out_dir = cfg.out_dir + "/" + spec.param + "=" + row.label;

    try {
      run_pipeline(sub);
      row.report =
          metrics::report_from_json(read_file(sub.out_dir + "/metrics.json"));
      row.ok = true;
    } catch (const ConfigError& e) {
      row.message = e.what();
      row.code = 2;
    } catch (const IoError& e) {
      row.message = e.what();
      row.code = 4;
    } catch (const std::exception& e) {
      row.message = e.what();
      row.code = 3;
    }
    std::printf("sweep %s=%s: %s\n", spec.param.c_str(), row.label.c_str(),
                row.ok ? "ok" : row.message.c_str());
    rows.push_back(std::move(row));
  }

  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    return is_method ? a.label < b.label : a.value < b.value;
  });

  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) {
    throw IoError("cannot create output directory " + cfg.out_dir + ": " +
                  ec.message());
  }

  json arr = json::array();
  for (const auto& row : rows) {
    json r;
    if (is_method) {
      r["value"] = row.label;
    } else {
      r["value"] = row.value;
    }
    if (row.ok) {
      r["status"] = "ok";
      r["ism_forget"] = row.report.ism_forget;
      r["ism_retain"] = row.report.ism_retain;
      r["srk"] = row.report.srk;
      r["mmd2_forget"] = row.report.mmd2_forget;
      r["mmd2_retain"] = row.report.mmd2_retain;
    } else {
      r["status"] = "error";
      r["message"] = row.message;
    }
    arr.push_back(std::move(r));
  }
  write_file(cfg.out_dir + "/sweep.json", arr.dump(2) + "\n");

  std::string table;
  char line[256];
  std::snprintf(line, sizeof(line), "%-16s %13s %13s %13s %13s %13s\n",
                spec.param.c_str(), "ism_forget", "ism_retain", "srk",
                "mmd2_forget", "mmd2_retain");
  table += line;
  for (const auto& row : rows) {
    if (!row.ok) continue;
    std::snprintf(line, sizeof(line),
                  "%-16s %13.6g %13.6g %13.6g %13.6g %13.6g\n",
                  row.label.c_str(), row.report.ism_forget,
                  row.report.ism_retain, row.report.srk,
                  row.report.mmd2_forget, row.report.mmd2_retain);
    table += line;
  }
  write_file(cfg.out_dir + "/sweep.txt", table);

  std::string dat = "# " + spec.param +
                    " ism_forget ism_retain srk mmd2_forget mmd2_retain\n";
  double index = 0.0;
  for (const auto& row : rows) {
    if (!row.ok) continue;
    const double x = is_method ? index : row.value;
    std::snprintf(line, sizeof(line),
                  "%.17g %.17g %.17g %.17g %.17g %.17g\n", x,
                  row.report.ism_forget, row.report.ism_retain, row.report.srk,
                  row.report.mmd2_forget, row.report.mmd2_retain);
    dat += line;
    index += 1.0;
  }
  write_file(cfg.out_dir + "/sweep.dat", dat);

  int code = 0;
  for (const auto& row : rows) {
    if (!row.ok) {
      code = row.code;
      break;
    }
  }
  return code;
}

}  // namespace piu::harness

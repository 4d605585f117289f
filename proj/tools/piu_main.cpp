#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "piu/errors.hpp"
#include "piu/harness.hpp"

namespace {

bool known_method(const std::string& m) {
  return m == "piu" || m == "naive" || m == "siss" || m == "uce" || m == "wid";
}

void print_report(const piu::metrics::MetricsReport& r) {
  std::printf("ism_forget=%.6f ism_retain=%.6f\n", r.ism_forget, r.ism_retain);
  std::printf("acc_u=%.6f acc_r=%.6f srk=%.6f\n", r.acc_u, r.acc_r, r.srk);
  std::printf("mmd2_forget=%.6g mmd2_retain=%.6g\n", r.mmd2_forget,
              r.mmd2_retain);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "piu: anchor-guided identity unlearning on a synthetic diffusion "
      "world.\nSet PIU_CACHE_DIR to reuse base checkpoints across runs."};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string method;
  std::uint64_t seed = 0;

  struct SubDesc {
    const char* name;
    const char* help;
  };
  const SubDesc subs[] = {
      {"train-base", "train (or fetch) the base model and write the run inputs"},
      {"analyze-layers", "score per-block forget/retain separation"},
      {"select-anchor", "pick the proximity anchor identity"},
      {"unlearn", "run the configured unlearning method"},
      {"evaluate", "sample, recognize, and report metrics"},
      {"pipeline", "run every stage in order"},
      {"sweep", "run the pipeline across the configured parameter values"},
  };
  std::vector<CLI::Option*> seed_opts;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "experiment config JSON file");
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    seed_opts.push_back(
        sub->add_option("--seed", seed, "master seed (overrides config)"));
    sub->add_option("--method", method,
                    "piu, naive, siss, uce, or wid (overrides config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    piu::harness::ExperimentConfig cfg =
        config_path.empty() ? piu::harness::default_config()
                            : piu::harness::parse_config(config_path);
    bool seed_given = false;
    for (const CLI::Option* o : seed_opts) seed_given |= o->count() > 0;
    if (seed_given) piu::harness::override_master_seed(cfg, seed);
    if (!method.empty()) {
      if (!known_method(method)) {
        throw piu::ConfigError("--method: unknown method \"" + method + "\"");
      }
      cfg.method = method;
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "pipeline") return piu::harness::run_pipeline(cfg);
    if (cmd == "sweep") return piu::harness::run_sweep(cfg);

    piu::harness::RunContext ctx = piu::harness::prepare(cfg);
    if (cmd == "train-base") {
      piu::harness::stage_train_base(ctx);
      std::printf("base model ready: %s/base.ckpt\n", cfg.out_dir.c_str());
    } else if (cmd == "analyze-layers") {
      const auto scores = piu::harness::stage_analyze_layers(ctx);
      for (const auto& s : scores) {
        std::printf("%-4s s_kv=%+.6f s_q=%+.6f\n", s.tag.c_str(), s.s_kv,
                    s.s_q);
      }
    } else if (cmd == "select-anchor") {
      const int anchor = piu::harness::stage_select_anchor(ctx);
      std::printf("anchor=%d (forget=%d)\n", anchor, cfg.forget_identity);
    } else if (cmd == "unlearn") {
      piu::harness::stage_unlearn(ctx);
      std::printf("unlearned model: %s/unlearned.ckpt\n", cfg.out_dir.c_str());
    } else {
      print_report(piu::harness::stage_evaluate(ctx));
    }
    return 0;
  } catch (const piu::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const piu::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

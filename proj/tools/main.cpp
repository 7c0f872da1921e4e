// vflow command line tool: pretrain surrogates, run inversions,
// benchmark the bimodal sampling problem, recompute metrics, and
// replay stored manifests for byte-exact reproduction.

#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vflow/cli.hpp"

namespace {

using vflow::cli::RunConfig;

// Raw flag storage.  Only one subcommand parses per invocation, so the
// locals can be shared across subcommands.
struct Flags {
  std::string problem = "darcy1d", method, out, checkpoint, config, manifest;
  std::size_t d = 32, threads = 0;
  double delta = 0.05;
  std::uint64_t seed = 1;
  bool paper_scale = false, desk_scale = false, pretrain_inline = false;
  std::size_t dataset_size = 0, pretrain_epochs = 0, pretrain_batch = 0;
  std::size_t fno_width = 0, fno_modes = 0, fno_depth = 0;
  std::size_t stages = 0, epochs_per_stage = 0, loop_draws = 0, stage_samples = 0, batch = 0;
  double alpha = 0, gamma = 0, epsilon = 0, vf_lr = 0, pcn_beta = 0;
  std::size_t finetune_epochs = 0, finetune_batch = 0, es_samples = 0;
  std::size_t pcn_iters = 0, uki_iters = 0, svgd_particles = 0, svgd_iters = 0;
  std::size_t posterior_draws = 0;
  std::size_t vf_epochs = 0, vf_batch = 0;
  std::size_t mcmc_walkers = 0, mcmc_burn = 0, mcmc_steps = 0, n_samples = 0;
};

using ApplyList = std::vector<std::function<void(RunConfig&)>>;

template <class T, class Setter>
void opt(CLI::App* sub, ApplyList& apply, const std::string& name, T& local, Setter set,
          const std::string& desc) {
  const CLI::Option* o = sub->add_option(name, local, desc);
  apply.push_back([o, &local, set](RunConfig& cfg) {
    if (o->count() > 0) set(cfg, local);
  });
}

template <class Setter>
void opt_flag(CLI::App* sub, ApplyList& apply, const std::string& name, bool& local, Setter set,
               const std::string& desc) {
  const CLI::Option* o = sub->add_flag(name, local, desc);
  apply.push_back([o, &local, set](RunConfig& cfg) {
    if (o->count() > 0) set(cfg, local);
  });
}

void bind_common(CLI::App* sub, ApplyList& ap, Flags& f) {
  opt(sub, ap, "--seed", f.seed, [](RunConfig& c, std::uint64_t v) { c.seed = v; },
       "master seed for all randomness in the run");
  opt(sub, ap, "--out", f.out, [](RunConfig& c, const std::string& v) { c.out = v; },
       "output directory (created if missing)");
  opt_flag(sub, ap, "--paper-scale", f.paper_scale,
           [](RunConfig& c, bool v) { c.paper_scale = v; },
           "use full publication-scale budgets instead of desk-scale ones");
  opt_flag(sub, ap, "--desk-scale", f.desk_scale,
           [](RunConfig& c, bool v) {
             if (v) c.paper_scale = false;
           },
           "force the reduced desk-scale budgets (the default)");
  opt(sub, ap, "--threads", f.threads, [](RunConfig& c, std::size_t v) { c.threads = v; },
       "worker thread count (default: VFLOW_THREADS env, then hardware)");
  opt(sub, ap, "--config", f.config, [](RunConfig& c, const std::string&) { (void)c; },
       "JSON config file; explicit flags override its values");
}

void bind_pde(CLI::App* sub, ApplyList& ap, Flags& f) {
  opt(sub, ap, "--problem", f.problem, [](RunConfig& c, const std::string& v) { c.problem = v; },
       "forward problem: darcy1d|darcy2d|ns2d");
  opt(sub, ap, "-d,--dim", f.d, [](RunConfig& c, std::size_t v) { c.d = v; },
       "parameter dimension");
  opt(sub, ap, "--delta", f.delta, [](RunConfig& c, double v) { c.delta = v; },
       "relative observation noise level, e.g. 0.01");
  opt(sub, ap, "--fno-width", f.fno_width, [](RunConfig& c, std::size_t v) { c.fno_width = v; },
       "surrogate channel width");
  opt(sub, ap, "--fno-modes", f.fno_modes, [](RunConfig& c, std::size_t v) { c.fno_modes = v; },
       "surrogate Fourier modes kept per dimension");
  opt(sub, ap, "--fno-depth", f.fno_depth, [](RunConfig& c, std::size_t v) { c.fno_depth = v; },
       "surrogate spectral layer count");
  opt(sub, ap, "--dataset-size", f.dataset_size,
       [](RunConfig& c, std::size_t v) { c.dataset_size = v; },
       "pretraining dataset size (input/solution pairs)");
  opt(sub, ap, "--pretrain-epochs", f.pretrain_epochs,
       [](RunConfig& c, std::size_t v) { c.pretrain_epochs = v; }, "pretraining epochs");
  opt(sub, ap, "--pretrain-batch", f.pretrain_batch,
       [](RunConfig& c, std::size_t v) { c.pretrain_batch = v; }, "pretraining batch size");
}

int dispatch(const std::string& command, const Flags& f, const ApplyList& ap) {
  return vflow::cli::guarded([&]() {
    RunConfig cfg;
    cfg.command = command;
    if (!f.config.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(vflow::cli::read_text(f.config));
      } catch (const nlohmann::json::exception& e) {
        throw vflow::ConfigError(f.config + ": " + e.what());
      }
      vflow::cli::apply_json(cfg, j, f.config);
      cfg.command = command;  // the subcommand on the command line wins
    }
    for (const auto& apply : ap) apply(cfg);
    return vflow::cli::run_command(cfg);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational flow inversion toolkit"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* pre = app.add_subcommand("pretrain", "train a surrogate on prior draws and save it");
  ApplyList pre_ap;
  bind_common(pre, pre_ap, f);
  bind_pde(pre, pre_ap, f);

  CLI::App* inv = app.add_subcommand("invert", "run a posterior inversion and save artifacts");
  ApplyList inv_ap;
  bind_common(inv, inv_ap, f);
  bind_pde(inv, inv_ap, f);
  opt(inv, inv_ap, "--method", f.method,
       [](RunConfig& c, const std::string& v) { c.method = v; },
       "ours|pcn|uki-fdm|uki-fno|svgd-fno");
  opt(inv, inv_ap, "--checkpoint", f.checkpoint,
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
       "surrogate parameter file from a pretrain run");
  opt_flag(inv, inv_ap, "--pretrain-inline", f.pretrain_inline,
            [](RunConfig& c, bool v) { c.pretrain_inline = v; },
            "pretrain the surrogate inside this run instead of loading one");
  opt(inv, inv_ap, "--stages", f.stages, [](RunConfig& c, std::size_t v) { c.stages = v; },
       "max outer prior-update stages");
  opt(inv, inv_ap, "--epochs-per-stage", f.epochs_per_stage,
       [](RunConfig& c, std::size_t v) { c.epochs_per_stage = v; },
       "flow training epochs per stage");
  opt(inv, inv_ap, "--loop-draws", f.loop_draws,
       [](RunConfig& c, std::size_t v) { c.loop_draws = v; },
       "flow samples per stage (training set size)");
  opt(inv, inv_ap, "--stage-samples", f.stage_samples,
       [](RunConfig& c, std::size_t v) { c.stage_samples = v; },
       "posterior draws per stage for the prior update");
  opt(inv, inv_ap, "--batch", f.batch, [](RunConfig& c, std::size_t v) { c.batch = v; },
       "flow training batch size");
  opt(inv, inv_ap, "--alpha", f.alpha, [](RunConfig& c, double v) { c.alpha = v; },
       "prior update mixing weight in [0,1)");
  opt(inv, inv_ap, "--gamma", f.gamma, [](RunConfig& c, double v) { c.gamma = v; },
       "surrogate fine-tune trigger factor");
  opt(inv, inv_ap, "--epsilon", f.epsilon, [](RunConfig& c, double v) { c.epsilon = v; },
       "prior-mean convergence tolerance");
  opt(inv, inv_ap, "--vf-lr", f.vf_lr, [](RunConfig& c, double v) { c.vf_lr = v; },
       "flow learning rate");
  opt(inv, inv_ap, "--finetune-epochs", f.finetune_epochs,
       [](RunConfig& c, std::size_t v) { c.finetune_epochs = v; },
       "surrogate fine-tune epochs per trigger");
  opt(inv, inv_ap, "--finetune-batch", f.finetune_batch,
       [](RunConfig& c, std::size_t v) { c.finetune_batch = v; },
       "surrogate fine-tune batch size");
  opt(inv, inv_ap, "--es-samples", f.es_samples,
       [](RunConfig& c, std::size_t v) { c.es_samples = v; },
       "sample count for the surrogate fitting error estimate");
  opt(inv, inv_ap, "--pcn-iters", f.pcn_iters,
       [](RunConfig& c, std::size_t v) { c.pcn_iters = v; }, "pCN chain length");
  opt(inv, inv_ap, "--pcn-beta", f.pcn_beta, [](RunConfig& c, double v) { c.pcn_beta = v; },
       "pCN proposal step size");
  opt(inv, inv_ap, "--uki-iters", f.uki_iters,
       [](RunConfig& c, std::size_t v) { c.uki_iters = v; }, "Kalman iteration count");
  opt(inv, inv_ap, "--svgd-particles", f.svgd_particles,
       [](RunConfig& c, std::size_t v) { c.svgd_particles = v; }, "SVGD particle count");
  opt(inv, inv_ap, "--svgd-iters", f.svgd_iters,
       [](RunConfig& c, std::size_t v) { c.svgd_iters = v; }, "SVGD update count");
  opt(inv, inv_ap, "--posterior-draws", f.posterior_draws,
       [](RunConfig& c, std::size_t v) { c.posterior_draws = v; },
       "posterior samples written to samples.csv");

  CLI::App* ros = app.add_subcommand(
      "rosenbrock", "benchmark on the 100-dimensional bimodal target and report mode coverage");
  ApplyList ros_ap;
  bind_common(ros, ros_ap, f);
  opt(ros, ros_ap, "--method", f.method,
       [](RunConfig& c, const std::string& v) { c.method = v; }, "vf|mcmc|uki");
  opt(ros, ros_ap, "--vf-epochs", f.vf_epochs,
       [](RunConfig& c, std::size_t v) { c.vf_epochs = v; }, "flow training epochs");
  opt(ros, ros_ap, "--vf-batch", f.vf_batch,
       [](RunConfig& c, std::size_t v) { c.vf_batch = v; }, "flow training batch size");
  opt(ros, ros_ap, "--vf-lr", f.vf_lr, [](RunConfig& c, double v) { c.vf_lr = v; },
       "flow learning rate");
  opt(ros, ros_ap, "--mcmc-walkers", f.mcmc_walkers,
       [](RunConfig& c, std::size_t v) { c.mcmc_walkers = v; }, "ensemble sampler walker count");
  opt(ros, ros_ap, "--mcmc-burn", f.mcmc_burn,
       [](RunConfig& c, std::size_t v) { c.mcmc_burn = v; }, "ensemble sampler burn-in steps");
  opt(ros, ros_ap, "--mcmc-steps", f.mcmc_steps,
       [](RunConfig& c, std::size_t v) { c.mcmc_steps = v; }, "ensemble sampler kept steps");
  opt(ros, ros_ap, "--uki-iters", f.uki_iters,
       [](RunConfig& c, std::size_t v) { c.uki_iters = v; }, "Kalman iteration count");
  opt(ros, ros_ap, "--n-samples", f.n_samples,
       [](RunConfig& c, std::size_t v) { c.n_samples = v; }, "samples emitted (default 20000)");

  CLI::App* met = app.add_subcommand("metrics", "recompute inversion error from a run directory");
  met->add_option("manifest", f.manifest, "path to a run's manifest.json")->required();

  CLI::App* rep = app.add_subcommand(
      "replay", "re-run a manifest into a fresh directory and verify artifacts byte-exactly");
  rep->add_option("manifest", f.manifest, "path to a run's manifest.json")->required();
  rep->add_option("--out", f.out, "replay output directory (default: <out>.replay)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : vflow::cli::kUsage;
  }

  if (pre->parsed()) return dispatch("pretrain", f, pre_ap);
  if (inv->parsed()) return dispatch("invert", f, inv_ap);
  if (ros->parsed()) return dispatch("rosenbrock", f, ros_ap);
  if (met->parsed())
    return vflow::cli::guarded([&]() { return vflow::cli::cmd_metrics(f.manifest); });
  if (rep->parsed()) {
    const std::string out = rep->count("--out") ? f.out : std::string();
    return vflow::cli::guarded([&]() { return vflow::cli::cmd_replay(f.manifest, out); });
  }
  return vflow::cli::kUsage;
}

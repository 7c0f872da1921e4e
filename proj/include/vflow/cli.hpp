#pragma once

// Command implementations behind the vflow tool: config resolution
// with flags > file > defaults precedence, run artifact persistence,
// and byte-exact replay from a stored manifest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vflow/io.hpp"
#include "vflow/runner.hpp"

namespace vflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration.  Base fields always resolve; optional fields
// override the scale profile only when present.  The manifest stores
// the merged config, so a replay resolves to the identical run.

struct RunConfig {
  std::string command = "invert";  // pretrain | invert | rosenbrock
  std::string problem = "darcy1d";
  std::size_t d = 32;
  double delta = 0.05;
  std::string method = "ours";  // PDE: ours|pcn|uki-fdm|uki-fno|svgd-fno; benchmark: vf|mcmc|uki
  std::uint64_t seed = 1;
  std::string out = "runs/out";
  bool paper_scale = false;
  std::size_t threads = 0;  // 0: leave the library default in place
  std::string checkpoint;   // invert: surrogate parameter file
  bool pretrain_inline = false;

  // Profile overrides (PDE pipeline).
  std::optional<std::size_t> dataset_size, pretrain_epochs, pretrain_batch;
  std::optional<std::size_t> fno_width, fno_modes, fno_depth;
  std::optional<std::size_t> stages, epochs_per_stage, loop_draws, stage_samples, batch;
  std::optional<double> alpha, gamma, epsilon, vf_lr, pcn_beta;
  std::optional<std::size_t> finetune_epochs, finetune_batch, es_samples;
  std::optional<std::size_t> pcn_iters, uki_iters, svgd_particles, svgd_iters;
  std::optional<std::size_t> posterior_draws;

  // Benchmark overrides.
  std::optional<std::size_t> vf_epochs, vf_batch;
  std::optional<std::size_t> mcmc_walkers, mcmc_burn, mcmc_steps, n_samples;
};

namespace detail {

inline std::uint64_t to_u64(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  if (v.is_number_integer() && v.get<long long>() < 0)
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline double to_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

inline std::string to_str(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

inline bool to_flag(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
  return v.get<bool>();
}

}  // namespace detail

// Applies JSON keys onto cfg.  Unknown keys are rejected so config
// typos fail loudly instead of silently running with defaults.
inline void apply_json(RunConfig& cfg, const json& j, const std::string& origin) {
  using detail::to_flag;
  using detail::to_real;
  using detail::to_str;
  using detail::to_u64;
  if (!j.is_object()) throw ConfigError(origin + ": expected a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "command") cfg.command = to_str(v, key);
    else if (key == "problem") cfg.problem = to_str(v, key);
    else if (key == "d") cfg.d = std::size_t(to_u64(v, key));
    else if (key == "delta") cfg.delta = to_real(v, key);
    else if (key == "method") cfg.method = to_str(v, key);
    else if (key == "seed") cfg.seed = to_u64(v, key);
    else if (key == "out") cfg.out = to_str(v, key);
    else if (key == "paper_scale") cfg.paper_scale = to_flag(v, key);
    else if (key == "threads") cfg.threads = std::size_t(to_u64(v, key));
    else if (key == "checkpoint") cfg.checkpoint = to_str(v, key);
    else if (key == "pretrain_inline") cfg.pretrain_inline = to_flag(v, key);
    else if (key == "dataset_size") cfg.dataset_size = std::size_t(to_u64(v, key));
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = std::size_t(to_u64(v, key));
    else if (key == "pretrain_batch") cfg.pretrain_batch = std::size_t(to_u64(v, key));
    else if (key == "fno_width") cfg.fno_width = std::size_t(to_u64(v, key));
    else if (key == "fno_modes") cfg.fno_modes = std::size_t(to_u64(v, key));
    else if (key == "fno_depth") cfg.fno_depth = std::size_t(to_u64(v, key));
    else if (key == "stages") cfg.stages = std::size_t(to_u64(v, key));
    else if (key == "epochs_per_stage") cfg.epochs_per_stage = std::size_t(to_u64(v, key));
    else if (key == "loop_draws") cfg.loop_draws = std::size_t(to_u64(v, key));
    else if (key == "stage_samples") cfg.stage_samples = std::size_t(to_u64(v, key));
    else if (key == "batch") cfg.batch = std::size_t(to_u64(v, key));
    else if (key == "alpha") cfg.alpha = to_real(v, key);
    else if (key == "gamma") cfg.gamma = to_real(v, key);
    else if (key == "epsilon") cfg.epsilon = to_real(v, key);
    else if (key == "vf_lr") cfg.vf_lr = to_real(v, key);
    else if (key == "pcn_beta") cfg.pcn_beta = to_real(v, key);
    else if (key == "finetune_epochs") cfg.finetune_epochs = std::size_t(to_u64(v, key));
    else if (key == "finetune_batch") cfg.finetune_batch = std::size_t(to_u64(v, key));
    else if (key == "es_samples") cfg.es_samples = std::size_t(to_u64(v, key));
    else if (key == "pcn_iters") cfg.pcn_iters = std::size_t(to_u64(v, key));
    else if (key == "uki_iters") cfg.uki_iters = std::size_t(to_u64(v, key));
    else if (key == "svgd_particles") cfg.svgd_particles = std::size_t(to_u64(v, key));
    else if (key == "svgd_iters") cfg.svgd_iters = std::size_t(to_u64(v, key));
    else if (key == "posterior_draws") cfg.posterior_draws = std::size_t(to_u64(v, key));
    else if (key == "vf_epochs") cfg.vf_epochs = std::size_t(to_u64(v, key));
    else if (key == "vf_batch") cfg.vf_batch = std::size_t(to_u64(v, key));
    else if (key == "mcmc_walkers") cfg.mcmc_walkers = std::size_t(to_u64(v, key));
    else if (key == "mcmc_burn") cfg.mcmc_burn = std::size_t(to_u64(v, key));
    else if (key == "mcmc_steps") cfg.mcmc_steps = std::size_t(to_u64(v, key));
    else if (key == "n_samples") cfg.n_samples = std::size_t(to_u64(v, key));
    else throw ConfigError(origin + ": unknown config key '" + key + "'");
  }
}

inline json to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["problem"] = c.problem;
  j["d"] = c.d;
  j["delta"] = c.delta;
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["paper_scale"] = c.paper_scale;
  j["threads"] = c.threads;
  if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint;
  if (c.pretrain_inline) j["pretrain_inline"] = true;
  auto put = [&j](const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  put("dataset_size", c.dataset_size);
  put("pretrain_epochs", c.pretrain_epochs);
  put("pretrain_batch", c.pretrain_batch);
  put("fno_width", c.fno_width);
  put("fno_modes", c.fno_modes);
  put("fno_depth", c.fno_depth);
  put("stages", c.stages);
  put("epochs_per_stage", c.epochs_per_stage);
  put("loop_draws", c.loop_draws);
  put("stage_samples", c.stage_samples);
  put("batch", c.batch);
  put("alpha", c.alpha);
  put("gamma", c.gamma);
  put("epsilon", c.epsilon);
  put("vf_lr", c.vf_lr);
  put("pcn_beta", c.pcn_beta);
  put("finetune_epochs", c.finetune_epochs);
  put("finetune_batch", c.finetune_batch);
  put("es_samples", c.es_samples);
  put("pcn_iters", c.pcn_iters);
  put("uki_iters", c.uki_iters);
  put("svgd_particles", c.svgd_particles);
  put("svgd_iters", c.svgd_iters);
  put("posterior_draws", c.posterior_draws);
  put("vf_epochs", c.vf_epochs);
  put("vf_batch", c.vf_batch);
  put("mcmc_walkers", c.mcmc_walkers);
  put("mcmc_burn", c.mcmc_burn);
  put("mcmc_steps", c.mcmc_steps);
  put("n_samples", c.n_samples);
  return j;
}

// Profile with all config overrides applied.
inline ScaleProfile resolve_profile(const RunConfig& c, ProblemKind kind) {
  ScaleProfile sp = profile_for(kind, c.paper_scale);
  if (c.dataset_size) sp.pretrain_n = *c.dataset_size;
  if (c.pretrain_epochs) sp.pretrain.epochs = *c.pretrain_epochs;
  if (c.pretrain_batch) sp.pretrain.batch = *c.pretrain_batch;
  if (c.fno_width) sp.fno.width = *c.fno_width;
  if (c.fno_modes) sp.fno.modes = *c.fno_modes;
  if (c.fno_depth) sp.fno.depth = *c.fno_depth;
  LoopConfig& lc = sp.adaptive.loop;
  if (c.stages) lc.K_max = *c.stages;
  if (c.epochs_per_stage) lc.N_e = *c.epochs_per_stage;
  if (c.loop_draws) lc.M = *c.loop_draws;
  if (c.stage_samples) lc.stage_samples = *c.stage_samples;
  if (c.batch) lc.batch = *c.batch;
  if (c.alpha) lc.alpha = *c.alpha;
  if (c.gamma) lc.gamma = *c.gamma;
  if (c.epsilon) lc.epsilon = *c.epsilon;
  if (c.vf_lr) lc.vf_lr = *c.vf_lr;
  if (c.finetune_epochs) sp.adaptive.finetune.epochs = *c.finetune_epochs;
  if (c.finetune_batch) sp.adaptive.finetune.batch = *c.finetune_batch;
  if (c.es_samples) sp.adaptive.es_samples = *c.es_samples;
  if (c.pcn_iters) sp.pcn.iters = *c.pcn_iters;
  if (c.pcn_beta) sp.pcn.beta = *c.pcn_beta;
  if (c.uki_iters) sp.uki_iters = *c.uki_iters;
  if (c.svgd_particles) sp.svgd_particles = *c.svgd_particles;
  if (c.svgd_iters) sp.svgd_iters = *c.svgd_iters;
  if (c.posterior_draws) sp.posterior_draws = *c.posterior_draws;
  return sp;
}

inline RosenbrockScale resolve_rosenbrock(const RunConfig& c) {
  RosenbrockScale rs = rosenbrock_scale(c.paper_scale);
  if (c.vf_epochs) rs.vf_epochs = *c.vf_epochs;
  if (c.vf_batch) rs.vf_batch = *c.vf_batch;
  if (c.vf_lr) rs.vf_lr = *c.vf_lr;
  if (c.mcmc_walkers) rs.mcmc_walkers = *c.mcmc_walkers;
  if (c.mcmc_burn) rs.mcmc_burn = *c.mcmc_burn;
  if (c.mcmc_steps) rs.mcmc_steps = *c.mcmc_steps;
  if (c.uki_iters) rs.uki_iters = *c.uki_iters;
  if (c.n_samples) rs.n_samples = *c.n_samples;
  return rs;
}

// ---------------------------------------------------------------------------
// Artifact helpers.

inline void apply_threads(const RunConfig& c) {
  if (c.threads > 0) setenv("VFLOW_THREADS", std::to_string(c.threads).c_str(), 1);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("write failed on " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_manifest(const fs::path& dir, const RunConfig& cfg) {
  json j;
  j["tool"] = "vflow";
  j["format"] = 1;
  j["config"] = to_json(cfg);
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

inline RunConfig load_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("config"))
    throw ConfigError(path.string() + ": not a run manifest");
  RunConfig cfg;
  apply_json(cfg, j["config"], path.string());
  return cfg;
}

inline void write_observation(const fs::path& dir, const Likelihood& lik) {
  json j;
  j["y"] = lik.y;
  j["noise_std"] = lik.noise_std;
  j["locations"] = lik.locations;
  j["seed"] = lik.seed;
  write_text(dir / "observation.json", j.dump(2) + "\n");
}

inline void write_vector_csv(const fs::path& path, const std::vector<double>& v) {
  Array a({1, v.size()});
  std::copy(v.begin(), v.end(), a.data.begin());
  save_samples_csv(path.string(), a);
}

// Reads a samples CSV written by save_samples_csv (header + rows).
inline Array read_samples_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(path.string() + ": empty file");
  std::vector<double> vals;
  std::size_t cols = 0, rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t c = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      vals.push_back(std::strtod(cell.c_str(), nullptr));
      ++c;
    }
    if (cols == 0) cols = c;
    else if (c != cols) throw ConfigError(path.string() + ": ragged CSV row");
    ++rows;
  }
  if (rows == 0 || cols == 0) throw ConfigError(path.string() + ": no data rows");
  Array a({rows, cols});
  std::copy(vals.begin(), vals.end(), a.data.begin());
  return a;
}

// ---------------------------------------------------------------------------
// Commands.  Each returns a process exit code.

inline int cmd_pretrain(const RunConfig& cfg) {
  apply_threads(cfg);
  const ProblemKind kind = parse_problem(cfg.problem);
  const ScaleProfile sp = resolve_profile(cfg, kind);
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  Problem pb = make_problem(kind, cfg.d, cfg.delta, seed_stream(cfg.seed, "problem"));
  FnoModel fno = pretrain_surrogate(pb, sp, cfg.seed);
  ParamRefs refs;
  fno.collect(refs);
  try {
    save_params((dir / "fno.ckpt").string(), refs);
  } catch (const ConfigError& e) {
    throw IoError(e.what());
  }
  json ds;
  ds["problem"] = cfg.problem;
  ds["d"] = cfg.d;
  ds["size"] = sp.pretrain_n;
  ds["seed"] = cfg.seed;
  write_text(dir / "dataset.json", ds.dump(2) + "\n");
  write_manifest(dir, cfg);
  std::printf("pretrain: %s d=%zu, %zu pairs -> %s\n", cfg.problem.c_str(), cfg.d,
              sp.pretrain_n, (dir / "fno.ckpt").string().c_str());
  return kOk;
}

inline int cmd_invert(const RunConfig& cfg) {
  apply_threads(cfg);
  const ProblemKind kind = parse_problem(cfg.problem);
  const Method method = parse_method(cfg.method);
  const ScaleProfile sp = resolve_profile(cfg, kind);
  const bool needs_surrogate =
      method == Method::ours || method == Method::uki_fno || method == Method::svgd_fno;
  if (needs_surrogate && cfg.checkpoint.empty() && !cfg.pretrain_inline)
    throw ConfigError("invert with method '" + cfg.method +
                      "' needs --checkpoint or --pretrain-inline");
  const fs::path dir(cfg.out);
  ensure_dir(dir);
  Problem pb = make_problem(kind, cfg.d, cfg.delta, seed_stream(cfg.seed, "problem"));

  FnoModel warm;
  const FnoModel* warm_ptr = nullptr;
  if (needs_surrogate && !cfg.checkpoint.empty()) {
    if (!fs::exists(cfg.checkpoint))
      throw IoError("checkpoint not found: " + cfg.checkpoint);
    Rng rng(seed_stream(cfg.seed, "fno-init"));
    warm = make_fno(sp.fno, rng);
    ParamRefs refs;
    warm.collect(refs);
    load_params(cfg.checkpoint, refs);
    warm_ptr = &warm;
  }
  CellResult cell = run_cell(pb, method, sp, seed_stream(cfg.seed, "run"), warm_ptr);

  write_observation(dir, pb.lik);
  write_vector_csv(dir / "mu_post.csv", cell.mu_post);
  if (cell.samples.numel() > 0) save_samples_csv((dir / "samples.csv").string(), cell.samples);
  if (!cell.stage_log.empty())
    write_stage_log_csv((dir / "stage_log.csv").string(), cell.stage_log);
  write_report_csv((dir / "report.csv").string(), {cell.report});
  write_manifest(dir, cfg);
  std::printf("invert: %s %s d=%zu delta=%g: e_I=%.4f stages=%zu converged=%d\n",
              cfg.problem.c_str(), cfg.method.c_str(), cfg.d, cfg.delta, cell.report.e_I,
              cell.report.stages_run, int(cell.report.converged));
  return kOk;
}

inline int cmd_rosenbrock(const RunConfig& cfg) {
  apply_threads(cfg);
  const RosenbrockScale rs = resolve_rosenbrock(cfg);
  const fs::path dir(cfg.out);
  ensure_dir(dir);

  Array samples;
  if (cfg.method == "mcmc") {
    samples = rosenbrock_mcmc_samples(rs, cfg.seed);
  } else if (cfg.method == "vf") {
    VfModel vf = train_rosenbrock_vf(rs, cfg.seed);
    samples = rosenbrock_vf_samples(vf, rs.n_samples, cfg.seed);
  } else if (cfg.method == "uki") {
    samples = rosenbrock_uki_samples(rs, cfg.seed);
  } else {
    throw ConfigError("benchmark method must be vf|mcmc|uki, got '" + cfg.method + "'");
  }
  Array pair = leading_pair(samples);
  save_samples_csv((dir / "samples.csv").string(), pair);

  Array ref = cfg.method == "mcmc"
                  ? pair
                  : leading_pair(rosenbrock_mcmc_samples(rs, seed_stream(cfg.seed, "reference")));
  CoverageReport cov = coverage_against_reference(ref, pair);
  json j;
  j["center_a"] = {cov.centers.a[0], cov.centers.a[1]};
  j["center_b"] = {cov.centers.b[0], cov.centers.b[1]};
  j["radius"] = cov.radius;
  j["frac_a"] = cov.frac_a;
  j["frac_b"] = cov.frac_b;
  j["n_samples"] = pair.shape[0];
  write_text(dir / "coverage.json", j.dump(2) + "\n");
  write_manifest(dir, cfg);
  std::printf("benchmark %s: %zu samples, coverage %.3f / %.3f at radius %.2f\n",
              cfg.method.c_str(), pair.shape[0], cov.frac_a, cov.frac_b, cov.radius);
  return kOk;
}

inline int cmd_metrics(const std::string& manifest_path) {
  const fs::path mpath(manifest_path);
  RunConfig cfg = load_manifest(mpath);
  if (cfg.command != "invert")
    throw ConfigError("metrics: manifest describes '" + cfg.command +
                      "', only invert runs carry inversion metrics");
  const fs::path dir = mpath.parent_path();
  Problem pb = make_problem(parse_problem(cfg.problem), cfg.d, cfg.delta,
                            seed_stream(cfg.seed, "problem"));
  Array mu = read_samples_csv(dir / "mu_post.csv");
  if (mu.shape[0] != 1 || mu.shape[1] != pb.d)
    throw ConfigError("metrics: mu_post.csv shape does not match the problem");
  std::vector<double> v(mu.data.begin(), mu.data.end());
  const double e = inversion_error(pb, v);
  json j;
  j["e_I"] = e;
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  std::printf("metrics: e_I=%.6f\n", e);
  return kOk;
}

// ---------------------------------------------------------------------------
// Replay: re-run a manifest into a fresh directory and compare run
// artifacts byte for byte.  The stage log's wallclock column is wall
// time and is masked; everything else must match exactly.

struct FileDiff {
  std::string name;
  std::string detail;
};

namespace detail {

inline std::string mask_wallclock(const std::string& text) {
  std::istringstream is(text);
  std::ostringstream os;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!first) {
      const std::size_t pos = line.rfind(',');
      if (pos != std::string::npos) line = line.substr(0, pos) + ",-";
    }
    first = false;
    os << line << '\n';
  }
  return os.str();
}

}  // namespace detail

// manifest.json names the output directory itself and metrics.json is
// derived after the fact, so neither takes part in the comparison.
inline bool compared_artifact(const fs::path& p) {
  const std::string n = p.filename().string();
  return n != "manifest.json" && n != "metrics.json";
}

inline std::vector<FileDiff> compare_artifact_dirs(const fs::path& ref, const fs::path& fresh) {
  std::vector<FileDiff> diffs;
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(ref))
    if (e.is_regular_file() && compared_artifact(e.path()))
      names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(fresh))
    if (e.is_regular_file() && compared_artifact(e.path()))
      names.insert(e.path().filename().string());
  for (const std::string& name : names) {
    const fs::path a = ref / name, b = fresh / name;
    if (!fs::exists(a)) {
      diffs.push_back({name, "present only in replay"});
      continue;
    }
    if (!fs::exists(b)) {
      diffs.push_back({name, "missing from replay"});
      continue;
    }
    std::string ta = read_text(a), tb = read_text(b);
    if (name == "stage_log.csv") {
      ta = detail::mask_wallclock(ta);
      tb = detail::mask_wallclock(tb);
    }
    if (ta != tb) diffs.push_back({name, "content differs"});
  }
  return diffs;
}

inline int run_command(const RunConfig& cfg) {
  if (cfg.command == "pretrain") return cmd_pretrain(cfg);
  if (cfg.command == "invert") return cmd_invert(cfg);
  if (cfg.command == "rosenbrock") return cmd_rosenbrock(cfg);
  throw ConfigError("manifest names unknown command '" + cfg.command + "'");
}

inline int cmd_replay(const std::string& manifest_path, const std::string& out_override) {
  const fs::path mpath(manifest_path);
  RunConfig cfg = load_manifest(mpath);
  const fs::path ref_dir = mpath.parent_path();
  RunConfig fresh = cfg;
  fresh.out = out_override.empty() ? (cfg.out + ".replay") : out_override;
  if (fs::weakly_canonical(fresh.out) == fs::weakly_canonical(ref_dir))
    throw ConfigError("replay: output directory equals the original run directory");
  const int rc = run_command(fresh);
  if (rc != kOk) return rc;
  const std::vector<FileDiff> diffs = compare_artifact_dirs(ref_dir, fresh.out);
  std::size_t checked = 0;
  for (const auto& e : fs::directory_iterator(ref_dir))
    if (e.is_regular_file() && compared_artifact(e.path())) ++checked;
  if (diffs.empty()) {
    std::printf("replay: %zu artifacts match byte-exactly\n", checked);
    return kOk;
  }
  for (const FileDiff& d : diffs)
    std::fprintf(stderr, "replay mismatch: %s (%s)\n", d.name.c_str(), d.detail.c_str());
  return kNumeric;
}

// Exception-to-exit-code mapping shared by all commands.
template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  }
}

}  // namespace vflow::cli

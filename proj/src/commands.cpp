#include "softmine/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

namespace softmine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* pattern, double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string image_error(const ExperimentConfig& cfg, const std::exception& e) {
  return "cannot read image (key 'image' = '" + cfg.image.string() + "'): " + e.what();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string resolved_text(const ExperimentConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : cfg.resolved()) s += k + " = " + v + "\n";
  return s;
}

struct FitOutcome {
  RunResult result;
  double checkpoint_psnr = 0.0;
};

/// Trains and writes the run directory. Exceptions propagate.
FitOutcome execute_fit(const ExperimentConfig& cfg, const ImageField& img) {
  fs::create_directories(cfg.out_dir);
  TrainHooks hooks;
  std::ofstream walkers;
  if (cfg.dump_walkers && cfg.train.sampler == SamplerKind::Lmc) {
    walkers.open(cfg.out_dir / "walkers.csv");
    if (!walkers) throw std::runtime_error("cannot write walkers.csv");
    hooks.walker_dump = &walkers;
  }
  if (cfg.dump_images) {
    fs::create_directories(cfg.out_dir / "images");
    hooks.on_eval = [&](const ConvergenceRecord& rec, const FieldParams&, const Evaluation& eval) {
      char name[64];
      std::snprintf(name, sizeof name, "render_%06lld.png", static_cast<long long>(rec.iteration));
      save_image(cfg.out_dir / "images" / name, eval.render);
      std::snprintf(name, sizeof name, "error_%06lld.png", static_cast<long long>(rec.iteration));
      save_heatmap(cfg.out_dir / "images" / name, img.width, img.height, eval.error_map);
    };
  }

  FitOutcome o;
  try {
    o.result = train(img, cfg.train, hooks);
  } catch (const TrainingDiverged& e) {
    write_file(cfg.out_dir / "divergence.txt", std::string(e.what()) + "\n" + e.snapshot());
    throw;
  }

  std::ostringstream csv;
  write_convergence_csv(csv, o.result.records, cfg.log_wall_time);
  write_file(cfg.out_dir / "convergence.csv", csv.str());

  // Everything downstream of the checkpoint sees float32 parameters, so a
  // later render of final.ckpt reproduces these numbers exactly.
  const FieldParams stored = quantize_to_checkpoint(o.result.params);
  save_checkpoint(cfg.out_dir / "final.ckpt", stored);
  const Evaluation eval = evaluate_full(stored, img);
  o.checkpoint_psnr = eval.psnr;
  save_image(cfg.out_dir / "final.png", eval.render);
  save_heatmap(cfg.out_dir / "error.png", img.width, img.height, eval.error_map);

  write_file(cfg.out_dir / "run.cfg", resolved_text(cfg));
  json meta;
  meta["artifact"] = "softmine";
  meta["version"] = SOFTMINE_VERSION;
  meta["command"] = "fit";
  meta["seed"] = cfg.train.seed;
  json conf = json::object();
  for (const auto& [k, v] : cfg.resolved()) conf[k] = v;
  meta["config"] = conf;
  meta["replay"] = "softmine fit --config run.cfg";
  json res;
  res["iterations"] = cfg.train.iterations;
  res["final_psnr_db"] = number_or_null(o.result.records.back().full_psnr);
  res["checkpoint_psnr_db"] = number_or_null(o.checkpoint_psnr);
  res["iterations_to_target"] = o.result.iterations_to_target ? json(*o.result.iterations_to_target) : json(nullptr);
  res["wall_seconds"] = o.result.wall_seconds;
  meta["results"] = res;
  write_file(cfg.out_dir / "metadata.json", meta.dump(2) + "\n");
  return o;
}

double mean(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// PSNR of the last evaluation at or before `iteration`.
double psnr_at(const std::vector<ConvergenceRecord>& records, std::int64_t iteration) {
  double v = std::nan("");
  for (const auto& r : records) {
    if (r.iteration > iteration) break;
    v = r.full_psnr;
  }
  return v;
}

}  // namespace

int cmd_fit(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  ImageField img;
  try {
    img = load_image(cfg.image);
  } catch (const std::exception& e) {
    err << "error: " << image_error(cfg, e) << "\n";
    return kExitInvalid;
  }
  try {
    const FitOutcome o = execute_fit(cfg, img);
    out << "final_psnr_db " << fmt("%.9f", o.result.records.back().full_psnr) << "\n";
    out << "checkpoint_psnr_db " << fmt("%.9f", o.checkpoint_psnr) << "\n";
    out << "iterations_to_target "
        << (o.result.iterations_to_target ? std::to_string(*o.result.iterations_to_target) : std::string("none")) << "\n";
    out << "wall_seconds " << fmt("%.3f", o.result.wall_seconds) << "\n";
    out << "run_dir " << cfg.out_dir.string() << "\n";
    return kExitOk;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << " (snapshot in " << (cfg.out_dir / "divergence.txt").string() << ")\n";
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
}

std::size_t BenchSummary::failures() const {
  return static_cast<std::size_t>(std::count_if(runs.begin(), runs.end(), [](const BenchRun& r) { return !r.ok; }));
}

BenchSummary run_bench(const BenchPlan& plan, int jobs, std::ostream* log) {
  plan.validate();
  BenchSummary s;
  s.checkpoints = plan.checkpoints;
  const std::size_t seeds = static_cast<std::size_t>(plan.seeds);
  for (const auto& v : plan.variants)
    for (std::size_t k = 0; k < seeds; ++k) {
      BenchRun r;
      r.variant = v.name;
      r.seed = v.config.train.seed + k;
      s.runs.push_back(std::move(r));
    }

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < s.runs.size(); i = next++) {
      BenchRun& run = s.runs[i];
      const auto& variant = plan.variants[i / seeds];
      ExperimentConfig cfg = variant.config;
      cfg.train.seed = run.seed;
      cfg.out_dir = plan.out_dir / variant.name / ("seed_" + std::to_string(run.seed));
      try {
        const ImageField img = load_image(cfg.image);
        run.records = execute_fit(cfg, img).result.records;
        run.ok = true;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "[" << variant.name << " seed " << run.seed << "] "
             << (run.ok ? "final psnr " + fmt("%.4f", run.records.back().full_psnr) : "FAILED: " + run.error) << "\n";
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, static_cast<int>(s.runs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Per-seed targets from the baseline runs.
  std::size_t base_index = plan.variants.size();
  for (std::size_t v = 0; v < plan.variants.size(); ++v)
    if (plan.variants[v].name == plan.baseline) base_index = v;
  std::vector<double> targets(seeds, std::nan(""));
  for (std::size_t k = 0; k < seeds && base_index < plan.variants.size(); ++k) {
    const auto& base_cfg = plan.variants[base_index].config.train;
    const BenchRun& b = s.runs[base_index * seeds + k];
    if (base_cfg.target_psnr) targets[k] = *base_cfg.target_psnr;
    else if (b.ok) targets[k] = b.records.back().full_psnr;
  }
  for (std::size_t i = 0; i < s.runs.size(); ++i) {
    BenchRun& r = s.runs[i];
    r.target_db = targets[i % seeds];
    if (r.ok && !std::isnan(r.target_db)) r.iterations_to_target = iterations_to_target(r.records, r.target_db);
  }

  for (std::size_t v = 0; v < plan.variants.size(); ++v) {
    BenchRow row;
    row.variant = plan.variants[v].name;
    std::vector<double> finals, iters;
    bool all_reached = true;
    std::vector<std::vector<double>> at(s.checkpoints.size());
    for (std::size_t k = 0; k < seeds; ++k) {
      const BenchRun& r = s.runs[v * seeds + k];
      ++row.runs;
      if (!r.ok) {
        ++row.failed;
        continue;
      }
      finals.push_back(r.records.back().full_psnr);
      for (std::size_t c = 0; c < s.checkpoints.size(); ++c) {
        const double p = psnr_at(r.records, s.checkpoints[c]);
        if (!std::isnan(p)) at[c].push_back(p);
      }
      if (r.iterations_to_target) iters.push_back(static_cast<double>(*r.iterations_to_target));
      else all_reached = false;
    }
    for (const auto& xs : at) row.psnr_at_checkpoints.push_back(mean(xs));
    row.final_psnr = mean(finals);
    if (all_reached && !iters.empty()) row.mean_iterations_to_target = mean(iters);
    s.rows.push_back(row);
  }
  if (base_index < s.rows.size() && s.rows[base_index].mean_iterations_to_target) {
    const double base = *s.rows[base_index].mean_iterations_to_target;
    for (auto& row : s.rows)
      if (row.mean_iterations_to_target) row.speedup = base / *row.mean_iterations_to_target;
  }
  return s;
}

void write_bench_summary_csv(std::ostream& os, const BenchSummary& s) {
  os << "variant,runs,failed";
  for (auto cp : s.checkpoints) os << ",psnr_at_" << cp;
  os << ",final_psnr_db,mean_iters_to_target,speedup\n";
  for (const auto& row : s.rows) {
    os << row.variant << ',' << row.runs << ',' << row.failed;
    for (double p : row.psnr_at_checkpoints) os << ',' << fmt("%.4f", p);
    os << ',' << fmt("%.4f", row.final_psnr) << ','
       << (row.mean_iterations_to_target ? fmt("%.1f", *row.mean_iterations_to_target) : "NA") << ','
       << (row.speedup ? fmt("%.4f", *row.speedup) : "NA") << '\n';
  }
}

int cmd_bench(const BenchPlan& plan, int jobs, std::ostream& out, std::ostream& err) {
  try {
    plan.validate();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  try {
    const BenchSummary s = run_bench(plan, jobs, &err);
    std::ostringstream summary, runs;
    write_bench_summary_csv(summary, s);
    runs << "variant,seed,status,final_psnr_db,target_db,iters_to_target\n";
    for (const auto& r : s.runs) {
      runs << r.variant << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ','
           << (r.ok ? fmt("%.6f", r.records.back().full_psnr) : "NA") << ',' << fmt("%.6f", r.target_db) << ','
           << (r.iterations_to_target ? std::to_string(*r.iterations_to_target) : "NA") << '\n';
    }
    fs::create_directories(plan.out_dir);
    write_file(plan.out_dir / "summary.csv", summary.str());
    write_file(plan.out_dir / "runs.csv", runs.str());
    out << summary.str();
    if (s.failures() > 0) {
      err << s.failures() << " run(s) failed; see runs.csv\n";
      return kExitFailed;
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
}

int cmd_lmc_check(const StationarityConfig& cfg, const std::optional<fs::path>& report, std::ostream& out,
                  std::ostream& err) {
  StationarityReport r;
  try {
    r = run_stationarity_check(cfg);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  out << "target " << to_string(cfg.target) << "\n";
  out << "boundary " << to_string(cfg.boundary) << "\n";
  out << "steps " << cfg.steps << "\n";
  out << "samples " << r.samples << "\n";
  out << "stationary_exponent " << fmt("%.6g", r.exponent) << "\n";
  out << "tv " << fmt("%.6f", r.tv) << "\n";
  out << "tv_raw " << fmt("%.6f", r.tv_raw) << "\n";
  out << "threshold " << fmt("%.6g", r.threshold) << "\n";
  out << (r.passed ? "PASS" : "FAIL") << "\n";
  if (report) {
    json j;
    j["target"] = to_string(cfg.target);
    j["boundary"] = to_string(cfg.boundary);
    j["steps"] = cfg.steps;
    j["bins"] = cfg.bins;
    j["walkers"] = cfg.walkers;
    j["a"] = cfg.a;
    j["b"] = cfg.b;
    j["seed"] = cfg.seed;
    j["stationary_exponent"] = r.exponent;
    j["tv"] = r.tv;
    j["tv_raw"] = r.tv_raw;
    j["threshold"] = r.threshold;
    j["passed"] = r.passed;
    j["histogram"] = r.histogram;
    j["expected"] = r.expected;
    try {
      if (report->has_parent_path()) fs::create_directories(report->parent_path());
      write_file(*report, j.dump(2) + "\n");
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitFailed;
    }
  }
  return r.passed ? kExitOk : kExitFailed;
}

int cmd_render(const RenderOptions& opts, std::ostream& out, std::ostream& err) {
  FieldParams params;
  try {
    params = load_checkpoint(opts.checkpoint);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  std::optional<ImageField> ref;
  if (opts.reference) {
    try {
      ref = load_image(*opts.reference);
    } catch (const std::exception& e) {
      err << "error: cannot read reference image: " << e.what() << "\n";
      return kExitInvalid;
    }
    if (ref->channels != params.layout.channels) {
      err << "error: layout mismatch: checkpoint has " << params.layout.channels << " channel(s), reference has "
          << ref->channels << "\n";
      return kExitInvalid;
    }
    if ((opts.width && *opts.width != ref->width) || (opts.height && *opts.height != ref->height)) {
      err << "error: requested size differs from the reference image\n";
      return kExitInvalid;
    }
  }
  const int w = opts.width.value_or(ref ? ref->width : 0);
  const int h = opts.height.value_or(ref ? ref->height : 0);
  if (w < 1 || h < 1) {
    err << "error: render needs --width and --height >= 1 (or --reference)\n";
    return kExitInvalid;
  }
  try {
    if (ref) {
      const Evaluation e = evaluate_full(params, *ref);
      save_image(opts.out, e.render);
      out << "psnr_db " << fmt("%.9f", e.psnr) << "\n";
    } else {
      save_image(opts.out, render_image(params, w, h));
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  out << "wrote " << opts.out.string() << " (" << w << "x" << h << ")\n";
  return kExitOk;
}

namespace {

struct SharedFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  bool dump_images = false;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "master seed (overrides the file)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--jobs", f.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  cmd->add_flag("--dump-images", f.dump_images, "write render and error heatmap at every evaluation");
}

void apply_overrides(ExperimentConfig& cfg, const SharedFlags& f, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.train.seed = *f.seed;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.dump_images) cfg.dump_images = true;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Soft-mining neural field fitting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SOFTMINE_VERSION);

  SharedFlags fit_flags, bench_flags;
  std::vector<std::string> fit_sets, bench_sets;
  std::string fit_image;
  auto* fit = app.add_subcommand("fit", "train one field on an image");
  add_shared(fit, fit_flags);
  fit->add_option("--image", fit_image, "target image (overrides the file)");
  fit->add_option("--set", fit_sets, "extra key=value override, repeatable");

  auto* bench = app.add_subcommand("bench", "run a plan of variants over several seeds");
  add_shared(bench, bench_flags);
  bench->add_option("--set", bench_sets, "key=value applied to every variant, repeatable");

  std::string target = "gaussian-mixture";
  std::string check_out;
  StationarityConfig check;
  auto* lmc = app.add_subcommand("lmc-check", "stationarity test of the walker update on a synthetic target");
  std::string boundary = "reject";
  lmc->add_option("--target", target, "gaussian-mixture, uniform or step");
  lmc->add_option("--boundary", boundary, "reject (stay put) or redraw (uniform restart)");
  lmc->add_option("--steps", check.steps);
  lmc->add_option("--bins", check.bins);
  lmc->add_option("--walkers", check.walkers);
  lmc->add_option("--burn-in", check.burn_in);
  lmc->add_option("--thin", check.thin);
  lmc->add_option("--a", check.a, "gradient step size");
  lmc->add_option("--b", check.b, "noise step size");
  lmc->add_option("--threshold", check.threshold);
  lmc->add_option("--seed", check.seed);
  lmc->add_option("--out", check_out, "optional JSON report path");

  RenderOptions render_opts;
  std::string ckpt, render_out, reference;
  auto* rend = app.add_subcommand("render", "render a checkpoint to a PNG");
  rend->add_option("checkpoint,--checkpoint", ckpt)->required();
  rend->add_option("--out", render_out, "output PNG (default render.png)");
  rend->add_option("--width", render_opts.width);
  rend->add_option("--height", render_opts.height);
  rend->add_option("--reference", reference, "ground-truth image; prints PSNR");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << SOFTMINE_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  if (fit->parsed()) {
    ExperimentConfig cfg;
    try {
      if (!fit_flags.config.empty()) cfg = load_experiment_config(fit_flags.config);
      if (!fit_image.empty()) cfg.image = fit_image;
      apply_overrides(cfg, fit_flags, fit_sets);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return kExitInvalid;
    }
    return cmd_fit(cfg, out, err);
  }
  if (bench->parsed()) {
    BenchPlan plan;
    try {
      if (bench_flags.config.empty()) throw ConfigError("bench needs --config PLAN");
      plan = load_bench_plan(bench_flags.config);
      for (auto& v : plan.variants) {
        SharedFlags f = bench_flags;
        f.out.clear();
        apply_overrides(v.config, f, bench_sets);
      }
      if (!bench_flags.out.empty()) plan.out_dir = bench_flags.out;
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return kExitInvalid;
    }
    return cmd_bench(plan, bench_flags.jobs, out, err);
  }
  if (lmc->parsed()) {
    try {
      check.target = parse_synthetic_target(target);
      check.boundary = parse_boundary(boundary);
    } catch (const std::invalid_argument& e) {
      err << "error: " << e.what() << "\n";
      return kExitInvalid;
    }
    std::optional<fs::path> report;
    if (!check_out.empty()) report = check_out;
    return cmd_lmc_check(check, report, out, err);
  }
  render_opts.checkpoint = ckpt;
  if (!render_out.empty()) render_opts.out = render_out;
  if (!reference.empty()) render_opts.reference = reference;
  return cmd_render(render_opts, out, err);
}

}  // namespace softmine

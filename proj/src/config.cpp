#include "softmine/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace softmine {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("invalid value '" + value + "' for key '" + key + "' (expected " + expected + ")");
}

template <typename T>
T parse_int(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(out)) bad_value(key, value, "a real number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::int64_t> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<std::int64_t>(key, trim(item)));
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string join(const std::vector<std::int64_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "image",         "out",          "iterations",       "batch_size",  "eval_every",
      "sampler",       "alpha",        "warmup_iters",     "eps_q",       "lmc_a",
      "lmc_b",         "uniform_frac", "reinit_frac",      "edge_reinit_frac", "pool_size",
      "seed",          "target_psnr",  "levels",           "base_resolution",  "growth",
      "features_per_level", "hidden_width", "lr",           "lr_milestones", "lr_factor",
      "snap_to_pixel_centers", "log_wall_time", "dump_images", "dump_walkers"};
  return keys;
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  TrainConfig& t = train;
  if (key == "image") image = value;
  else if (key == "out") out_dir = value;
  else if (key == "iterations") t.iterations = parse_int<std::int64_t>(key, value);
  else if (key == "batch_size") t.batch_size = parse_int<std::size_t>(key, value);
  else if (key == "eval_every") t.eval_every = parse_int<std::int64_t>(key, value);
  else if (key == "sampler") {
    try {
      t.sampler = parse_sampler_kind(value);
    } catch (const std::invalid_argument&) {
      bad_value(key, value, "uniform, lmc or multinomial");
    }
  }
  else if (key == "alpha") t.mining.alpha_target = parse_real(key, value);
  else if (key == "warmup_iters") t.mining.warmup_iters = parse_int<std::int64_t>(key, value);
  else if (key == "eps_q") t.mining.eps_q = parse_real(key, value);
  else if (key == "lmc_a") t.lmc.a = parse_real(key, value);
  else if (key == "lmc_b") t.lmc.b = parse_real(key, value);
  else if (key == "uniform_frac") t.lmc.uniform_frac = parse_real(key, value);
  else if (key == "reinit_frac") t.lmc.reinit_frac = parse_real(key, value);
  else if (key == "edge_reinit_frac") t.lmc.edge_reinit_frac = parse_real(key, value);
  else if (key == "pool_size") t.lmc.pool_size = parse_int<std::size_t>(key, value);
  else if (key == "seed") t.seed = parse_int<std::uint64_t>(key, value);
  else if (key == "target_psnr") {
    if (value.empty() || value == "none") t.target_psnr.reset();
    else t.target_psnr = parse_real(key, value);
  }
  else if (key == "levels") t.encoding.levels = parse_int<int>(key, value);
  else if (key == "base_resolution") t.encoding.base_resolution = parse_int<int>(key, value);
  else if (key == "growth") t.encoding.growth = parse_real(key, value);
  else if (key == "features_per_level") t.encoding.features_per_level = parse_int<int>(key, value);
  else if (key == "hidden_width") t.hidden_width = parse_int<int>(key, value);
  else if (key == "lr") t.base_lr = parse_real(key, value);
  else if (key == "lr_milestones") t.lr_milestones = parse_int_list(key, value);
  else if (key == "lr_factor") t.lr_factor = parse_real(key, value);
  else if (key == "snap_to_pixel_centers") t.snap_to_pixel_centers = parse_bool(key, value);
  else if (key == "log_wall_time") log_wall_time = parse_bool(key, value);
  else if (key == "dump_images") dump_images = parse_bool(key, value);
  else if (key == "dump_walkers") dump_walkers = parse_bool(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::resolved() const {
  const TrainConfig& t = train;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"image", image.string()},
      {"out", out_dir.string()},
      {"iterations", std::to_string(t.iterations)},
      {"batch_size", std::to_string(t.batch_size)},
      {"eval_every", std::to_string(t.eval_every)},
      {"sampler", to_string(t.sampler)},
      {"alpha", format_real(t.mining.alpha_target)},
      {"warmup_iters", std::to_string(t.mining.warmup_iters)},
      {"eps_q", format_real(t.mining.eps_q)},
      {"lmc_a", format_real(t.lmc.a)},
      {"lmc_b", format_real(t.lmc.b)},
      {"uniform_frac", format_real(t.lmc.uniform_frac)},
      {"reinit_frac", format_real(t.lmc.reinit_frac)},
      {"edge_reinit_frac", format_real(t.lmc.edge_reinit_frac)},
      {"pool_size", std::to_string(t.lmc.pool_size)},
      {"seed", std::to_string(t.seed)},
      {"target_psnr", t.target_psnr ? format_real(*t.target_psnr) : std::string("none")},
      {"levels", std::to_string(t.encoding.levels)},
      {"base_resolution", std::to_string(t.encoding.base_resolution)},
      {"growth", format_real(t.encoding.growth)},
      {"features_per_level", std::to_string(t.encoding.features_per_level)},
      {"hidden_width", std::to_string(t.hidden_width)},
      {"lr", format_real(t.base_lr)},
      {"lr_milestones", join(t.lr_milestones)},
      {"lr_factor", format_real(t.lr_factor)},
      {"snap_to_pixel_centers", b(t.snap_to_pixel_centers)},
      {"log_wall_time", b(log_wall_time)},
      {"dump_images", b(dump_images)},
      {"dump_walkers", b(dump_walkers)},
  };
}

void ExperimentConfig::validate() const {
  if (image.empty()) throw ConfigError("missing required key 'image'");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      out.emplace_back("[", trim(std::string_view(s).substr(1, s.size() - 2)));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(std::string_view(s).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(std::string_view(s).substr(eq + 1)));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : parse_key_values(read_text_file(path), path.string())) {
    if (key == "[") throw ConfigError(path.string() + ": sections are only allowed in bench plans");
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return cfg;
}

void BenchPlan::validate() const {
  if (variants.empty()) throw ConfigError("bench plan has no variants");
  if (seeds < 1) throw ConfigError("bench plan: seeds must be >= 1");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (!names.insert(v.name).second) throw ConfigError("bench plan: duplicate variant name '" + v.name + "'");
    try {
      v.config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("variant '" + v.name + "': " + e.what());
    }
  }
  if (!baseline.empty() && !names.count(baseline)) throw ConfigError("bench plan: unknown baseline '" + baseline + "'");
}

BenchPlan parse_bench_plan(const std::string& text, const std::string& origin) {
  BenchPlan plan;
  ExperimentConfig shared;
  BenchPlan::Variant* current = nullptr;
  for (const auto& [key, value] : parse_key_values(text, origin)) {
    if (key == "[") {
      plan.variants.push_back({value, shared});
      current = &plan.variants.back();
      continue;
    }
    if (!current && key == "seeds") {
      plan.seeds = parse_int<int>(key, value);
    } else if (!current && key == "checkpoints") {
      plan.checkpoints = parse_int_list(key, value);
    } else if (!current && key == "baseline") {
      plan.baseline = value;
    } else {
      try {
        (current ? current->config : shared).set(key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + (current ? " [" + current->name + "]" : std::string()) + ": " + e.what());
      }
      if (!current && key == "out") plan.out_dir = shared.out_dir;
    }
  }
  if (plan.baseline.empty()) {
    const auto it = std::find_if(plan.variants.begin(), plan.variants.end(),
                                 [](const auto& v) { return v.config.train.sampler == SamplerKind::Uniform; });
    if (it != plan.variants.end()) plan.baseline = it->name;
  }
  return plan;
}

BenchPlan load_bench_plan(const std::filesystem::path& path) {
  return parse_bench_plan(read_text_file(path), path.string());
}

}  // namespace softmine

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "schedev/dataset.hpp"
#include "schedev/experiment.hpp"
#include "schedev/interpolant.hpp"
#include "schedev/rng.hpp"
#include "schedev/sampler.hpp"
#include "schedev/schedule.hpp"
#include "schedev/sd.hpp"
#include "schedev/tinyflow.hpp"
#include "schedev/transport.hpp"

namespace {

using namespace schedev;
namespace fs = std::filesystem;

// Flag or config mistakes exit with 2; failures while running exit with 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void emit_error(const std::string& message) {
  nlohmann::json err = {{"error", message}, {"hint", "run 'schedev --help' for usage"}};
  std::cerr << err.dump() << "\n";
}

void write_text(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
}

// Comment block at the top of every text artifact: command plus the exact
// effective configuration, seed included.
std::string csv_echo(const std::string& command, const nlohmann::json& config) {
  return "# schedev " + command + "\n# config " + config.dump() + "\n";
}

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (table.columns.empty()) {
      table.columns = cells;
      continue;
    }
    std::vector<double> values;
    for (const std::string& c : cells) {
      try {
        values.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw std::runtime_error("'" + path + "' has a non-numeric cell: " + c);
      }
    }
    table.rows.push_back(std::move(values));
  }
  if (table.columns.empty()) throw std::runtime_error("'" + path + "' has no header row");
  return table;
}

std::size_t column_index(const CsvTable& table, const std::string& name, const std::string& path) {
  auto it = std::find(table.columns.begin(), table.columns.end(), name);
  if (it == table.columns.end())
    throw std::runtime_error("'" + path + "' has no column '" + name + "'");
  return static_cast<std::size_t>(it - table.columns.begin());
}

// Anchor conditionals implied by the default toy spec: the components at one
// z value, equally weighted, with variance noise_sigma^2.
GaussianMixtureModel toy_anchor_gmm(double z_value) {
  ToySpec spec;
  std::vector<GmmComponent> components;
  for (const ToyAnchor& anchor : spec.anchors)
    if (anchor.z == z_value)
      components.push_back({1.0, {anchor.x}, spec.noise_sigma * spec.noise_sigma});
  for (GmmComponent& c : components) c.weight = 1.0 / static_cast<double>(components.size());
  return GaussianMixtureModel(components);
}

struct FlowFlags {
  std::string flow = "spline";
  std::string model_path;
  double sigma_min = 5e-4, sigma_max = 5.0;
};

void add_flow_flags(CLI::App* sub, FlowFlags& flags) {
  sub->add_option("--flow", flags.flow, "conditional flow: spline | kernel | net")
      ->check(CLI::IsMember({"spline", "kernel", "net"}))
      ->capture_default_str();
  sub->add_option("--model", flags.model_path, "trained model file (required for --flow net)");
  sub->add_option("--sigma-min", flags.sigma_min, "noise scale at s = 0")->capture_default_str();
  sub->add_option("--sigma-max", flags.sigma_max, "noise scale at s = 1")->capture_default_str();
}

struct FlowBundle {
  DiffusionSchedule sched = DiffusionSchedule::log_linear_ve(5e-4, 5.0);
  std::shared_ptr<const ConditionalFlowField> flow;
};

FlowBundle build_flow(const FlowFlags& flags) {
  FlowBundle bundle;
  bundle.sched = DiffusionSchedule::log_linear_ve(flags.sigma_min, flags.sigma_max);
  if (flags.flow == "net") {
    if (flags.model_path.empty()) throw UsageError("--flow net requires --model");
    if (!fs::exists(flags.model_path))
      throw std::runtime_error("missing model file '" + flags.model_path +
                               "'; train one first: schedev train --out " + flags.model_path);
    bundle.flow = std::make_shared<TinyFlowField>(load_model(flags.model_path), bundle.sched);
    return bundle;
  }
  auto f0 = std::make_shared<MixtureImcfFlow>(toy_anchor_gmm(0.0), bundle.sched);
  auto f1 = std::make_shared<MixtureImcfFlow>(toy_anchor_gmm(1.0), bundle.sched);
  if (flags.flow == "kernel") {
    bundle.flow = std::make_shared<KernelGuidedFlow>(f0, f1, GuidanceKernel{});
  } else {
    std::vector<std::shared_ptr<const ConditionalFlowField>> base{f0, f1};
    bundle.flow = std::make_shared<SplineGuidedFlow>(SplineWeights::solve({0.0, 1.0}), base);
  }
  return bundle;
}

void check_z_range(const std::vector<double>& zs) {
  if (zs.empty()) throw UsageError("at least one --z value is required");
  for (double z : zs)
    if (!(z >= 0.0 && z <= 1.0)) throw UsageError("--z values must lie in [0, 1]");
}

nlohmann::json flow_flags_json(const FlowFlags& flags) {
  return {{"flow", flags.flow},
          {"model", flags.model_path},
          {"sigma_min", flags.sigma_min},
          {"sigma_max", flags.sigma_max}};
}

// ---- strict config-file parsing for the experiment subcommands ----

void require_known_keys(const nlohmann::json& obj, const std::string& prefix,
                        std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw UsageError("unknown config key: " + prefix + it.key());
  }
}

template <typename T>
void assign_key(const nlohmann::json& obj, const std::string& prefix, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("malformed config key: " + prefix + key);
  }
}

void parse_sd_config(const nlohmann::json& obj, SDConfig& sd) {
  require_known_keys(obj, "sd.",
                     {"n_outer", "n_imcf", "divergence_strategy", "fd_step", "s_grid",
                      "report_c2_one"});
  assign_key(obj, "sd.", "n_outer", sd.n_outer);
  assign_key(obj, "sd.", "n_imcf", sd.n_imcf);
  assign_key(obj, "sd.", "fd_step", sd.fd_step);
  assign_key(obj, "sd.", "s_grid", sd.s_grid);
  assign_key(obj, "sd.", "report_c2_one", sd.report_c2_one);
  std::string strategy;
  assign_key(obj, "sd.", "divergence_strategy", strategy);
  if (!strategy.empty()) {
    try {
      sd.divergence_strategy = divergence_strategy_from_string(strategy);
    } catch (const std::exception&) {
      throw UsageError("malformed config key: sd.divergence_strategy");
    }
  }
}

void parse_sampler_config(const nlohmann::json& obj, SamplerConfig& sampler) {
  require_known_keys(obj, "sampler.", {"algorithm", "steps", "ge_mu", "margin", "rng_seed"});
  assign_key(obj, "sampler.", "steps", sampler.steps);
  assign_key(obj, "sampler.", "ge_mu", sampler.ge_mu);
  assign_key(obj, "sampler.", "margin", sampler.margin);
  assign_key(obj, "sampler.", "rng_seed", sampler.rng_seed);
  std::string algorithm;
  assign_key(obj, "sampler.", "algorithm", algorithm);
  if (!algorithm.empty()) {
    try {
      sampler.algorithm = sampler_algorithm_from_string(algorithm);
    } catch (const std::exception&) {
      throw UsageError("malformed config key: sampler.algorithm");
    }
  }
}

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

// The flag wins over the config key; one of the two must be present.
std::uint64_t resolve_seed(const nlohmann::json& obj, bool seed_flag_set,
                           std::uint64_t seed_flag) {
  if (seed_flag_set) return seed_flag;
  if (obj.contains("seed")) {
    std::uint64_t seed = 0;
    assign_key(obj, "", "seed", seed);
    return seed;
  }
  throw UsageError("seed is required: pass --seed or a 'seed' config key");
}

Fig6Config parse_fig6_config(const nlohmann::json& obj, bool seed_flag_set,
                             std::uint64_t seed_flag) {
  require_known_keys(obj, "",
                     {"z_grid", "samples_per_z", "sd", "sampler", "model_path", "sigma_min",
                      "sigma_max", "seed"});
  Fig6Config config;
  assign_key(obj, "", "z_grid", config.z_grid);
  assign_key(obj, "", "samples_per_z", config.samples_per_z);
  assign_key(obj, "", "model_path", config.model_path);
  assign_key(obj, "", "sigma_min", config.sigma_min);
  assign_key(obj, "", "sigma_max", config.sigma_max);
  if (obj.contains("sd")) parse_sd_config(obj.at("sd"), config.sd);
  if (obj.contains("sampler")) parse_sampler_config(obj.at("sampler"), config.sampler);
  config.seed = resolve_seed(obj, seed_flag_set, seed_flag);
  return config;
}

CorrelationConfig parse_correlation_config(const nlohmann::json& obj, bool seed_flag_set,
                                           std::uint64_t seed_flag) {
  require_known_keys(obj, "",
                     {"exact_family", "z_points", "w1_samples", "sd", "sampler", "ge_mu",
                      "sigma_min", "sigma_max", "seed"});
  CorrelationConfig config;
  assign_key(obj, "", "exact_family", config.exact_family);
  assign_key(obj, "", "z_points", config.z_points);
  assign_key(obj, "", "w1_samples", config.w1_samples);
  assign_key(obj, "", "ge_mu", config.ge_mu);
  assign_key(obj, "", "sigma_min", config.sigma_min);
  assign_key(obj, "", "sigma_max", config.sigma_max);
  if (obj.contains("sd")) parse_sd_config(obj.at("sd"), config.sd);
  if (obj.contains("sampler")) parse_sampler_config(obj.at("sampler"), config.sampler);
  config.seed = resolve_seed(obj, seed_flag_set, seed_flag);
  return config;
}

// ---- subcommand bodies ----

void run_gen_dataset(const std::string& type, const std::string& out, std::uint64_t seed,
                     int count, const std::string& support, double noise_sigma,
                     const std::string& grid_path, int path_points, double bezier_noise) {
  auto rng = substream(seed, 0);
  if (type == "toy") {
    ToySpec spec;
    spec.support = support == "continuous" ? ToySupport::Continuous : ToySupport::Discrete;
    spec.noise_sigma = noise_sigma;
    spec.count = count;
    std::vector<ToySample> data = sample_toy(spec, rng);
    nlohmann::json config = {{"type", "toy"},       {"support", support},
                             {"noise_sigma", noise_sigma}, {"count", count},
                             {"seed", seed}};
    std::string csv = csv_echo("gen-dataset", config) + "z,x\n";
    for (const ToySample& sample : data)
      csv += g17(sample.z) + "," + g17(sample.x) + "\n";
    write_text(out, csv);
    return;
  }
  if (grid_path.empty()) throw UsageError("--type maze requires --grid");
  MazeSpec spec;
  spec.grid = MazeGrid::load(grid_path);
  spec.path_points = path_points;
  spec.bezier_noise = bezier_noise;
  MazeSampler sampler(spec);
  sampler.warm_up();
  nlohmann::json config = {{"type", "maze"},
                           {"grid", grid_path},
                           {"path_points", path_points},
                           {"bezier_noise", bezier_noise},
                           {"count", count},
                           {"seed", seed}};
  std::string csv = csv_echo("gen-dataset", config) + "z0,z1";
  for (int p = 0; p < path_points; ++p)
    csv += ",x" + std::to_string(p) + ",y" + std::to_string(p);
  csv += "\n";
  for (int i = 0; i < count; ++i) {
    MazeTrajectory trajectory = sampler.sample(rng);
    csv += g17(trajectory.z[0]) + "," + g17(trajectory.z[1]);
    for (double v : trajectory.points) csv += "," + g17(v);
    csv += "\n";
  }
  write_text(out, csv);
}

void run_train(const std::string& data_path, const std::string& out, const std::string& meta,
               std::uint64_t seed, TrainConfig config, int width, int embed_pairs,
               double sigma_min, double sigma_max) {
  CsvTable table = read_csv(data_path);
  std::size_t zi = column_index(table, "z", data_path);
  std::size_t xi = column_index(table, "x", data_path);
  std::vector<ToySample> data;
  data.reserve(table.rows.size());
  for (const std::vector<double>& row : table.rows) data.push_back({row[zi], row[xi]});
  if (data.empty()) throw std::runtime_error("'" + data_path + "' contains no samples");

  config.seed = seed;
  config.dataset_size = static_cast<int>(data.size());
  auto sched = DiffusionSchedule::log_linear_ve(sigma_min, sigma_max);
  TinyFlowNet net(width, embed_pairs);
  auto init_rng = substream(seed, 2);
  net.init(init_rng);
  TrainResult result = train(std::move(net), data, sched, config);
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_model(out, result.net);

  if (!meta.empty()) {
    nlohmann::json meta_json = {{"command", "train"},
                                {"config",
                                 {{"data", data_path},
                                  {"data_hash", "fnv1a64:" + file_hash_hex(data_path)},
                                  {"iterations", config.iterations},
                                  {"batch", config.batch},
                                  {"lr", config.lr},
                                  {"weight_decay", config.weight_decay},
                                  {"s_points", config.s_points},
                                  {"log_every", config.log_every},
                                  {"width", width},
                                  {"embed_pairs", embed_pairs},
                                  {"sigma_min", sigma_min},
                                  {"sigma_max", sigma_max},
                                  {"seed", seed}}},
                                {"model", out},
                                {"model_hash", "fnv1a64:" + file_hash_hex(out)},
                                {"loss_log", result.loss_log}};
    write_text(meta, meta_json.dump(2) + "\n");
  }
}

void run_sample(const FlowFlags& flags, const std::vector<double>& zs, int count,
                const std::string& algorithm, int steps, double ge_mu, std::uint64_t seed,
                const std::string& out, int threads) {
  check_z_range(zs);
  if (count < 1) throw UsageError("--count must be >= 1");
  FlowBundle bundle = build_flow(flags);
  SamplerConfig sampler;
  sampler.algorithm = sampler_algorithm_from_string(algorithm);
  sampler.steps = steps;
  sampler.ge_mu = ge_mu;

  nlohmann::json config = flow_flags_json(flags);
  config["z"] = zs;
  config["count"] = count;
  config["algorithm"] = algorithm;
  config["steps"] = steps;
  config["ge_mu"] = ge_mu;
  config["seed"] = seed;
  std::string csv = csv_echo("sample", config) + "z,sample_index,x\n";
  for (std::size_t k = 0; k < zs.size(); ++k) {
    std::vector<double> z{zs[k]};
    sampler.rng_seed = mix_seed(seed, k);
    SampleSet set = reverse_sample(*bundle.flow, z, sampler, count, threads);
    for (std::size_t i = 0; i < set.n(); ++i)
      csv += g17(zs[k]) + "," + std::to_string(i) + "," + g17(set.row(i)[0]) + "\n";
  }
  write_text(out, csv);
}

void run_sd(const FlowFlags& flags, const std::vector<double>& zs, const std::string& oracle,
            SDConfig sd, int s_points, const std::string& algorithm, int steps,
            std::uint64_t seed, const std::string& out, const std::string& summary_path,
            int threads) {
  check_z_range(zs);
  if (s_points != 16) sd.s_grid = time_grid(s_points);
  bool analytic = oracle == "analytic";
  if (analytic) {
    bool at_anchors = flags.flow == "spline" &&
                      std::all_of(zs.begin(), zs.end(),
                                  [](double z) { return z == 0.0 || z == 1.0; });
    if (!at_anchors)
      throw UsageError("--oracle analytic requires --flow spline with z values in {0, 1}");
  }
  FlowBundle bundle = build_flow(flags);
  SamplerConfig oracle_sampler;
  oracle_sampler.algorithm = sampler_algorithm_from_string(algorithm);
  oracle_sampler.steps = steps;

  nlohmann::json config = flow_flags_json(flags);
  config["z"] = zs;
  config["oracle"] = oracle;
  config["oracle_algorithm"] = algorithm;
  config["oracle_steps"] = steps;
  config["n_outer"] = sd.n_outer;
  config["n_imcf"] = sd.n_imcf;
  config["divergence_strategy"] = to_string(sd.divergence_strategy);
  config["fd_step"] = sd.fd_step;
  config["s_points"] = s_points;
  config["report_c2_one"] = sd.report_c2_one;
  config["seed"] = seed;

  std::string csv = csv_echo("sd", config) + "z,s,sd,stderr\n";
  nlohmann::json per_z = nlohmann::json::array();
  for (std::size_t k = 0; k < zs.size(); ++k) {
    std::vector<double> z{zs[k]};
    ImcfOracle imcf = [&] {
      if (analytic) return ImcfOracle::analytic(toy_anchor_gmm(zs[k]), bundle.sched);
      oracle_sampler.rng_seed = mix_seed(seed, 2 * k);
      return sampler_oracle(*bundle.flow, z, oracle_sampler, sd.n_imcf, threads);
    }();
    SDReport report =
        total_schedule_deviation(*bundle.flow, imcf, z, sd, mix_seed(seed, 2 * k + 1), threads);
    for (const SDPoint& point : report.per_s)
      csv += g17(zs[k]) + "," + g17(point.s) + "," + g17(point.sd) + "," + g17(point.mc_stderr) +
             "\n";
    per_z.push_back({{"z", zs[k]},
                     {"total_sd", report.total_sd},
                     {"total_stderr", report.total_stderr},
                     {"degenerate_oracle", report.degenerate_oracle}});
  }
  write_text(out, csv);
  if (!summary_path.empty()) {
    nlohmann::json summary = {{"command", "sd"}, {"config", config}, {"per_z", per_z}};
    write_text(summary_path, summary.dump(2) + "\n");
  }
}

void run_ot(const std::string& a_path, const std::string& b_path, const std::string& out) {
  auto load_samples = [](const std::string& path) {
    CsvTable table = read_csv(path);
    std::size_t xi = column_index(table, "x", path);
    SampleSet set(1);
    for (const std::vector<double>& row : table.rows) set.data.push_back(row[xi]);
    if (set.n() == 0) throw std::runtime_error("'" + path + "' contains no samples");
    return set;
  };
  SampleSet a = load_samples(a_path);
  SampleSet b = load_samples(b_path);
  if (a.n() != b.n())
    throw std::runtime_error("sample files must have equal counts (" + std::to_string(a.n()) +
                             " vs " + std::to_string(b.n()) + ")");
  double w1 = wasserstein1_1d(a, b);
  nlohmann::json result = {{"command", "ot"},
                           {"config", {{"a", a_path}, {"b", b_path}}},
                           {"count", a.n()},
                           {"w1", w1},
                           {"emd", a.n() <= 512 ? nlohmann::json(emd_exact(a, b))
                                                : nlohmann::json(nullptr)}};
  write_text(out, result.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"schedule-deviation toolkit for conditional flow models"};
  app.require_subcommand(1);

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "draw a toy or maze dataset and write it as CSV");
  std::string gen_type, gen_out, gen_support = "discrete", gen_grid;
  std::uint64_t gen_seed = 0;
  int gen_count = 1000, gen_path_points = 64;
  double gen_noise = ToySpec{}.noise_sigma, gen_bezier_noise = MazeSpec{}.bezier_noise;
  gen->add_option("--type", gen_type, "dataset family: toy | maze")
      ->check(CLI::IsMember({"toy", "maze"}))
      ->required();
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--seed", gen_seed, "rng seed")->required();
  gen->add_option("--count", gen_count, "number of draws")->capture_default_str();
  gen->add_option("--support", gen_support, "toy conditioning support: discrete | continuous")
      ->check(CLI::IsMember({"discrete", "continuous"}))
      ->capture_default_str();
  gen->add_option("--noise", gen_noise, "toy per-coordinate noise sigma")->capture_default_str();
  gen->add_option("--grid", gen_grid, "maze grid file ('#' wall, '.' open, 'G' goal)");
  gen->add_option("--path-points", gen_path_points, "maze trajectory points")
      ->capture_default_str();
  gen->add_option("--bezier-noise", gen_bezier_noise, "maze control-point noise variance")
      ->capture_default_str();
  gen->callback([&] {
    run_gen_dataset(gen_type, gen_out, gen_seed, gen_count, gen_support, gen_noise, gen_grid,
                    gen_path_points, gen_bezier_noise);
  });

  // train
  auto* tr = app.add_subcommand("train", "fit the conditional noise-prediction network");
  std::string tr_data, tr_out, tr_meta;
  std::uint64_t tr_seed = 0;
  TrainConfig tr_config;
  int tr_width = 64, tr_pairs = 16;
  double tr_sigma_min = 5e-4, tr_sigma_max = 5.0;
  tr->add_option("--data", tr_data, "training CSV with z,x columns")->required();
  tr->add_option("--out", tr_out, "output model path")->required();
  tr->add_option("--meta", tr_meta, "optional JSON training report path");
  tr->add_option("--seed", tr_seed, "rng seed")->required();
  tr->add_option("--iterations", tr_config.iterations, "optimizer steps")->capture_default_str();
  tr->add_option("--batch", tr_config.batch, "minibatch size")->capture_default_str();
  tr->add_option("--lr", tr_config.lr, "peak learning rate")->capture_default_str();
  tr->add_option("--weight-decay", tr_config.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  tr->add_option("--s-points", tr_config.s_points, "training time-grid points")
      ->capture_default_str();
  tr->add_option("--log-every", tr_config.log_every, "loss log stride")->capture_default_str();
  tr->add_option("--width", tr_width, "hidden width")->capture_default_str();
  tr->add_option("--embed-pairs", tr_pairs, "sin/cos frequency pairs")->capture_default_str();
  tr->add_option("--sigma-min", tr_sigma_min, "noise scale at s = 0")->capture_default_str();
  tr->add_option("--sigma-max", tr_sigma_max, "noise scale at s = 1")->capture_default_str();
  tr->callback([&] {
    run_train(tr_data, tr_out, tr_meta, tr_seed, tr_config, tr_width, tr_pairs, tr_sigma_min,
              tr_sigma_max);
  });

  // sample
  auto* sa = app.add_subcommand("sample", "reverse-sample a conditional flow");
  FlowFlags sa_flags;
  std::vector<double> sa_z;
  int sa_count = 1024, sa_steps = 64, sa_threads = 0;
  double sa_ge_mu = 2.0;
  std::string sa_algorithm = "ddpm", sa_out;
  std::uint64_t sa_seed = 0;
  add_flow_flags(sa, sa_flags);
  sa->add_option("--z", sa_z, "conditioning values in [0, 1]")->required();
  sa->add_option("--count", sa_count, "samples per conditioning value")->capture_default_str();
  sa->add_option("--algorithm", sa_algorithm, "reverse sampler: ddpm | ddim | ge")
      ->check(CLI::IsMember({"ddpm", "ddim", "ge"}))
      ->capture_default_str();
  sa->add_option("--steps", sa_steps, "reverse steps")->capture_default_str();
  sa->add_option("--ge-mu", sa_ge_mu, "ge sampler churn")->capture_default_str();
  sa->add_option("--seed", sa_seed, "rng seed")->required();
  sa->add_option("--out", sa_out, "output CSV path")->required();
  sa->add_option("--threads", sa_threads, "worker threads (0 = SCHEDEV_THREADS or hardware)")
      ->capture_default_str();
  sa->callback([&] {
    run_sample(sa_flags, sa_z, sa_count, sa_algorithm, sa_steps, sa_ge_mu, sa_seed, sa_out,
               sa_threads);
  });

  // sd
  auto* sd_cmd = app.add_subcommand("sd", "measure schedule deviation over conditioning values");
  FlowFlags sd_flags;
  std::vector<double> sd_z;
  std::string sd_oracle = "sampled", sd_strategy = "fd", sd_algorithm = "ddpm";
  std::string sd_out, sd_summary;
  SDConfig sd_config;
  int sd_s_points = 16, sd_steps = 64, sd_threads = 0;
  bool sd_apply_c2 = false;
  std::uint64_t sd_seed = 0;
  add_flow_flags(sd_cmd, sd_flags);
  sd_cmd->add_option("--z", sd_z, "conditioning values in [0, 1]")->required();
  sd_cmd->add_option("--oracle", sd_oracle, "reference: sampled | analytic")
      ->check(CLI::IsMember({"sampled", "analytic"}))
      ->capture_default_str();
  sd_cmd->add_option("--n-outer", sd_config.n_outer, "Monte-Carlo probes per time point")
      ->capture_default_str();
  sd_cmd->add_option("--n-imcf", sd_config.n_imcf, "terminal samples behind the sampled oracle")
      ->capture_default_str();
  sd_cmd->add_option("--strategy", sd_strategy, "divergence estimator: fd | analytic | random")
      ->check(CLI::IsMember({"fd", "analytic", "random"}))
      ->capture_default_str();
  sd_cmd->add_option("--fd-step", sd_config.fd_step, "relative finite-difference step")
      ->capture_default_str();
  sd_cmd->add_option("--s-points", sd_s_points, "interior time-grid points")
      ->capture_default_str();
  sd_cmd->add_flag("--apply-c2", sd_apply_c2,
                   "scale by the schedule constant instead of reporting c2 = 1 units");
  sd_cmd->add_option("--algorithm", sd_algorithm, "oracle terminal sampler: ddpm | ddim | ge")
      ->check(CLI::IsMember({"ddpm", "ddim", "ge"}))
      ->capture_default_str();
  sd_cmd->add_option("--steps", sd_steps, "oracle reverse steps")->capture_default_str();
  sd_cmd->add_option("--seed", sd_seed, "rng seed")->required();
  sd_cmd->add_option("--out", sd_out, "output CSV path")->required();
  sd_cmd->add_option("--summary", sd_summary, "optional JSON totals path");
  sd_cmd->add_option("--threads", sd_threads, "worker threads (0 = SCHEDEV_THREADS or hardware)")
      ->capture_default_str();
  sd_cmd->callback([&] {
    sd_config.divergence_strategy = divergence_strategy_from_string(sd_strategy);
    sd_config.report_c2_one = !sd_apply_c2;
    run_sd(sd_flags, sd_z, sd_oracle, sd_config, sd_s_points, sd_algorithm, sd_steps, sd_seed,
           sd_out, sd_summary, sd_threads);
  });

  // ot
  auto* ot = app.add_subcommand("ot", "transport distance between two sample CSVs");
  std::string ot_a, ot_b, ot_out;
  ot->add_option("--a", ot_a, "first sample CSV")->required();
  ot->add_option("--b", ot_b, "second sample CSV")->required();
  ot->add_option("--out", ot_out, "output JSON path")->required();
  ot->callback([&] { run_ot(ot_a, ot_b, ot_out); });

  // experiment
  auto* exp = app.add_subcommand("experiment", "scripted comparison runs");
  exp->require_subcommand(1);
  std::string exp_config_path, exp_out;
  std::uint64_t exp_seed = 0;
  int exp_threads = 0;
  auto add_experiment_flags = [&](CLI::App* sub) {
    sub->add_option("--config", exp_config_path, "JSON config file (documented keys)");
    sub->add_option("--out", exp_out, "output directory")->required();
    sub->add_option("--seed", exp_seed, "rng seed (overrides the config key)");
    sub->add_option("--threads", exp_threads,
                    "worker threads (0 = SCHEDEV_THREADS or hardware)")
        ->capture_default_str();
  };
  auto* fig = exp->add_subcommand("fig6", "closed-form and learned guide comparison");
  add_experiment_flags(fig);
  fig->callback([&] {
    nlohmann::json obj = load_config_file(exp_config_path);
    Fig6Config config = parse_fig6_config(obj, fig->count("--seed") > 0, exp_seed);
    write_fig6(run_fig6(config, exp_threads), config, exp_out);
  });
  auto* corr = exp->add_subcommand("correlate", "deviation versus sampler disagreement sweep");
  add_experiment_flags(corr);
  corr->callback([&] {
    nlohmann::json obj = load_config_file(exp_config_path);
    CorrelationConfig config = parse_correlation_config(obj, corr->count("--seed") > 0, exp_seed);
    write_correlation(run_correlation_sweep(config, exp_threads), config, exp_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    std::vector<std::string> extras = app.remaining(true);
    if (!extras.empty()) {
      message += "; unrecognized: " + extras.front();
      message += "; subcommands are gen-dataset, train, sample, sd, ot, experiment";
    }
    emit_error(message);
    return 2;
  } catch (const UsageError& e) {
    emit_error(e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error(e.what());
    return 1;
  }
  return 0;
}

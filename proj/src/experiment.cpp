#include "schedev/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "schedev/interpolant.hpp"
#include "schedev/parallel.hpp"
#include "schedev/rng.hpp"
#include "schedev/tinyflow.hpp"
#include "schedev/transport.hpp"

namespace schedev {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Toy anchor conditionals: z = 0 is N(-1, 0.01), z = 1 the even mixture of
// N(0, 0.01) and N(1, 0.01).
GaussianMixtureModel anchor_gmm(int which) {
  if (which == 0) return GaussianMixtureModel({{1.0, {-1.0}, 0.01}});
  return GaussianMixtureModel({{0.5, {0.0}, 0.01}, {0.5, {1.0}, 0.01}});
}

// Zero-deviation control family: a bimodal law sliding with z, always paired
// with its own analytic oracle.
GaussianMixtureModel exact_family_gmm(double z) {
  return GaussianMixtureModel({{0.5, {z - 1.0}, 0.01}, {0.5, {z}, 0.01}});
}

// One block of eight decorrelated seed channels per work item.
std::uint64_t item_seed(std::uint64_t seed, std::size_t item, std::uint64_t channel) {
  return mix_seed(seed, item * 8 + channel);
}

std::vector<double> linspace01(int n) {
  std::vector<double> zs(n);
  for (int k = 0; k < n; ++k) zs[k] = static_cast<double>(k) / (n - 1);
  return zs;
}

nlohmann::json sampler_to_json(const SamplerConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"steps", c.steps},
          {"ge_mu", c.ge_mu},
          {"margin", c.effective_margin()},
          {"rng_seed", c.rng_seed}};
}

nlohmann::json sd_to_json(const SDConfig& c) {
  return {{"n_outer", c.n_outer},
          {"n_imcf", c.n_imcf},
          {"divergence_strategy", to_string(c.divergence_strategy)},
          {"fd_step", c.fd_step},
          {"s_grid", c.effective_s_grid()},
          {"report_c2_one", c.report_c2_one}};
}

nlohmann::json fig6_config_json(const Fig6Config& c) {
  return {{"z_grid", c.effective_z_grid()},
          {"samples_per_z", c.samples_per_z},
          {"sd", sd_to_json(c.sd)},
          {"sampler", sampler_to_json(c.sampler)},
          {"model_path", c.model_path},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"seed", c.seed}};
}

nlohmann::json correlation_config_json(const CorrelationConfig& c) {
  return {{"exact_family", c.exact_family},
          {"z_points", c.z_points},
          {"w1_samples", c.w1_samples},
          {"sd", sd_to_json(c.sd)},
          {"sampler", sampler_to_json(c.sampler)},
          {"ge_mu", c.ge_mu},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"seed", c.seed}};
}

// Echo block placed at the top of every CSV; the one-line JSON dump keeps the
// echo exact without a second key=value syntax.
std::string csv_header(const std::string& experiment, const nlohmann::json& config) {
  std::string out = "# schedev " + experiment + "\n";
  out += "# config " + config.dump() + "\n";
  return out;
}

std::string hash_label(const std::string& content) {
  auto bytes = std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(content.data()), content.size());
  return "fnv1a64:" + content_hash_hex(bytes);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

// Writes the named contents plus manifest.json listing config, input hashes
// and output hashes.
void write_bundle(const std::string& experiment, const nlohmann::json& config_json,
                  const nlohmann::json& inputs, const std::string& out_dir,
                  const std::vector<std::pair<std::string, std::string>>& files) {
  std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  nlohmann::json outputs;
  for (const auto& [name, content] : files) {
    write_file(dir / name, content);
    outputs[name] = hash_label(content);
  }
  nlohmann::json manifest = {{"experiment", experiment},
                             {"config", config_json},
                             {"inputs", inputs},
                             {"outputs", outputs}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<double> midranks(std::span<const double> v) {
  std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // midrank, 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SamplerConfig Fig6Config::ddpm_sampler() {
  SamplerConfig c;
  c.algorithm = SamplerAlgorithm::DDPM;
  return c;
}

void Fig6Config::validate() const {
  if (samples_per_z < 1) throw std::invalid_argument("samples_per_z must be >= 1");
  for (double z : effective_z_grid())
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("z grid values must lie in [0, 1]");
  sd.validate();
  sampler.validate();
}

std::vector<double> Fig6Config::effective_z_grid() const {
  if (!z_grid.empty()) return z_grid;
  return linspace01(9);
}

void CorrelationConfig::validate() const {
  if (z_points < 2) throw std::invalid_argument("z_points must be >= 2");
  if (w1_samples < 1) throw std::invalid_argument("w1_samples must be >= 1");
  sd.validate();
  sampler.validate();
}

Fig6Result run_fig6(const Fig6Config& config, int threads) {
  config.validate();
  auto sched = DiffusionSchedule::log_linear_ve(config.sigma_min, config.sigma_max);
  auto f0 = std::make_shared<MixtureImcfFlow>(anchor_gmm(0), sched);
  auto f1 = std::make_shared<MixtureImcfFlow>(anchor_gmm(1), sched);
  std::vector<std::shared_ptr<const ConditionalFlowField>> anchors{f0, f1};
  SplineGuidedFlow spline(SplineWeights::solve({0.0, 1.0}), anchors);
  KernelGuidedFlow kernel(f0, f1, GuidanceKernel{});

  struct Method {
    std::string name;
    const ConditionalFlowField* flow;
    bool anchor_exact;  // at a knot the flow is the anchor flow bitwise
  };
  std::vector<Method> methods{{"spline", &spline, true}, {"kernel", &kernel, false}};

  std::optional<TinyFlowField> net_flow;
  if (!config.model_path.empty()) {
    if (!std::filesystem::exists(config.model_path))
      throw std::runtime_error("missing model file '" + config.model_path +
                               "'; train one first: schedev train --out " + config.model_path);
    net_flow.emplace(load_model(config.model_path), sched);
    methods.push_back({"net", &*net_flow, false});
  }

  std::vector<double> zs = config.effective_z_grid();
  Fig6Result result;
  result.runs.resize(methods.size() * zs.size());
  // Item index mi * |zs| + k is stable, so closed-form results do not move
  // when the trained method is added.
  parallel_for(result.runs.size(), threads, [&](std::size_t g) {
    std::size_t mi = g / zs.size(), k = g % zs.size();
    const Method& method = methods[mi];
    double zv = zs[k];
    std::vector<double> z{zv};

    SamplerConfig sample_cfg = config.sampler;
    sample_cfg.rng_seed = item_seed(config.seed, g, 0);
    Fig6Run& run = result.runs[g];
    run.method = method.name;
    run.z = zv;
    run.samples = reverse_sample(*method.flow, z, sample_cfg, config.samples_per_z, 1);

    bool analytic = method.anchor_exact && (zv == 0.0 || zv == 1.0);
    run.oracle = analytic ? "analytic" : "sampled";
    ImcfOracle oracle = [&] {
      if (analytic) return ImcfOracle::analytic(anchor_gmm(zv == 0.0 ? 0 : 1), sched);
      SamplerConfig oracle_cfg = config.sampler;
      oracle_cfg.rng_seed = item_seed(config.seed, g, 1);
      return sampler_oracle(*method.flow, z, oracle_cfg, config.sd.n_imcf, 1);
    }();
    run.sd = total_schedule_deviation(*method.flow, oracle, z, config.sd,
                                      item_seed(config.seed, g, 2), 1);
  });
  return result;
}

CorrelationResult run_correlation_sweep(const CorrelationConfig& config, int threads) {
  config.validate();
  auto sched = DiffusionSchedule::log_linear_ve(config.sigma_min, config.sigma_max);
  auto f0 = std::make_shared<MixtureImcfFlow>(anchor_gmm(0), sched);
  auto f1 = std::make_shared<MixtureImcfFlow>(anchor_gmm(1), sched);
  std::vector<std::shared_ptr<const ConditionalFlowField>> anchors{f0, f1};
  std::optional<SplineGuidedFlow> mixed;
  if (!config.exact_family) mixed.emplace(SplineWeights::solve({0.0, 1.0}), anchors);

  std::vector<double> zs = linspace01(config.z_points);
  CorrelationResult result;
  result.rows.resize(zs.size());
  parallel_for(zs.size(), threads, [&](std::size_t k) {
    double zv = zs[k];
    std::vector<double> z{zv};
    std::optional<MixtureImcfFlow> exact;
    if (config.exact_family) exact.emplace(exact_family_gmm(zv), sched);
    const ConditionalFlowField& flow =
        config.exact_family ? static_cast<const ConditionalFlowField&>(*exact) : *mixed;

    auto sampler_cfg = [&](SamplerAlgorithm algo, std::uint64_t channel) {
      SamplerConfig c = config.sampler;
      c.algorithm = algo;
      c.ge_mu = config.ge_mu;
      c.rng_seed = item_seed(config.seed, k, channel);
      return c;
    };
    SampleSet ddpm = reverse_sample(flow, z, sampler_cfg(SamplerAlgorithm::DDPM, 0),
                                    config.w1_samples, 1);
    SampleSet ddim = reverse_sample(flow, z, sampler_cfg(SamplerAlgorithm::DDIM, 1),
                                    config.w1_samples, 1);
    SampleSet ge = reverse_sample(flow, z, sampler_cfg(SamplerAlgorithm::GE, 2),
                                  config.w1_samples, 1);

    ImcfOracle oracle =
        config.exact_family
            ? ImcfOracle::analytic(exact_family_gmm(zv), sched)
            : sampler_oracle(flow, z, sampler_cfg(SamplerAlgorithm::DDPM, 3), config.sd.n_imcf, 1);
    SDReport report =
        total_schedule_deviation(flow, oracle, z, config.sd, item_seed(config.seed, k, 4), 1);

    result.rows[k] = {zv, report.total_sd, report.total_stderr, wasserstein1_1d(ddpm, ddim),
                      wasserstein1_1d(ddpm, ge)};
  });

  std::vector<double> sd_col, ddim_col, ge_col;
  for (const CorrelationRow& row : result.rows) {
    sd_col.push_back(row.total_sd);
    ddim_col.push_back(row.w1_ddpm_ddim);
    ge_col.push_back(row.w1_ddpm_ge);
  }
  result.spearman_ddim = spearman(sd_col, ddim_col);
  result.spearman_ge = spearman(sd_col, ge_col);
  return result;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("spearman inputs must have equal length");
  std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  auto constant = [](std::span<const double> v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(a) || constant(b)) return std::nullopt;
  std::vector<double> ra = midranks(a), rb = midranks(b);
  double mean = 0.5 * static_cast<double>(n + 1);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double da = ra[i] - mean, db = rb[i] - mean;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return cov / std::sqrt(va * vb);
}

std::string content_hash_hex(std::span<const unsigned char> bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::string content = buffer.str();
  return content_hash_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(content.data()), content.size()));
}

void write_fig6(const Fig6Result& result, const Fig6Config& config, const std::string& out_dir) {
  nlohmann::json config_json = fig6_config_json(config);
  std::string header = csv_header("fig6", config_json);

  std::string samples = header + "method,z,sample_index,x\n";
  std::string profile = header + "method,z,s,sd,stderr\n";
  std::string totals = header + "method,z,total_sd,total_stderr,oracle,degenerate_oracle\n";
  for (const Fig6Run& run : result.runs) {
    for (std::size_t i = 0; i < run.samples.n(); ++i)
      samples += run.method + "," + g17(run.z) + "," + std::to_string(i) + "," +
                 g17(run.samples.row(i)[0]) + "\n";
    for (const SDPoint& point : run.sd.per_s)
      profile += run.method + "," + g17(run.z) + "," + g17(point.s) + "," + g17(point.sd) + "," +
                 g17(point.mc_stderr) + "\n";
    totals += run.method + "," + g17(run.z) + "," + g17(run.sd.total_sd) + "," +
              g17(run.sd.total_stderr) + "," + run.oracle + "," +
              (run.sd.degenerate_oracle ? "1" : "0") + "\n";
  }

  nlohmann::json inputs = nlohmann::json::object();
  if (!config.model_path.empty())
    inputs[config.model_path] = "fnv1a64:" + file_hash_hex(config.model_path);
  write_bundle("fig6", config_json, inputs, out_dir,
               {{"fig6_samples.csv", samples},
                {"fig6_sd_profile.csv", profile},
                {"fig6_totals.csv", totals}});
}

void write_correlation(const CorrelationResult& result, const CorrelationConfig& config,
                       const std::string& out_dir) {
  nlohmann::json config_json = correlation_config_json(config);
  std::string table = csv_header("correlate", config_json) +
                      "z,total_sd,sd_stderr,w1_ddpm_ddim,w1_ddpm_ge\n";
  for (const CorrelationRow& row : result.rows)
    table += g17(row.z) + "," + g17(row.total_sd) + "," + g17(row.sd_stderr) + "," +
             g17(row.w1_ddpm_ddim) + "," + g17(row.w1_ddpm_ge) + "\n";

  auto or_null = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json summary = {{"experiment", "correlate"},
                            {"z_points", config.z_points},
                            {"spearman_sd_w1_ddpm_ddim", or_null(result.spearman_ddim)},
                            {"spearman_sd_w1_ddpm_ge", or_null(result.spearman_ge)}};
  write_bundle("correlate", config_json, nlohmann::json::object(), out_dir,
               {{"correlation.csv", table}, {"summary.json", summary.dump(2) + "\n"}});
}

}  // namespace schedev

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "schedev/sampler.hpp"
#include "schedev/sd.hpp"

namespace schedev {

// Toy-anchor comparison: closed-form guides between the two anchor
// conditionals (spline and kernel weighted), plus an optional trained
// network, each sampled and profiled for schedule deviation over a z grid.
struct Fig6Config {
  std::vector<double> z_grid;  // default: 9 evenly spaced points on [0, 1]
  int samples_per_z = 1024;
  SDConfig sd;  // sd.n_imcf also sizes the sampled-terminal oracle
  // Reverse-sampler settings shared by all methods. The stochastic default is
  // deliberate: deterministic variants transport the prior's mean/width
  // mismatch to s = 0, which biases narrow-component terminal moments.
  SamplerConfig sampler = ddpm_sampler();
  std::string model_path;  // when set, adds the trained-network method
  double sigma_min = 5e-4, sigma_max = 5.0;
  std::uint64_t seed = 0;

  static SamplerConfig ddpm_sampler();
  void validate() const;
  std::vector<double> effective_z_grid() const;
};

struct Fig6Run {
  std::string method;  // "spline", "kernel", "net"
  double z = 0.0;
  SampleSet samples{1};
  SDReport sd;
  std::string oracle;  // "analytic" or "sampled"
};

struct Fig6Result {
  std::vector<Fig6Run> runs;
};

// At a knot the spline guide is the anchor flow itself, so those points use
// the analytic anchor oracle (and come out exactly zero); every other
// (method, z) is measured against the flow's own sampled terminals.
Fig6Result run_fig6(const Fig6Config& config, int threads = 0);

// Deviation-versus-sampler-disagreement sweep: per z, total SD against the
// stochastic sampler's own terminals, then 1-Wasserstein distances between
// sampler variants, then the rank correlation across the grid.
struct CorrelationConfig {
  // Exact family: per-z closed-form flows against their analytic oracle, the
  // zero-deviation control. Otherwise the spline-guided mixed family.
  bool exact_family = false;
  int z_points = 32;
  int w1_samples = 2048;
  SDConfig sd;            // sd.n_imcf also sizes the sampled-terminal oracle
  SamplerConfig sampler;  // step/margin settings shared by all samplers
  double ge_mu = 2.0;
  double sigma_min = 5e-4, sigma_max = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorrelationRow {
  double z = 0.0;
  double total_sd = 0.0, sd_stderr = 0.0;
  double w1_ddpm_ddim = 0.0, w1_ddpm_ge = 0.0;
};

struct CorrelationResult {
  std::vector<CorrelationRow> rows;
  // Unset when a rank vector is constant (correlation undefined).
  std::optional<double> spearman_ddim, spearman_ge;
};

CorrelationResult run_correlation_sweep(const CorrelationConfig& config, int threads = 0);

// Spearman rank correlation with midranks for ties; nullopt for constant
// input.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

// FNV-1a 64-bit content hash as fixed-width hex.
std::string content_hash_hex(std::span<const unsigned char> bytes);
std::string file_hash_hex(const std::string& path);

// CSV bundles plus a manifest echoing the config, seed, and per-file hashes.
// Reruns with an identical config and seed reproduce every byte.
void write_fig6(const Fig6Result& result, const Fig6Config& config, const std::string& out_dir);
void write_correlation(const CorrelationResult& result, const CorrelationConfig& config,
                       const std::string& out_dir);

}  // namespace schedev

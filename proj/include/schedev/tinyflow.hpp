#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "schedev/dataset.hpp"
#include "schedev/flow.hpp"
#include "schedev/schedule.hpp"

namespace schedev {

// Five fully-connected layers (2 -> width -> ... -> width -> 1) with GELU
// activations. A sin/cos embedding of s (geometric frequencies over
// [1, 1000]) is mapped through a learned affine layer to `width` features;
// each hidden pre-activation is FiLM-modulated by scales and shifts that are
// learned affine functions of that embedding. Scales are parameterized as
// 1 + raw, so a zero-initialized modulator is the identity. The final layer
// starts at zero, making the freshly initialized network output zero
// everywhere.
class TinyFlowNet {
 public:
  explicit TinyFlowNet(int width = 64, int embed_pairs = 16);

  int width() const { return width_; }
  int embed_pairs() const { return embed_pairs_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  // Named half-open index ranges covering the parameter vector.
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> parameter_groups()
      const;

  // He-initializes the trunk, leaves modulators and the final layer at zero.
  void init(std::mt19937_64& rng);

  // Predicted noise for a single (x, z, s).
  double forward(double x, double z, double s) const;

  // Mean squared error against the drawn noise over the batch, with the
  // gradient accumulated into `grad` (resized and zeroed here). Per item:
  // s uniform over s_grid, xi standard normal, input x0 + sigma(s) xi.
  double loss_and_grad(std::span<const ToySample> batch, const DiffusionSchedule& sched,
                       std::span<const double> s_grid, std::mt19937_64& rng,
                       std::vector<double>& grad) const;

 private:
  int width_, embed_pairs_;
  std::vector<double> params_;

  friend struct TinyFlowLayout;
};

// Adam with decoupled weight decay: theta -= lr * (mhat / (sqrt(vhat) + eps)
// + decay * theta), applied to every parameter.
struct AdamWState {
  explicit AdamWState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};
void adamw_step(std::vector<double>& params, const std::vector<double>& grad, AdamWState& state,
                double lr, double weight_decay);

struct TrainConfig {
  int iterations = 10000;
  int batch = 128;
  double lr = 4e-3;  // cosine-decayed to zero over the run
  double weight_decay = 0.01;
  int dataset_size = 100000;
  int s_points = 128;  // uniform training grid for s
  int log_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  TinyFlowNet net;
  std::vector<double> loss_log;  // one entry per log_every iterations
};

// Runs the optimizer schedule over minibatches drawn with replacement.
// Throws TrainingDivergedError with the failing iteration index.
TrainResult train(TinyFlowNet net, const std::vector<ToySample>& data,
                  const DiffusionSchedule& sched, const TrainConfig& config);

// The trained network as a scalar conditional flow field. Divergence is left
// to the finite-difference strategy: in one dimension the trace is a single
// central difference.
class TinyFlowField : public ConditionalFlowField {
 public:
  TinyFlowField(TinyFlowNet net, DiffusionSchedule sched);

  int dim() const override { return 1; }
  void epsilon(std::span<const double> x, std::span<const double> z, double s,
               std::span<double> out) const override;
  const TinyFlowNet& net() const { return net_; }

 private:
  TinyFlowNet net_;
};

// Versioned binary model format: magic, version, width, embed pairs, then the
// little-endian parameter array.
void save_model(const std::string& path, const TinyFlowNet& net);
TinyFlowNet load_model(const std::string& path);

}  // namespace schedev

#include "schedev/tinyflow.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "schedev/errors.hpp"
#include "schedev/rng.hpp"

namespace schedev {

// Flat parameter offsets. Trunk layer i reads h_{i-1} (h_{-1} is the (x, z)
// input pair); A/a produce the raw FiLM scale, B/c the shift.
struct TinyFlowLayout {
  struct Layer {
    std::size_t w, b, A, a, B, c;
    int fan_in;
  };
  int width, feat;
  std::size_t embed_w, embed_b;
  Layer layer[4];
  std::size_t out_w, out_b, total;

  TinyFlowLayout(int width, int embed_pairs) : width(width), feat(2 * embed_pairs) {
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      std::size_t off = at;
      at += n;
      return off;
    };
    embed_w = take(static_cast<std::size_t>(width) * feat);
    embed_b = take(width);
    for (int i = 0; i < 4; ++i) {
      Layer& l = layer[i];
      l.fan_in = i == 0 ? 2 : width;
      l.w = take(static_cast<std::size_t>(width) * l.fan_in);
      l.b = take(width);
      l.A = take(static_cast<std::size_t>(width) * width);
      l.a = take(width);
      l.B = take(static_cast<std::size_t>(width) * width);
      l.c = take(width);
    }
    out_w = take(width);
    out_b = take(1);
    total = at;
  }
};

namespace {

double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_prime(double x) {
  double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void time_features(double s, int pairs, double* f) {
  for (int k = 0; k < pairs; ++k) {
    double lam = pairs == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(k) / (pairs - 1));
    f[2 * k] = std::sin(lam * s);
    f[2 * k + 1] = std::cos(lam * s);
  }
}

// Activations kept for the backward pass.
struct Trace {
  std::vector<double> f, e;
  double input[2];
  std::vector<double> u[4], gam[4], m[4], h[4];
  double y = 0.0;
};

void forward_trace(const TinyFlowLayout& L, const double* p, double x, double z, double s,
                   Trace& t) {
  int W = L.width;
  t.f.resize(L.feat);
  time_features(s, L.feat / 2, t.f.data());
  t.e.assign(W, 0.0);
  for (int r = 0; r < W; ++r) {
    double acc = p[L.embed_b + r];
    const double* row = p + L.embed_w + static_cast<std::size_t>(r) * L.feat;
    for (int c = 0; c < L.feat; ++c) acc += row[c] * t.f[c];
    t.e[r] = acc;
  }
  t.input[0] = x;
  t.input[1] = z;
  const double* h_prev = t.input;
  for (int i = 0; i < 4; ++i) {
    const auto& l = L.layer[i];
    t.u[i].resize(W);
    t.gam[i].resize(W);
    t.m[i].resize(W);
    t.h[i].resize(W);
    for (int r = 0; r < W; ++r) {
      double acc = p[l.b + r];
      const double* row = p + l.w + static_cast<std::size_t>(r) * l.fan_in;
      for (int c = 0; c < l.fan_in; ++c) acc += row[c] * h_prev[c];
      t.u[i][r] = acc;
    }
    for (int r = 0; r < W; ++r) {
      double graw = p[l.a + r], beta = p[l.c + r];
      const double* arow = p + l.A + static_cast<std::size_t>(r) * W;
      const double* brow = p + l.B + static_cast<std::size_t>(r) * W;
      for (int c = 0; c < W; ++c) {
        graw += arow[c] * t.e[c];
        beta += brow[c] * t.e[c];
      }
      t.gam[i][r] = 1.0 + graw;
      t.m[i][r] = t.gam[i][r] * t.u[i][r] + beta;
      t.h[i][r] = gelu(t.m[i][r]);
    }
    h_prev = t.h[i].data();
  }
  double acc = p[L.out_b];
  for (int c = 0; c < W; ++c) acc += p[L.out_w + c] * t.h[3][c];
  t.y = acc;
}

// Accumulates d(loss)/d(params) for one item given d(loss)/dy.
void backward_trace(const TinyFlowLayout& L, const double* p, const Trace& t, double gy,
                    double* grad) {
  int W = L.width;
  std::vector<double> gh(W), gm(W), gu(W), gh_prev(W), ge(W, 0.0);
  for (int c = 0; c < W; ++c) {
    grad[L.out_w + c] += gy * t.h[3][c];
    gh[c] = p[L.out_w + c] * gy;
  }
  grad[L.out_b] += gy;
  for (int i = 3; i >= 0; --i) {
    const auto& l = L.layer[i];
    for (int r = 0; r < W; ++r) {
      gm[r] = gh[r] * gelu_prime(t.m[i][r]);
      double ggam = gm[r] * t.u[i][r];
      double gbeta = gm[r];
      grad[l.a + r] += ggam;
      grad[l.c + r] += gbeta;
      double* garow = grad + l.A + static_cast<std::size_t>(r) * W;
      double* gbrow = grad + l.B + static_cast<std::size_t>(r) * W;
      const double* arow = p + l.A + static_cast<std::size_t>(r) * W;
      const double* brow = p + l.B + static_cast<std::size_t>(r) * W;
      for (int c = 0; c < W; ++c) {
        garow[c] += ggam * t.e[c];
        gbrow[c] += gbeta * t.e[c];
        ge[c] += arow[c] * ggam + brow[c] * gbeta;
      }
      gu[r] = gm[r] * t.gam[i][r];
    }
    const double* h_prev = i == 0 ? t.input : t.h[i - 1].data();
    if (i > 0) gh_prev.assign(W, 0.0);
    for (int r = 0; r < W; ++r) {
      grad[l.b + r] += gu[r];
      double* grow = grad + l.w + static_cast<std::size_t>(r) * l.fan_in;
      const double* row = p + l.w + static_cast<std::size_t>(r) * l.fan_in;
      for (int c = 0; c < l.fan_in; ++c) grow[c] += gu[r] * h_prev[c];
      if (i > 0)
        for (int c = 0; c < W; ++c) gh_prev[c] += row[c] * gu[r];
    }
    if (i > 0) gh.swap(gh_prev);
  }
  for (int r = 0; r < W; ++r) {
    grad[L.embed_b + r] += ge[r];
    double* grow = grad + L.embed_w + static_cast<std::size_t>(r) * L.feat;
    for (int c = 0; c < L.feat; ++c) grow[c] += ge[r] * t.f[c];
  }
}

}  // namespace

TinyFlowNet::TinyFlowNet(int width, int embed_pairs) : width_(width), embed_pairs_(embed_pairs) {
  if (width < 1 || embed_pairs < 1)
    throw std::invalid_argument("network width and embedding pair count must be positive");
  params_.assign(TinyFlowLayout(width, embed_pairs).total, 0.0);
}

std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
TinyFlowNet::parameter_groups() const {
  TinyFlowLayout L(width_, embed_pairs_);
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> groups;
  groups.push_back({"embed_w", {L.embed_w, L.embed_b}});
  groups.push_back({"embed_b", {L.embed_b, L.layer[0].w}});
  for (int i = 0; i < 4; ++i) {
    const auto& l = L.layer[i];
    std::string n = std::to_string(i + 1);
    groups.push_back({"w" + n, {l.w, l.b}});
    groups.push_back({"b" + n, {l.b, l.A}});
    groups.push_back({"film_scale_w" + n, {l.A, l.a}});
    groups.push_back({"film_scale_b" + n, {l.a, l.B}});
    groups.push_back({"film_shift_w" + n, {l.B, l.c}});
    groups.push_back({"film_shift_b" + n, {l.c, i == 3 ? L.out_w : L.layer[i + 1].w}});
  }
  groups.push_back({"out_w", {L.out_w, L.out_b}});
  groups.push_back({"out_b", {L.out_b, L.total}});
  return groups;
}

void TinyFlowNet::init(std::mt19937_64& rng) {
  TinyFlowLayout L(width_, embed_pairs_);
  std::fill(params_.begin(), params_.end(), 0.0);
  double embed_std = 1.0 / std::sqrt(static_cast<double>(L.feat));
  for (std::size_t k = 0; k < static_cast<std::size_t>(width_) * L.feat; ++k)
    params_[L.embed_w + k] = embed_std * draw_normal(rng);
  for (int i = 0; i < 4; ++i) {
    const auto& l = L.layer[i];
    double std = std::sqrt(2.0 / l.fan_in);
    for (std::size_t k = 0; k < static_cast<std::size_t>(width_) * l.fan_in; ++k)
      params_[l.w + k] = std * draw_normal(rng);
  }
}

double TinyFlowNet::forward(double x, double z, double s) const {
  TinyFlowLayout L(width_, embed_pairs_);
  Trace t;
  forward_trace(L, params_.data(), x, z, s, t);
  return t.y;
}

double TinyFlowNet::loss_and_grad(std::span<const ToySample> batch,
                                  const DiffusionSchedule& sched, std::span<const double> s_grid,
                                  std::mt19937_64& rng, std::vector<double>& grad) const {
  if (batch.empty()) throw std::invalid_argument("training batch is empty");
  if (s_grid.empty()) throw std::invalid_argument("training time grid is empty");
  TinyFlowLayout L(width_, embed_pairs_);
  grad.assign(L.total, 0.0);
  Trace t;
  double loss = 0.0;
  for (const ToySample& item : batch) {
    double s = s_grid[rng() % s_grid.size()];
    double xi = draw_normal(rng);
    double x = sched.alpha(s) * item.x + sched.sigma(s) * xi;
    forward_trace(L, params_.data(), x, item.z, s, t);
    double resid = t.y - xi;
    loss += resid * resid / batch.size();
    backward_trace(L, params_.data(), t, 2.0 * resid / batch.size(), grad.data());
  }
  if (!std::isfinite(loss))
    throw TrainingDivergedError("training loss is not finite", -1);
  return loss;
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grad, AdamWState& state,
                double lr, double weight_decay) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw std::invalid_argument("optimizer state does not match the parameter vector");
  state.t += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) + weight_decay * params[i]);
  }
}

void TrainConfig::validate() const {
  if (iterations < 1 || batch < 1 || dataset_size < 1 || s_points < 1 || log_every < 1)
    throw std::invalid_argument("training counts must be positive");
  if (!(lr > 0.0) || weight_decay < 0.0)
    throw std::invalid_argument("learning rate must be positive and decay non-negative");
}

TrainResult train(TinyFlowNet net, const std::vector<ToySample>& data,
                  const DiffusionSchedule& sched, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  auto s_grid = time_grid(config.s_points);
  auto rng = substream(config.seed, 0);
  AdamWState opt(net.parameter_count());
  std::vector<double> grad;
  std::vector<ToySample> batch(config.batch);
  TrainResult result{std::move(net), {}};
  for (int it = 0; it < config.iterations; ++it) {
    for (auto& b : batch) b = data[rng() % data.size()];
    double loss;
    try {
      loss = result.net.loss_and_grad(batch, sched, s_grid, rng, grad);
    } catch (const TrainingDivergedError&) {
      throw TrainingDivergedError(
          "training loss is not finite at iteration " + std::to_string(it), it);
    }
    double lr = config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * it / config.iterations));
    adamw_step(result.net.params(), grad, opt, lr, config.weight_decay);
    if ((it + 1) % config.log_every == 0) result.loss_log.push_back(loss);
  }
  return result;
}

TinyFlowField::TinyFlowField(TinyFlowNet net, DiffusionSchedule sched)
    : ConditionalFlowField(std::move(sched)), net_(std::move(net)) {}

void TinyFlowField::epsilon(std::span<const double> x, std::span<const double> z, double s,
                            std::span<double> out) const {
  out[0] = net_.forward(x[0], z.empty() ? 0.0 : z[0], s);
}

namespace {
constexpr char kModelMagic[4] = {'S', 'D', 'T', 'F'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const std::string& path, const TinyFlowNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out.write(kModelMagic, 4);
  auto put_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  put_u32(kModelVersion);
  put_u32(static_cast<std::uint32_t>(net.width()));
  put_u32(static_cast<std::uint32_t>(net.embed_pairs()));
  std::uint64_t count = net.parameter_count();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw std::runtime_error("failed while writing model file: " + path);
}

TinyFlowNet load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw std::runtime_error("not a model file: " + path);
  auto get_u32 = [&in]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
  };
  std::uint32_t version = get_u32();
  if (version != kModelVersion)
    throw std::runtime_error("unsupported model version " + std::to_string(version));
  int width = static_cast<int>(get_u32());
  int pairs = static_cast<int>(get_u32());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  TinyFlowNet net(width, pairs);
  if (count != net.parameter_count())
    throw std::runtime_error("model parameter count does not match its architecture");
  in.read(reinterpret_cast<char*>(net.params().data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("model file is truncated: " + path);
  return net;
}

}  // namespace schedev

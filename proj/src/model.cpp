#include "nd/model.hpp"

#include <algorithm>
#include <cmath>

#include "nd/error.hpp"
#include "nd/kernels.hpp"

namespace nd {

void ModelConfig::validate() const {
  if (input_rows == 0 || steps == 0 || conv_out == 0 || conv_kernel == 0 || gru_hidden == 0 || fc_hidden == 0 ||
      outputs == 0)
    throw ConfigError("model dimensions must be positive");
  if (outputs != kDofCount) throw ConfigError("model must have one output per DOF");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t g = 3 * gru_hidden;
  return conv_kernel * input_rows * conv_out + conv_out  // conv
         + 2 * conv_out                                  // batch-norm scale/shift
         + conv_out * g + gru_hidden * g + g             // GRU
         + gru_hidden * fc_hidden + fc_hidden            // fc1
         + fc_hidden * outputs + outputs;                // fc2
}

ModelConfig ModelConfig::compact(std::size_t input_rows, std::size_t steps) {
  ModelConfig c;
  c.input_rows = input_rows;
  c.steps = steps;
  c.conv_out = 32;
  c.gru_hidden = 32;
  c.fc_hidden = 16;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_rows = 2 * kFeatureCount;
  c.steps = 5;
  c.conv_out = 6;
  c.gru_hidden = 8;
  c.fc_hidden = 5;
  c.dropout_rate = 0.5;
  return c;
}

ParamTensor::ParamTensor(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t total = 1;
  for (auto d : shape) total *= d;
  values.assign(total, 0.0);
}

ModelParams::ModelParams(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  const std::size_t g = 3 * cfg.gru_hidden;
  conv_w = ParamTensor("conv.weight", {cfg.conv_kernel, cfg.input_rows, cfg.conv_out});
  conv_b = ParamTensor("conv.bias", {cfg.conv_out});
  bn_gamma = ParamTensor("bn.weight", {cfg.conv_out});
  bn_beta = ParamTensor("bn.bias", {cfg.conv_out});
  bn_mean = ParamTensor("bn.running_mean", {cfg.conv_out});
  bn_var = ParamTensor("bn.running_var", {cfg.conv_out});
  gru_wi = ParamTensor("gru.weight_ih", {cfg.conv_out, g});
  gru_wh = ParamTensor("gru.weight_hh", {cfg.gru_hidden, g});
  gru_b = ParamTensor("gru.bias", {g});
  fc1_w = ParamTensor("fc1.weight", {cfg.gru_hidden, cfg.fc_hidden});
  fc1_b = ParamTensor("fc1.bias", {cfg.fc_hidden});
  fc2_w = ParamTensor("fc2.weight", {cfg.fc_hidden, cfg.outputs});
  fc2_b = ParamTensor("fc2.bias", {cfg.outputs});
  std::fill(bn_gamma.values.begin(), bn_gamma.values.end(), 1.0);
  std::fill(bn_var.values.begin(), bn_var.values.end(), 1.0);
}

std::vector<ParamTensor*> ModelParams::trainable() {
  return {&conv_w, &conv_b, &bn_gamma, &bn_beta, &gru_wi, &gru_wh, &gru_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::vector<const ParamTensor*> ModelParams::trainable() const {
  return {&conv_w, &conv_b, &bn_gamma, &bn_beta, &gru_wi, &gru_wh, &gru_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::vector<ParamTensor*> ModelParams::all() {
  auto v = trainable();
  v.push_back(&bn_mean);
  v.push_back(&bn_var);
  return v;
}

std::vector<const ParamTensor*> ModelParams::all() const {
  auto v = trainable();
  v.push_back(&bn_mean);
  v.push_back(&bn_var);
  return v;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (const auto* t : trainable()) n += t->size();
  return n;
}

void ModelParams::init_uniform(std::mt19937_64& rng) {
  auto fill = [&](ParamTensor& t, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (auto& v : t.values) v = u(rng);
  };
  set_zero();
  fill(conv_w, static_cast<double>(config.input_rows * config.conv_kernel));
  fill(gru_wi, static_cast<double>(config.gru_hidden));
  fill(gru_wh, static_cast<double>(config.gru_hidden));
  fill(fc1_w, static_cast<double>(config.gru_hidden));
  fill(fc2_w, static_cast<double>(config.fc_hidden));
}

void ModelParams::set_zero() {
  for (auto* t : all()) std::fill(t->values.begin(), t->values.end(), 0.0);
  std::fill(bn_gamma.values.begin(), bn_gamma.values.end(), 1.0);
  std::fill(bn_var.values.begin(), bn_var.values.end(), 1.0);
}

void ModelParams::round_to_float() {
  for (auto* t : all())
    for (auto& v : t->values) v = static_cast<double>(static_cast<float>(v));
}

bool ModelParams::all_finite() const {
  for (const auto* t : all())
    for (double v : t->values)
      if (!std::isfinite(v)) return false;
  return true;
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_finite(std::span<const double> v, const char* layer) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericFault(std::string("non-finite activation in ") + layer);
}

// Activations of one batched forward pass, kept for the backward pass.
struct Workspace {
  std::size_t n = 0;
  std::vector<double> z;      // conv output        [n][t][c]
  std::vector<double> xhat;   // normalized         [n][t][c]
  std::vector<double> y;      // BN output          [n][t][c]
  std::vector<double> a;      // ReLU output        [n][t][c]
  std::vector<double> gi;     // GRU input proj     [n][t][3h]
  std::vector<double> hs;     // hidden states      [t+1][n][h]
  std::vector<double> r, zg, cand, q;  // gates     [t][n][h]
  std::vector<double> mask;   // dropout scale      [n][h]
  std::vector<double> d;      // dropped hidden     [n][h]
  std::vector<double> u, v;   // fc1 pre/post ReLU  [n][f]
  std::vector<double> logits; // [n][o]
  std::vector<double> mean, var, inv_std;  // BN statistics used [c]
};

void check_inputs(std::span<const TensorView> inputs, const ModelConfig& cfg) {
  if (inputs.empty()) throw ConfigError("empty batch");
  for (const auto& x : inputs)
    if (x.rows != cfg.input_rows || x.steps != cfg.steps)
      throw ConfigError("input shape [" + std::to_string(x.rows) + " x " + std::to_string(x.steps) +
                        "] does not match model [" + std::to_string(cfg.input_rows) + " x " +
                        std::to_string(cfg.steps) + "]");
}

void run_forward(std::span<const TensorView> inputs, const ModelParams& p, Mode mode, std::mt19937_64* dropout_rng,
                 Workspace& ws) {
  const ModelConfig& cfg = p.config;
  check_inputs(inputs, cfg);
  const std::size_t n = inputs.size(), T = cfg.steps, R = cfg.input_rows, C = cfg.conv_out, K = cfg.conv_kernel;
  const std::size_t H = cfg.gru_hidden, G = 3 * H, F = cfg.fc_hidden, O = cfg.outputs;
  const std::size_t pad = (K - 1) / 2;
  const std::size_t M = n * T;
  ws.n = n;

  // Temporal convolution with zero "same" padding.
  ws.z.assign(M * C, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    double* zs = ws.z.data() + s * T * C;
    for (std::size_t t = 0; t < T; ++t) std::copy_n(p.conv_b.data(), C, zs + t * C);
    for (std::size_t k = 0; k < K; ++k) {
      // output row t reads input row t + k - pad
      const std::size_t t0 = k < pad ? pad - k : 0;
      const std::size_t t1 = std::min(T, T + pad - k);
      if (t1 <= t0) continue;
      const double* xs = inputs[s].data + (t0 + k - pad) * R;
      kernels::gemm_nn(xs, R, p.conv_w.data() + k * R * C, C, zs + t0 * C, C, t1 - t0, R, C, true);
    }
  }
  check_finite(ws.z, "convolution");

  // Batch normalization over (batch, time) per conv channel.
  ws.mean.assign(C, 0.0);
  ws.var.assign(C, 0.0);
  ws.inv_std.assign(C, 0.0);
  if (mode == Mode::Train) {
    std::vector<double>& var = ws.var;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) ws.mean[c] += ws.z[i * C + c];
    for (auto& m : ws.mean) m /= static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        const double dz = ws.z[i * C + c] - ws.mean[c];
        var[c] += dz * dz;
      }
    for (std::size_t c = 0; c < C; ++c) {
      var[c] /= static_cast<double>(M);
      ws.inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      ws.mean[c] = p.bn_mean.values[c];
      ws.inv_std[c] = 1.0 / std::sqrt(p.bn_var.values[c] + kBatchNormEps);
    }
  }
  ws.xhat.resize(M * C);
  ws.y.resize(M * C);
  ws.a.resize(M * C);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = i * C + c;
      ws.xhat[k] = (ws.z[k] - ws.mean[c]) * ws.inv_std[c];
      ws.y[k] = p.bn_gamma.values[c] * ws.xhat[k] + p.bn_beta.values[c];
      ws.a[k] = ws.y[k] > 0.0 ? ws.y[k] : 0.0;
    }
  check_finite(ws.y, "batch-norm");

  // GRU input projections for every (sample, step) at once.
  ws.gi.resize(M * G);
  for (std::size_t i = 0; i < M; ++i) std::copy_n(p.gru_b.data(), G, ws.gi.data() + i * G);
  kernels::gemm_nn(ws.a.data(), C, p.gru_wi.data(), G, ws.gi.data(), G, M, C, G, true);

  ws.hs.assign((T + 1) * n * H, 0.0);
  ws.r.resize(T * n * H);
  ws.zg.resize(T * n * H);
  ws.cand.resize(T * n * H);
  ws.q.resize(T * n * H);
  std::vector<double> gh_rz(n * 2 * H), gh_n(n * H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = ws.hs.data() + t * n * H;
    double* hn = ws.hs.data() + (t + 1) * n * H;
    double* r = ws.r.data() + t * n * H;
    double* z = ws.zg.data() + t * n * H;
    double* c = ws.cand.data() + t * n * H;
    double* q = ws.q.data() + t * n * H;
    kernels::gemm_nn(h, H, p.gru_wh.data(), G, gh_rz.data(), 2 * H, n, H, 2 * H, false);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gi = ws.gi.data() + (s * T + t) * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = s * H + j;
        r[k] = sigmoid(gi[j] + gh_rz[s * 2 * H + j]);
        z[k] = sigmoid(gi[H + j] + gh_rz[s * 2 * H + H + j]);
        q[k] = r[k] * h[k];
      }
    }
    kernels::gemm_nn(q, H, p.gru_wh.data() + 2 * H, G, gh_n.data(), H, n, H, H, false);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gi = ws.gi.data() + (s * T + t) * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = s * H + j;
        c[k] = std::tanh(gi[2 * H + j] + gh_n[k]);
        hn[k] = (1.0 - z[k]) * c[k] + z[k] * h[k];
      }
    }
  }
  const double* h_last = ws.hs.data() + T * n * H;
  check_finite({h_last, n * H}, "GRU");

  // Dropout on the final hidden state (inverted scaling).
  ws.mask.assign(n * H, 1.0);
  if (mode == Mode::Train && dropout_rng != nullptr && cfg.dropout_rate > 0.0) {
    std::bernoulli_distribution keep(1.0 - cfg.dropout_rate);
    const double scale = 1.0 / (1.0 - cfg.dropout_rate);
    for (auto& m : ws.mask) m = keep(*dropout_rng) ? scale : 0.0;
  }
  ws.d.resize(n * H);
  for (std::size_t k = 0; k < n * H; ++k) ws.d[k] = h_last[k] * ws.mask[k];

  ws.u.resize(n * F);
  ws.v.resize(n * F);
  for (std::size_t s = 0; s < n; ++s) std::copy_n(p.fc1_b.data(), F, ws.u.data() + s * F);
  kernels::gemm_nn(ws.d.data(), H, p.fc1_w.data(), F, ws.u.data(), F, n, H, F, true);
  for (std::size_t k = 0; k < n * F; ++k) ws.v[k] = ws.u[k] > 0.0 ? ws.u[k] : 0.0;

  ws.logits.resize(n * O);
  for (std::size_t s = 0; s < n; ++s) std::copy_n(p.fc2_b.data(), O, ws.logits.data() + s * O);
  kernels::gemm_nn(ws.v.data(), F, p.fc2_w.data(), O, ws.logits.data(), O, n, F, O, true);
  check_finite(ws.logits, "output layer");
}

std::vector<Probabilities> probabilities(const Workspace& ws) {
  std::vector<Probabilities> out(ws.n);
  for (std::size_t s = 0; s < ws.n; ++s)
    for (std::size_t o = 0; o < kDofCount; ++o) out[s][o] = sigmoid(ws.logits[s * kDofCount + o]);
  return out;
}

}  // namespace

Probabilities forward(TensorView input, const ModelParams& params) {
  Workspace ws;
  run_forward({&input, 1}, params, Mode::Eval, nullptr, ws);
  return probabilities(ws).front();
}

SlidingForward::SlidingForward(const ModelParams& params) : p_(&params) {
  const auto& cfg = params.config;
  cfg.validate();
  const std::size_t C = cfg.conv_out, H = cfg.gru_hidden, G = 3 * H;
  inv_std_.resize(C);
  for (std::size_t c = 0; c < C; ++c) inv_std_[c] = 1.0 / std::sqrt(params.bn_var.values[c] + kBatchNormEps);
  cache_.resize(cfg.steps * G);
  cache_col_.assign(cfg.steps, static_cast<std::size_t>(-1));
  z_.resize(C);
  gi_.resize(cfg.steps * G);
  h_.resize(H);
  hn_.resize(H);
  gh_rz_.resize(2 * H);
  gh_n_.resize(H);
  q_.resize(H);
  u_.resize(cfg.fc_hidden);
  logits_.resize(cfg.outputs);
}

void SlidingForward::reset() {
  std::fill(cache_col_.begin(), cache_col_.end(), static_cast<std::size_t>(-1));
  cache_count_ = 0;
}

// Same operation order as run_forward for one output row.
void SlidingForward::input_projection(TensorView x, std::size_t t, double* gi) {
  const ModelParams& p = *p_;
  const auto& cfg = p.config;
  const std::size_t T = cfg.steps, R = cfg.input_rows, C = cfg.conv_out, K = cfg.conv_kernel, G = 3 * cfg.gru_hidden;
  const std::size_t pad = (K - 1) / 2;
  std::copy_n(p.conv_b.data(), C, z_.data());
  for (std::size_t k = 0; k < K; ++k) {
    if (t + k < pad || t + k - pad >= T) continue;
    kernels::gemm_nn(x.data + (t + k - pad) * R, R, p.conv_w.data() + k * R * C, C, z_.data(), C, 1, R, C, true);
  }
  check_finite(z_, "convolution");
  for (std::size_t c = 0; c < C; ++c) {
    const double xhat = (z_[c] - p.bn_mean.values[c]) * inv_std_[c];
    const double y = p.bn_gamma.values[c] * xhat + p.bn_beta.values[c];
    if (!std::isfinite(y)) throw NumericFault("non-finite activation in batch-norm");
    z_[c] = y > 0.0 ? y : 0.0;
  }
  std::copy_n(p.gru_b.data(), G, gi);
  kernels::gemm_nn(z_.data(), C, p.gru_wi.data(), G, gi, G, 1, C, G, true);
}

Probabilities SlidingForward::operator()(TensorView x, std::size_t last) {
  const ModelParams& p = *p_;
  const auto& cfg = p.config;
  check_inputs({&x, 1}, cfg);
  const std::size_t T = cfg.steps, K = cfg.conv_kernel, H = cfg.gru_hidden, G = 3 * H, F = cfg.fc_hidden, O = cfg.outputs;
  const std::size_t pad = (K - 1) / 2;
  if (last + 1 < T) throw ConfigError("window ends before the stream holds a full window");
  const std::size_t first = last + 1 - T;
  // Rows whose kernel reaches past either window edge depend on the window position.
  const std::size_t lo = pad, hi = T - (K - 1 - pad);  // interior rows [lo, hi)

  cache_count_ = 0;
  for (std::size_t t = 0; t < T; ++t) {
    double* gi = gi_.data() + t * G;
    if (t < lo || t >= hi) {
      input_projection(x, t, gi);
      continue;
    }
    const std::size_t col = first + t;
    const std::size_t slot = col % T;
    if (cache_col_[slot] != col) {
      input_projection(x, t, cache_.data() + slot * G);
      cache_col_[slot] = col;
    } else {
      ++cache_count_;
    }
    std::copy_n(cache_.data() + slot * G, G, gi);
  }

  std::fill(h_.begin(), h_.end(), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* gi = gi_.data() + t * G;
    kernels::gemm_nn(h_.data(), H, p.gru_wh.data(), G, gh_rz_.data(), 2 * H, 1, H, 2 * H, false);
    for (std::size_t j = 0; j < H; ++j) {
      const double r = sigmoid(gi[j] + gh_rz_[j]);
      q_[j] = r * h_[j];
    }
    kernels::gemm_nn(q_.data(), H, p.gru_wh.data() + 2 * H, G, gh_n_.data(), H, 1, H, H, false);
    for (std::size_t j = 0; j < H; ++j) {
      const double z = sigmoid(gi[H + j] + gh_rz_[H + j]);
      const double c = std::tanh(gi[2 * H + j] + gh_n_[j]);
      hn_[j] = (1.0 - z) * c + z * h_[j];
    }
    std::swap(h_, hn_);
  }
  check_finite(h_, "GRU");

  std::copy_n(p.fc1_b.data(), F, u_.data());
  kernels::gemm_nn(h_.data(), H, p.fc1_w.data(), F, u_.data(), F, 1, H, F, true);
  for (auto& v : u_) v = v > 0.0 ? v : 0.0;
  std::copy_n(p.fc2_b.data(), O, logits_.data());
  kernels::gemm_nn(u_.data(), F, p.fc2_w.data(), O, logits_.data(), O, 1, F, O, true);
  check_finite(logits_, "output layer");
  Probabilities out{};
  for (std::size_t o = 0; o < kDofCount; ++o) out[o] = sigmoid(logits_[o]);
  return out;
}

std::vector<Probabilities> forward_batch(std::span<const TensorView> inputs, const ModelParams& params, Mode mode,
                                         std::mt19937_64* dropout_rng) {
  Workspace ws;
  run_forward(inputs, params, mode, dropout_rng, ws);
  return probabilities(ws);
}

double loss(const Probabilities& p, GestureLabel target) {
  double sum = 0.0;
  for (std::size_t d = 0; d < kDofCount; ++d) {
    const double q = std::clamp(p[d], kProbClamp, 1.0 - kProbClamp);
    sum += target.flexed(d) ? -std::log(q) : -std::log(1.0 - q);
  }
  return sum / static_cast<double>(kDofCount);
}

GestureLabel threshold(const Probabilities& p) {
  GestureLabel g;
  for (std::size_t d = 0; d < kDofCount; ++d) g.set(d, p[d] >= 0.5);
  return g;
}

double backward(std::span<const TensorView> inputs, std::span<const GestureLabel> targets, ModelParams& p,
                ModelParams& grads, const BackwardOptions& opts) {
  if (inputs.size() != targets.size()) throw ConfigError("batch inputs and targets differ in length");
  if (!(grads.config == p.config)) grads = ModelParams(p.config);
  for (auto* t : grads.all()) std::fill(t->values.begin(), t->values.end(), 0.0);

  Workspace ws;
  run_forward(inputs, p, Mode::Train, opts.dropout_rng, ws);
  const ModelConfig& cfg = p.config;
  const std::size_t n = inputs.size(), T = cfg.steps, R = cfg.input_rows, C = cfg.conv_out, K = cfg.conv_kernel;
  const std::size_t H = cfg.gru_hidden, G = 3 * H, F = cfg.fc_hidden, O = cfg.outputs;
  const std::size_t pad = (K - 1) / 2;
  const std::size_t M = n * T;

  const auto probs = probabilities(ws);
  double total = 0.0;
  std::vector<double> d_logits(n * O, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    total += loss(probs[s], targets[s]);
    for (std::size_t o = 0; o < O; ++o) {
      const double pr = probs[s][o];
      if (pr < kProbClamp || pr > 1.0 - kProbClamp) continue;  // clamped: flat loss
      const double y = targets[s].flexed(o) ? 1.0 : 0.0;
      d_logits[s * O + o] = (pr - y) / static_cast<double>(O * n);
    }
  }
  const double mean_loss = total / static_cast<double>(n);

  // Output head.
  kernels::gemm_tn_acc(ws.v.data(), F, d_logits.data(), O, grads.fc2_w.data(), O, n, F, O);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < O; ++o) grads.fc2_b.values[o] += d_logits[s * O + o];
  std::vector<double> du(n * F);
  kernels::gemm_nt(d_logits.data(), O, p.fc2_w.data(), O, du.data(), F, n, O, F, false);
  for (std::size_t k = 0; k < n * F; ++k)
    if (!(ws.u[k] > 0.0)) du[k] = 0.0;
  kernels::gemm_tn_acc(ws.d.data(), H, du.data(), F, grads.fc1_w.data(), F, n, H, F);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t f = 0; f < F; ++f) grads.fc1_b.values[f] += du[s * F + f];
  std::vector<double> dh(n * H);
  kernels::gemm_nt(du.data(), F, p.fc1_w.data(), F, dh.data(), H, n, F, H, false);
  for (std::size_t k = 0; k < n * H; ++k) dh[k] *= ws.mask[k];

  // Backpropagation through time.
  std::vector<double> dgi(M * G, 0.0);
  std::vector<double> dprev(n * H), dan(n * H), drz(n * 2 * H), dq(n * H);
  for (std::size_t t = T; t-- > 0;) {
    const double* h = ws.hs.data() + t * n * H;
    const double* r = ws.r.data() + t * n * H;
    const double* z = ws.zg.data() + t * n * H;
    const double* c = ws.cand.data() + t * n * H;
    const double* q = ws.q.data() + t * n * H;
    std::vector<double> dz(n * H);
    for (std::size_t k = 0; k < n * H; ++k) {
      const double dc = dh[k] * (1.0 - z[k]);
      dz[k] = dh[k] * (h[k] - c[k]);
      dprev[k] = dh[k] * z[k];
      dan[k] = dc * (1.0 - c[k] * c[k]);
    }
    kernels::gemm_tn_acc(q, H, dan.data(), H, grads.gru_wh.data() + 2 * H, G, n, H, H);
    kernels::gemm_nt(dan.data(), H, p.gru_wh.data() + 2 * H, G, dq.data(), H, n, H, H, false);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = s * H + j;
        const double dr = dq[k] * h[k];
        dprev[k] += dq[k] * r[k];
        drz[s * 2 * H + j] = dr * r[k] * (1.0 - r[k]);
        drz[s * 2 * H + H + j] = dz[k] * z[k] * (1.0 - z[k]);
        double* g = dgi.data() + (s * T + t) * G;
        g[j] = drz[s * 2 * H + j];
        g[H + j] = drz[s * 2 * H + H + j];
        g[2 * H + j] = dan[k];
      }
    kernels::gemm_tn_acc(h, H, drz.data(), 2 * H, grads.gru_wh.data(), G, n, H, 2 * H);
    kernels::gemm_nt(drz.data(), 2 * H, p.gru_wh.data(), G, dprev.data(), H, n, 2 * H, H, true);
    dh.swap(dprev);
  }
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t g = 0; g < G; ++g) grads.gru_b.values[g] += dgi[i * G + g];
  kernels::gemm_tn_acc(ws.a.data(), C, dgi.data(), G, grads.gru_wi.data(), G, M, C, G);
  std::vector<double> dy(M * C);
  kernels::gemm_nt(dgi.data(), G, p.gru_wi.data(), G, dy.data(), C, M, G, C, false);

  // ReLU and batch-norm (batch statistics).
  for (std::size_t k = 0; k < M * C; ++k)
    if (!(ws.y[k] > 0.0)) dy[k] = 0.0;
  std::vector<double> sum_dx(C, 0.0), sum_dx_xhat(C, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = i * C + c;
      grads.bn_beta.values[c] += dy[k];
      grads.bn_gamma.values[c] += dy[k] * ws.xhat[k];
      const double dx = dy[k] * p.bn_gamma.values[c];
      sum_dx[c] += dx;
      sum_dx_xhat[c] += dx * ws.xhat[k];
    }
  std::vector<double> dzc(M * C);
  const double inv_m = 1.0 / static_cast<double>(M);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t k = i * C + c;
      const double dx = dy[k] * p.bn_gamma.values[c];
      dzc[k] = ws.inv_std[c] * (dx - sum_dx[c] * inv_m - ws.xhat[k] * sum_dx_xhat[c] * inv_m);
    }

  // Convolution weights.
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t c = 0; c < C; ++c) grads.conv_b.values[c] += dzc[i * C + c];
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t t0 = k < pad ? pad - k : 0;
      const std::size_t t1 = std::min(T, T + pad - k);
      if (t1 <= t0) continue;
      kernels::gemm_tn_acc(inputs[s].data + (t0 + k - pad) * R, R, dzc.data() + (s * T + t0) * C, C,
                           grads.conv_w.data() + k * R * C, C, t1 - t0, R, C);
    }

  for (const auto* t : grads.trainable())
    for (double v : t->values)
      if (!std::isfinite(v)) throw NumericFault("non-finite gradient in " + t->name);

  if (opts.update_running_stats) {
    const double mom = opts.bn_momentum;
    const double unbias = M > 1 ? static_cast<double>(M) / static_cast<double>(M - 1) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      p.bn_mean.values[c] = (1.0 - mom) * p.bn_mean.values[c] + mom * ws.mean[c];
      p.bn_var.values[c] = (1.0 - mom) * p.bn_var.values[c] + mom * ws.var[c] * unbias;
    }
  }
  return mean_loss;
}

}  // namespace nd

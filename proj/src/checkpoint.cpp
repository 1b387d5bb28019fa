#include "nd/checkpoint.hpp"

#include <cmath>
#include <filesystem>

#include "nd/byteio.hpp"
#include "nd/error.hpp"
#include "nd/metrics.hpp"

namespace nd {

namespace {

constexpr char kMagic[4] = {'N', 'D', 'M', '1'};

void write_config(ByteWriter& w, const ModelConfig& c) {
  for (std::size_t v : {c.input_rows, c.steps, c.conv_out, c.conv_kernel, c.gru_hidden, c.fc_hidden, c.outputs})
    w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.dropout_rate);
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig c;
  c.input_rows = r.u32();
  c.steps = r.u32();
  c.conv_out = r.u32();
  c.conv_kernel = r.u32();
  c.gru_hidden = r.u32();
  c.fc_hidden = r.u32();
  c.outputs = r.u32();
  c.dropout_rate = r.f64();
  return c;
}

void write_frontend(ByteWriter& w, const FrontEndConfig& f) {
  w.u32(static_cast<std::uint32_t>(f.raw_rate_hz));
  w.u16(static_cast<std::uint16_t>(f.decimation));
  w.f64(f.band.low_hz);
  w.f64(f.band.high_hz);
  w.u16(static_cast<std::uint16_t>(f.band.order));
  w.f64(f.window.window_ms);
  w.f64(f.window.step_ms);
  w.f64(f.window.history_s);
  const auto& t = f.thresholds;
  for (double v : {t.zc, t.ssc, t.wamp, t.mpr, t.log_eps}) w.f64(v);
}

FrontEndConfig read_frontend(ByteReader& r) {
  FrontEndConfig f;
  f.raw_rate_hz = static_cast<int>(r.u32());
  f.decimation = r.u16();
  f.band.low_hz = r.f64();
  f.band.high_hz = r.f64();
  f.band.order = r.u16();
  f.window.window_ms = r.f64();
  f.window.step_ms = r.f64();
  f.window.history_s = r.f64();
  auto& t = f.thresholds;
  t.zc = r.f64();
  t.ssc = r.f64();
  t.wamp = r.f64();
  t.mpr = r.f64();
  t.log_eps = r.f64();
  return f;
}

}  // namespace

Fingerprint make_fingerprint(const ModelParams& params, const TrainingSet& data, std::size_t count) {
  Fingerprint fp;
  fp.rows = params.config.input_rows;
  fp.steps = params.config.steps;
  count = std::min(count, data.size());
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = j * data.size() / count;
    const TensorView v = data.input(i);
    fp.inputs.insert(fp.inputs.end(), v.data, v.data + v.rows * v.steps);
    fp.labels.push_back(data.label(i));
  }
  for (std::size_t i = 0; i < fp.size(); ++i) fp.probabilities.push_back(forward(fp.input(i), params));
  fp.accuracy = fp.size() ? fingerprint_accuracy(params, fp) : 0.0;
  return fp;
}

double fingerprint_accuracy(const ModelParams& params, const Fingerprint& fp) {
  std::vector<GestureLabel> pred;
  for (std::size_t i = 0; i < fp.size(); ++i) pred.push_back(threshold(forward(fp.input(i), params)));
  return mean_balanced_accuracy(balanced_accuracy(confusion(pred, fp.labels)));
}

std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ck) {
  const auto& cfg = ck.params.config;
  cfg.validate();
  if (ck.norm.rows() != cfg.input_rows || ck.norm.std.size() != cfg.input_rows)
    throw ConfigError("normalization statistics do not match the model input rows");
  ByteWriter w;
  for (char ch : kMagic) w.u8(static_cast<std::uint8_t>(ch));
  w.u16(kCheckpointVersion);
  write_config(w, cfg);
  write_frontend(w, ck.frontend);
  w.u32(static_cast<std::uint32_t>(ck.norm.rows()));
  for (double v : ck.norm.mean) w.f64(v);
  for (double v : ck.norm.std) w.f64(v);

  const auto tensors = ck.params.all();
  w.u16(static_cast<std::uint16_t>(tensors.size()));
  for (const auto* t : tensors) {
    w.str(t->name);
    w.u8(static_cast<std::uint8_t>(t->shape.size()));
    for (std::size_t d : t->shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t->values) w.f32(static_cast<float>(v));
  }

  w.u64(ck.meta.seed);
  w.u32(ck.meta.epochs);
  w.f64(ck.meta.final_loss);
  w.f64(ck.meta.validation_score);

  const auto& fp = ck.fingerprint;
  w.u32(static_cast<std::uint32_t>(fp.size()));
  w.u32(static_cast<std::uint32_t>(fp.rows));
  w.u32(static_cast<std::uint32_t>(fp.steps));
  for (double v : fp.inputs) w.f64(v);
  for (auto g : fp.labels) w.u8(g.mask());
  for (const auto& p : fp.probabilities)
    for (double v : p) w.f64(v);
  w.f64(fp.accuracy);

  const std::uint32_t crc = crc32(w.buffer());
  w.u32(crc);
  return w.take();
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 10) throw LoadError("checkpoint truncated");
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw LoadError("not a checkpoint (bad magic)");
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  ByteReader trailer(bytes.subspan(bytes.size() - 4));
  if (crc32(bytes.first(bytes.size() - 4)) != trailer.u32()) throw LoadError("checkpoint checksum mismatch");

  Checkpoint ck;
  const ModelConfig cfg = read_config(r);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  ck.params = ModelParams(cfg);
  ck.frontend = read_frontend(r);
  const std::size_t rows = r.u32();
  if (rows != cfg.input_rows) throw LoadError("normalization rows do not match the model");
  ck.norm.mean.resize(rows);
  ck.norm.std.resize(rows);
  for (auto& v : ck.norm.mean) v = r.f64();
  for (auto& v : ck.norm.std) v = r.f64();

  auto tensors = ck.params.all();
  const std::size_t count = r.u16();
  if (count != tensors.size()) throw LoadError("checkpoint tensor count mismatch");
  for (auto* t : tensors) {
    const std::string name = r.str();
    if (name != t->name) throw LoadError("unexpected tensor " + name + " (wanted " + t->name + ")");
    const std::size_t ndim = r.u8();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = r.u32();
    if (shape != t->shape) throw LoadError("tensor " + name + " has the wrong shape");
    for (auto& v : t->values) v = r.f32();
  }

  ck.meta.seed = r.u64();
  ck.meta.epochs = r.u32();
  ck.meta.final_loss = r.f64();
  ck.meta.validation_score = r.f64();

  auto& fp = ck.fingerprint;
  const std::size_t n = r.u32();
  fp.rows = r.u32();
  fp.steps = r.u32();
  if (n > 0 && (fp.rows != cfg.input_rows || fp.steps != cfg.steps)) throw LoadError("fingerprint shape does not match the model");
  if (r.remaining() < n * fp.rows * fp.steps * 8) throw LoadError("checkpoint truncated");
  fp.inputs.resize(n * fp.rows * fp.steps);
  for (auto& v : fp.inputs) v = r.f64();
  for (std::size_t i = 0; i < n; ++i) fp.labels.push_back(GestureLabel::from_mask(r.u8()));
  fp.probabilities.resize(n);
  for (auto& p : fp.probabilities)
    for (auto& v : p) v = r.f64();
  fp.accuracy = r.f64();
  if (r.remaining() != 4) throw LoadError("unexpected bytes after checkpoint body");
  return ck;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = save_checkpoint(ckpt);
  write_file_bytes(path, bytes);
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path);
  auto ck = load_checkpoint(read_file_bytes(path));
  verify_fingerprint(ck);
  return ck;
}

void verify_fingerprint(const Checkpoint& ck, double tolerance) {
  const auto& fp = ck.fingerprint;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const auto p = forward(fp.input(i), ck.params);
    for (std::size_t d = 0; d < kDofCount; ++d)
      if (!(std::fabs(p[d] - fp.probabilities[i][d]) <= tolerance))
        throw LoadError("checkpoint fingerprint mismatch on example " + std::to_string(i));
  }
}

}  // namespace nd

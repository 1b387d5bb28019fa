#include "nd/wire.hpp"

#include "nd/byteio.hpp"
#include "nd/error.hpp"

namespace nd {

FrameType frame_type(const Message& msg) {
  struct {
    FrameType operator()(const SampleBlockMsg&) const { return FrameType::SampleBlock; }
    FrameType operator()(const PredictionMsg&) const { return FrameType::Prediction; }
    FrameType operator()(const ConfigMsg&) const { return FrameType::Config; }
    FrameType operator()(const LatencyMsg&) const { return FrameType::Latency; }
    FrameType operator()(const ErrorMsg&) const { return FrameType::Error; }
  } visitor;
  return std::visit(visitor, msg);
}

namespace {

void write_payload(ByteWriter& w, const SampleBlockMsg& m) {
  if (m.data.size() != std::size_t{m.channels} * m.samples_per_channel)
    throw DataError("sample block data does not match channels x samples");
  w.u64(m.first_sample_index);
  w.u16(m.channels);
  w.u16(m.samples_per_channel);
  for (float v : m.data) w.f32(v);
}

void write_payload(ByteWriter& w, const PredictionMsg& m) {
  w.u64(m.timestamp_us);
  for (float p : m.probabilities) w.f32(p);
  w.u8(m.mask);
  w.u32(m.feature_us);
  w.u32(m.decode_us);
}

void write_payload(ByteWriter& w, const ConfigMsg& m) {
  w.bytes({reinterpret_cast<const std::uint8_t*>(m.json.data()), m.json.size()});
}

void write_payload(ByteWriter& w, const LatencyMsg& m) {
  w.u32(m.frames);
  w.u32(m.skipped_ticks);
  w.u32(m.dropped_predictions);
  for (float v : {m.feature_p50_us, m.feature_p95_us, m.decode_p50_us, m.decode_p95_us, m.end_to_end_p50_us,
                  m.end_to_end_p95_us})
    w.f32(v);
}

void write_payload(ByteWriter& w, const ErrorMsg& m) {
  w.u64(m.offset);
  w.bytes({reinterpret_cast<const std::uint8_t*>(m.message.data()), m.message.size()});
}

std::string rest_as_string(ByteReader& r) {
  auto b = r.bytes(r.remaining());
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

Message read_payload(FrameType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Message out;
  switch (type) {
    case FrameType::SampleBlock: {
      SampleBlockMsg m;
      m.first_sample_index = r.u64();
      m.channels = r.u16();
      m.samples_per_channel = r.u16();
      const std::size_t n = std::size_t{m.channels} * m.samples_per_channel;
      if (r.remaining() != 4 * n) throw LoadError("sample block length does not match its dimensions");
      m.data.resize(n);
      for (auto& v : m.data) v = r.f32();
      out = std::move(m);
      break;
    }
    case FrameType::Prediction: {
      PredictionMsg m;
      m.timestamp_us = r.u64();
      for (auto& p : m.probabilities) p = r.f32();
      m.mask = r.u8();
      m.feature_us = r.u32();
      m.decode_us = r.u32();
      out = m;
      break;
    }
    case FrameType::Config:
      out = ConfigMsg{rest_as_string(r)};
      break;
    case FrameType::Latency: {
      LatencyMsg m;
      m.frames = r.u32();
      m.skipped_ticks = r.u32();
      m.dropped_predictions = r.u32();
      for (float* v : {&m.feature_p50_us, &m.feature_p95_us, &m.decode_p50_us, &m.decode_p95_us, &m.end_to_end_p50_us,
                       &m.end_to_end_p95_us})
        *v = r.f32();
      out = m;
      break;
    }
    case FrameType::Error: {
      ErrorMsg m;
      m.offset = r.u64();
      m.message = rest_as_string(r);
      out = std::move(m);
      break;
    }
  }
  if (r.remaining() != 0) throw LoadError("trailing bytes in payload");
  return out;
}

bool known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x05; }

// Validates the header at the start of bytes; returns the payload length.
std::uint32_t check_header(std::span<const std::uint8_t> bytes, std::size_t offset) {
  ByteReader r(bytes.first(kFrameHeaderBytes));
  if (r.u16() != kFrameMagic) throw FrameError("bad frame magic", offset);
  if (r.u8() != kWireVersion) throw FrameError("unsupported wire version", offset);
  if (!known_type(r.u8())) throw FrameError("unknown frame type", offset);
  const std::uint32_t len = r.u32();
  if (len > kMaxPayloadBytes) throw FrameError("payload length " + std::to_string(len) + " exceeds limit", offset);
  return len;
}

Message decode_checked(std::span<const std::uint8_t> frame, std::size_t offset) {
  const std::size_t body = frame.size() - 4;
  ByteReader tail(frame.subspan(body));
  if (tail.u32() != crc32(frame.first(body))) throw FrameError("frame CRC mismatch", offset);
  try {
    return read_payload(static_cast<FrameType>(frame[3]), frame.subspan(kFrameHeaderBytes, body - kFrameHeaderBytes));
  } catch (const LoadError& e) {
    throw FrameError(e.what(), offset);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Message& msg) {
  ByteWriter payload;
  std::visit([&](const auto& m) { write_payload(payload, m); }, msg);
  if (payload.buffer().size() > kMaxPayloadBytes) throw DataError("payload too large for one frame");
  ByteWriter w;
  w.u16(kFrameMagic);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(frame_type(msg)));
  w.u32(static_cast<std::uint32_t>(payload.buffer().size()));
  w.bytes(payload.buffer());
  w.u32(crc32(w.buffer()));
  return w.take();
}

Message decode_frame(std::span<const std::uint8_t> bytes, std::size_t base_offset) {
  if (bytes.size() < kFrameOverheadBytes) throw FrameError("truncated frame", base_offset);
  const std::uint32_t len = check_header(bytes, base_offset);
  if (bytes.size() != kFrameOverheadBytes + len)
    throw FrameError("frame length field disagrees with the buffer size", base_offset);
  return decode_checked(bytes, base_offset);
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ >= buf_.size() / 2) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    consumed_ += pos_;
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameReader::next() {
  const std::span<const std::uint8_t> avail(buf_.data() + pos_, buf_.size() - pos_);
  if (avail.size() < kFrameHeaderBytes) return std::nullopt;
  const std::uint32_t len = check_header(avail, offset());
  const std::size_t total = kFrameOverheadBytes + len;
  if (avail.size() < total) return std::nullopt;
  auto msg = decode_checked(avail.first(total), offset());
  pos_ += total;
  return msg;
}

}  // namespace nd

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nd {

// Frame layout, little-endian: u16 magic, u8 version, u8 type, u32 payload
// length, payload, u32 CRC32 of header and payload.
inline constexpr std::uint16_t kFrameMagic = 0x4E44;
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 8;
inline constexpr std::size_t kFrameOverheadBytes = kFrameHeaderBytes + 4;
inline constexpr std::uint32_t kMaxPayloadBytes = 16U << 20;

enum class FrameType : std::uint8_t { SampleBlock = 0x01, Prediction = 0x02, Config = 0x03, Latency = 0x04, Error = 0x05 };

struct SampleBlockMsg {
  std::uint64_t first_sample_index = 0;
  std::uint16_t channels = 0;
  std::uint16_t samples_per_channel = 0;
  std::vector<float> data;  // channel-major
  friend bool operator==(const SampleBlockMsg&, const SampleBlockMsg&) = default;
};

struct PredictionMsg {
  std::uint64_t timestamp_us = 0;
  std::array<float, 6> probabilities{};
  std::uint8_t mask = 0;  // bit 0 thumb ... bit 5 wrist
  std::uint32_t feature_us = 0;
  std::uint32_t decode_us = 0;
  friend bool operator==(const PredictionMsg&, const PredictionMsg&) = default;
};

// UTF-8 JSON text.
struct ConfigMsg {
  std::string json;
  friend bool operator==(const ConfigMsg&, const ConfigMsg&) = default;
};

struct LatencyMsg {
  std::uint32_t frames = 0;
  std::uint32_t skipped_ticks = 0;
  std::uint32_t dropped_predictions = 0;
  float feature_p50_us = 0, feature_p95_us = 0;
  float decode_p50_us = 0, decode_p95_us = 0;
  float end_to_end_p50_us = 0, end_to_end_p95_us = 0;
  friend bool operator==(const LatencyMsg&, const LatencyMsg&) = default;
};

// Sent by the server before closing a connection it rejected.
struct ErrorMsg {
  std::uint64_t offset = 0;
  std::string message;
  friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

using Message = std::variant<SampleBlockMsg, PredictionMsg, ConfigMsg, LatencyMsg, ErrorMsg>;

FrameType frame_type(const Message& msg);
std::vector<std::uint8_t> encode_frame(const Message& msg);

// Decodes exactly one frame. Errors carry base_offset plus the position of
// the offending frame.
Message decode_frame(std::span<const std::uint8_t> bytes, std::size_t base_offset = 0);

// Incremental decoder for a byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // Next complete frame, nullopt if more bytes are needed. Throws FrameError
  // with the stream offset of the bad frame.
  std::optional<Message> next();
  std::size_t buffered() const { return buf_.size() - pos_; }
  std::size_t offset() const { return consumed_ + pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t consumed_ = 0;
};

}  // namespace nd

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nd/checkpoint.hpp"
#include "nd/engine.hpp"
#include "nd/wire.hpp"

namespace nd {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  // "host:port" with a numeric IPv4 host or "localhost"; ConfigError otherwise.
  static Endpoint parse(const std::string& text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

struct ServerStats {
  std::uint64_t sessions = 0;
  std::uint64_t rejected_sessions = 0;  // closed after a protocol error
  std::uint64_t dropped_predictions = 0;
};

// TCP decoding service. Serves one connection at a time; each connection is
// an independent session with a fresh decoder. The client sends sample-block
// frames with consecutive sample indices and half-closes when done; the
// server answers with prediction frames, then a latency frame, then closes.
class Server {
 public:
  Server(const Checkpoint& model, EngineConfig cfg);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and listens. ConfigError if the address is unusable or taken.
  void bind(const Endpoint& ep);
  std::uint16_t port() const { return port_; }

  // Accepts sessions until stop() is called.
  void run();
  // Safe from any thread or a signal handler.
  void stop() { stop_.store(true); }

  ServerStats stats() const;

 private:
  void session(int fd);

  const Checkpoint& model_;
  EngineConfig cfg_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> sessions_{0}, rejected_{0}, dropped_{0};
};

// Blocking client connection used by tests and tools.
class Connection {
 public:
  static Connection open(const Endpoint& ep);
  Connection(Connection&& o) noexcept;
  Connection& operator=(Connection&&) = delete;
  ~Connection();

  void send(std::span<const std::uint8_t> bytes);
  void send(const Message& msg) { send(encode_frame(msg)); }
  // Half-closes the sending side.
  void finish();
  // Next message, nullopt once the server closed the connection.
  std::optional<Message> receive();

 private:
  explicit Connection(int fd) : fd_(fd) {}
  int fd_ = -1;
  FrameReader reader_;
};

struct StreamResult {
  std::vector<PredictionMsg> predictions;
  std::optional<LatencyMsg> latency;
  std::optional<ErrorMsg> error;
};

// Streams the whole source as sample-block frames while collecting replies
// on a second thread.
StreamResult stream_source(const Endpoint& ep, SampleSource& source, std::size_t block_samples = 500);

}  // namespace nd

#include "nd/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <iostream>
#include <thread>

#include "nd/error.hpp"
#include "nd/queue.hpp"

namespace nd {

namespace {

constexpr int kPollMs = 100;

sockaddr_in to_sockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host == "localhost" ? "127.0.0.1" : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw ConfigError("invalid IPv4 address '" + ep.host + "'");
  return addr;
}

bool send_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

std::uint32_t clamp_us(double us) {
  if (!(us > 0)) return 0;
  return us >= 4294967295.0 ? 0xFFFFFFFFU : static_cast<std::uint32_t>(std::lround(us));
}

PredictionMsg to_message(const Prediction& p) {
  PredictionMsg m;
  m.timestamp_us = p.timestamp_us;
  for (std::size_t d = 0; d < kDofCount; ++d) m.probabilities[d] = static_cast<float>(p.probabilities[d]);
  m.mask = p.label.mask();
  m.feature_us = clamp_us(p.feature_us);
  m.decode_us = clamp_us(p.decode_us);
  return m;
}

LatencyMsg to_message(const LatencyReport& r) {
  LatencyMsg m;
  m.frames = static_cast<std::uint32_t>(r.frames());
  m.skipped_ticks = static_cast<std::uint32_t>(r.skipped_ticks);
  m.dropped_predictions = static_cast<std::uint32_t>(r.dropped_predictions);
  const auto f = r.feature(), d = r.decode(), e = r.end_to_end();
  m.feature_p50_us = static_cast<float>(f.p50);
  m.feature_p95_us = static_cast<float>(f.p95);
  m.decode_p50_us = static_cast<float>(d.p50);
  m.decode_p95_us = static_cast<float>(d.p95);
  m.end_to_end_p50_us = static_cast<float>(e.p50);
  m.end_to_end_p95_us = static_cast<float>(e.p95);
  return m;
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("endpoint must look like host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (port.empty() || *end != '\0' || v < 0 || v > 65535) throw ConfigError("invalid port in endpoint '" + text + "'");
  ep.port = static_cast<std::uint16_t>(v);
  to_sockaddr(ep);
  return ep;
}

Server::Server(const Checkpoint& model, EngineConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  cfg_.check_model(model_);
}

Server::~Server() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Server::bind(const Endpoint& ep) {
  const auto addr = to_sockaddr(ep);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw ConfigError("cannot bind " + ep.str() + ": " + std::strerror(err));
  }
  if (::listen(listen_fd_, 4) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

ServerStats Server::stats() const { return {sessions_.load(), rejected_.load(), dropped_.load()}; }

void Server::run() {
  if (listen_fd_ < 0) throw ConfigError("server is not bound");
  while (!stop_.load()) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, kPollMs);
    if (r < 0 && errno != EINTR) throw Error(std::string("poll: ") + std::strerror(errno));
    if (r <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    session(fd);
    ::close(fd);
  }
}

void Server::session(int fd) {
  ++sessions_;
  BoundedQueue<std::vector<std::uint8_t>> outgoing(cfg_.queue_capacity);
  std::thread writer([&] {
    bool ok = true;
    while (auto frame = outgoing.pop())
      if (ok) ok = send_all(fd, *frame);
  });

  StreamDecoder decoder(model_, cfg_.prediction_rate_hz, cfg_.channels);
  LatencyReport report;
  FrameReader reader;
  std::vector<Prediction> fresh;
  std::vector<double> block;
  std::vector<std::uint8_t> buf(1 << 16);
  std::uint64_t expected = 0;
  bool failed = false;

  auto reject = [&](const std::string& what, std::size_t offset) {
    outgoing.push(encode_frame(ErrorMsg{offset, what}));
    failed = true;
  };

  while (!failed && !stop_.load()) {
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, kPollMs);
    if (r == 0 || (r < 0 && errno == EINTR)) continue;
    if (r < 0) break;
    const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    reader.feed({buf.data(), static_cast<std::size_t>(n)});
    try {
      while (auto msg = reader.next()) {
        if (auto* sb = std::get_if<SampleBlockMsg>(&*msg)) {
          if (sb->channels != cfg_.channels) {
            reject("sample block has " + std::to_string(sb->channels) + " channels, expected " + std::to_string(cfg_.channels),
                   reader.offset());
            break;
          }
          if (sb->first_sample_index != expected) {
            reject("sample block starts at " + std::to_string(sb->first_sample_index) + ", expected " +
                       std::to_string(expected),
                   reader.offset());
            break;
          }
          const std::size_t spc = sb->samples_per_channel;
          block.assign(sb->data.begin(), sb->data.end());
          fresh.clear();
          decoder.push(block.data(), spc, spc, fresh);
          expected += spc;
          for (const auto& pr : fresh) {
            report.add(pr);
            if (outgoing.push_drop_oldest(encode_frame(to_message(pr)))) {
              ++report.dropped_predictions;
              ++dropped_;
            }
          }
        } else if (std::holds_alternative<ConfigMsg>(*msg)) {
          outgoing.push(encode_frame(ConfigMsg{nlohmann::json(cfg_).dump()}));
        } else {
          reject("unexpected frame type from client", reader.offset());
          break;
        }
      }
    } catch (const FrameError& e) {
      reject(e.what(), e.offset());
    }
  }

  if (failed) {
    ++rejected_;
  } else {
    report.skipped_ticks = decoder.skipped();
    outgoing.push(encode_frame(to_message(report)));
  }
  outgoing.close();
  writer.join();
  ::shutdown(fd, SHUT_RDWR);
}

Connection Connection::open(const Endpoint& ep) {
  const auto addr = to_sockaddr(ep);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(fd);
    throw Error("cannot connect to " + ep.str() + ": " + std::strerror(err));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Connection(fd);
}

Connection::Connection(Connection&& o) noexcept : fd_(o.fd_), reader_(std::move(o.reader_)) { o.fd_ = -1; }

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

void Connection::send(std::span<const std::uint8_t> bytes) {
  if (!send_all(fd_, bytes)) throw Error(std::string("send: ") + std::strerror(errno));
}

void Connection::finish() { ::shutdown(fd_, SHUT_WR); }

std::optional<Message> Connection::receive() {
  std::uint8_t buf[1 << 14];
  for (;;) {
    if (auto msg = reader_.next()) return msg;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;
    reader_.feed({buf, static_cast<std::size_t>(n)});
  }
}

StreamResult stream_source(const Endpoint& ep, SampleSource& source, std::size_t block_samples) {
  if (block_samples == 0 || block_samples > 0xFFFF) throw ConfigError("block size must lie in [1, 65535]");
  auto conn = Connection::open(ep);
  StreamResult res;
  std::thread receiver([&] {
    while (auto msg = conn.receive()) {
      if (auto* p = std::get_if<PredictionMsg>(&*msg)) res.predictions.push_back(*p);
      else if (auto* l = std::get_if<LatencyMsg>(&*msg)) res.latency = *l;
      else if (auto* e = std::get_if<ErrorMsg>(&*msg)) res.error = *e;
    }
  });
  const std::size_t channels = source.channels();
  std::vector<double> buf(channels * block_samples);
  std::uint64_t index = 0;
  try {
    while (const std::size_t n = source.read(buf.data(), block_samples, block_samples)) {
      SampleBlockMsg m;
      m.first_sample_index = index;
      m.channels = static_cast<std::uint16_t>(channels);
      m.samples_per_channel = static_cast<std::uint16_t>(n);
      m.data.resize(channels * n);
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < n; ++i) m.data[c * n + i] = static_cast<float>(buf[c * block_samples + i]);
      conn.send(m);
      index += n;
    }
  } catch (...) {
    conn.finish();
    receiver.join();
    throw;
  }
  conn.finish();
  receiver.join();
  return res;
}

}  // namespace nd

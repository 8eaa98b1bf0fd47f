#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "difattack/classifier.hpp"
#include "difattack/oracle.hpp"
#include "difattack/wire.hpp"

namespace difattack {

/// Serves a classifier over the binary frame protocol, one thread per
/// connection. Malformed frames get an error reply and the connection stays up.
class ScoreServer {
 public:
  ScoreServer(ClassifierSpec victim, ScoreMode mode, std::string model_tag = "");
  ~ScoreServer();
  ScoreServer(const ScoreServer&) = delete;
  ScoreServer& operator=(const ScoreServer&) = delete;

  /// Binds "host:port" (port 0 picks a free one) and starts accepting.
  void start(const std::string& bind_address = "127.0.0.1:0");
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

  int port() const { return port_; }
  std::string address() const { return "127.0.0.1:" + std::to_string(port_); }
  long served_images() const { return served_images_.load(); }
  long served_requests() const { return served_requests_.load(); }
  long error_replies() const { return error_replies_.load(); }
  /// Receives one line per closed connection with its query count.
  void set_log(std::ostream* log) { log_ = log; }

  /// Reply to one frame body; exposed for tests.
  WireMessage handle(std::span<const std::uint8_t> body);

 private:
  void accept_loop();
  void serve_connection(int fd);

  ClassifierSpec victim_;
  ScoreMode mode_;
  std::string tag_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
  std::atomic<long> served_images_{0}, served_requests_{0}, error_replies_{0};
  std::ostream* log_ = nullptr;
};

/// Client side of the protocol. The budget is enforced here; q survives reconnects.
class RemoteOracle : public ScoreOracle {
 public:
  ~RemoteOracle() override;
  int num_classes() const override { return num_classes_; }
  ScoreMode mode() const override { return mode_; }
  const std::string& model_tag() const { return tag_; }
  const std::string& address() const { return address_; }

  /// Drops the socket and dials again; the query count is kept.
  void reconnect();
  void close();

 protected:
  Tensor score(const Tensor& images) override;

 private:
  friend std::unique_ptr<RemoteOracle> connect(const std::string& address, long budget, ScoreMode mode);
  RemoteOracle(std::string address, ScoreMode mode);
  void dial();
  ScoreResponse roundtrip(const ScoreRequest& req);

  std::string address_;
  ScoreMode mode_;
  int fd_ = -1;
  int num_classes_ = 0;
  std::string tag_;
  std::uint64_t next_id_ = 1;
};

/// Connects and performs an empty handshake query to learn the class count.
/// A negative budget leaves it unarmed. Connection failures throw TransportError.
std::unique_ptr<RemoteOracle> connect(const std::string& address, long budget,
                                      ScoreMode mode = ScoreMode::Probabilities);

}  // namespace difattack

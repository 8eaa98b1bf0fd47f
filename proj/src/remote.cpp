#include "difattack/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "difattack/bytes.hpp"

namespace difattack {

namespace {

std::pair<std::string, std::string> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("address '" + address + "' is not host:port");
  return {address.substr(0, colon), address.substr(colon + 1)};
}

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

// 1: read everything; 0: clean EOF before the first byte; -1: error or EOF midway.
int read_exact(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) return got == 0 ? 0 : -1;
    if (r < 0) return -1;
    got += static_cast<std::size_t>(r);
  }
  return 1;
}

// Reads one length-prefixed body. Returns false on EOF.
bool read_frame_body(int fd, std::vector<std::uint8_t>& body) {
  std::uint8_t len[4];
  const int h = read_exact(fd, len, 4);
  if (h == 0) return false;
  if (h < 0) throw TransportError("connection lost while reading a frame header");
  const std::uint32_t n = static_cast<std::uint32_t>(len[0]) | static_cast<std::uint32_t>(len[1]) << 8 |
                          static_cast<std::uint32_t>(len[2]) << 16 | static_cast<std::uint32_t>(len[3]) << 24;
  if (n > kMaxFrameBytes) throw TransportError("frame of " + std::to_string(n) + " bytes exceeds the limit");
  body.resize(n);
  if (n > 0 && read_exact(fd, body.data(), n) != 1) throw TransportError("connection lost inside a frame");
  return true;
}

}  // namespace

ScoreServer::ScoreServer(ClassifierSpec victim, ScoreMode mode, std::string model_tag)
    : victim_(std::move(victim)), mode_(mode), tag_(model_tag.empty() ? victim_.id : std::move(model_tag)) {}

ScoreServer::~ScoreServer() { stop(); }

void ScoreServer::start(const std::string& bind_address) {
  if (running_) throw std::logic_error("server already running");
  const auto [host, port] = split_address(bind_address);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(std::stoi(port)));
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw std::invalid_argument("cannot parse bind host '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw TransportError("cannot listen on " + bind_address + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void ScoreServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void ScoreServer::wait() {
  if (acceptor_.joinable()) acceptor_.join();
}

void ScoreServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

WireMessage ScoreServer::handle(std::span<const std::uint8_t> body) {
  WireMessage in;
  try {
    in = decode_frame_body(body);
  } catch (const FormatError& e) {
    ++error_replies_;
    return ErrorReply{peek_frame_id(body), std::string("malformed frame: ") + e.what()};
  }
  const auto* req = std::get_if<ScoreRequest>(&in);
  if (!req) {
    ++error_replies_;
    return ErrorReply{peek_frame_id(body), "server accepts only request frames"};
  }
  const Shape& expect = victim_.arch.input_shape;
  const auto& s = req->shape;
  // B = 0 is the handshake: only the class count matters.
  if (s[0] > 0 && (static_cast<int>(s[1]) != expect[0] || static_cast<int>(s[2]) != expect[1] ||
                   static_cast<int>(s[3]) != expect[2])) {
    ++error_replies_;
    return ErrorReply{req->id, "image shape does not match the model input " + shape_string(expect)};
  }
  ScoreResponse resp{req->id, s[0], static_cast<std::uint32_t>(victim_.num_classes), {}, tag_};
  if (s[0] > 0) {
    const Tensor images(Shape{static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2]),
                              static_cast<int>(s[3])},
                        req->pixels);  // copied into aligned storage
    resp.scores = classify(victim_, images, mode_).to_vector();
  }
  ++served_requests_;
  served_images_ += s[0];
  return resp;
}

void ScoreServer::serve_connection(int fd) {
  long images = 0;
  std::vector<std::uint8_t> body;
  try {
    while (read_frame_body(fd, body)) {
      const WireMessage reply = handle(body);
      if (const auto* r = std::get_if<ScoreResponse>(&reply)) images += r->batch;
      const auto frame = encode_frame(reply);
      if (!write_all(fd, frame.data(), frame.size())) break;
    }
  } catch (const TransportError&) {
    // The peer went away mid-frame or sent an oversized length; drop the connection.
  }
  if (log_) *log_ << "connection closed after " << images << " queries\n";
  ::close(fd);
}

RemoteOracle::RemoteOracle(std::string address, ScoreMode mode) : address_(std::move(address)), mode_(mode) {}

RemoteOracle::~RemoteOracle() { close(); }

void RemoteOracle::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void RemoteOracle::dial() {
  close();
  const auto [host, port] = split_address(address_);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + address_ + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  int err = 0;
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    err = errno;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + address_ + ": " + std::strerror(err));
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  fd_ = fd;
}

void RemoteOracle::reconnect() { dial(); }

ScoreResponse RemoteOracle::roundtrip(const ScoreRequest& req) {
  if (fd_ < 0) throw TransportError("not connected to " + address_);
  const auto frame = encode_frame(req);
  if (!write_all(fd_, frame.data(), frame.size())) {
    close();
    throw TransportError("send to " + address_ + " failed");
  }
  std::vector<std::uint8_t> body;
  try {
    if (!read_frame_body(fd_, body)) throw TransportError("server closed the connection");
  } catch (const TransportError&) {
    close();
    throw;
  }
  WireMessage reply;
  try {
    reply = decode_frame_body(body);
  } catch (const FormatError& e) {
    throw TransportError(std::string("malformed reply: ") + e.what());
  }
  if (const auto* e = std::get_if<ErrorReply>(&reply)) throw TransportError("server error: " + e->message);
  const auto* r = std::get_if<ScoreResponse>(&reply);
  if (!r) throw TransportError("unexpected frame kind in reply");
  if (r->id != req.id) throw TransportError("reply id " + std::to_string(r->id) + " does not match request " + std::to_string(req.id));
  return *r;
}

Tensor RemoteOracle::score(const Tensor& images) {
  ScoreRequest req;
  req.id = next_id_++;
  for (int i = 0; i < 4; ++i) req.shape[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(images.dim(i));
  req.pixels = images.to_vector();
  const ScoreResponse r = roundtrip(req);
  if (r.batch != req.shape[0] || static_cast<int>(r.num_classes) != num_classes_) {
    throw TransportError("reply carries " + std::to_string(r.batch) + "x" + std::to_string(r.num_classes) + " scores");
  }
  return Tensor(Shape{static_cast<int>(r.batch), static_cast<int>(r.num_classes)}, r.scores);
}

std::unique_ptr<RemoteOracle> connect(const std::string& address, long budget, ScoreMode mode) {
  std::unique_ptr<RemoteOracle> o(new RemoteOracle(address, mode));
  o->dial();
  // An empty request reveals the class count without spending queries.
  ScoreRequest hello;
  hello.id = o->next_id_++;
  const ScoreResponse r = o->roundtrip(hello);
  if (r.num_classes == 0) throw TransportError("server reports zero classes");
  o->num_classes_ = static_cast<int>(r.num_classes);
  o->tag_ = r.model_tag;
  if (budget >= 0) o->arm_budget(budget);
  return o;
}

}  // namespace difattack

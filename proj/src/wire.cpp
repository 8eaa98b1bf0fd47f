#include "difattack/wire.hpp"

#include <limits>

#include "difattack/bytes.hpp"

namespace difattack {

namespace {

void put_string(ByteWriter& w, const std::string& s) {
  w.u32(static_cast<std::uint32_t>(s.size()));
  w.str(s);
}

std::string get_string(ByteReader& r, const char* what) {
  const std::uint32_t n = r.u32(what);
  return r.str(n, what);
}

std::size_t checked_product(std::uint64_t a, std::uint64_t b, std::size_t at) {
  if (b != 0 && a > std::numeric_limits<std::uint32_t>::max() / b) throw FormatError("payload size overflows", at);
  return static_cast<std::size_t>(a * b);
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const WireMessage& m) {
  ByteWriter w;
  w.u32(0);  // patched below
  if (const auto* q = std::get_if<ScoreRequest>(&m)) {
    std::size_t n = 1;
    for (auto d : q->shape) n *= d;
    if (n != q->pixels.size()) throw std::invalid_argument("request pixel count does not match its shape");
    w.u8(static_cast<std::uint8_t>(FrameKind::Request));
    w.u64(q->id);
    for (auto d : q->shape) w.u32(d);
    w.f32s(q->pixels);
  } else if (const auto* s = std::get_if<ScoreResponse>(&m)) {
    if (static_cast<std::size_t>(s->batch) * s->num_classes != s->scores.size()) {
      throw std::invalid_argument("response score count does not match batch x classes");
    }
    w.u8(static_cast<std::uint8_t>(FrameKind::Response));
    w.u64(s->id);
    w.u32(s->batch);
    w.u32(s->num_classes);
    w.f32s(s->scores);
    put_string(w, s->model_tag);
  } else {
    const auto& e = std::get<ErrorReply>(m);
    w.u8(static_cast<std::uint8_t>(FrameKind::Error));
    w.u64(e.id);
    put_string(w, e.message);
  }
  auto out = w.take();
  const std::size_t body = out.size() - 4;
  if (body > kMaxFrameBytes) throw std::invalid_argument("frame exceeds the maximum frame size");
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(body >> (8 * i));
  return out;
}

WireMessage decode_frame_body(std::span<const std::uint8_t> body) {
  ByteReader r(body, 4);
  const std::uint8_t kind = r.u8("frame kind");
  WireMessage out;
  switch (kind) {
    case static_cast<std::uint8_t>(FrameKind::Request): {
      ScoreRequest q;
      q.id = r.u64("request id");
      for (auto& d : q.shape) d = r.u32("request shape");
      const std::size_t at = r.position();
      const std::size_t n = checked_product(checked_product(q.shape[0], q.shape[1], at),
                                            checked_product(q.shape[2], q.shape[3], at), at);
      r.need(checked_product(n, 4, at), "request pixels");
      q.pixels.resize(n);
      r.f32s(q.pixels, "request pixels");
      out = std::move(q);
      break;
    }
    case static_cast<std::uint8_t>(FrameKind::Response): {
      ScoreResponse s;
      s.id = r.u64("response id");
      s.batch = r.u32("response batch");
      s.num_classes = r.u32("response classes");
      const std::size_t n = checked_product(s.batch, s.num_classes, r.position());
      r.need(checked_product(n, 4, r.position()), "response scores");
      s.scores.resize(n);
      r.f32s(s.scores, "response scores");
      s.model_tag = get_string(r, "model tag");
      out = std::move(s);
      break;
    }
    case static_cast<std::uint8_t>(FrameKind::Error): {
      ErrorReply e;
      e.id = r.u64("error id");
      e.message = get_string(r, "error message");
      out = std::move(e);
      break;
    }
    default:
      throw FormatError("unknown frame kind " + std::to_string(kind), 4);
  }
  if (!r.done()) throw FormatError(std::to_string(r.remaining()) + " trailing bytes after frame payload", r.position());
  return out;
}

WireMessage decode_frame(std::span<const std::uint8_t> frame) {
  ByteReader r(frame);
  const std::uint32_t length = r.u32("frame length");
  if (length > kMaxFrameBytes) throw FormatError("frame length " + std::to_string(length) + " exceeds limit", 0);
  if (r.remaining() != length) {
    throw FormatError("frame length " + std::to_string(length) + " does not match " + std::to_string(r.remaining()) +
                          " available bytes",
                      0);
  }
  return decode_frame_body(frame.subspan(4));
}

std::uint64_t peek_frame_id(std::span<const std::uint8_t> body) {
  if (body.size() < 9) return 0;
  ByteReader r(body.subspan(1, 8));
  return r.u64();
}

}  // namespace difattack

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace difattack {

// Frame = length u32 | kind u8 | payload, little-endian. `length` counts the
// bytes after itself (kind + payload).
//   request  (0): id u64 | B, C, H, W u32 | B*C*H*W f32
//   response (1): id u64 | B u32 | num_classes u32 | B*num_classes f32 | tag_len u32 | tag
//   error    (2): id u64 | msg_len u32 | msg
enum class FrameKind : std::uint8_t { Request = 0, Response = 1, Error = 2 };

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 28;

struct ScoreRequest {
  std::uint64_t id = 0;
  std::array<std::uint32_t, 4> shape{0, 0, 0, 0};
  std::vector<float> pixels;
  friend bool operator==(const ScoreRequest&, const ScoreRequest&) = default;
};

struct ScoreResponse {
  std::uint64_t id = 0;
  std::uint32_t batch = 0;
  std::uint32_t num_classes = 0;
  std::vector<float> scores;
  std::string model_tag;
  friend bool operator==(const ScoreResponse&, const ScoreResponse&) = default;
};

struct ErrorReply {
  std::uint64_t id = 0;
  std::string message;
  friend bool operator==(const ErrorReply&, const ErrorReply&) = default;
};

using WireMessage = std::variant<ScoreRequest, ScoreResponse, ErrorReply>;

/// Whole frame, length prefix included.
std::vector<std::uint8_t> encode_frame(const WireMessage& m);
/// Decodes kind + payload (the bytes counted by the length prefix). Throws
/// FormatError on malformed or trailing bytes.
WireMessage decode_frame_body(std::span<const std::uint8_t> body);
/// Decodes one complete frame including its length prefix.
WireMessage decode_frame(std::span<const std::uint8_t> frame);

/// Best-effort id of a (possibly malformed) body, 0 when too short to carry one.
std::uint64_t peek_frame_id(std::span<const std::uint8_t> body);

}  // namespace difattack

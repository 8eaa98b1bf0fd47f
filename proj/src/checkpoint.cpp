#include "difattack/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "difattack/bytes.hpp"

namespace difattack {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("short write to '" + path + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params) {
  ByteWriter w;
  w.str("DIFW");
  w.u32(kCheckpointVersion);
  for (const auto& [name, p] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (int d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(p.value.data());
  }
  return w.take();
}

ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::size_t magic_at = r.position();
  if (r.str(4, "magic") != "DIFW") throw FormatError("bad checkpoint magic", magic_at);
  const std::size_t version_at = r.position();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  ParameterSet params;
  while (!r.done()) {
    const std::size_t record_at = r.position();
    const std::uint32_t name_len = r.u32("record name length");
    std::string name = r.str(name_len, "record name");
    const std::size_t dtype_at = r.position();
    if (r.u8("dtype tag") != kDtypeF32) throw FormatError("unknown dtype tag in record '" + name + "'", dtype_at);
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank), record_at);
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dimension");
      shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    r.need(numel * 4, "tensor payload");
    Tensor t(shape);
    r.f32s(t.data());
    if (params.contains(name)) throw FormatError("duplicate record '" + name + "'", record_at);
    params.add(name, std::move(t));
  }
  return params;
}

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  write_file_bytes(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace difattack

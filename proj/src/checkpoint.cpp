#include "mmfusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>

#include "mmfusion/error.hpp"

namespace mmfusion {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

struct Cursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(VideoModel& model) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + sizeof kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_string(out, model.spec().to_config().to_text());
  auto blocks = model.parameters();
  for (auto& b : model.buffers()) blocks.push_back(b);
  put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_string(out, b.name);
    put_u32(out, static_cast<std::uint32_t>(b.value->rows()));
    put_u32(out, static_cast<std::uint32_t>(b.value->cols()));
    for (double v : b.value->values()) put_f64(out, v);
  }
  return out;
}

VideoModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Cursor c{bytes};
  c.need(sizeof kCheckpointMagic);
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("bad checkpoint magic; expected MMCK");
  }
  c.pos = sizeof kCheckpointMagic;
  const std::uint32_t version = c.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const ModelSpec spec = ModelSpec::from_serialized(KeyValueConfig::parse(c.str(), "checkpoint"));
  VideoModel model(spec, 0);

  std::map<std::string, Matrix*> slots;
  for (auto& p : model.parameters()) slots[p.name] = p.value;
  for (auto& b : model.buffers()) slots[b.name] = b.value;

  const std::uint32_t count = c.u32();
  if (count != slots.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " blocks, model expects " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = c.str();
    const std::uint32_t rows = c.u32();
    const std::uint32_t cols = c.u32();
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint block '" + name + "' unknown to the model");
    Matrix& target = *it->second;
    if (target.rows() != rows || target.cols() != cols) {
      throw FormatError("checkpoint block '" + name + "' is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", model expects " + target.shape_string());
    }
    c.need(std::size_t{8} * rows * cols);
    for (double& v : target.values()) v = c.f64();
    slots.erase(it);
  }
  if (c.pos != bytes.size()) throw FormatError("trailing bytes after the last checkpoint block");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, VideoModel& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

VideoModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mmfusion

#include "hvae/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "hvae/binary.hpp"

namespace hvae::io {

namespace {
constexpr std::string_view kMagic = "HVAE0001";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot move " + tmp + " to " + path);
  }
}

std::string encode_checkpoint(const KvDoc& config, const nn::ParameterStore<float>& tensors) {
  ByteWriter w;
  w.bytes(kMagic);
  const std::string doc = config.str();
  w.u32(static_cast<std::uint32_t>(doc.size()));
  w.bytes(doc);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string& name = tensors.names()[i];
    const auto& t = tensors.tensors()[i];
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("checkpoint: name too long");
    if (t.rank() > 255) throw ContractError("checkpoint: rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (const int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data(), t.size());
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic", 0);
  }
  Checkpoint ck;
  const std::uint32_t doc_len = r.u32();
  const std::size_t doc_at = r.offset();
  try {
    ck.config = KvDoc::parse(std::string(r.bytes(doc_len)));
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: bad config document: ") + e.what(), doc_at);
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name(r.bytes(name_len));
    const int rank = r.u8();
    nn::Shape shape;
    std::size_t n = 1;
    for (int j = 0; j < rank; ++j) {
      const std::uint32_t d = r.u32();
      if (d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.fail("checkpoint: dimension too large");
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    if (n > r.remaining() / sizeof(float)) r.fail("checkpoint: tensor '" + name + "' is truncated");
    nn::Tensor<float> t(std::move(shape));
    r.f32s(t.data(), t.size());
    if (ck.tensors.contains(name)) r.fail("checkpoint: duplicate tensor '" + name + "'");
    ck.tensors.add(name, std::move(t));
  }
  r.expect_end();
  return ck;
}

void save_checkpoint(const std::string& path, const KvDoc& config, const nn::ParameterStore<float>& tensors) {
  write_file(path, encode_checkpoint(config, tensors));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace hvae::io

#include "crossmap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace crossmap {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'C', 'K'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string out = buf.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const OrderedJson& meta, const ParamStore& params) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string meta_text = meta.dump();
  put_u64(out, meta_text.size());
  out += meta_text;
  put_u32(out, static_cast<uint32_t>(params.count()));
  for (const auto& [name, tensor] : params.items()) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (double v : tensor.data()) put_u64(out, std::bit_cast<uint64_t>(v));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf};
  if (r.bytes(4) != std::string(kMagic, 4))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ckpt;
  const uint64_t meta_len = r.u64();
  ckpt.meta = Json::parse(r.bytes(meta_len));
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    size_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(r.u32());
      numel *= static_cast<size_t>(shape[d]);
    }
    std::vector<double> data(numel);
    for (size_t k = 0; k < numel; ++k) data[k] = std::bit_cast<double>(r.u64());
    ckpt.params.add(name, Tensor::from_data(std::move(shape), std::move(data), true));
  }
  return ckpt;
}

}  // namespace crossmap

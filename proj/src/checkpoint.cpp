#include "cortexforge/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cortexforge/errors.hpp"

namespace cortexforge {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}
void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw DataError("checkpoint truncated: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos) + ", have " + std::to_string(buf.size() - pos));
    }
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(buf[pos]) | std::uint16_t(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + std::size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

void put_stage_config(std::vector<std::uint8_t>& out, const netcore::StageConfig& c) {
  put_u32(out, std::uint32_t(c.input_height));
  put_u32(out, std::uint32_t(c.input_width));
  put_u32(out, std::uint32_t(c.input_maps));
  put_u32(out, std::uint32_t(c.rf_size));
  put_u32(out, std::uint32_t(c.stride));
  put_u32(out, std::uint32_t(c.num_maps));
  put_u32(out, std::uint32_t(c.pool_size));
  put_u32(out, std::uint32_t(c.lcn_window));
  put_f32(out, c.lcn_floor_c);
  put_f32(out, c.sparsity_lambda);
  put_f32(out, c.sparsity_epsilon);
}

netcore::StageConfig read_stage_config(Reader& r) {
  netcore::StageConfig c;
  c.input_height = int(r.u32());
  c.input_width = int(r.u32());
  c.input_maps = int(r.u32());
  c.rf_size = int(r.u32());
  c.stride = int(r.u32());
  c.num_maps = int(r.u32());
  c.pool_size = int(r.u32());
  c.lcn_window = int(r.u32());
  c.lcn_floor_c = r.f32();
  c.sparsity_lambda = r.f32();
  c.sparsity_epsilon = r.f32();
  return c;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'L', 'S', 'A', 'E'});
  put_u32(out, kCheckpointVersion);
  put_u64(out, ck.seed);
  put_u32(out, std::uint32_t(ck.configs.size()));
  for (const auto& c : ck.configs) put_stage_config(out, c);
  put_u32(out, std::uint32_t(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xffff) throw DataError("tensor name too long");
    put_u16(out, std::uint16_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(std::uint8_t(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, std::uint64_t(d));
    for (std::size_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), "LSAE", 4) != 0) {
    throw DataError("not a checkpoint file: bad magic");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.seed = r.u64();
  const std::uint32_t n_stages = r.u32();
  for (std::uint32_t i = 0; i < n_stages; ++i) ck.configs.push_back(read_stage_config(r));
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::uint16_t name_len = r.u16();
    r.need(name_len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint8_t rank = r.u8();
    std::vector<std::size_t> shape;
    std::size_t numel = rank == 0 ? 0 : 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(std::size_t(r.u64()));
      numel *= shape.back();
    }
    std::vector<float> data(numel);
    for (std::size_t j = 0; j < numel; ++j) data[j] = r.f32();
    ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint checkpoint_from_network(const netcore::NetworkParams& net, std::uint64_t seed) {
  net.validate();
  Checkpoint ck;
  ck.seed = seed;
  ck.configs = net.configs;
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    const std::string prefix = "s" + std::to_string(s + 1);
    ck.tensors.emplace_back(prefix + ".w1", net.stages[s].w1_encode);
    ck.tensors.emplace_back(prefix + ".w2", net.stages[s].w2_decode);
    ck.tensors.emplace_back(prefix + ".h", net.stages[s].h_pool);
    ck.tensors.emplace_back(prefix + ".g", net.stages[s].g_window);
  }
  return ck;
}

netcore::NetworkParams network_from_checkpoint(const Checkpoint& ck) {
  netcore::NetworkParams net;
  net.configs = ck.configs;
  for (std::size_t s = 0; s < ck.configs.size(); ++s) {
    const std::string prefix = "s" + std::to_string(s + 1);
    netcore::StageParams p;
    for (auto [suffix, dst] : std::initializer_list<std::pair<const char*, Tensor*>>{
             {".w1", &p.w1_encode}, {".w2", &p.w2_decode}, {".h", &p.h_pool}, {".g", &p.g_window}}) {
      const Tensor* t = ck.find(prefix + suffix);
      if (!t) throw DataError("checkpoint missing tensor " + prefix + suffix);
      *dst = *t;
    }
    net.stages.push_back(std::move(p));
  }
  net.validate();
  return net;
}

}  // namespace cortexforge

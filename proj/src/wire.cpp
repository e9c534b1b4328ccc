#include "cortexforge/wire.hpp"

#include <cstring>

#include "cortexforge/errors.hpp"

namespace cortexforge::wire {

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

struct Cursor {
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) {
      throw NetError("truncated frame: expected " + std::to_string(pos + n) +
                     " payload bytes, got " + std::to_string(buf.size()));
    }
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    auto v = std::uint16_t(buf[pos] | (std::uint16_t(buf[pos + 1]) << 8));
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
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xffff) throw NetError("string too long for wire format");
  put_u16(out, std::uint16_t(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_tensor_table(std::vector<std::uint8_t>& out, const std::vector<NamedTensor>& tensors) {
  put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& nt : tensors) {
    put_string(out, nt.name);
    out.push_back(std::uint8_t(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put_u64(out, std::uint64_t(d));
    for (std::size_t i = 0; i < nt.tensor.numel(); ++i) {
      std::uint32_t bits;
      float v = nt.tensor[i];
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
}

std::vector<NamedTensor> read_tensor_table(Cursor& c) {
  const std::uint32_t count = c.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = c.str(c.u16());
    const std::uint8_t rank = c.u8();
    std::vector<std::size_t> shape;
    std::size_t numel = rank == 0 ? 0 : 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(std::size_t(c.u64()));
      numel *= shape.back();
    }
    std::vector<float> data(numel);
    for (std::size_t j = 0; j < numel; ++j) data[j] = c.f32();
    nt.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_message(const WireMessage& msg) {
  std::vector<std::uint8_t> payload;
  Tag tag;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, FetchParams>) {
          tag = Tag::FetchParams;
          put_u32(payload, m.shard_id);
          put_u32(payload, std::uint32_t(m.keys.size()));
          for (const auto& k : m.keys) put_string(payload, k);
        } else if constexpr (std::is_same_v<T, ParamsResponse>) {
          tag = Tag::ParamsResponse;
          put_u64(payload, m.version);
          put_tensor_table(payload, m.tensors);
        } else if constexpr (std::is_same_v<T, PushGrads>) {
          tag = Tag::PushGrads;
          put_u32(payload, m.replica_id);
          put_u64(payload, m.step);
          put_tensor_table(payload, m.tensors);
        } else {
          tag = Tag::Ack;
          put_u64(payload, m.version);
        }
      },
      msg);

  std::vector<std::uint8_t> frame;
  frame.reserve(5 + payload.size());
  put_u32(frame, std::uint32_t(payload.size()));
  frame.push_back(std::uint8_t(tag));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

std::size_t frame_size_from_prefix(std::span<const std::uint8_t> prefix) {
  if (prefix.size() < 4) throw NetError("frame prefix requires 4 bytes");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t(prefix[std::size_t(i)]) << (8 * i);
  return 4 + 1 + std::size_t(len);
}

WireMessage decode_message(std::span<const std::uint8_t> frame) {
  if (frame.size() < 5) {
    throw NetError("truncated frame: expected at least 5 header bytes, got " +
                   std::to_string(frame.size()));
  }
  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) payload_len |= std::uint32_t(frame[std::size_t(i)]) << (8 * i);
  if (frame.size() != 5 + std::size_t(payload_len)) {
    throw NetError("frame length mismatch: header declares " + std::to_string(5 + payload_len) +
                   " bytes, got " + std::to_string(frame.size()));
  }
  const std::uint8_t tag = frame[4];
  Cursor c{frame.subspan(5)};

  WireMessage msg;
  switch (Tag(tag)) {
    case Tag::FetchParams: {
      FetchParams m;
      m.shard_id = c.u32();
      const std::uint32_t n = c.u32();
      for (std::uint32_t i = 0; i < n; ++i) m.keys.push_back(c.str(c.u16()));
      msg = std::move(m);
      break;
    }
    case Tag::ParamsResponse: {
      ParamsResponse m;
      m.version = c.u64();
      m.tensors = read_tensor_table(c);
      msg = std::move(m);
      break;
    }
    case Tag::PushGrads: {
      PushGrads m;
      m.replica_id = c.u32();
      m.step = c.u64();
      m.tensors = read_tensor_table(c);
      msg = std::move(m);
      break;
    }
    case Tag::Ack: {
      Ack m;
      m.version = c.u64();
      msg = std::move(m);
      break;
    }
    default:
      throw NetError("unknown message tag 0x" + std::to_string(int(tag)));
  }
  if (c.pos != c.buf.size()) {
    throw NetError("frame has " + std::to_string(c.buf.size() - c.pos) + " trailing bytes");
  }
  return msg;
}

}  // namespace cortexforge::wire

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cortexforge/rng.hpp"
#include "cortexforge/wire.hpp"
#include "oracles.hpp"

using namespace cortexforge;
using namespace cortexforge::wire;

namespace {

NamedTensor random_named_tensor(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rank_d(0, 3), dim_d(1, 4), len_d(0, 12);
  std::uniform_int_distribution<int> ch('a', 'z');
  NamedTensor nt;
  const int name_len = len_d(rng);
  for (int i = 0; i < name_len; ++i) nt.name.push_back(char(ch(rng)));
  const int rank = rank_d(rng);
  std::vector<std::size_t> shape;
  for (int i = 0; i < rank; ++i) shape.push_back(std::size_t(dim_d(rng)));
  if (rank == 0) {
    nt.tensor = Tensor();
  } else {
    nt.tensor = oracles::random_tensor(shape, rng);
  }
  return nt;
}

WireMessage random_message(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind_d(0, 3), n_d(0, 4);
  switch (kind_d(rng)) {
    case 0: {
      FetchParams m;
      m.shard_id = std::uint32_t(rng());
      const int n = n_d(rng);
      for (int i = 0; i < n; ++i) m.keys.push_back(random_named_tensor(rng).name);
      return m;
    }
    case 1: {
      ParamsResponse m;
      m.version = rng();
      const int n = n_d(rng);
      for (int i = 0; i < n; ++i) m.tensors.push_back(random_named_tensor(rng));
      return m;
    }
    case 2: {
      PushGrads m;
      m.replica_id = std::uint32_t(rng());
      m.step = rng();
      const int n = n_d(rng);
      for (int i = 0; i < n; ++i) m.tensors.push_back(random_named_tensor(rng));
      return m;
    }
    default:
      return Ack{rng()};
  }
}

}  // namespace

TEST_CASE("ack round-trips") {
  WireMessage m = Ack{0x1122334455667788ull};
  auto frame = encode_message(m);
  CHECK(decode_message(frame) == m);
}

TEST_CASE("push-grads frame has the documented byte layout") {
  PushGrads m;
  m.replica_id = 7;
  m.step = 3;
  m.tensors.push_back({"g", Tensor({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f})});
  auto frame = encode_message(m);

  // Payload: u32 replica + u64 step + (u32 count + u16 len + "g" + u8 rank
  // + 2*u64 dims + 4*f32) = 4 + 8 + (4 + 2 + 1 + 1 + 16 + 16) = 52.
  REQUIRE(frame.size() == 4 + 1 + 52);
  CHECK(frame[0] == 52);  // little-endian length prefix
  CHECK(frame[1] == 0);
  CHECK(frame[2] == 0);
  CHECK(frame[3] == 0);
  CHECK(frame[4] == 0x03);  // PushGrads tag
  CHECK(frame[5] == 7);     // replica_id
  CHECK(frame_size_from_prefix(frame) == frame.size());
  CHECK(decode_message(frame) == WireMessage(m));
}

TEST_CASE("randomized round-trip identity, 1000 cases") {
  auto rng = substream(2024, "wire");
  for (int i = 0; i < 1000; ++i) {
    WireMessage m = random_message(rng);
    CHECK(decode_message(encode_message(m)) == m);
  }
}

TEST_CASE("truncated frames rejected with expected vs actual lengths") {
  auto frame = encode_message(WireMessage(Ack{42}));
  for (std::size_t cut : {std::size_t(0), std::size_t(3), frame.size() - 1}) {
    std::vector<std::uint8_t> bad(frame.begin(), frame.begin() + std::ptrdiff_t(cut));
    CHECK_THROWS_AS(decode_message(bad), NetError);
  }
  try {
    std::vector<std::uint8_t> bad(frame.begin(), frame.end() - 1);
    decode_message(bad);
    FAIL("expected a decode error");
  } catch (const NetError& e) {
    const std::string what = e.what();
    CHECK(what.find("13") != std::string::npos);  // declared frame size
    CHECK(what.find("12") != std::string::npos);  // actual bytes
  }
}

TEST_CASE("unknown tag rejected") {
  auto frame = encode_message(WireMessage(Ack{1}));
  frame[4] = 0x7f;
  CHECK_THROWS_AS(decode_message(frame), NetError);
}

TEST_CASE("truncated payload inside the declared length rejected") {
  // A ParamsResponse claiming one tensor but ending mid-table.
  ParamsResponse m;
  m.version = 1;
  m.tensors.push_back({"weights", Tensor({3}, {1, 2, 3})});
  auto frame = encode_message(WireMessage(m));
  // Chop the last 4 bytes and patch the length prefix to match, so the
  // frame is self-consistent but the payload is short.
  frame.resize(frame.size() - 4);
  const std::uint32_t new_len = std::uint32_t(frame.size() - 5);
  for (int i = 0; i < 4; ++i) frame[std::size_t(i)] = std::uint8_t((new_len >> (8 * i)) & 0xff);
  CHECK_THROWS_AS(decode_message(frame), NetError);
}

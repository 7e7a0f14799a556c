#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fcca {

using Rng = std::mt19937_64;

// Named stream tags so that independent consumers never share a generator.
enum class Stream : std::uint64_t {
  data = 1,
  partition = 2,
  swap = 3,
  split = 4,
  encoder_init = 5,
  classifier_init = 6,
  cinn_init = 7,
  local_ce = 8,
  local_cinn = 9,
  server_noise = 10,
  kmeans = 11,
  permutation = 12,
};

// Independent generator for (seed, stream, extra tags...).
inline Rng make_stream(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> material;
  auto push64 = [&](std::uint64_t v) {
    material.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    material.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push64(seed);
  push64(static_cast<std::uint64_t>(stream));
  for (auto t : tags) push64(t);
  std::seed_seq seq(material.begin(), material.end());
  return Rng(seq);
}

}  // namespace fcca

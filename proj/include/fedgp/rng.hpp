#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedgp {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives an independent seed stream from a master seed and a stream label,
// optionally refined by indices (round, client, ...). All randomness in the
// simulator flows through named streams so that enabling one consumer (e.g.
// diagnostics) never perturbs another (e.g. training shuffles).
std::uint64_t stream_seed(std::uint64_t master, std::string_view stream);
std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t a);
std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t a, std::uint64_t b);

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace fedgp

#include "fedgp/rng.hpp"

namespace fedgp {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t master, std::string_view stream) {
  return mix64(master ^ fnv1a(stream));
}

std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t a) {
  return mix64(stream_seed(master, stream) ^ mix64(a));
}

std::uint64_t stream_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t a, std::uint64_t b) {
  return mix64(stream_seed(master, stream, a) ^ mix64(mix64(b) + 1));
}

}  // namespace fedgp

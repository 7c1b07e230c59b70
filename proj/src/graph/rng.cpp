#include "abmil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace abmil {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t master, std::string_view name) {
  return splitmix64(splitmix64(master) ^ fnv1a(name));
}

std::uint64_t substream_seed(std::uint64_t master, std::string_view name, std::uint64_t index) {
  return splitmix64(substream_seed(master, name) + splitmix64(index));
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  if (count > n) throw std::invalid_argument("cannot sample more items than available");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == n) return idx;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t sample_count(std::size_t n, double percent) {
  if (!(percent > 0.0) || percent > 100.0) throw std::invalid_argument("sample percent must lie in (0, 100]");
  // The small slack keeps exact products such as 50 * 0.5 from rounding up.
  const double raw = static_cast<double>(n) * percent / 100.0;
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(count, 1, n);
}

}  // namespace abmil

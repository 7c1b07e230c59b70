#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace abmil {

using Rng = std::mt19937_64;

/// Seed for a named substream of a master seed ("dataset", "init", "shuffle",
/// "sampling", ...). Distinct names give unrelated streams.
std::uint64_t substream_seed(std::uint64_t master, std::string_view name);
std::uint64_t substream_seed(std::uint64_t master, std::string_view name, std::uint64_t index);

inline Rng make_rng(std::uint64_t master, std::string_view name) { return Rng(substream_seed(master, name)); }

/// `count` distinct indices from [0, n), returned in ascending order. When
/// count == n the identity set is returned without touching the generator.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

/// ceil(n * percent / 100), at least 1 and at most n.
std::size_t sample_count(std::size_t n, double percent);

}  // namespace abmil

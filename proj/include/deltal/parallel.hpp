#pragma once

#include <cstddef>
#include <functional>

namespace deltal {

// Work over [0, n) is cut into chunks whose layout depends only on n, so any
// per-chunk random stream (seeded from the chunk index) and any in-order merge
// of per-chunk results is identical for every `jobs` value.
inline constexpr std::size_t kChunkCount = 64;

struct Chunk {
  std::size_t index;
  std::size_t begin;
  std::size_t end;
};

std::size_t chunk_count(std::size_t n);
Chunk chunk_at(std::size_t n, std::size_t index);

// Runs body on every chunk using up to `jobs` threads (jobs <= 1 runs inline).
// The first exception by chunk index is rethrown after all workers finish.
void for_each_chunk(std::size_t n, int jobs, const std::function<void(const Chunk&)>& body);

}  // namespace deltal

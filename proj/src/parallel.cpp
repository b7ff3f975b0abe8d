#include "deltal/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace deltal {

std::size_t chunk_count(std::size_t n) { return std::min(n, kChunkCount); }

Chunk chunk_at(std::size_t n, std::size_t index) {
  const std::size_t chunks = chunk_count(n);
  const std::size_t base = n / chunks;
  const std::size_t extra = n % chunks;
  const std::size_t begin = index * base + std::min(index, extra);
  return Chunk{index, begin, begin + base + (index < extra ? 1 : 0)};
}

void for_each_chunk(std::size_t n, int jobs, const std::function<void(const Chunk&)>& body) {
  const std::size_t chunks = chunk_count(n);
  if (chunks == 0) return;
  if (jobs <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(chunk_at(n, c));
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> workers;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(jobs), chunks);
    for (std::size_t w = 0; w < count; ++w) {
      workers.emplace_back([&] {
        for (std::size_t c = next++; c < chunks; c = next++) {
          try {
            body(chunk_at(n, c));
          } catch (...) {
            errors[c] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace deltal

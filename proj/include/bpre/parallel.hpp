#pragma once

// Deterministic replicate-parallel execution.
//
// Replicates [0, total) are cut into blocks of fixed size. Workers claim
// blocks dynamically, but each block's result lands in its own slot and the
// slots are merged in block order, so floating-point sums do not depend on
// the worker count or on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bpre {

struct RunOptions {
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::uint64_t block_size = 4096;
};

/// fn(begin, end) -> Acc for each block; results in block order.
template <class Acc, class Fn>
std::vector<Acc> map_blocks(std::uint64_t total, const RunOptions& opt, Fn&& fn) {
  const std::uint64_t bs = std::max<std::uint64_t>(1, opt.block_size);
  const std::uint64_t blocks = (total + bs - 1) / bs;
  std::vector<Acc> out(blocks);
  std::atomic<std::uint64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto work = [&] {
    for (;;) {
      const std::uint64_t b = next.fetch_add(1);
      if (b >= blocks) return;
      try {
        out[b] = fn(b * bs, std::min(total, (b + 1) * bs));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(blocks);
        return;
      }
    }
  };

  const unsigned workers =
      static_cast<unsigned>(std::min<std::uint64_t>(std::max(1u, opt.workers), blocks));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return out;
}

/// map_blocks followed by an in-order merge. Acc needs merge(const Acc&).
template <class Acc, class Fn>
Acc reduce_blocks(std::uint64_t total, const RunOptions& opt, Fn&& fn) {
  auto parts = map_blocks<Acc>(total, opt, std::forward<Fn>(fn));
  Acc acc{};
  for (const auto& p : parts) acc.merge(p);
  return acc;
}

}  // namespace bpre

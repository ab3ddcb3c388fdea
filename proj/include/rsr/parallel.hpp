#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rsr {

/// Worker count used when a caller passes 0: $RSR_WORKERS if set, otherwise
/// the machine's hardware concurrency.
inline unsigned default_workers() {
  if (const char* env = std::getenv("RSR_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline unsigned resolve_workers(unsigned requested) {
  return requested == 0 ? default_workers() : requested;
}

/// Runs fn(block, begin, end) over [0, count) split into fixed-size blocks.
/// Block boundaries depend only on `count` and `block_size`, never on the
/// worker count, so any per-block result is reproducible. The first
/// exception thrown by a worker is rethrown on the calling thread.
template <class Fn>
void parallel_blocks(std::size_t count, std::size_t block_size, unsigned workers, Fn&& fn) {
  if (count == 0) return;
  block_size = std::max<std::size_t>(1, block_size);
  const std::size_t blocks = (count + block_size - 1) / block_size;
  workers = std::max(1u, std::min<unsigned>(resolve_workers(workers),
                                            static_cast<unsigned>(std::min<std::size_t>(blocks, 1024))));

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto body = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      const std::size_t begin = b * block_size;
      const std::size_t end = std::min(count, begin + block_size);
      try {
        fn(b, begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
  }
  if (error) std::rethrow_exception(error);
}

/// Fixed-shift power-sum accumulator (sums of (x - c)^k for k = 1..4).
/// Merging in block order gives results independent of thread layout.
struct MomentAccumulator {
  double shift = 0.0;
  std::size_t n = 0;
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;

  explicit MomentAccumulator(double c = 0.0) : shift(c) {}

  void add(double x) {
    const double d = x - shift;
    const double d2 = d * d;
    ++n;
    s1 += d;
    s2 += d2;
    s3 += d2 * d;
    s4 += d2 * d2;
  }

  void merge(const MomentAccumulator& o) {
    n += o.n;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
  }

  double mean() const { return shift + s1 / static_cast<double>(n); }

  /// Unbiased sample variance.
  double variance() const {
    const double nn = static_cast<double>(n);
    const double m = s1 / nn;
    return (s2 - nn * m * m) / (nn - 1.0);
  }

  double standard_error_of_mean() const { return std::sqrt(variance() / static_cast<double>(n)); }

  /// Large-sample standard error of the variance estimate,
  /// sqrt((mu4 - sigma^4) / N) with central moments from the sums.
  double standard_error_of_variance() const {
    const double nn = static_cast<double>(n);
    const double m = s1 / nn;
    const double c2 = s2 / nn - m * m;
    const double c4 = s4 / nn - 4 * m * s3 / nn + 6 * m * m * s2 / nn - 3 * m * m * m * m;
    return std::sqrt(std::max(0.0, c4 - c2 * c2) / nn);
  }
};

}  // namespace rsr

#include "rng.hpp"

#include <algorithm>
#include <numeric>

#include "error.hpp"

namespace medssl {

std::vector<int> Rng::sample_sorted(int n, int k) {
  if (k < 0 || k > n) throw InvalidInput("cannot sample " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace medssl

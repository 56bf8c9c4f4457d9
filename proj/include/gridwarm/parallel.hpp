#pragma once

#include <cstddef>
#include <functional>

namespace gridwarm {

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The first exception
/// stops the remaining work and is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

} // namespace gridwarm

#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace serialcorr {

/// Bad input: malformed files, violated preconditions, inconsistent shapes.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (singular system, divergence, non-convergence).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-fatal notices collected by operations that can degrade gracefully.
using Notices = std::vector<std::string>;

/// Runs fn(i) for i in [0, n) on up to `threads` workers using contiguous
/// static chunks. Each index is processed exactly once; callers must only
/// write to per-index outputs so results do not depend on the thread count.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Resolves a user-facing thread count (0 = hardware concurrency).
unsigned resolve_threads(unsigned requested);

}  // namespace serialcorr

#pragma once

#include <cstddef>
#include <functional>

namespace dudo {

// Deterministic mode pins every parallel region to a single thread. Results
// never depend on the thread count, since parallel work only ever writes to
// disjoint outputs; the flag exists so runs can be profiled in isolation.
void set_deterministic(bool on);
bool deterministic();
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across worker threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dudo

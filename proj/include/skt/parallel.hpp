#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace skt {

/// Runs `count` independent replicas using up to `parallelism` threads.
template <class Fn>
void for_each_replica(int count, int parallelism, Fn&& fn) {
  parallelism = std::max(1, std::min(parallelism, count));
  if (parallelism == 1) {
    for (int r = 0; r < count; ++r) fn(r);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(parallelism);
  for (int t = 0; t < parallelism; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (int r = t; r < count; r += parallelism) fn(r);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : workers) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace skt

#include "magic/common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace magic {

namespace {
std::atomic<int> g_threads{1};
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "identity" || name == "none") return Activation::Identity;
  throw ConfigError("unknown activation '" + name + "' (expected relu or identity)");
}

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Matrix activate(Activation a, const Matrix& pre) {
  if (a == Activation::Identity) return pre;
  return pre.cwiseMax(0.0);
}

Matrix activate_backward(Activation a, const Matrix& pre, const Matrix& grad_out) {
  if (a == Activation::Identity) return grad_out;
  return (pre.array() > 0.0).select(grad_out, 0.0);
}

void set_num_threads(int n) { g_threads = std::max(1, n); }

int num_threads() { return g_threads; }

void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
  const int count = end - begin;
  if (count <= 0) return;
  const int workers = std::min(num_threads(), count);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < end; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace magic

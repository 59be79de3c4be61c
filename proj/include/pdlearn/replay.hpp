#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pdlearn/rng.hpp"

namespace pdlearn {

// One recorded interaction: state, executed action, and the observed
// objective/constraint values.
struct Transition {
  std::vector<double> h;
  std::vector<double> x;
  double J = 0.0;
  std::vector<double> g;
  std::vector<double> c;
};

// Fixed-capacity ring buffer; oldest entries are evicted first.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0)
      throw std::invalid_argument("ReplayMemory: capacity must be positive");
    store_.reserve(capacity_);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return store_.size(); }

  void push(Transition t) {
    if (store_.size() < capacity_) {
      store_.push_back(std::move(t));
    } else {
      store_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  const Transition& operator[](std::size_t i) const { return store_[i]; }

  // Uniform sample of `batch` distinct entries. When batch >= size the
  // whole memory is returned in insertion order and no randomness is
  // consumed.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) {
    const std::size_t n = store_.size();
    if (batch >= n) {
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i)
        all[i] = n < capacity_ ? i : (head_ + i) % capacity_;
      return all;
    }
    if (pool_.size() != n) {
      pool_.resize(n);
      for (std::size_t i = 0; i < n; ++i) pool_[i] = i;
    }
    // Partial Fisher-Yates over a persistent index pool.
    std::vector<std::size_t> out(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool_[i], pool_[j]);
      out[i] = pool_[i];
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next eviction slot once full
  std::vector<Transition> store_;
  std::vector<std::size_t> pool_;
};

}  // namespace pdlearn

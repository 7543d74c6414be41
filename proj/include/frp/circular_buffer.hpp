#pragma once

// Bounded single-producer/single-consumer ring used to overlap batch
// preparation with consumption. Safe for one producer and one consumer on
// different threads; the blocking calls use a mutex and two condition
// variables rather than lock-free cursors.

#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <optional>
#include <vector>

#include "frp/error.hpp"

namespace frp {

template <typename T>
class CircularBuffer {
 public:
  explicit CircularBuffer(std::size_t capacity) : slots_(capacity) {
    if (capacity == 0) throw Error(ErrorKind::invalid_argument, "circular buffer: capacity must be >= 1");
  }

  CircularBuffer(const CircularBuffer&) = delete;
  CircularBuffer& operator=(const CircularBuffer&) = delete;

  std::size_t capacity() const noexcept { return slots_.size(); }

  /// Blocks while full. Returns false if the buffer was closed.
  bool produce(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || count_ < slots_.size(); });
    if (closed_) return false;
    slots_[(head_ + count_) % slots_.size()] = std::move(item);
    ++count_;
    ++produced_;
    not_empty_.notify_one();
    return true;
  }

  /// Non-blocking variant; false when full or closed.
  bool try_produce(T item) {
    std::lock_guard lock(mu_);
    if (closed_ || count_ == slots_.size()) return false;
    slots_[(head_ + count_) % slots_.size()] = std::move(item);
    ++count_;
    ++produced_;
    not_empty_.notify_one();
    return true;
  }

  /// Blocks while empty. Returns nullopt once closed and drained (end of stream).
  std::optional<T> consume() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || count_ > 0; });
    if (count_ == 0) return std::nullopt;
    std::optional<T> out(std::move(slots_[head_]));
    head_ = (head_ + 1) % slots_.size();
    --count_;
    ++consumed_;
    not_full_.notify_one();
    return out;
  }

  /// Ends the stream. Items already buffered can still be consumed.
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return count_;
  }
  std::size_t produced() const {
    std::lock_guard lock(mu_);
    return produced_;
  }
  std::size_t consumed() const {
    std::lock_guard lock(mu_);
    return consumed_;
  }
  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::vector<T> slots_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::size_t produced_ = 0;
  std::size_t consumed_ = 0;
  bool closed_ = false;
};

}  // namespace frp

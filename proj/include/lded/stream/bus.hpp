#pragma once

// In-process publish/subscribe bus: named topics, one bounded FIFO per
// subscriber, Block or DropOldest on overflow.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lded/error.hpp"

namespace lded::stream {

enum class Overflow { block, drop_oldest };

template <typename Payload>
struct Message {
  std::string topic;
  double timestamp = 0.0;  // stream time, seconds
  std::chrono::steady_clock::time_point published{};
  std::shared_ptr<const Payload> payload;
};

template <typename T>
class BoundedQueue {
 public:
  BoundedQueue(std::size_t capacity, Overflow policy) : capacity_(capacity), policy_(policy) {
    require(capacity >= 1, "queue capacity must be at least 1");
  }

  /// Returns false if the queue was closed before the item could be enqueued.
  bool push(T item) {
    std::unique_lock lock(mu_);
    if (policy_ == Overflow::block) {
      not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
      if (closed_) return false;
    } else {
      if (closed_) return false;
      if (items_.size() >= capacity_) {
        items_.pop_front();
        ++dropped_;
      }
    }
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  /// Blocks until an item arrives; empty once the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mu_);
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  /// Drain: consumers still receive what is queued. Truncate: queued items are discarded.
  void close(bool truncate = false) {
    std::lock_guard lock(mu_);
    closed_ = true;
    if (truncate) {
      dropped_ += items_.size();
      items_.clear();
    }
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }
  std::size_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  std::size_t capacity_;
  Overflow policy_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

template <typename Payload>
class Bus {
 public:
  using Msg = Message<Payload>;
  using Subscription = std::shared_ptr<BoundedQueue<Msg>>;

  void register_topic(const std::string& topic) {
    std::lock_guard lock(mu_);
    topics_.try_emplace(topic);
  }

  Subscription subscribe(const std::string& topic, std::size_t capacity, Overflow policy) {
    std::lock_guard lock(mu_);
    auto& t = find(topic);
    auto q = std::make_shared<BoundedQueue<Msg>>(capacity, policy);
    if (t.closed) q->close();
    t.subscribers.push_back(q);
    return q;
  }

  /// Fans the message out to every subscriber of `topic` in publish order.
  void publish(const std::string& topic, double timestamp, Payload payload) {
    Msg m{topic, timestamp, std::chrono::steady_clock::now(), std::make_shared<const Payload>(std::move(payload))};
    std::vector<Subscription> subs;
    {
      std::lock_guard lock(mu_);
      auto& t = find(topic);
      if (t.closed) fail(ErrorKind::invalid_argument, "publish on closed topic '" + topic + "'");
      if (timestamp < t.last_timestamp) fail(ErrorKind::internal, "timestamps went backwards on topic '" + topic + "'");
      t.last_timestamp = timestamp;
      ++t.published;
      subs = t.subscribers;
    }
    for (auto& s : subs) s->push(m);
  }

  void close(const std::string& topic, bool truncate = false) {
    std::vector<Subscription> subs;
    {
      std::lock_guard lock(mu_);
      auto& t = find(topic);
      t.closed = true;
      subs = t.subscribers;
    }
    for (auto& s : subs) s->close(truncate);
  }

  void close_all(bool truncate = false) {
    std::vector<std::string> names;
    {
      std::lock_guard lock(mu_);
      for (const auto& [name, t] : topics_) names.push_back(name);
    }
    for (const auto& n : names) close(n, truncate);
  }

  /// Messages dropped across all subscribers of a topic.
  std::size_t dropped(const std::string& topic) const {
    std::lock_guard lock(mu_);
    const auto it = topics_.find(topic);
    if (it == topics_.end()) fail(ErrorKind::invalid_argument, "unknown topic '" + topic + "'");
    std::size_t n = 0;
    for (const auto& s : it->second.subscribers) n += s->dropped();
    return n;
  }

  std::size_t published(const std::string& topic) const {
    std::lock_guard lock(mu_);
    const auto it = topics_.find(topic);
    if (it == topics_.end()) fail(ErrorKind::invalid_argument, "unknown topic '" + topic + "'");
    return it->second.published;
  }

  std::vector<std::string> topics() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [name, t] : topics_) out.push_back(name);
    return out;
  }

 private:
  struct Topic {
    std::vector<Subscription> subscribers;
    bool closed = false;
    double last_timestamp = -std::numeric_limits<double>::infinity();
    std::size_t published = 0;
  };

  Topic& find(const std::string& topic) {
    auto it = topics_.find(topic);
    if (it == topics_.end()) fail(ErrorKind::invalid_argument, "unknown topic '" + topic + "'");
    return it->second;
  }

  mutable std::mutex mu_;
  std::map<std::string, Topic> topics_;
};

}  // namespace lded::stream

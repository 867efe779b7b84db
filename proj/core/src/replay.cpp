#include "gipo/replay.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace gipo {

namespace {

constexpr std::size_t kRecordBytes = 4 + 4 + 8 + 4 + 1 + 8 + 8;  // 37

void encode(const Transition& t, char* buf) {
  std::size_t off = 0;
  auto put = [&](const void* src, std::size_t n) {
    std::memcpy(buf + off, src, n);
    off += n;
  };
  const std::int32_t s = t.state, a = t.action, ns = t.next_state;
  const std::uint8_t d = t.done ? 1 : 0;
  put(&s, 4);
  put(&a, 4);
  put(&t.reward, 8);
  put(&ns, 4);
  put(&d, 1);
  put(&t.behavior_logp, 8);
  put(&t.behavior_version, 8);
}

Transition decode(const char* buf) {
  Transition t;
  std::size_t off = 0;
  auto get = [&](void* dst, std::size_t n) {
    std::memcpy(dst, buf + off, n);
    off += n;
  };
  std::int32_t s, a, ns;
  std::uint8_t d;
  get(&s, 4);
  get(&a, 4);
  get(&t.reward, 8);
  get(&ns, 4);
  get(&d, 1);
  get(&t.behavior_logp, 8);
  get(&t.behavior_version, 8);
  t.state = s;
  t.action = a;
  t.next_state = ns;
  t.done = d != 0;
  return t;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  ring_.reserve(std::min<std::size_t>(capacity, 1 << 20));
}

void ReplayBuffer::append(const Transition& t) {
  if (!std::isfinite(t.behavior_logp)) {
    throw std::invalid_argument("behavior log-probability must be finite");
  }
  std::lock_guard<std::mutex> lock(mu_);
  if (ring_.size() < capacity_) {
    ring_.push_back(t);
  } else {
    ring_[next_] = t;  // overwrite the oldest entry
    next_ = (next_ + 1) % capacity_;
  }
  ++total_appended_;
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return ring_.size();
}

std::uint64_t ReplayBuffer::total_appended() const {
  std::lock_guard<std::mutex> lock(mu_);
  return total_appended_;
}

std::vector<SampledTransition> ReplayBuffer::sample_uniform(std::size_t batch_size,
                                                            std::uint64_t learner_version,
                                                            std::mt19937_64& rng) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (ring_.empty()) throw std::runtime_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, ring_.size() - 1);
  std::vector<SampledTransition> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const Transition& t = ring_[pick(rng)];
    if (t.behavior_version > learner_version) {
      throw std::runtime_error("replay entry is newer than the learner policy");
    }
    out.push_back({t, learner_version - t.behavior_version});
  }
  return out;
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<Transition> out;
  out.reserve(ring_.size());
  if (ring_.size() < capacity_) {
    out = ring_;
  } else {
    // next_ points at the oldest entry once the ring has wrapped
    out.insert(out.end(), ring_.begin() + static_cast<std::ptrdiff_t>(next_), ring_.end());
    out.insert(out.end(), ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(next_));
  }
  return out;
}

void ReplayBuffer::dump(std::ostream& os) const {
  char buf[kRecordBytes];
  for (const Transition& t : snapshot()) {
    encode(t, buf);
    os.write(buf, kRecordBytes);
    os.put('\n');
  }
}

std::vector<Transition> ReplayBuffer::load_dump(std::istream& is) {
  std::vector<Transition> out;
  char buf[kRecordBytes];
  while (is.read(buf, kRecordBytes)) {
    if (is.get() != '\n') throw std::runtime_error("corrupt replay log: missing record delimiter");
    out.push_back(decode(buf));
  }
  if (is.gcount() != 0) throw std::runtime_error("corrupt replay log: truncated record");
  return out;
}

StalenessSummary staleness_summary(std::span<const SampledTransition> batch,
                                   std::uint64_t t_old) {
  if (batch.empty()) throw std::invalid_argument("staleness summary needs a nonempty batch");
  std::vector<double> gaps;
  gaps.reserve(batch.size());
  std::size_t old_count = 0;
  for (const auto& item : batch) {
    gaps.push_back(static_cast<double>(item.delta_v));
    if (item.delta_v >= t_old) ++old_count;
  }
  std::sort(gaps.begin(), gaps.end());
  // nearest-rank: ceil(0.95 n)-th order statistic, 1-indexed
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(gaps.size())));
  return {static_cast<double>(old_count) / static_cast<double>(batch.size()),
          gaps[std::max<std::size_t>(rank, 1) - 1]};
}

}  // namespace gipo

#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <random>
#include <span>
#include <vector>

// Versioned experience buffer backing the fresh/stale regime construction.
// Appends may come from many actor threads; sampling happens on the learner.
// A sample observes a consistent snapshot of the ring.

namespace gipo {

struct Transition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;          // true episode end (bootstrap value 0)
  double behavior_logp = 0.0;
  std::uint64_t behavior_version = 0;  // learner version of the policy that acted
};

struct SampledTransition {
  Transition t;
  std::uint64_t delta_v = 0;  // learner_version - behavior_version at sample time
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  // Oldest entry is evicted once the ring is full. Thread-safe.
  void append(const Transition& t);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::uint64_t total_appended() const;

  // Uniform with replacement over current contents; the version gap is stamped
  // against learner_version at sample time. Throws on an empty buffer or if a
  // stored version exceeds learner_version.
  std::vector<SampledTransition> sample_uniform(std::size_t batch_size,
                                                std::uint64_t learner_version,
                                                std::mt19937_64& rng) const;

  // Oldest-first copy of the live contents.
  std::vector<Transition> snapshot() const;

  // Record-per-line binary log: a fixed 37-byte little-endian record followed
  // by '\n'. load_dump reads records until end of stream.
  void dump(std::ostream& os) const;
  static std::vector<Transition> load_dump(std::istream& is);

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t next_ = 0;             // ring write position
  std::uint64_t total_appended_ = 0;
};

struct StalenessSummary {
  double old_frac = 0.0;     // Pr(delta_v >= t_old)
  double old_gap_p95 = 0.0;  // nearest-rank 0.95 quantile of delta_v
};
StalenessSummary staleness_summary(std::span<const SampledTransition> batch, std::uint64_t t_old);

}  // namespace gipo

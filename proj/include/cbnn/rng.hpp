#pragma once

#include <cstdint>
#include <optional>

namespace cbnn {

// Counter-based generator: output i of a stream is a bijective mix of
// (key, i), so a stream is fully described by its key and counter.
// Child streams get keys derived from (parent key, stream id) and never
// share a counter sequence with the parent or with siblings.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Independent stream keyed by `stream_id`; does not advance this stream.
  Rng split(std::uint64_t stream_id) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  // ±1 with equal probability.
  double rademacher();

 private:
  Rng(std::uint64_t seed, std::uint64_t key);

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_normal_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace cbnn

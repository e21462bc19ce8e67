#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace cablempc {

/// Independent noise streams derived from one seed. Each stream hashes
/// (seed, stream id, counter) with SplitMix64, so enabling or disabling one
/// sensor never shifts the draws of another.
enum class NoiseStream : std::uint64_t {
  pixel = 1,
  pose = 2,
  gyro = 3,
  accel = 4,
  motor = 5,
};

class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, NoiseStream stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Zero-mean normal draw with standard deviation `sigma`.
  double gaussian(double sigma);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace cablempc

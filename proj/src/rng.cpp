#include "cablempc/rng.hpp"

namespace cablempc {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, NoiseStream stream)
    : key_(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)))) {}

CounterRng::result_type CounterRng::operator()() {
  return splitmix64(key_ + 0x632be59bd9b4e019ULL * ++counter_);
}

double CounterRng::gaussian(double sigma) {
  if (sigma == 0.0) return 0.0;
  return sigma * normal_(*this);
}

}  // namespace cablempc

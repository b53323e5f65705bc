#pragma once

#include "eki/core.hpp"

#include <cstdint>
#include <random>

namespace eki {

/// Independent random substreams keyed by (seed, step, member, channel).
///
/// Each key hashes to its own engine state, so the numbers a member sees in a
/// given step do not depend on evaluation order or thread count.
class RandomStream {
 public:
  enum Channel : std::uint64_t {
    kObservation = 1,
    kDiffusion = 2,
    kProposal = 3,
    kAccept = 4,
    kInitial = 5,
    kData = 6,
  };

  RandomStream(std::uint64_t seed, std::uint64_t step, std::uint64_t member,
               std::uint64_t channel = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Vector normal_vector(Index n);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace eki

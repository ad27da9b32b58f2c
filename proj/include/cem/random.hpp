#pragma once

#include <array>
#include <cstdint>

namespace cem {

/// Stage identifiers mixed into every stream counter so that different
/// consumers of one seed never share draws.
enum class Stage : std::uint32_t {
  full = 1,
  coarse = 2,
  fine = 3,
  noise = 16,
  rain = 17,
  library_pick = 32,
  library_crop = 33,
  library_degrade = 34,
  testing = 255,
};

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based random stream addressed by (seed, stage, a, b).
///
/// Two streams with different addresses are independent, and a stream's
/// draws depend only on its address, never on which thread consumes it or
/// in what order other streams were used.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stage stage, std::uint32_t a = 0,
             std::uint32_t b = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform on [lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller).
  double normal();
  /// Poisson with mean `lambda` (exact; large means are split into chunks).
  std::uint64_t poisson(double lambda);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cem

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace capsim {

// Bad scenario/config/CLI input. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent data file (demand CSV, parameter container).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic random source. Wraps a 64-bit xorshift-style generator and
// derives doubles by hand so that streams are identical across platforms
// and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // standard normal via Box-Muller
  double normal();
  // uniform integer in [0, n)
  int uniform_int(int n);

 private:
  std::uint64_t state_[4];
};

std::uint64_t fnv1a64(std::string_view bytes);

// Fixed-width decimal formatting used by every CSV/JSON writer so that
// seeded runs produce identical bytes.
std::string format_double(double v);

}  // namespace capsim

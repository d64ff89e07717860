// Deterministic random number generation (xoshiro256++ with splitmix64
// seeding). Hand-rolled so that streams are reproducible across platforms
// and serializable into checkpoints; std:: distributions are
// implementation-defined.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>

namespace xemb {

class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ULL) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
    has_cached_gauss_ = false;
    cached_gauss_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(
                    static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Standard normal via Box-Muller; one value cached between calls.
  double gaussian() {
    if (has_cached_gauss_) {
      has_cached_gauss_ = false;
      return cached_gauss_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_gauss_ = r * std::sin(theta);
    has_cached_gauss_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; distinct ids give decorrelated streams.
  Rng fork(uint64_t stream_id) const {
    uint64_t x = state_[0] ^ (0xbf58476d1ce4e5b9ULL * (stream_id + 1));
    Rng child;
    child.state_[0] = splitmix64(x);
    child.state_[1] = splitmix64(x);
    child.state_[2] = splitmix64(x);
    child.state_[3] = splitmix64(x);
    child.has_cached_gauss_ = false;
    return child;
  }

  struct State {
    std::array<uint64_t, 4> s;
    bool has_cached;
    double cached;
  };
  State save_state() const { return {state_, has_cached_gauss_, cached_gauss_}; }
  void load_state(const State& st) {
    state_ = st.s;
    has_cached_gauss_ = st.has_cached;
    cached_gauss_ = st.cached;
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  bool has_cached_gauss_ = false;
  double cached_gauss_ = 0.0;
};

}  // namespace xemb

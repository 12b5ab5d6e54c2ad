#ifndef MFC_RNG_HPP
#define MFC_RNG_HPP

#include <cmath>
#include <cstdint>

namespace mfc {

// Counter-based random numbers: every draw is a pure function of
// (seed, particle, step, channel, counter), so results do not depend on
// evaluation order or worker-thread count.

enum class RngChannel : std::uint64_t {
    brownian = 0,
    chain = 1,
    control = 2,
    scan = 3,
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace detail

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t particle,
                                  std::uint64_t step, std::uint64_t channel,
                                  std::uint64_t counter) {
    using detail::splitmix64;
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ particle);
    h = splitmix64(h ^ step);
    h = splitmix64(h ^ channel);
    h = splitmix64(h ^ counter);
    return h;
}

/// A stateless stream over one (seed, particle, step, channel) key.
/// Copying a stream forks the draw counter; callers own their streams.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
              RngChannel channel)
        : seed_(seed),
          particle_(particle),
          step_(step),
          channel_(static_cast<std::uint64_t>(channel)) {}

    std::uint64_t next_u64() {
        return counter_hash(seed_, particle_, step_, channel_, counter_++);
    }

    /// Uniform in (0, 1].
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (pairs cached).
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Exponential with the given rate (rate > 0).
    double next_exponential(double rate) { return -std::log(next_uniform()) / rate; }

  private:
    std::uint64_t seed_, particle_, step_, channel_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// One standard normal draw addressed by (seed, particle, step); used for
/// the per-step Brownian increments.
inline double normal_at(std::uint64_t seed, std::uint64_t particle, std::uint64_t step,
                        RngChannel channel = RngChannel::brownian) {
    RngStream s(seed, particle, step, channel);
    return s.next_normal();
}

}  // namespace mfc

#endif

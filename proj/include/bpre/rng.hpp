#pragma once

// Counter-based random streams.
//
// Every replicate of every estimator draws from its own Philox4x32-10 stream,
// addressed by (seed, domain, stream index). A block of output is a pure
// function of that address and a block counter, so a replicate produces the
// same numbers no matter which worker runs it or in which order.

#include <array>
#include <cstdint>
#include <limits>

namespace bpre {

/// Separates independent uses of one seed (environments, reproduction, ...).
enum class Domain : std::uint32_t {
  environment = 1,
  reproduction = 2,
  walk = 3,
  renewal = 4,
  offspring = 5,
  marginal = 6,
  test = 99,
};

struct StreamAddress {
  std::uint64_t seed = 0;
  std::uint32_t domain = 0;
  std::uint64_t stream = 0;
};

/// Philox4x32 with 10 rounds (Salmon et al., SC'11); exposed for the
/// known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// UniformRandomBitGenerator over one Philox stream. Cheap to construct.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, Domain domain, std::uint64_t stream);
  explicit Stream(StreamAddress address);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on the open interval (0,1), 53-bit resolution.
  double uniform();

  const StreamAddress& address() const { return address_; }

 private:
  void refill();

  StreamAddress address_;
  std::array<std::uint32_t, 2> key_{};
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int cursor_ = 2;
};

/// 64-bit finalizer used to derive keys and short hashes.
std::uint64_t mix64(std::uint64_t x);

/// Packs (purpose, slot, replicate) into one stream index; replicate < 2^40,
/// slot < 2^16, purpose < 2^8.
constexpr std::uint64_t stream_index(std::uint64_t purpose, std::uint64_t slot,
                                     std::uint64_t replicate) {
  return (purpose << 56) | (slot << 40) | replicate;
}

}  // namespace bpre

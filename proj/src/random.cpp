#include "iirc/random.hpp"

#include <cmath>
#include <numbers>

#include "iirc/error.hpp"

namespace iirc {

namespace {
constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}
}  // namespace

Rng::Rng(std::uint64_t seed) noexcept {
  std::uint64_t x = seed;
  for (auto& word : s_) {
    word = mix64(x);
    x += 0x9e3779b97f4a7c15ULL;
  }
}

Rng::result_type Rng::operator()() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  // Rejection on the low end keeps the modulo unbiased.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = (*this)();
    if (r >= threshold) return r % bound;
  }
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DuplicateClass: return "DuplicateClass";
    case ErrorKind::CycleOrDepthViolation: return "CycleOrDepthViolation";
    case ErrorKind::DanglingParent: return "DanglingParent";
    case ErrorKind::EmptyHierarchy: return "EmptyHierarchy";
    case ErrorKind::UnknownClass: return "UnknownClass";
    case ErrorKind::IsSuperclass: return "IsSuperclass";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::EmptyClass: return "EmptyClass";
    case ErrorKind::InfeasibleConfig: return "InfeasibleConfig";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
  }
  return "Error";
}

}  // namespace iirc

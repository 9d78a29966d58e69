#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace apiarius {

/// Base error for everything the toolkit throws on a contract violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or size mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Sensor cadence.
inline constexpr int kSamplesPerDay = 96;
inline constexpr int64_t kSlotSeconds = 900;
inline constexpr int64_t kSecondsPerDay = 86400;

/// Calendar day as a count of days since 1970-01-01 (UTC).
using Day = int32_t;

Day day_of(int64_t utc_seconds);
int slot_of(int64_t utc_seconds);
int64_t day_start(Day day);
std::string format_day(Day day);
Day parse_day(std::string_view text);

using Rng = std::mt19937_64;

/// Deterministic child seed from a master seed and a stream id (SplitMix64 mixing).
uint64_t split_seed(uint64_t master, uint64_t stream);

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

/// Keeps large buffers on the heap instead of fresh mmap pages; training reallocates the
/// same multi-megabyte blocks every step.
void tune_allocator();

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace apiarius

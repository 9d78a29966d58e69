#include "apiarius/common.hpp"

#include <chrono>
#include <cstdio>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace apiarius {

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

Day day_of(int64_t utc_seconds) {
  return static_cast<Day>(floor_div(utc_seconds, kSecondsPerDay));
}

int slot_of(int64_t utc_seconds) {
  const int64_t within = utc_seconds - day_start(day_of(utc_seconds));
  return static_cast<int>(within / kSlotSeconds);
}

int64_t day_start(Day day) { return static_cast<int64_t>(day) * kSecondsPerDay; }

std::string format_day(Day day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Day parse_day(std::string_view text) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0, d = 0;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%d-%u-%u", &y, &m, &d) != 3) {
    throw Error("malformed date '" + s + "', expected YYYY-MM-DD");
  }
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw Error("invalid calendar date '" + s + "'");
  return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 100 << 20);
#endif
}

uint64_t split_seed(uint64_t master, uint64_t stream) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace apiarius

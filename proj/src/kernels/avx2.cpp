// Built with -mavx2; only entered after a runtime CPU check.

#include <immintrin.h>

#include <cstring>

#include "punchhole/kernels.hpp"

namespace punchhole::kernels {
namespace {

inline unsigned zero_lanes(__m256i v) {
  return static_cast<unsigned>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(v, _mm256_setzero_si256())));
}

std::size_t count_nonzero(const std::uint8_t* data, std::size_t n) {
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    auto v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(data + i));
    count += 32 - static_cast<std::size_t>(__builtin_popcount(zero_lanes(v)));
  }
  for (; i < n; ++i) count += data[i] != 0;
  return count;
}

bool any_nonzero(const std::uint8_t* data, std::size_t n) {
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    auto v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(data + i));
    if (!_mm256_testz_si256(v, v)) return true;
  }
  for (; i < n; ++i) {
    if (data[i] != 0) return true;
  }
  return false;
}

std::size_t count_both_nonzero(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t count = 0;
  std::size_t i = 0;
  const auto zero = _mm256_setzero_si256();
  for (; i + 32 <= n; i += 32) {
    auto va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    auto vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    auto either_zero = _mm256_or_si256(_mm256_cmpeq_epi8(va, zero), _mm256_cmpeq_epi8(vb, zero));
    count += 32 - static_cast<std::size_t>(
                      __builtin_popcount(static_cast<unsigned>(_mm256_movemask_epi8(either_zero))));
  }
  for (; i < n; ++i) count += (a[i] != 0) & (b[i] != 0);
  return count;
}

void quantize_unit(const double* in, std::uint8_t* out, std::size_t n) {
  const auto zero = _mm256_setzero_pd();
  const auto one = _mm256_set1_pd(1.0);
  const auto scale = _mm256_set1_pd(255.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    auto v = _mm256_loadu_pd(in + i);
    // max_pd returns the second operand when the first is NaN.
    v = _mm256_min_pd(_mm256_max_pd(v, zero), one);
    __m128i q = _mm256_cvtpd_epi32(_mm256_mul_pd(v, scale));
    q = _mm_packus_epi32(q, q);
    q = _mm_packus_epi16(q, q);
    const int packed = _mm_cvtsi128_si32(q);
    std::memcpy(out + i, &packed, 4);
  }
  if (i < n) scalar_kernels().quantize_unit(in + i, out + i, n - i);
}

}  // namespace

namespace detail {

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", count_nonzero, any_nonzero, count_both_nonzero,
                                 quantize_unit};
  return &table;
}

}  // namespace detail
}  // namespace punchhole::kernels

#pragma once

// Byte/score kernels behind mask scans, hidden-area counting and raster
// export. Each backend provides the same table; the scalar one is the
// reference the others are tested against.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace punchhole::kernels {

struct KernelTable {
  std::string_view name;
  /// Number of non-zero bytes.
  std::size_t (*count_nonzero)(const std::uint8_t* data, std::size_t n);
  bool (*any_nonzero)(const std::uint8_t* data, std::size_t n);
  /// Number of positions where both inputs are non-zero.
  std::size_t (*count_both_nonzero)(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);
  /// out[i] = round-half-even(clamp(in[i], 0, 1) * 255).
  void (*quantize_unit)(const double* in, std::uint8_t* out, std::size_t n);
};

const KernelTable& scalar_kernels();

/// Every backend compiled in and supported by the running CPU, scalar first.
std::vector<const KernelTable*> available_kernels();

/// Backend picked at startup: the widest supported one, unless the
/// PUNCHHOLE_KERNELS environment variable names another (e.g. "scalar").
const KernelTable& active_kernels();

inline std::size_t count_nonzero(std::span<const std::uint8_t> bytes) {
  return active_kernels().count_nonzero(bytes.data(), bytes.size());
}

inline bool any_nonzero(std::span<const std::uint8_t> bytes) {
  return active_kernels().any_nonzero(bytes.data(), bytes.size());
}

inline std::size_t count_both_nonzero(std::span<const std::uint8_t> a,
                                      std::span<const std::uint8_t> b) {
  return active_kernels().count_both_nonzero(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline void quantize_unit(std::span<const double> in, std::span<std::uint8_t> out) {
  active_kernels().quantize_unit(in.data(), out.data(), in.size() < out.size() ? in.size() : out.size());
}

namespace detail {
// Defined only when the AVX2 translation unit is built; null otherwise.
const KernelTable* avx2_kernels();
}  // namespace detail

}  // namespace punchhole::kernels

#include <cmath>

#include "punchhole/kernels.hpp"

namespace punchhole::kernels {
namespace {

std::size_t count_nonzero(const std::uint8_t* data, std::size_t n) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) count += data[i] != 0;
  return count;
}

bool any_nonzero(const std::uint8_t* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (data[i] != 0) return true;
  }
  return false;
}

std::size_t count_both_nonzero(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) count += (a[i] != 0) & (b[i] != 0);
  return count;
}

void quantize_unit(const double* in, std::uint8_t* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    // NaN maps to 0 via the first comparison failing.
    double v = in[i] > 0.0 ? in[i] : 0.0;
    v = v < 1.0 ? v : 1.0;
    out[i] = static_cast<std::uint8_t>(std::nearbyint(v * 255.0));
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", count_nonzero, any_nonzero, count_both_nonzero,
                                 quantize_unit};
  return table;
}

}  // namespace punchhole::kernels

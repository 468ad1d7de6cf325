#include <cstdlib>
#include <string_view>

#include "punchhole/kernels.hpp"

namespace punchhole::kernels {

#if !defined(PUNCHHOLE_HAVE_AVX2)
namespace detail {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace detail
#endif

namespace {

bool cpu_has_avx2() {
#if defined(PUNCHHOLE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable& select_kernels() {
  const auto tables = available_kernels();
  if (const char* forced = std::getenv("PUNCHHOLE_KERNELS")) {
    for (const auto* table : tables) {
      if (table->name == std::string_view(forced)) return *table;
    }
  }
  return *tables.back();
}

}  // namespace

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> tables{&scalar_kernels()};
  if (cpu_has_avx2()) {
    if (const auto* avx2 = detail::avx2_kernels()) tables.push_back(avx2);
  }
  return tables;
}

const KernelTable& active_kernels() {
  static const KernelTable& table = select_kernels();
  return table;
}

}  // namespace punchhole::kernels

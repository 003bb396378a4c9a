#include "fairdummies/common.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fairdummies {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

void keep_large_allocations() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

const char* to_string(Task task) {
  return task == Task::Regression ? "regression" : "classification";
}

Task parse_task(const std::string& text) {
  if (text == "regression") return Task::Regression;
  if (text == "classification") return Task::Classification;
  throw ConfigError("unknown task '" + text + "' (expected regression or classification)");
}

}  // namespace fairdummies

#include "semimoe/runtime.hpp"

#include <malloc.h>

#include <mutex>

namespace semimoe {

void tune_allocator() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
  });
}

}  // namespace semimoe

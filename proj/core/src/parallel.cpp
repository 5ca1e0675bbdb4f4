#include "cmpnet/parallel.hpp"

#include <cstdlib>

namespace cmpnet {

int max_threads() {
  static const int cached = [] {
    const char* env = std::getenv("CMPNET_THREADS");
    if (!env) return 1;
    const int parsed = std::atoi(env);
    return parsed < 1 ? 1 : parsed;
  }();
  return cached;
}

}  // namespace cmpnet

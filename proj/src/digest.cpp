#include "kflab/digest.hpp"

#include <cstdio>

namespace kflab {

uint64_t fnv64(std::string_view bytes) {
  Fnv64 f;
  f.update(bytes);
  return f.value();
}

std::string digest_hex(uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return std::string(buf);
}

std::string digest_of(std::string_view bytes) { return digest_hex(fnv64(bytes)); }

}  // namespace kflab

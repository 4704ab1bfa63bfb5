#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace kflab {

// FNV-1a 64-bit. Stable across platforms; used to fingerprint configs,
// datasets, annotations and checkpoints so results can refuse to mix.
class Fnv64 {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      h_ ^= c;
      h_ *= 0x100000001b3ull;
    }
  }
  uint64_t value() const { return h_; }

 private:
  uint64_t h_ = 0xcbf29ce484222325ull;
};

uint64_t fnv64(std::string_view bytes);

// 16 lowercase hex chars.
std::string digest_hex(uint64_t d);
std::string digest_of(std::string_view bytes);

}  // namespace kflab

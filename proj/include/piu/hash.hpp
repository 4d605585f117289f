#pragma once

#include <cstddef>
#include <cstdint>

namespace piu {

// FNV-1a, 64-bit. Pass the previous digest as h to hash in chunks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace piu

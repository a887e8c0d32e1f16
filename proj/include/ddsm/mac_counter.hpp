#pragma once

#include <cstdint>

namespace ddsm {

// Thread-local multiply-accumulate counter. Kernels add the MACs their loops
// actually execute; ScopedMacCount reads the delta over a region.
std::uint64_t& mac_counter();

class ScopedMacCount {
 public:
  ScopedMacCount() : start_(mac_counter()) {}
  std::uint64_t count() const { return mac_counter() - start_; }

 private:
  std::uint64_t start_;
};

}  // namespace ddsm

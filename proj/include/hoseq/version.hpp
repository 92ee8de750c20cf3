#pragma once

namespace hoseq {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hoseq

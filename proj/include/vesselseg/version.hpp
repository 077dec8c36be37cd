#pragma once

namespace vesselseg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vesselseg

#pragma once

namespace cgflow {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cgflow

#pragma once

namespace pooltest {

inline constexpr const char* kProjectName = "pooltest";
inline constexpr const char* kProjectVersion = "0.1.0";

}  // namespace pooltest

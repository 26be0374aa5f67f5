#pragma once

namespace coverset {

inline constexpr const char* kToolName = "coverset";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace coverset

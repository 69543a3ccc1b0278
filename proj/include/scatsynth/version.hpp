#pragma once

namespace scatsynth {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace scatsynth

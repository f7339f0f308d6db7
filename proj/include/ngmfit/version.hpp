#pragma once

namespace ngmfit {

inline constexpr const char* version = "0.1.0";
inline constexpr int config_spec_version = 1;

}  // namespace ngmfit

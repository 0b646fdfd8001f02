#pragma once

namespace avt {

inline constexpr const char* kVersion = "0.1.0";

} // namespace avt

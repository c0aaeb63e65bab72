#pragma once

namespace vocmix {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vocmix

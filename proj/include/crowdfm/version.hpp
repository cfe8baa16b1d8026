#pragma once

namespace crowdfm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace crowdfm

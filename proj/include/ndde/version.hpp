#pragma once

namespace ndde {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ndde

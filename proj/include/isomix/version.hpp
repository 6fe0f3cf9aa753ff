#pragma once

namespace isomix {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace isomix

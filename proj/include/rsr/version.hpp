#pragma once

#ifndef RSR_VERSION
#define RSR_VERSION "0.0.0"
#endif

namespace rsr {

inline constexpr const char* kToolVersion = RSR_VERSION;

}  // namespace rsr

#pragma once

#include <cstddef>

namespace surfreg {

// Floating width is fixed per build of the core library. The default build
// trains in single precision; SURFREG_REAL_DOUBLE selects double precision
// (used by the gradient-check suites). Everything that depends on the width
// lives in an inline namespace named after it, so both builds can be linked
// into one program.
#if defined(SURFREG_REAL_DOUBLE)
using Real = double;
#define SURFREG_NAMESPACE surfreg::inline f64
#else
using Real = float;
#define SURFREG_NAMESPACE surfreg::inline f32
#endif

inline constexpr std::size_t kRealBytes = sizeof(Real);

}  // namespace surfreg

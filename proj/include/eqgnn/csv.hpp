#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace eqgnn {

/// Round-trip decimal form; NaN prints as "nan".
inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace eqgnn

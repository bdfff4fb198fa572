// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>

namespace exsup {

// Round-trip-exact float formatting. Every CSV writer funnels through this
// one formatter so identical runs emit identical bytes.
inline std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

}  // namespace exsup

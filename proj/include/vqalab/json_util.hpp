#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace vqalab::jsonfmt {

/// Appends a double with 17 significant digits so it parses back bit for bit.
inline void append_double(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void append_doubles(std::string& out, const double* first, std::size_t n) {
  out.push_back('[');
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(',');
    append_double(out, first[i]);
  }
  out.push_back(']');
}

template <class Int>
void append_ints(std::string& out, const std::vector<Int>& v) {
  out.push_back('[');
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(v[i]);
  }
  out.push_back(']');
}

}  // namespace vqalab::jsonfmt

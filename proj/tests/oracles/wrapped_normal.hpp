#pragma once

// Finite-difference reference for the wrapped-normal score. The log-density
// difference is formed termwise, log(S(x+h)/S(x-h)) = log1p((S(x+h)-S(x-h))/S(x-h)),
// so that broad kernels do not lose digits to cancellation.

#include <cmath>

namespace xtalgen::oracle {

inline double wn_log_density_fd(double d, double sigma, int k_max, double h) {
  double num = 0, den = 0;
  for (int k = -k_max; k <= k_max; ++k) {
    const double zp = d + h + k, zm = d - h + k;
    const double ep = std::exp(-zp * zp / (2 * sigma * sigma));
    const double em = std::exp(-zm * zm / (2 * sigma * sigma));
    num += ep - em;
    den += em;
  }
  return std::log1p(num / den) / (2 * h);
}

}  // namespace xtalgen::oracle

#include "semimoe/rng.hpp"

#include <cmath>

namespace semimoe {

double Rng::normal(double mean, double stddev) {
  double u1 = next_double();
  double u2 = next_double();
  if (u1 < 1e-300) u1 = 1e-300;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  return mean + stddev * r * std::cos(theta);
}

}  // namespace semimoe

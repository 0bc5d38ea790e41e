#include "forge/rng.hpp"

#include <cmath>
#include <numbers>

namespace forge {

double Rng::normal() {
  double u1;
  do {
    u1 = unit();
  } while (u1 <= 0.0);
  double u2 = unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace forge

#include "mperl/special.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <stdexcept>
#include <string>

namespace mperl::special {

namespace {
void check_positive(double x, const char* fn) {
  if (!(x > 0.0)) {
    throw std::domain_error(std::string(fn) + " requires x > 0, got " + std::to_string(x));
  }
}
}  // namespace

double log_gamma(double x) {
  check_positive(x, "log_gamma");
  return boost::math::lgamma(x);
}

double digamma(double x) {
  check_positive(x, "digamma");
  return boost::math::digamma(x);
}

double trigamma(double x) {
  check_positive(x, "trigamma");
  return boost::math::trigamma(x);
}

}  // namespace mperl::special

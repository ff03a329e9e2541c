#pragma once

namespace mperl::special {

// log Γ(x), x > 0
double log_gamma(double x);

// ψ(x) = d/dx log Γ(x), x > 0
double digamma(double x);

// ψ₁(x) = d/dx ψ(x), x > 0
double trigamma(double x);

}  // namespace mperl::special

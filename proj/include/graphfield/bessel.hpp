#pragma once

namespace graphfield {

/// Modified Bessel function of the second kind K_nu(x) for real nu >= 0 and
/// x > 0. Temme's series for x < 2, Steed's continued fraction otherwise,
/// then upward recurrence in the order.
double bessel_k(double nu, double x);

}  // namespace graphfield

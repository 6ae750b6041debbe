#pragma once

#include <span>
#include <vector>

namespace kan {

/// Degree-k B-spline knot vector on [lo, hi] with G interior intervals and a
/// uniform-step extension of k knots beyond each end.
///
/// Invariants: knots are strictly increasing, knots[k] == lo, knots[k+G] == hi,
/// and the grid carries exactly G + k basis functions.
struct KnotGrid {
  int degree = 3;     // k
  int intervals = 5;  // G
  double lo = -1.0;
  double hi = 1.0;
  std::vector<double> knots;  // G + 2k + 1 entries

  int basis_count() const { return intervals + degree; }

  double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
};

/// Equally spaced knots with step (hi-lo)/G. Throws std::invalid_argument on
/// lo >= hi or G < 1 or k < 0.
KnotGrid make_uniform_grid(double lo, double hi, int intervals, int degree);

/// Local basis evaluation at x (clamped into [lo, hi]). Writes the degree+1
/// possibly-nonzero basis values into out[0..degree] and returns the global
/// index of the first one. All other basis functions are exactly zero at x.
int basis_nonzero(const KnotGrid& g, double x, double* out);

/// Same indexing as basis_nonzero, but first derivatives. Degree 0 yields
/// zeros (piecewise constant).
int basis_derivative_nonzero(const KnotGrid& g, double x, double* out);

/// Full basis vector (length G + k) at x.
std::vector<double> basis_eval(const KnotGrid& g, double x);

/// Full derivative vector (length G + k) at x.
std::vector<double> basis_derivative(const KnotGrid& g, double x);

/// sum_m coeffs[m] * B_m(x). Throws on coefficient length mismatch.
double spline_eval(const KnotGrid& g, std::span<const double> coeffs, double x);

/// d/dx of the spline at x.
double spline_derivative(const KnotGrid& g, std::span<const double> coeffs, double x);

/// Ridge damping added to the normal-equation diagonal in every fit.
inline constexpr double kRidgeLambda = 1e-8;

/// Least-squares spline coefficients for samples (xs, ys), solved via damped
/// normal equations. Throws std::runtime_error if the damped system is not
/// positive definite. Fits with fewer samples than basis functions are valid
/// but ridge-dominated away from the data.
std::vector<double> fit_least_squares(const KnotGrid& g,
                                      std::span<const double> xs,
                                      std::span<const double> ys);

struct AdaptResult {
  KnotGrid grid;
  std::vector<double> coeffs;
};

/// Moves interior knots toward the empirical quantiles of `samples` while the
/// range [lo, hi] stays fixed:
///
///   knot_j = uniform_blend * uniform_j + (1 - uniform_blend) * quantile_j
///
/// Ties are split evenly and a minimum spacing of 1e-6*(hi-lo) is enforced so
/// the knot vector stays strictly increasing. Coefficients are refit so the
/// represented function is preserved on the samples.
AdaptResult adapt_grid(const KnotGrid& g, std::span<const double> coeffs,
                       std::span<const double> samples, double uniform_blend);

}  // namespace kan

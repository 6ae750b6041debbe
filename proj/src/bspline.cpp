#include "kan/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kan {

namespace {

// Span index s with knots[s] <= x < knots[s+1], restricted to the interior
// range [k, k+G-1]; x == hi maps to the last interior span.
int find_span(const KnotGrid& g, double x) {
  const int k = g.degree;
  const int G = g.intervals;
  if (x >= g.knots[static_cast<std::size_t>(k + G)]) return k + G - 1;
  const auto first = g.knots.begin() + k;
  const auto last = g.knots.begin() + k + G + 1;
  const auto it = std::upper_bound(first, last, x);
  int s = static_cast<int>(it - g.knots.begin()) - 1;
  return std::clamp(s, k, k + G - 1);
}

// Cox-de Boor triangular scheme: nonzero basis values of degree `deg` at span
// s, written into n[0..deg]. n[r] is basis function s-deg+r.
void nonzero_basis_at_span(const KnotGrid& g, int s, int deg, double x, double* n) {
  thread_local std::vector<double> left, right;
  left.assign(static_cast<std::size_t>(deg) + 1, 0.0);
  right.assign(static_cast<std::size_t>(deg) + 1, 0.0);
  n[0] = 1.0;
  for (int j = 1; j <= deg; ++j) {
    left[static_cast<std::size_t>(j)] = x - g.knots[static_cast<std::size_t>(s + 1 - j)];
    right[static_cast<std::size_t>(j)] = g.knots[static_cast<std::size_t>(s + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = denom != 0.0 ? n[r] / denom : 0.0;
      n[r] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    n[j] = saved;
  }
}

}  // namespace

KnotGrid make_uniform_grid(double lo, double hi, int intervals, int degree) {
  if (!(lo < hi)) {
    throw std::invalid_argument("make_uniform_grid: invalid range [" + std::to_string(lo) +
                                ", " + std::to_string(hi) + "], need lo < hi");
  }
  if (intervals < 1) {
    throw std::invalid_argument("make_uniform_grid: invalid size G=" + std::to_string(intervals) +
                                ", need G >= 1");
  }
  if (degree < 0) {
    throw std::invalid_argument("make_uniform_grid: negative degree");
  }
  KnotGrid g;
  g.degree = degree;
  g.intervals = intervals;
  g.lo = lo;
  g.hi = hi;
  const double h = (hi - lo) / intervals;
  g.knots.resize(static_cast<std::size_t>(intervals + 2 * degree + 1));
  // Interior knots march up from lo; endpoints are pinned exactly; the
  // exterior extension grows outward from the pinned endpoints with the same
  // expressions adapt_grid uses, so a full-uniform adapt is a bitwise no-op.
  for (int j = 0; j <= intervals; ++j) {
    g.knots[static_cast<std::size_t>(degree + j)] = lo + j * h;
  }
  g.knots[static_cast<std::size_t>(degree)] = lo;
  g.knots[static_cast<std::size_t>(degree + intervals)] = hi;
  for (int i = 1; i <= degree; ++i) {
    g.knots[static_cast<std::size_t>(degree - i)] = lo - i * h;
    g.knots[static_cast<std::size_t>(degree + intervals + i)] = hi + i * h;
  }
  return g;
}

int basis_nonzero(const KnotGrid& g, double x, double* out) {
  const double xc = g.clamp(x);
  const int s = find_span(g, xc);
  nonzero_basis_at_span(g, s, g.degree, xc, out);
  return s - g.degree;
}

int basis_derivative_nonzero(const KnotGrid& g, double x, double* out) {
  const int k = g.degree;
  const double xc = g.clamp(x);
  const int s = find_span(g, xc);
  if (k == 0) {
    out[0] = 0.0;
    return s;
  }
  // Degree k-1 nonzeros at the same span: low[r] is basis function s-k+1+r.
  thread_local std::vector<double> low;
  low.assign(static_cast<std::size_t>(k), 0.0);
  nonzero_basis_at_span(g, s, k - 1, xc, low.data());
  for (int r = 0; r <= k; ++r) {
    const int i = s - k + r;
    const double a = r >= 1 ? low[static_cast<std::size_t>(r - 1)] : 0.0;
    const double b = r <= k - 1 ? low[static_cast<std::size_t>(r)] : 0.0;
    const double da = g.knots[static_cast<std::size_t>(i + k)] - g.knots[static_cast<std::size_t>(i)];
    const double db = g.knots[static_cast<std::size_t>(i + k + 1)] - g.knots[static_cast<std::size_t>(i + 1)];
    const double t1 = da != 0.0 ? a / da : 0.0;
    const double t2 = db != 0.0 ? b / db : 0.0;
    out[r] = k * (t1 - t2);
  }
  return s - k;
}

std::vector<double> basis_eval(const KnotGrid& g, double x) {
  std::vector<double> full(static_cast<std::size_t>(g.basis_count()), 0.0);
  thread_local std::vector<double> buf;
  buf.assign(static_cast<std::size_t>(g.degree) + 1, 0.0);
  const int first = basis_nonzero(g, x, buf.data());
  for (int r = 0; r <= g.degree; ++r) {
    full[static_cast<std::size_t>(first + r)] = buf[static_cast<std::size_t>(r)];
  }
  return full;
}

std::vector<double> basis_derivative(const KnotGrid& g, double x) {
  std::vector<double> full(static_cast<std::size_t>(g.basis_count()), 0.0);
  thread_local std::vector<double> buf;
  buf.assign(static_cast<std::size_t>(g.degree) + 1, 0.0);
  const int first = basis_derivative_nonzero(g, x, buf.data());
  for (int r = 0; r <= g.degree; ++r) {
    full[static_cast<std::size_t>(first + r)] = buf[static_cast<std::size_t>(r)];
  }
  return full;
}

double spline_eval(const KnotGrid& g, std::span<const double> coeffs, double x) {
  if (static_cast<int>(coeffs.size()) != g.basis_count()) {
    throw std::invalid_argument("spline_eval: coefficient length " +
                                std::to_string(coeffs.size()) + " != basis count " +
                                std::to_string(g.basis_count()));
  }
  thread_local std::vector<double> buf;
  buf.assign(static_cast<std::size_t>(g.degree) + 1, 0.0);
  const int first = basis_nonzero(g, x, buf.data());
  double acc = 0.0;
  for (int r = 0; r <= g.degree; ++r) {
    acc += coeffs[static_cast<std::size_t>(first + r)] * buf[static_cast<std::size_t>(r)];
  }
  return acc;
}

double spline_derivative(const KnotGrid& g, std::span<const double> coeffs, double x) {
  if (static_cast<int>(coeffs.size()) != g.basis_count()) {
    throw std::invalid_argument("spline_derivative: coefficient length mismatch");
  }
  thread_local std::vector<double> buf;
  buf.assign(static_cast<std::size_t>(g.degree) + 1, 0.0);
  const int first = basis_derivative_nonzero(g, x, buf.data());
  double acc = 0.0;
  for (int r = 0; r <= g.degree; ++r) {
    acc += coeffs[static_cast<std::size_t>(first + r)] * buf[static_cast<std::size_t>(r)];
  }
  return acc;
}

std::vector<double> fit_least_squares(const KnotGrid& g, std::span<const double> xs,
                                      std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw std::invalid_argument("fit_least_squares: xs/ys length mismatch");
  }
  if (xs.empty()) {
    throw std::invalid_argument("fit_least_squares: empty sample set");
  }
  const int m = g.basis_count();
  const int k = g.degree;
  std::vector<double> ata(static_cast<std::size_t>(m) * m, 0.0);
  std::vector<double> aty(static_cast<std::size_t>(m), 0.0);
  thread_local std::vector<double> buf;
  buf.assign(static_cast<std::size_t>(k) + 1, 0.0);

  // Accumulate normal equations using only the local nonzero block per sample.
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const int first = basis_nonzero(g, xs[i], buf.data());
    for (int a = 0; a <= k; ++a) {
      const double ba = buf[static_cast<std::size_t>(a)];
      aty[static_cast<std::size_t>(first + a)] += ba * ys[i];
      for (int b = 0; b <= k; ++b) {
        ata[static_cast<std::size_t>(first + a) * m + (first + b)] +=
            ba * buf[static_cast<std::size_t>(b)];
      }
    }
  }
  for (int d = 0; d < m; ++d) ata[static_cast<std::size_t>(d) * m + d] += kRidgeLambda;

  // Cholesky factorization, in place lower triangle.
  for (int c = 0; c < m; ++c) {
    for (int r = c; r < m; ++r) {
      double sum = ata[static_cast<std::size_t>(r) * m + c];
      for (int j = 0; j < c; ++j) {
        sum -= ata[static_cast<std::size_t>(r) * m + j] * ata[static_cast<std::size_t>(c) * m + j];
      }
      if (r == c) {
        if (!(sum > 0.0)) {
          throw std::runtime_error("fit_least_squares: singular normal system");
        }
        ata[static_cast<std::size_t>(c) * m + c] = std::sqrt(sum);
      } else {
        ata[static_cast<std::size_t>(r) * m + c] = sum / ata[static_cast<std::size_t>(c) * m + c];
      }
    }
  }
  // Solve L z = aty, then L^T c = z.
  std::vector<double> sol = std::move(aty);
  for (int r = 0; r < m; ++r) {
    double sum = sol[static_cast<std::size_t>(r)];
    for (int j = 0; j < r; ++j) sum -= ata[static_cast<std::size_t>(r) * m + j] * sol[static_cast<std::size_t>(j)];
    sol[static_cast<std::size_t>(r)] = sum / ata[static_cast<std::size_t>(r) * m + r];
  }
  for (int r = m - 1; r >= 0; --r) {
    double sum = sol[static_cast<std::size_t>(r)];
    for (int j = r + 1; j < m; ++j) sum -= ata[static_cast<std::size_t>(j) * m + r] * sol[static_cast<std::size_t>(j)];
    sol[static_cast<std::size_t>(r)] = sum / ata[static_cast<std::size_t>(r) * m + r];
  }
  return sol;
}

AdaptResult adapt_grid(const KnotGrid& g, std::span<const double> coeffs,
                       std::span<const double> samples, double uniform_blend) {
  if (samples.empty()) {
    throw std::invalid_argument("adapt_grid: empty sample set");
  }
  if (!(uniform_blend >= 0.0 && uniform_blend <= 1.0)) {
    throw std::invalid_argument("adapt_grid: blend must be in [0, 1]");
  }
  if (static_cast<int>(coeffs.size()) != g.basis_count()) {
    throw std::invalid_argument("adapt_grid: coefficient length mismatch");
  }
  const int k = g.degree;
  const int G = g.intervals;
  const double h = (g.hi - g.lo) / G;
  const double delta = 1e-6 * (g.hi - g.lo);

  // Targets before the knots move.
  std::vector<double> ys(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) ys[i] = spline_eval(g, coeffs, samples[i]);

  std::vector<double> sorted(samples.begin(), samples.end());
  for (double& v : sorted) v = g.clamp(v);
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto i0 = static_cast<std::size_t>(pos);
    const std::size_t i1 = std::min(i0 + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(i0);
    return sorted[i0] + frac * (sorted[i1] - sorted[i0]);
  };

  std::vector<double> interior(static_cast<std::size_t>(G) - 1);
  for (int j = 1; j < G; ++j) {
    const double uniform_pos = g.lo + j * h;
    const double q = quantile(static_cast<double>(j) / G);
    interior[static_cast<std::size_t>(j - 1)] = uniform_blend * uniform_pos + (1.0 - uniform_blend) * q;
  }

  // Split runs of ties evenly around their shared value.
  for (std::size_t i = 0; i < interior.size();) {
    std::size_t j = i + 1;
    while (j < interior.size() && interior[j] == interior[i]) ++j;
    const std::size_t run = j - i;
    if (run > 1) {
      const double center = interior[i];
      for (std::size_t r = 0; r < run; ++r) {
        interior[i + r] = center + (static_cast<double>(r) - static_cast<double>(run - 1) / 2.0) * delta;
      }
    }
    i = j;
  }
  // Clamp into the open range and enforce the minimum spacing left to right.
  for (int j = 1; j < G; ++j) {
    double& v = interior[static_cast<std::size_t>(j - 1)];
    v = std::max(v, g.lo + j * delta);
    v = std::min(v, g.hi - (G - j) * delta);
    if (j > 1) v = std::max(v, interior[static_cast<std::size_t>(j - 2)] + delta);
  }

  AdaptResult out;
  out.grid = g;
  for (int j = 1; j < G; ++j) out.grid.knots[static_cast<std::size_t>(k + j)] = interior[static_cast<std::size_t>(j - 1)];
  // Exterior extension keeps the uniform step.
  for (int i = 1; i <= k; ++i) {
    out.grid.knots[static_cast<std::size_t>(k - i)] = g.lo - i * h;
    out.grid.knots[static_cast<std::size_t>(k + G + i)] = g.hi + i * h;
  }
  out.coeffs = fit_least_squares(out.grid, samples, ys);
  return out;
}

}  // namespace kan

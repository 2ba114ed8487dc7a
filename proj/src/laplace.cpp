#include "heatlab/laplace.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <map>
#include <queue>
#include <sstream>

#include "heatlab/parallel.hpp"

namespace heatlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Multi-index enumeration: visits every omega in N^dim with |omega| = total.
void for_each_multi_index(int dim, int total,
                          const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> omega(static_cast<std::size_t>(dim), 0);
  std::function<void(int, int)> rec = [&](int axis, int remaining) {
    if (axis == dim - 1) {
      omega[static_cast<std::size_t>(axis)] = remaining;
      visit(omega);
      return;
    }
    for (int v = 0; v <= remaining; ++v) {
      omega[static_cast<std::size_t>(axis)] = v;
      rec(axis + 1, remaining - v);
    }
  };
  if (dim == 0) {
    if (total == 0) visit(omega);
    return;
  }
  rec(0, total);
}

void require_spd(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw std::invalid_argument(std::string(what) + ": Hessian must be square and nonempty");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument(std::string(what) + ": Hessian is not SPD");
}

Rational first_nonzero_exponent(const std::vector<ExpansionTerm>& terms) {
  for (const auto& term : terms)
    if (term.value != 0.0) return term.exponent;
  return terms.empty() ? Rational(0) : terms.front().exponent;
}

}  // namespace

ExpansionResult expand_nondegenerate(const Eigen::MatrixXd& phase_hessian,
                                     const JetFn& amplitude_jets, int orders) {
  require_spd(phase_hessian, "expand_nondegenerate");
  if (orders < 0) throw std::invalid_argument("expand_nondegenerate: orders must be >= 0");
  const int d = static_cast<int>(phase_hessian.rows());

  ExpansionResult result;
  for (int k = 0; k <= orders; ++k) {
    double sum = 0.0;
    for_each_multi_index(d, k, [&](const std::vector<int>& omega) {
      std::vector<int> twice(omega.size());
      double omega_fact = 1.0;
      for (std::size_t i = 0; i < omega.size(); ++i) {
        twice[i] = 2 * omega[i];
        omega_fact *= factorial(omega[i]);
      }
      sum += amplitude_jets(twice) / omega_fact;
    });
    const double coeff =
        std::pow(2.0 * kPi, 0.5 * d) / std::pow(2.0, 2 * k) * sum;
    result.coefficients.push_back({Rational(d + 2 * k, 2), coeff});
  }
  result.t_power = first_nonzero_exponent(result.coefficients);
  result.log_power = 0;
  std::ostringstream note;
  note << "truncated after t^{(d+2N)/2} with N=" << orders
       << "; omitted remainder is O(t^{(d+2N+2)/2}) for analytic amplitudes";
  result.validity = note.str();
  return result;
}

ExpansionResult expand_atype(int p, int transverse_dim,
                             const JetFn& amplitude_jets, int orders) {
  if (p < 2) throw std::invalid_argument("expand_atype: p must be >= 2");
  if (transverse_dim < 0)
    throw std::invalid_argument("expand_atype: transverse_dim must be >= 0");
  if (orders < 0) throw std::invalid_argument("expand_atype: orders must be >= 0");
  const int d = transverse_dim + 1;

  // Terms indexed by omega = (alpha, k): k derivatives along the flat u_d^{2p}
  // direction, alpha across the Gaussian block. Exponent above the leading
  // (d-1)/2 + 1/(2p) is |alpha| + k/p, so the orders cutoff keeps
  // p*|alpha| + k <= orders. Equal exponents accumulate in the map.
  std::map<Rational, double> terms;
  for (int k = 0; k <= orders; ++k) {
    const int alpha_budget = (orders - k) / p;
    for (int j = 0; j <= alpha_budget; ++j) {
      const Rational exponent((d - 1) * p + 2 * k + 1 + 2 * p * j, 2 * p);
      const double gamma_factor =
          std::tgamma((2.0 * k + 1.0) / (2.0 * p)) / (p * factorial(2 * k));
      double alpha_sum = 0.0;
      for_each_multi_index(transverse_dim, j, [&](const std::vector<int>& alpha) {
        std::vector<int> twice(static_cast<std::size_t>(d), 0);
        double alpha_fact = 1.0;
        for (std::size_t i = 0; i < alpha.size(); ++i) {
          twice[i] = 2 * alpha[i];
          alpha_fact *= factorial(alpha[i]);
        }
        twice[static_cast<std::size_t>(d - 1)] = 2 * k;
        alpha_sum += amplitude_jets(twice) / alpha_fact;
      });
      const double coeff = std::pow(kPi, 0.5 * (d - 1)) /
                           std::pow(2.0, 2 * j) * gamma_factor * alpha_sum;
      terms[exponent] += coeff;
    }
  }

  ExpansionResult result;
  for (const auto& [exponent, value] : terms)
    result.coefficients.push_back({exponent, value});
  result.t_power = first_nonzero_exponent(result.coefficients);
  result.log_power = 0;
  std::ostringstream note;
  note << "kept exponents <= (d-1)/2 + 1/(2p) + N/p with N=" << orders
       << "; steps of 1/p, equal exponents merged";
  result.validity = note.str();
  return result;
}

ExpansionResult expand_morse_bott(int surface_dim,
                                  const std::vector<SurfaceNode>& nodes,
                                  int orders) {
  if (surface_dim < 0)
    throw std::invalid_argument("expand_morse_bott: surface_dim must be >= 0");
  if (nodes.empty())
    throw std::invalid_argument("expand_morse_bott: empty surface quadrature");
  const int m = static_cast<int>(nodes.front().normal_hessian.rows());
  const int d = surface_dim + m;

  double integral = 0.0;
  for (const auto& node : nodes) {
    if (static_cast<int>(node.position.size()) != d ||
        node.normal_hessian.rows() != m || node.normal_hessian.cols() != m)
      throw std::invalid_argument(
          "expand_morse_bott: node dimensions disagree with surface_dim");
    require_spd(node.normal_hessian, "expand_morse_bott");
    const double det = node.normal_hessian.determinant();
    integral += node.weight * node.amplitude / std::sqrt(det / std::pow(2.0, m));
  }

  ExpansionResult result;
  result.coefficients.push_back(
      {Rational(m, 2), std::pow(kPi, 0.5 * m) * integral});
  result.t_power = result.coefficients.front().exponent;
  result.log_power = 0;
  std::ostringstream note;
  note << "leading term only (surface-normal Gaussian reduction); corrections at"
          " integer t steps need on-surface amplitude jets and are not computed"
          " (orders=" << orders << " requested)";
  result.validity = note.str();
  return result;
}

namespace {

// Gauss-Kronrod (G7, K15) nodes and weights on [-1, 1]; nonnegative nodes
// listed, the rule is symmetric. Odd positions (1, 3, 5, 7) are the embedded
// Gauss nodes.
constexpr double kNodes[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
constexpr double kKronrodW[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kGaussW[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
  double lo = 0.0, hi = 0.0;
  double kronrod = 0.0;
  double error = 0.0;
};

struct PanelWorse {
  bool operator()(const Panel& a, const Panel& b) const { return a.error < b.error; }
};

struct AxisBudget {
  int max_panels = 0;
  std::atomic<int>* used = nullptr;
};

Panel evaluate_panel(const std::function<double(double)>& f, double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  double kron = kKronrodW[7] * f(mid);
  double gauss = kGaussW[3] * f(mid);
  for (int i = 0; i < 7; ++i) {
    const double fs = f(mid - half * kNodes[i]) + f(mid + half * kNodes[i]);
    kron += kKronrodW[i] * fs;
    if (i % 2 == 1) gauss += kGaussW[i / 2] * fs;
  }
  Panel panel;
  panel.lo = lo;
  panel.hi = hi;
  panel.kronrod = kron * half;
  panel.error = std::abs((kron - gauss) * half);
  return panel;
}

// Globally adaptive 1-D integration: repeatedly bisect the worst panel until
// the summed Kronrod-minus-Gauss error meets the tolerance.
double integrate_axis(const std::function<double(double)>& f, double lo,
                      double hi, double rel_tol, double abs_tol,
                      int seed_panels, const AxisBudget& budget,
                      double* error_out) {
  std::priority_queue<Panel, std::vector<Panel>, PanelWorse> panels;
  double total = 0.0, total_err = 0.0;
  const double width = (hi - lo) / seed_panels;
  for (int i = 0; i < seed_panels; ++i) {
    Panel panel = evaluate_panel(f, lo + i * width, lo + (i + 1) * width);
    total += panel.kronrod;
    total_err += panel.error;
    panels.push(panel);
    if (budget.used->fetch_add(1) + 1 > budget.max_panels)
      throw QuadratureError("quadrature_oracle: refinement budget exceeded");
  }
  while (total_err > std::max(abs_tol, rel_tol * std::abs(total))) {
    Panel worst = panels.top();
    if (worst.error <= 0.0) break;  // all remaining panels are exact
    panels.pop();
    total -= worst.kronrod;
    total_err -= worst.error;
    const double mid = 0.5 * (worst.lo + worst.hi);
    for (const auto& half : {std::pair{worst.lo, mid}, std::pair{mid, worst.hi}}) {
      Panel panel = evaluate_panel(f, half.first, half.second);
      total += panel.kronrod;
      total_err += panel.error;
      panels.push(panel);
      if (budget.used->fetch_add(1) + 1 > budget.max_panels)
        throw QuadratureError("quadrature_oracle: refinement budget exceeded");
    }
  }
  if (error_out) *error_out = total_err;
  return total;
}

// Nested rule: axis 0 is the outer loop; the integrand of axis i fixes the
// prefix u_0..u_i and integrates the remaining axes recursively.
double integrate_nested(const FieldFn& integrand,
                        const std::vector<std::pair<double, double>>& region,
                        std::size_t axis, std::vector<double>& point,
                        double rel_tol, double abs_tol, int seed_panels,
                        const AxisBudget& budget, double* error_out) {
  const auto [lo, hi] = region[axis];
  std::function<double(double)> line;
  if (axis + 1 == region.size()) {
    line = [&](double u) {
      point[axis] = u;
      return integrand(point);
    };
  } else {
    line = [&](double u) {
      point[axis] = u;
      return integrate_nested(integrand, region, axis + 1, point, rel_tol,
                              abs_tol, seed_panels, budget, nullptr);
    };
  }
  return integrate_axis(line, lo, hi, rel_tol, abs_tol, seed_panels, budget,
                        error_out);
}

struct GlobalFit {
  double intercept = 0.0;
  double slope = 0.0;
  double b = 0.0;
  double rms = 0.0;
};

// Least squares of y against (1, x1) or (1, x1, x2) via normal equations.
GlobalFit least_squares(const std::vector<double>& y, const std::vector<double>& x1,
                        const std::vector<double>* x2) {
  const std::size_t n = y.size();
  const int cols = x2 ? 3 : 2;
  Eigen::MatrixXd a(n, cols);
  Eigen::VectorXd rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, 0) = 1.0;
    a(i, 1) = x1[i];
    if (x2) a(i, 2) = (*x2)[i];
    rhs(i) = y[i];
  }
  Eigen::VectorXd sol = a.colPivHouseholderQr().solve(rhs);
  GlobalFit fit;
  fit.intercept = sol(0);
  fit.slope = sol(1);
  fit.b = x2 ? sol(2) : 0.0;
  fit.rms = std::sqrt((a * sol - rhs).squaredNorm() / n);
  return fit;
}

}  // namespace

// Fits C t^a log(1/t)^b. The acceptance rule and the per-triple estimator are
// documented on PowerLogFit.
PowerLogFit fit_power_log(const std::vector<OraclePoint>& points) {
  PowerLogFit fit;
  std::vector<double> lt, ly, ll;
  for (const auto& pt : points) {
    if (pt.value <= 0.0 || pt.t >= std::exp(-1.0)) continue;  // need log log(1/t) > 0 domain
    lt.push_back(std::log(pt.t));
    ly.push_back(std::log(pt.value));
    ll.push_back(std::log(std::log(1.0 / pt.t)));
  }
  const std::size_t n = lt.size();
  if (n < 3) return fit;

  const GlobalFit power = least_squares(ly, lt, nullptr);
  fit.exponent = power.slope;
  fit.coefficient = std::exp(power.intercept);
  fit.residual_b0 = power.rms;
  if (n < 5) return fit;  // too few points to justify an extra parameter
  const GlobalFit free_b = least_squares(ly, lt, &ll);
  fit.residual_free = free_b.rms;

  // Deepest consecutive triple (t_list is descending, so the tail is the most
  // asymptotic); exact 3x3 solve kills the constant offset that biases the
  // global free-b slope.
  Eigen::Matrix3d m;
  Eigen::Vector3d rhs;
  for (int i = 0; i < 3; ++i) {
    const std::size_t j = n - 3 + i;
    m(i, 0) = 1.0;
    m(i, 1) = lt[j];
    m(i, 2) = ll[j];
    rhs(i) = ly[j];
  }
  const Eigen::Vector3d triple = m.colPivHouseholderQr().solve(rhs);
  fit.b_estimate = triple(2);

  const int b_rounded = static_cast<int>(std::lround(triple(2)));
  const bool structure = fit.residual_b0 > 1e-8;  // pure powers fit to noise
  const bool improves = fit.residual_b0 >= 10.0 * fit.residual_free;
  if (b_rounded > 0 && structure && improves) {
    fit.log_power = b_rounded;
    fit.exponent = triple(1);
    // Intercept refit with (a, b) pinned to the reported values.
    double c = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      c += ly[j] - fit.exponent * lt[j] - b_rounded * ll[j];
    fit.coefficient = std::exp(c / n);
  }
  return fit;
}

OracleResult quadrature_oracle(const FieldFn& phase, const FieldFn& amplitude,
                               const std::vector<std::pair<double, double>>& region,
                               const std::vector<double>& t_list,
                               QuadratureOptions options) {
  if (region.empty()) throw std::invalid_argument("quadrature_oracle: empty region");
  for (const auto& [lo, hi] : region)
    if (!(lo < hi)) throw std::invalid_argument("quadrature_oracle: empty region axis");
  if (t_list.empty()) throw std::invalid_argument("quadrature_oracle: empty t_list");
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    if (!(t_list[i] > 0.0))
      throw std::invalid_argument("quadrature_oracle: t values must be positive");
    if (i > 0 && !(t_list[i] < t_list[i - 1]))
      throw std::invalid_argument("quadrature_oracle: t_list must be strictly descending");
  }
  if (options.initial_panels < 1 || options.max_panels < options.initial_panels)
    throw std::invalid_argument("quadrature_oracle: invalid panel budget");

  OracleResult result;
  result.points.resize(t_list.size());
  std::vector<std::exception_ptr> failures(t_list.size());
  parallel_for(t_list.size(), [&](std::size_t i) {
    try {
      const double t = t_list[i];
      const FieldFn integrand = [&, t](const std::vector<double>& u) {
        const double h = phase(u);
        if (h > options.phase_cutoff * t) return 0.0;
        return std::exp(-h / t) * amplitude(u);
      };
      std::atomic<int> used{0};
      AxisBudget budget{options.max_panels, &used};
      std::vector<double> point(region.size(), 0.0);
      double err = 0.0;
      const double rel_axis = options.rel_tol / (2.0 * region.size());
      const double value = integrate_nested(integrand, region, 0, point, rel_axis,
                                            options.abs_tol, options.initial_panels,
                                            budget, &err);
      result.points[i] = {t, value, err};
    } catch (...) {
      failures[i] = std::current_exception();
    }
  });
  for (const auto& failure : failures)
    if (failure) std::rethrow_exception(failure);

  for (std::size_t i = 0; i + 1 < result.points.size(); ++i) {
    const auto& a = result.points[i];
    const auto& b = result.points[i + 1];
    if (a.value > 0.0 && b.value > 0.0)
      result.local_slopes.push_back(std::log(b.value / a.value) /
                                    std::log(b.t / a.t));
    else
      result.local_slopes.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  result.fit = fit_power_log(result.points);
  return result;
}

}  // namespace heatlab

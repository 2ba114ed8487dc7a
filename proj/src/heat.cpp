#include "heatlab/heat.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "heatlab/parallel.hpp"

namespace heatlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double squared_distance(const std::vector<double>& a,
                        const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

// Slope of y against x by least squares.
double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

void require_descending_positive(const std::vector<double>& t_list,
                                 const char* where) {
  if (t_list.empty())
    throw std::invalid_argument(std::string(where) + ": empty t_list");
  double prev = kInf;
  for (const double t : t_list) {
    if (!(t > 0.0) || t >= prev)
      throw std::invalid_argument(std::string(where) +
                                  ": t_list must be positive and strictly "
                                  "descending");
    prev = t;
  }
}

std::vector<double> slopes_between(const std::vector<OraclePoint>& points) {
  std::vector<double> slopes;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const auto& a = points[i];
    const auto& b = points[i + 1];
    if (a.value > 0.0 && b.value > 0.0)
      slopes.push_back(std::log(b.value / a.value) / std::log(b.t / a.t));
    else
      slopes.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return slopes;
}

// Applies the (2/t)^d Molchanov prefactor to a Laplace-integral series:
// exponents drop by d, values gain 2^d.
ExpansionResult to_heat_scale(const std::map<Rational, double>& terms, int dim,
                              const std::string& engine_note) {
  ExpansionResult series;
  const double scale = std::pow(2.0, dim);
  for (const auto& [exponent, value] : terms)
    series.coefficients.push_back({exponent - Rational(dim), value * scale});
  series.t_power = series.coefficients.front().exponent;
  for (const auto& term : series.coefficients)
    if (term.value != 0.0) {
      series.t_power = term.exponent;
      break;
    }
  series.log_power = 0;
  series.validity = engine_note + "; heat normalization (2/t)^d applied";
  return series;
}

}  // namespace

Rational heat_exponent(SingularityType type, int dim, int atype_p,
                       int bott_rank, int time_order, int space_order) {
  if (dim < 1) throw std::invalid_argument("heat_exponent: dim must be >= 1");
  if (time_order < 0 || space_order < 0)
    throw std::invalid_argument("heat_exponent: negative derivative order");
  const Rational deriv(-(space_order + 2 * time_order));
  switch (type) {
    case SingularityType::NonDegenerate:
      return deriv - Rational(dim, 2);
    case SingularityType::AType:
      if (atype_p < 2)
        throw std::invalid_argument("heat_exponent: A-type needs p >= 2");
      return deriv - Rational(dim + 1, 2) + Rational(1, 2 * atype_p);
    case SingularityType::MorseBott:
      if (bott_rank < 1 || bott_rank >= dim)
        throw std::invalid_argument(
            "heat_exponent: Morse-Bott rank must lie in [1, dim)");
      return deriv - Rational(dim + bott_rank, 2);
    default:
      throw std::invalid_argument(
          "heat_exponent: Unknown classification predicts no exponent");
  }
}

std::vector<double> default_heat_tgrid(double distance) {
  if (!(distance > 0.0))
    throw std::invalid_argument("default_heat_tgrid: distance must be positive");
  std::vector<double> t(9);
  const double t0 = 0.1 * distance * distance;
  for (int j = 0; j < 9; ++j) t[j] = t0 * std::pow(2.0, -j);
  return t;
}

EmpiricalSlope heat_normalized_fit(
    const std::vector<OraclePoint>& integral_points, int dim) {
  if (dim < 1)
    throw std::invalid_argument("heat_normalized_fit: dim must be >= 1");
  EmpiricalSlope out;
  out.points.reserve(integral_points.size());
  for (const auto& pt : integral_points) {
    if (!(pt.t > 0.0))
      throw std::invalid_argument("heat_normalized_fit: nonpositive t");
    OraclePoint q = pt;
    const double scale = std::pow(2.0 / pt.t, dim);
    q.value *= scale;
    q.error_estimate *= scale;
    out.points.push_back(q);
  }
  out.local_slopes = slopes_between(out.points);
  out.fit = fit_power_log(out.points);
  return out;
}

Rational HeatAsymptotics::exponent() const {
  if (empirical || series.coefficients.empty())
    throw std::logic_error(
        "HeatAsymptotics::exponent: fallback result carries no engine series; "
        "read empirical->fit");
  return series.t_power;
}

Rational HeatAsymptotics::derivative_exponent(int time_order,
                                              int space_order) const {
  return heat_exponent(type, dim(), atype_p, bott_rank, time_order,
                       space_order);
}

std::vector<double> curve_weights(
    const std::vector<std::vector<double>>& points, double loop_factor) {
  const std::size_t n = points.size();
  if (n < 2)
    throw std::invalid_argument("curve_weights: need at least 2 points");

  std::vector<std::size_t> order;
  order.reserve(n);
  std::vector<char> used(n, 0);
  order.push_back(0);
  used[0] = 1;
  while (order.size() < n) {
    const auto& cur = points[order.back()];
    std::size_t best = n;
    double best_d2 = kInf;
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      const double d2 = squared_distance(cur, points[j]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    order.push_back(best);
    used[best] = 1;
  }

  std::vector<double> gap(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i)
    gap[i] = std::sqrt(squared_distance(points[order[i]], points[order[i + 1]]));
  const double closing =
      std::sqrt(squared_distance(points[order.back()], points[order.front()]));
  std::vector<double> sorted_gaps = gap;
  std::sort(sorted_gaps.begin(), sorted_gaps.end());
  const double median = sorted_gaps[(n - 1) / 2];
  const bool closed = n >= 3 && closing <= loop_factor * median;

  std::vector<double> weights(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double before = i == 0 ? (closed ? closing : 0.0) : gap[i - 1];
    const double after = i + 1 == n ? (closed ? closing : 0.0) : gap[i];
    weights[order[i]] = 0.5 * (before + after);
  }
  return weights;
}

HeatAsymptotics assemble_leading(const MidpointSetResult& midpoints, int dim,
                                 double distance,
                                 const ScalarFn& amplitude_at) {
  if (dim < 1)
    throw std::invalid_argument("assemble_leading: dim must be >= 1");
  if (midpoints.gamma.empty())
    throw std::invalid_argument("assemble_leading: empty minimizer cloud");
  if (!amplitude_at)
    throw std::invalid_argument("assemble_leading: amplitude callback required");

  HeatAsymptotics out;
  out.distance = distance;
  out.type = midpoints.type;
  out.atype_p = midpoints.atype_p;
  out.bott_rank = midpoints.bott_rank;

  std::map<Rational, double> terms;
  std::string engine_note;

  switch (midpoints.type) {
    case SingularityType::NonDegenerate: {
      for (const auto& pt : midpoints.gamma) {
        if (static_cast<int>(pt.eigenvalues.size()) != dim ||
            static_cast<int>(pt.eigenvectors.size()) != dim * dim)
          throw std::invalid_argument(
              "assemble_leading: cloud point lacks Hessian eigendata");
        Eigen::Map<const Eigen::MatrixXd> vecs(pt.eigenvectors.data(), dim,
                                               dim);
        Eigen::Map<const Eigen::VectorXd> vals(pt.eigenvalues.data(), dim);
        const Eigen::MatrixXd hessian =
            vecs * vals.asDiagonal() * vecs.transpose();
        const double det = vals.prod();
        const double f0 = amplitude_at(pt.z) / std::sqrt(det);
        const ExpansionResult part = expand_nondegenerate(
            hessian, [f0](const std::vector<int>&) { return f0; }, 0);
        for (const auto& term : part.coefficients)
          terms[term.exponent] += term.value;
        engine_note = part.validity;
      }
      break;
    }
    case SingularityType::AType: {
      const int p = midpoints.atype_p;
      if (p < 2 || !(midpoints.atype_coeff > 0.0))
        throw std::invalid_argument(
            "assemble_leading: A-type cloud without normal-form data");
      for (const auto& pt : midpoints.gamma) {
        if (pt.kernel_dim != 1 ||
            static_cast<int>(pt.eigenvalues.size()) != dim)
          throw std::invalid_argument(
              "assemble_leading: A-type cloud point must have a "
              "one-dimensional kernel");
        // Normal-form Jacobian: c^{-1/2p} along the kernel, sqrt(2/lambda)
        // per transverse eigendirection.
        double jacobian =
            std::pow(midpoints.atype_coeff, -1.0 / (2.0 * p));
        for (int j = 1; j < dim; ++j) {
          const double lambda = pt.eigenvalues[j];
          if (!(lambda > 0.0))
            throw std::invalid_argument(
                "assemble_leading: nonpositive transverse eigenvalue");
          jacobian *= std::sqrt(2.0 / lambda);
        }
        const double g0 = amplitude_at(pt.z) * jacobian;
        const ExpansionResult part = expand_atype(
            p, dim - 1, [g0](const std::vector<int>&) { return g0; }, 0);
        for (const auto& term : part.coefficients)
          terms[term.exponent] += term.value;
        engine_note = part.validity;
      }
      break;
    }
    case SingularityType::MorseBott: {
      const int r = midpoints.bott_rank;
      if (r != 1)
        throw std::invalid_argument(
            "assemble_leading: only rank-1 minimizer curves have a chained "
            "quadrature; higher ranks take the empirical fallback");
      if (midpoints.gamma.size() < 4)
        throw std::invalid_argument(
            "assemble_leading: minimizer curve cloud too thin to chain");
      std::vector<std::vector<double>> positions;
      positions.reserve(midpoints.gamma.size());
      for (const auto& pt : midpoints.gamma) positions.push_back(pt.z);
      const std::vector<double> weights = curve_weights(positions);

      std::vector<SurfaceNode> nodes(midpoints.gamma.size());
      for (std::size_t i = 0; i < midpoints.gamma.size(); ++i) {
        const auto& pt = midpoints.gamma[i];
        if (static_cast<int>(pt.eigenvalues.size()) != dim)
          throw std::invalid_argument(
              "assemble_leading: cloud point lacks Hessian eigendata");
        nodes[i].position = pt.z;
        nodes[i].weight = weights[i];
        nodes[i].amplitude = amplitude_at(pt.z);
        Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(dim - r, dim - r);
        for (int j = r; j < dim; ++j)
          normal(j - r, j - r) = pt.eigenvalues[j];
        nodes[i].normal_hessian = std::move(normal);
      }
      const ExpansionResult part = expand_morse_bott(r, nodes, 0);
      for (const auto& term : part.coefficients)
        terms[term.exponent] += term.value;
      engine_note = part.validity;
      break;
    }
    default:
      throw std::invalid_argument(
          "assemble_leading: Unknown classification has no closed-form "
          "engine");
  }

  out.series = to_heat_scale(terms, dim, engine_note);
  out.leading_coefficient = 0.0;
  for (const auto& term : out.series.coefficients)
    if (term.exponent == out.series.t_power) {
      out.leading_coefficient = term.value;
      break;
    }
  return out;
}

std::vector<double> FieldGrid::node(std::size_t flat) const {
  const int d = dim();
  const std::size_t n = static_cast<std::size_t>(nodes_per_axis);
  std::vector<double> z(d);
  for (int j = 0; j < d; ++j) {
    const std::size_t ij = flat % n;
    flat /= n;
    z[j] = lo[j] + (static_cast<double>(ij) + 0.5) * (hi[j] - lo[j]) /
                       static_cast<double>(nodes_per_axis);
  }
  return z;
}

FieldGrid tabulate_hinged(HingedField& field, const std::vector<double>& lo,
                          const std::vector<double>& hi, int nodes_per_axis,
                          const ScalarFn& prefactor,
                          const std::optional<ShootOptions>& solver) {
  const int d = field.model().dim();
  if (static_cast<int>(lo.size()) != d || static_cast<int>(hi.size()) != d)
    throw std::invalid_argument("tabulate_hinged: box dimension mismatch");
  if (nodes_per_axis < 1)
    throw std::invalid_argument("tabulate_hinged: nodes_per_axis must be >= 1");
  const ChartBounds& bounds = field.model().bounds();
  for (int j = 0; j < d; ++j) {
    if (!(lo[j] < hi[j]))
      throw std::invalid_argument("tabulate_hinged: empty box axis");
    if (lo[j] < bounds.lo[j] || hi[j] > bounds.hi[j])
      throw std::invalid_argument(
          "tabulate_hinged: box leaves the chart bounds");
  }

  FieldGrid grid;
  grid.lo = lo;
  grid.hi = hi;
  grid.nodes_per_axis = nodes_per_axis;
  grid.endpoint_distance = field.endpoint_distance();
  grid.cell_volume = 1.0;
  for (int j = 0; j < d; ++j)
    grid.cell_volume *= (hi[j] - lo[j]) / nodes_per_axis;

  const std::size_t n = static_cast<std::size_t>(nodes_per_axis);
  std::size_t total = 1;
  for (int j = 0; j < d; ++j) total *= n;
  grid.h.assign(total, kInf);
  grid.d_xz.assign(total, kInf);
  grid.d_zy.assign(total, kInf);
  grid.amplitude.assign(total, 0.0);

  const ShootOptions opts = solver ? *solver : field.options();
  const SubRiemannianModel& model = field.model();

  auto fill_cell = [&](HingedField::Probe& probe, std::size_t flat) {
    const std::vector<double> z = grid.node(flat);
    grid.amplitude[flat] = (prefactor ? prefactor(z) : 1.0) *
                           model.volume_density_at(z.data());
    try {
      auto [rx, ry] = probe.legs(z);
      grid.d_xz[flat] = rx.distance;
      grid.d_zy[flat] = ry.distance;
      grid.h[flat] =
          0.5 * (rx.distance * rx.distance + ry.distance * ry.distance);
      return std::make_optional(std::make_pair(std::move(rx), std::move(ry)));
    } catch (const ShootError&) {
    } catch (const ChartExitError&) {
    }
    return std::optional<
        std::pair<DistanceSolver::Result, DistanceSolver::Result>>{};
  };

  // Serial spine along the center column of axis 0; each parallel line walks
  // outward from it with a primed probe, so warm caches move one cell at a
  // time.
  const std::size_t lines = total / n;
  const std::size_t m0 = n / 2;
  std::vector<DistanceSolver::Result> spine_x(lines), spine_y(lines);
  std::vector<char> spine_ok(lines, 0);
  {
    HingedField::Probe spine(field, opts);
    for (std::size_t li = 0; li < lines; ++li) {
      auto legs = fill_cell(spine, m0 + n * li);
      if (legs) {
        spine_x[li] = std::move(legs->first);
        spine_y[li] = std::move(legs->second);
        spine_ok[li] = 1;
      }
    }
  }
  parallel_for(lines, [&](std::size_t li) {
    const std::vector<double> spine_z = grid.node(m0 + n * li);
    for (const int dir : {-1, +1}) {
      HingedField::Probe probe(field, opts);
      if (spine_ok[li]) probe.prime(spine_z, spine_x[li], spine_y[li]);
      for (std::size_t i0 = m0 + dir;
           i0 < n;  // unsigned wrap ends the dir = -1 walk below 0
           i0 += dir)
        fill_cell(probe, i0 + n * li);
    }
  });
  return grid;
}

double grid_sum(const FieldGrid& grid, double t, double h_ref,
                double phase_cutoff, double eps) {
  if (!(t > 0.0)) throw std::invalid_argument("grid_sum: t must be positive");
  const double half_reach =
      eps > 0.0 ? 0.5 * (grid.endpoint_distance + eps) : kInf;
  double sum = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double h = grid.h[i];
    if (!std::isfinite(h)) continue;
    const double phase = h - h_ref;
    if (phase > phase_cutoff * t) continue;
    if (grid.d_xz[i] > half_reach || grid.d_zy[i] > half_reach) continue;
    sum += std::exp(-phase / t) * grid.amplitude[i];
  }
  return sum * grid.cell_volume;
}

EmpiricalSlope empirical_heat_slope(HingedField& field,
                                    const MidpointSetResult& midpoints,
                                    const std::vector<double>& t_list,
                                    const EmpiricalOptions& options) {
  require_descending_positive(t_list, "empirical_heat_slope");
  if (midpoints.gamma.empty())
    throw std::invalid_argument("empirical_heat_slope: empty minimizer cloud");
  const int d = field.model().dim();

  std::vector<double> box_lo(d, kInf), box_hi(d, -kInf);
  double lambda_min = kInf;
  double lambda_max = 0.0;
  for (const auto& pt : midpoints.gamma) {
    for (int j = 0; j < d; ++j) {
      box_lo[j] = std::min(box_lo[j], pt.z[j]);
      box_hi[j] = std::max(box_hi[j], pt.z[j]);
    }
    if (static_cast<int>(pt.eigenvalues.size()) != d) continue;
    for (int j = pt.kernel_dim; j < d; ++j) {
      const double lambda = pt.eigenvalues[j];
      if (lambda > 0.0) {
        lambda_min = std::min(lambda_min, lambda);
        lambda_max = std::max(lambda_max, lambda);
      }
    }
  }
  if (!(lambda_max > 0.0)) lambda_min = lambda_max = 1.0;

  const ChartBounds& bounds = field.model().bounds();
  EmpiricalSlope out;
  for (const double t : t_list) {
    // Support estimate: the phase cutoff is reached at transverse
    // displacement sqrt(2 cutoff t / lambda), or along an A-type kernel at
    // (cutoff t / c)^{1/2p}.
    double width = options.box_safety *
                   std::sqrt(2.0 * options.phase_cutoff * t / lambda_min);
    if (midpoints.type == SingularityType::AType &&
        midpoints.atype_coeff > 0.0 && midpoints.atype_p >= 2)
      width = std::max(
          width, options.box_safety *
                     std::pow(options.phase_cutoff * t / midpoints.atype_coeff,
                              1.0 / (2.0 * midpoints.atype_p)));

    std::vector<double> lo(d), hi(d);
    double span = 0.0;
    for (int j = 0; j < d; ++j) {
      lo[j] = std::max(box_lo[j] - width, bounds.lo[j]);
      hi[j] = std::min(box_hi[j] + width, bounds.hi[j]);
      span = std::max(span, hi[j] - lo[j]);
    }
    const double sigma = std::sqrt(2.0 * t / lambda_max);
    int nodes = static_cast<int>(
        std::ceil(span / (options.spacing_factor * sigma)));
    nodes = std::max(nodes, options.min_nodes);
    if (nodes > options.max_nodes) {
      std::ostringstream msg;
      msg << "empirical_heat_slope: t=" << t << " needs " << nodes
          << " nodes per axis to resolve width " << sigma << " (max "
          << options.max_nodes << "); trim t_list or raise max_nodes";
      throw QuadratureError(msg.str());
    }
    const FieldGrid grid =
        tabulate_hinged(field, lo, hi, nodes, options.prefactor, options.solver);
    OraclePoint point;
    point.t = t;
    point.value = std::pow(2.0 / t, d) *
                  grid_sum(grid, t, midpoints.h_min, options.phase_cutoff);
    out.points.push_back(point);
  }
  out.local_slopes = slopes_between(out.points);
  out.fit = fit_power_log(out.points);
  return out;
}

HeatAsymptotics molchanov_leading(HingedField& field,
                                  const MidpointSetResult& midpoints,
                                  const std::vector<double>& t_list,
                                  const MolchanovOptions& options) {
  const int d = field.model().dim();
  const double distance = field.endpoint_distance();
  if (!(distance > 0.0))
    throw std::invalid_argument("molchanov_leading: coincident endpoints");

  const bool thin_curve =
      midpoints.type == SingularityType::MorseBott &&
      (midpoints.bott_rank != 1 || midpoints.gamma.size() < 4);
  const bool engine = midpoints.type != SingularityType::Unknown &&
                      !midpoints.gamma.empty() && !thin_curve;

  HeatAsymptotics out;
  if (engine) {
    const SubRiemannianModel& model = field.model();
    auto amplitude = [&](const std::vector<double>& z) {
      const double pre = options.prefactor ? options.prefactor(z) : 1.0;
      return pre * model.volume_density_at(z.data());
    };
    out = assemble_leading(midpoints, d, distance, amplitude);
    out.coefficient_error =
        std::abs(out.leading_coefficient) * options.prefactor_rel_error;
  } else {
    if (t_list.empty())
      throw std::invalid_argument(
          "molchanov_leading: the empirical fallback needs a non-empty "
          "t_list");
    EmpiricalOptions grid = options.grid;
    grid.prefactor = options.prefactor;
    out.empirical = empirical_heat_slope(field, midpoints, t_list, grid);
    out.type = midpoints.type;
    out.atype_p = midpoints.atype_p;
    out.bott_rank = midpoints.bott_rank;
    out.leading_coefficient = out.empirical->fit.coefficient;
    const double log_rms = out.empirical->fit.log_power > 0
                               ? out.empirical->fit.residual_free
                               : out.empirical->fit.residual_b0;
    out.coefficient_error =
        std::abs(out.leading_coefficient) *
        (std::expm1(log_rms) + options.prefactor_rel_error);
    out.series.validity =
        "empirical grid-sum fallback; slope and coefficient from the fit";
    out.distance = distance;
  }
  out.x = field.x();
  out.y = field.y();
  return out;
}

BoundsReport universal_bounds_check(const HeatAsymptotics& asymptotics,
                                    const std::vector<double>& t_list,
                                    const std::vector<double>& pt_values,
                                    double slope_tol) {
  require_descending_positive(t_list, "universal_bounds_check");
  if (t_list.size() != pt_values.size())
    throw std::invalid_argument(
        "universal_bounds_check: t_list and pt_values disagree in length");
  if (t_list.size() < 2)
    throw std::invalid_argument(
        "universal_bounds_check: need at least two t values");
  const int d = asymptotics.dim();
  if (d < 1)
    throw std::invalid_argument(
        "universal_bounds_check: asymptotics carries no endpoint data");
  const double quarter_sq = 0.25 * asymptotics.distance * asymptotics.distance;

  BoundsReport report;
  report.t = t_list;
  report.ok = true;
  std::vector<double> log_t, log_lower, log_upper;
  for (std::size_t i = 0; i < t_list.size(); ++i) {
    const double t = t_list[i];
    const double pt = pt_values[i];
    if (!(pt > 0.0) || !std::isfinite(pt)) {
      report.lower_scaled.push_back(std::numeric_limits<double>::quiet_NaN());
      report.upper_scaled.push_back(std::numeric_limits<double>::quiet_NaN());
      if (report.ok) {
        std::ostringstream msg;
        msg << "nonpositive p_t at t=" << t;
        report.detail = msg.str();
        report.ok = false;
      }
      continue;
    }
    // exp(log p_t + d^2/4t + e log t): e^{d^2/4t} alone would overflow.
    const double core = std::log(pt) + quarter_sq / t;
    const double lower = std::exp(core + 0.5 * d * std::log(t));
    const double upper = std::exp(core + (d - 0.5) * std::log(t));
    report.lower_scaled.push_back(lower);
    report.upper_scaled.push_back(upper);
    log_t.push_back(std::log(t));
    log_lower.push_back(core + 0.5 * d * std::log(t));
    log_upper.push_back(core + (d - 0.5) * std::log(t));
  }
  if (log_t.size() < 2) {
    report.ok = false;
    if (report.detail.empty())
      report.detail = "fewer than two usable p_t values";
    return report;
  }

  report.lower_constant = kInf;
  report.upper_constant = 0.0;
  for (std::size_t i = 0; i < report.lower_scaled.size(); ++i) {
    if (!std::isfinite(report.lower_scaled[i])) continue;
    report.lower_constant = std::min(report.lower_constant,
                                     report.lower_scaled[i]);
    report.upper_constant = std::max(report.upper_constant,
                                     report.upper_scaled[i]);
  }
  report.lower_slope = ls_slope(log_t, log_lower);
  report.upper_slope = ls_slope(log_t, log_upper);

  // Trend test: the lower-scaled values must not decay toward 0 as t -> 0
  // (positive log-log slope), the upper-scaled values must not diverge
  // (negative slope).
  if (report.lower_slope > slope_tol) {
    report.ok = false;
    std::ostringstream msg;
    msg << "lower bound decays: slope " << report.lower_slope << " > "
        << slope_tol;
    report.detail = msg.str();
  } else if (report.upper_slope < -slope_tol) {
    report.ok = false;
    std::ostringstream msg;
    msg << "upper bound diverges: slope " << report.upper_slope << " < "
        << -slope_tol;
    report.detail = msg.str();
  }
  return report;
}

C0Estimate c0_estimate(int dim, double distance,
                       const std::vector<double>& t_list,
                       const KernelFn& kernel,
                       const std::vector<double>& sigmas,
                       double residual_threshold) {
  if (dim < 1) throw std::invalid_argument("c0_estimate: dim must be >= 1");
  if (!(distance > 0.0))
    throw std::invalid_argument("c0_estimate: distance must be positive");
  if (t_list.size() < 3)
    throw std::invalid_argument("c0_estimate: need at least three t values");
  if (!kernel)
    throw std::invalid_argument("c0_estimate: kernel callback required");
  if (!sigmas.empty() && sigmas.size() != t_list.size())
    throw std::invalid_argument(
        "c0_estimate: sigmas and t_list disagree in length");

  const double quarter_sq = 0.25 * distance * distance;
  const std::size_t n = t_list.size();
  std::vector<double> scaled(n), weight(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t_list[i];
    if (!(t > 0.0))
      throw std::invalid_argument("c0_estimate: nonpositive t value");
    const double pt = kernel(t);
    if (!(pt > 0.0) || !std::isfinite(pt))
      throw std::invalid_argument(
          "c0_estimate: kernel returned a nonpositive value");
    // p_t t^{d/2} e^{d^2/4t}, formed in log space.
    const double log_scale = 0.5 * dim * std::log(t) + quarter_sq / t;
    scaled[i] = std::exp(std::log(pt) + log_scale);
    if (sigmas.empty()) {
      weight[i] = 1.0;
    } else {
      if (!(sigmas[i] > 0.0))
        throw std::invalid_argument("c0_estimate: sigmas must be positive");
      const double sigma_scaled = sigmas[i] * std::exp(log_scale);
      weight[i] = 1.0 / (sigma_scaled * sigma_scaled);
    }
  }

  double s0 = 0.0, s1 = 0.0, s2 = 0.0, sy = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s0 += weight[i];
    s1 += weight[i] * t_list[i];
    s2 += weight[i] * t_list[i] * t_list[i];
    sy += weight[i] * scaled[i];
    sty += weight[i] * t_list[i] * scaled[i];
  }
  const double det = s0 * s2 - s1 * s1;

  C0Estimate est;
  est.c0 = (s2 * sy - s1 * sty) / det;
  est.slope = (s0 * sty - s1 * sy) / det;

  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = scaled[i] - est.c0 - est.slope * t_list[i];
    ss += r * r;
  }
  est.residual_rms = std::sqrt(ss / n);

  // Intercept variance: known per-point sigmas give it directly; otherwise
  // the residuals set the noise scale (n - 2 fit degrees of freedom).
  double var_c0 = s2 / det;
  if (sigmas.empty()) var_c0 *= ss / static_cast<double>(n - 2);
  est.ci_halfwidth = 1.96 * std::sqrt(var_c0);

  est.ok = est.c0 > 0.0 &&
           est.residual_rms <= residual_threshold * std::abs(est.c0);
  return est;
}

}  // namespace heatlab

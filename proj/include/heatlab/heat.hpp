#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/hinged.hpp"
#include "heatlab/laplace.hpp"
#include "heatlab/rational.hpp"

namespace heatlab {

// Power of t in e^{d^2/4t} (d/dt)^l Z^alpha p_t predicted by the minimizer
// classification (space_order = |alpha|, derivatives are bookkeeping only):
//   NonDegenerate      -(|alpha| + 2l) - d/2
//   AType(p)           -(|alpha| + 2l) - (d+1)/2 + 1/(2p)
//   MorseBott(r)       -(|alpha| + 2l) - (d+r)/2
// Throws std::invalid_argument on Unknown or out-of-range arguments.
Rational heat_exponent(SingularityType type, int dim, int atype_p,
                       int bott_rank, int time_order = 0, int space_order = 0);

// Geometric default grid t = 0.1 d^2 * 2^{-j}, j = 0..8, descending.
std::vector<double> default_heat_tgrid(double distance);

// Slope diagnostics of a sweep in the heat normalization e^{d^2/4t} p_t.
struct EmpiricalSlope {
  std::vector<OraclePoint> points;   // one per t, descending t
  std::vector<double> local_slopes;  // dlog(value)/dlog(t) between neighbors
  PowerLogFit fit;
};

// Rescales Laplace-integral samples S(t) to (2/t)^dim * S(t) — the Molchanov
// normalization of e^{d^2/4t} p_t — and fits slope diagnostics.
EmpiricalSlope heat_normalized_fit(const std::vector<OraclePoint>& integral_points,
                                   int dim);

// Small-time asymptotics of e^{d^2/4t} p_t(x,y) assembled from the hinged
// minimizer classification. Engine-path results carry a closed-form series;
// the grid fallback (Unknown classification, or Morse-Bott data the curve
// quadrature cannot handle) fills `empirical` instead and leaves the series
// empty.
struct HeatAsymptotics {
  std::vector<double> x;
  std::vector<double> y;
  double distance = 0.0;
  SingularityType type = SingularityType::Unknown;
  int atype_p = 0;
  int bott_rank = 0;
  ExpansionResult series;            // for e^{d^2/4t} p_t; empty on fallback
  double leading_coefficient = 0.0;
  double coefficient_error = 0.0;    // propagated prefactor error bar
  std::optional<EmpiricalSlope> empirical;

  int dim() const { return static_cast<int>(x.size()); }
  // Leading t-power of the engine series; fallback results report the fitted
  // slope in empirical->fit instead (std::logic_error here).
  Rational exponent() const;
  // Predicted t-power of e^{d^2/4t} (d/dt)^l Z^alpha p_t (bookkeeping only).
  Rational derivative_exponent(int time_order, int space_order) const;
};

// Arc-length trapezoid weights for an unordered sample of a one-dimensional
// minimizer curve: nearest-neighbor chaining from the first point, closed
// when the return gap is at most loop_factor * median gap. Weights are
// returned in the input order and sum to the polygon length.
std::vector<double> curve_weights(const std::vector<std::vector<double>>& points,
                                  double loop_factor = 2.0);

// Pure leading-order assembly: classification + minimizer cloud + amplitude
// values -> series for e^{d^2/4t} p_t. amplitude_at must return the full
// integrand prefactor c0(x,z) c0(z,y) * volume density at a cloud point.
// A-type normal-form data (atype_p, atype_coeff) is cloud-level: every cloud
// point shares it. Morse-Bott is supported for bott_rank 1 with at least 4
// cloud points (curve quadrature); other ranks throw std::invalid_argument,
// as do Unknown classifications and empty clouds.
HeatAsymptotics assemble_leading(const MidpointSetResult& midpoints, int dim,
                                 double distance, const ScalarFn& amplitude_at);

// Uniform cell-centered tabulation of the hinged field over a box: node
// (i_0..i_{d-1}) sits at lo + (i+1/2) * (hi-lo)/n per axis, axis 0 fastest.
// Solver failures leave h = +infinity at the node.
struct FieldGrid {
  std::vector<double> lo;
  std::vector<double> hi;
  int nodes_per_axis = 0;
  double cell_volume = 0.0;
  double endpoint_distance = 0.0;    // d(x,y) of the generating field
  std::vector<double> h;             // hinged energy per node
  std::vector<double> d_xz;          // leg distances per node
  std::vector<double> d_zy;
  std::vector<double> amplitude;     // prefactor * volume density per node

  int dim() const { return static_cast<int>(lo.size()); }
  std::size_t size() const { return h.size(); }
  std::vector<double> node(std::size_t flat) const;
};

// One hinged-energy evaluation per node, rows along axis 0 walked outward
// from a serially seeded spine so warm caches always move one cell. The box
// must sit inside the model chart bounds. prefactor defaults to 1; solver
// options default to the field's own (pass a scan tier for big grids).
FieldGrid tabulate_hinged(HingedField& field, const std::vector<double>& lo,
                          const std::vector<double>& hi, int nodes_per_axis,
                          const ScalarFn& prefactor = {},
                          const std::optional<ShootOptions>& solver = {});

// Midpoint-rule sum over grid nodes of e^{-(h - h_ref)/t} * amplitude *
// cell_volume. Nodes with (h - h_ref)/t > phase_cutoff or non-finite h are
// skipped; eps > 0 additionally restricts to the fattened set (both legs
// within (endpoint_distance + eps)/2).
double grid_sum(const FieldGrid& grid, double t, double h_ref,
                double phase_cutoff = 40.0, double eps = 0.0);

struct EmpiricalOptions {
  ScalarFn prefactor;           // c0(x,z) c0(z,y); 1 when absent
  double phase_cutoff = 40.0;   // node skipped when (h - h_min)/t exceeds this
  double spacing_factor = 1.1;  // node spacing <= factor * narrowest width
  int min_nodes = 9;            // per axis
  int max_nodes = 81;           // per axis; exceeding it throws QuadratureError
  double box_safety = 1.2;      // margin over the cutoff support estimate
  std::optional<ShootOptions> solver;  // default: the field's own options
};

// Grid-sum sweep of S(t) = int e^{-(h - h_min)/t} * prefactor dmu over per-t
// boxes sized from the cloud's Hessian data (transverse Gaussian width
// sqrt(2 cutoff t / lambda_min), A-type kernel width (cutoff t / c)^{1/2p}),
// clipped to the chart bounds; reports (2/t)^d S(t) — the heat normalization
// up to the constant e^{-d^2/4t} prefactor — with slope diagnostics. Node
// counts adapt per t to resolve the narrowest Gaussian width; a grid that
// would need more than max_nodes per axis throws QuadratureError.
EmpiricalSlope empirical_heat_slope(HingedField& field,
                                    const MidpointSetResult& midpoints,
                                    const std::vector<double>& t_list,
                                    const EmpiricalOptions& options = {});

struct MolchanovOptions {
  // c0(x,z) * c0(z,y) over the chart; 1 when absent. Limits downstream are
  // insensitive to smooth positive prefactors; tests exercise both choices.
  ScalarFn prefactor;
  double prefactor_rel_error = 0.0;  // propagated into coefficient_error
  EmpiricalOptions grid;             // fallback sweep controls
};

// Leading small-time asymptotics of p_t(x,y) from the Molchanov
// representation p_t = (2/t)^d int_{Gamma_eps} e^{-h/t} c0 c0 dmu + error:
// routes the classified minimizer cloud to the matching series engine, or —
// for Unknown classification, Morse-Bott rank >= 2, or a curve cloud too thin
// to chain — to the empirical grid sweep over t_list (which must then be
// non-empty). Requires x != y (positive distance).
HeatAsymptotics molchanov_leading(HingedField& field,
                                  const MidpointSetResult& midpoints,
                                  const std::vector<double>& t_list,
                                  const MolchanovOptions& options = {});

// Two-sided universal bound check: t^{d/2} e^{d^2/4t} p_t stays bounded away
// from 0 and t^{d-1/2} e^{d^2/4t} p_t stays bounded above as t drops. On a
// finite grid the check is a trend test: the lower-scaled sequence must not
// decay toward 0 as t -> 0 (log-log slope <= slope_tol) and the upper-scaled
// sequence must not diverge (slope >= -slope_tol). Scaled values are computed
// as exp(log p_t + d^2/4t + e log t), never forming e^{d^2/4t} alone.
struct BoundsReport {
  std::vector<double> t;
  std::vector<double> lower_scaled;  // t^{d/2}   e^{d^2/4t} p_t
  std::vector<double> upper_scaled;  // t^{d-1/2} e^{d^2/4t} p_t
  double lower_constant = 0.0;       // min of lower_scaled
  double upper_constant = 0.0;       // max of upper_scaled
  double lower_slope = 0.0;          // log-log slope of lower_scaled vs t
  double upper_slope = 0.0;
  bool ok = false;
  std::string detail;                // offending t / reason when !ok
};

BoundsReport universal_bounds_check(const HeatAsymptotics& asymptotics,
                                    const std::vector<double>& t_list,
                                    const std::vector<double>& pt_values,
                                    double slope_tol = 0.05);

// Heat kernel values p_t(x,z) indexed by t, closed form or estimated.
using KernelFn = std::function<double(double)>;

// Weighted linear fit of p_t * t^{d/2} * e^{d^2/4t} against c0 + c1 t; the
// intercept estimates the leading Ben Arous coefficient c0. sigmas, when
// given, are per-point standard errors of the kernel values (weights and the
// confidence interval use them; otherwise the residuals set the scale).
// ok is false when the relative fit residual exceeds residual_threshold.
struct C0Estimate {
  double c0 = 0.0;
  double ci_halfwidth = 0.0;  // 95% on the intercept
  double slope = 0.0;         // fitted c1
  double residual_rms = 0.0;  // in the scaled-value units
  bool ok = false;
};

C0Estimate c0_estimate(int dim, double distance,
                       const std::vector<double>& t_list, const KernelFn& kernel,
                       const std::vector<double>& sigmas = {},
                       double residual_threshold = 0.05);

}  // namespace heatlab

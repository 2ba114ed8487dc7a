#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "heatlab/rational.hpp"

namespace heatlab {

// One term value * t^exponent of a small-t asymptotic series.
struct ExpansionTerm {
  Rational exponent;
  double value = 0.0;
};

// Truncated expansion sum_k value_k * t^{e_k} * log(1/t)^{log_power} as t -> 0.
// Closed-form engines always emit log_power = 0; only the quadrature oracle's
// empirical fit can report a genuine log factor.
struct ExpansionResult {
  Rational t_power;   // exponent of the leading (first nonzero) term
  int log_power = 0;  // power of log(1/t) shared by every term
  // Exponents strictly increasing. Zero values are kept so callers can see
  // which orders were computed and found to vanish.
  std::vector<ExpansionTerm> coefficients;
  std::string validity;  // truncation order and error-model note
};

// Partial derivative of the amplitude at the expansion point: jets(omega)
// returns d^omega F(0) for a multi-index omega (size = dimension). The engines
// only request even multi-indices. F already includes every Jacobian or
// measure-density factor of the coordinate normal form; assembling those jets
// is the caller's job (the engines are pure arithmetic on them).
using JetFn = std::function<double(const std::vector<int>&)>;

// Expansion of int e^{-h/t} F at a nondegenerate minimum in Morse coordinates
// where h = |u|^2 and F = phi/sqrt(det Hess h). Term k carries exponent
// d/2 + k and coefficient (2 pi)^{d/2}/2^{2k} * sum_{|w|=k} d^{2w}F(0)/w!.
// phase_hessian is the ambient-coordinate Hessian, used for the SPD check
// (non-SPD throws std::invalid_argument).
ExpansionResult expand_nondegenerate(const Eigen::MatrixXd& phase_hessian,
                                     const JetFn& amplitude_jets, int orders);

// Expansion for the normal form h = u_d^{2p} + sum_{i<d} u_i^2 with
// d = transverse_dim + 1. amplitude_jets describe F = phi * |Jacobian| in the
// normal-form coordinates. The term at omega = (alpha, k) has exponent
// (d-1)/2 + (2k+1)/(2p) + |alpha| and coefficient
// pi^{(d-1)/2} Gamma((2k+1)/(2p)) / (p (2k)! 2^{2|alpha|} alpha!). Equal
// exponents merge; the ladder climbs in steps of 1/p above the leading
// exponent (d-1)/2 + 1/(2p). orders N keeps every term with exponent
// <= leading + N/p. Throws std::invalid_argument when p < 2.
ExpansionResult expand_atype(int p, int transverse_dim,
                             const JetFn& amplitude_jets, int orders);

// One quadrature node of the minimizer surface for the Morse-Bott engine.
struct SurfaceNode {
  std::vector<double> position;     // chart coordinates, size = ambient dim
  double weight = 0.0;              // surface-measure quadrature weight
  Eigen::MatrixXd normal_hessian;   // (d-r)x(d-r) SPD phase Hessian across the surface
  double amplitude = 0.0;           // phi * measure density at the node
};

// Leading term for a phase whose minimum set is an r-dimensional surface with
// SPD normal Hessian: exponent (d-r)/2, coefficient
// pi^{(d-r)/2} * sum_i weight_i * amplitude_i / sqrt(det(H_i) / 2^{d-r}).
// Higher corrections need on-surface amplitude jets and are not computed;
// `orders` is accepted for interface stability and echoed in `validity`.
// r = 0 with a single unit-weight node reproduces the expand_nondegenerate
// leading term. Dimension or SPD mismatches throw std::invalid_argument.
ExpansionResult expand_morse_bott(int surface_dim,
                                  const std::vector<SurfaceNode>& nodes,
                                  int orders);

// Scalar field on the integration region.
using FieldFn = std::function<double(const std::vector<double>&)>;

struct QuadratureOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-14;
  // Total adaptive panels per t value, summed over every axis instance of the
  // nested rule. One panel = one 15-point evaluation.
  int max_panels = 500000;
  // The integrand is treated as exactly 0 where phase/t > phase_cutoff
  // (e^{-40} is below double noise); this is the domain-truncation rule.
  double phase_cutoff = 40.0;
  // Uniform seed panels per axis. Bisection alone cannot discover support
  // thinner than the first Kronrod node gap of the root panel (the embedded
  // error is exactly 0 on an all-zero panel); callers integrating phases with
  // sub-seed support must raise this or split the region themselves.
  int initial_panels = 16;
};

struct OraclePoint {
  double t = 0.0;
  double value = 0.0;
  double error_estimate = 0.0;  // accumulated Kronrod-minus-Gauss estimate
};

// Empirical model value(t) = C * t^a * log(1/t)^b fitted to the oracle points.
// a and b come from the deepest consecutive-triple exact solve in regressors
// (1, log t, loglog(1/t)); the log factor is accepted (log_power = round(b))
// only when the global b = 0 fit leaves >= 10x the rms residual of the global
// free-b fit and that residual is above a noise floor, otherwise log_power = 0
// and the exponent falls back to the global b = 0 slope.
struct PowerLogFit {
  double coefficient = 0.0;
  double exponent = 0.0;
  int log_power = 0;
  double b_estimate = 0.0;     // continuous b from the deepest triple
  double residual_b0 = 0.0;    // rms log-residual, global 2-parameter fit
  double residual_free = 0.0;  // rms log-residual, global 3-parameter fit
};

struct OracleResult {
  std::vector<OraclePoint> points;   // one per t, in t_list order
  std::vector<double> local_slopes;  // dlog(value)/dlog(t) between neighbors
  PowerLogFit fit;
};

// Fits C * t^a * log(1/t)^b to positive samples with t descending — the
// estimator behind OracleResult.fit, exposed for externally produced sweeps.
// Points with t >= 1/e are excluded (the loglog regressor needs log(1/t) > 0).
PowerLogFit fit_power_log(const std::vector<OraclePoint>& points);

struct QuadratureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Adaptive tensor Gauss-Kronrod (G7, K15) evaluation of
// int_region e^{-phase(u)/t} amplitude(u) du for each t, with domain
// truncation at phase/t > cutoff, plus the slope diagnostics above.
// region is an axis-aligned box given as (lo, hi) per axis; t_list must be
// positive and strictly descending (std::invalid_argument otherwise).
// Throws QuadratureError when the refinement budget is exceeded before the
// tolerance is met. t_list entries are evaluated in parallel.
OracleResult quadrature_oracle(const FieldFn& phase, const FieldFn& amplitude,
                               const std::vector<std::pair<double, double>>& region,
                               const std::vector<double>& t_list,
                               QuadratureOptions options = {});

}  // namespace heatlab

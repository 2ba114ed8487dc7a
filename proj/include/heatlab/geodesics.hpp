#pragma once

#include <Eigen/Dense>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "heatlab/model.hpp"

namespace heatlab {

struct GeodesicSample {
  double t;
  std::vector<double> x;
  std::vector<double> p;
};

struct GeodesicRecord {
  std::vector<double> x0;
  std::vector<double> p0;
  double duration = 0.0;
  std::vector<GeodesicSample> samples;   // includes both endpoints
  Eigen::MatrixXd terminal_jacobian;     // d x_end / d p0 (empty if not requested)
  double energy = 0.0;                   // H(x0, p0)
  double length = 0.0;                   // sqrt(2*energy) * duration
  double energy_drift = 0.0;             // max |H(t) - H(0)| along the flow
  double step_error = 0.0;               // Richardson estimate on x_end
};

struct ChartExitError : std::runtime_error {
  ChartExitError(double t, std::vector<double> state_x)
      : std::runtime_error("geodesic left the chart at t = " + std::to_string(t)),
        exit_time(t), last_x(std::move(state_x)) {}
  double exit_time;
  std::vector<double> last_x;
};

struct ShootError : std::runtime_error {
  ShootError(const std::string& msg, double residual)
      : std::runtime_error(msg), best_residual(residual) {}
  double best_residual;
};

struct ExpMapOptions {
  int steps = 256;            // fixed RK4 steps; >= 16 enforced
  bool with_jacobian = false;
  bool richardson = false;    // re-integrate at half resolution for step_error
  int n_samples = 17;         // stored samples including endpoints
};

// Integrates the Hamiltonian flow from (x, p0) over [0, duration].
GeodesicRecord exp_map(const SubRiemannianModel& model,
                       const std::vector<double>& x,
                       const std::vector<double>& p0, double duration,
                       const ExpMapOptions& options = {});

struct JacobiResult {
  Eigen::MatrixXd terminal;  // d x_end / d p0
  double sv_min = 0.0;
  double sv_max = 0.0;
  bool rank_deficient = false;  // sv_min <= sigma_tol * sv_max
};

// Linearized flow alongside the base geodesic; the terminal block is the
// derivative of the endpoint with respect to the initial covector.
JacobiResult jacobi_flow(const SubRiemannianModel& model,
                         const std::vector<double>& x,
                         const std::vector<double>& p0, double duration,
                         int steps = 256, double sigma_tol = 1e-5);

struct ShootOptions {
  int seeds = 64;
  std::vector<double> length_ladder = {0.5, 1.0, 2.0, 4.0, 8.0};
  int newton_max_iter = 48;
  int integration_steps = 128;
  int polish_steps = 256;        // final high-resolution polish of survivors
  double residual_tol = 1e-7;    // absolute, in chart coordinates. Conjugate
                                 // targets sit on a caustic of the endpoint
                                 // map, and the discrete caustic is displaced
                                 // by the integrator error, so tolerances
                                 // below the RK4 endpoint error are
                                 // unreachable there.
  double min_energy_2h = 1e-12;  // accept 2H in [min, max]
  double max_energy_2h = 0.0;    // 0: derive from the chart diagonal
  double cluster_tol = 1e-3;     // covector distance after length normalization
  double sigma_tol = 1e-5;       // conjugacy threshold vs largest singular value
  int warm_candidates = 3;       // recent results re-tried per distance query
  int warm_newton_iter = 12;     // Newton budget per warm candidate
  std::vector<std::vector<double>> warm_starts;  // tried before the seed sweep
  bool multistart = true;        // false: warm starts only (plus a fallback sweep
                                 // if none converge)
};

struct Minimizer {
  GeodesicRecord record;  // duration-1 geodesic reaching y; terminal covector
                          // is record.samples.back().p
  double residual = 0.0;
  bool conjugate = false;
  double sv_min = 0.0;
  double sv_max = 0.0;
};

struct MinimizerSet {
  double distance = 0.0;              // 0 with empty minimizers when x == y
  std::vector<Minimizer> minimizers;  // cluster representatives by length
  int multiplicity = 0;               // = minimizers.size()
  bool family_suspected = false;
  int attempts = 0;
  int converged = 0;
  double best_failed_residual = 0.0;
};

// Two-point boundary solver: multistart damped Gauss-Newton on the exp map.
// Throws ShootError when no start converges.
MinimizerSet shoot(const SubRiemannianModel& model, const std::vector<double>& x,
                   const std::vector<double>& y, const ShootOptions& options = {});

// Distance queries from a fixed endpoint with warm starting from recent
// results. Not thread-safe; use one instance per thread or grid line.
class DistanceSolver {
 public:
  struct Result {
    double distance = 0.0;
    std::vector<double> p0;     // duration-1 covector at the base point
    std::vector<double> p_end;  // duration-1 terminal covector at the query
  };

  DistanceSolver(const SubRiemannianModel& model, std::vector<double> base,
                 ShootOptions options);

  // Minimal geodesic base -> z. Warm starts from the most recent results;
  // falls back to a full multistart sweep when none converge or when the
  // warm result jumps suspiciously versus its neighbours.
  Result query(const std::vector<double>& z);

  // Clears warm-start memory (use at the start of an independent scan line).
  void reset();

  // Seeds the warm-start memory with an externally known solution for the
  // query point z, as if query(z) had produced it.
  void prime(const std::vector<double>& z, const Result& r);

  const std::vector<double>& base() const { return base_; }

 private:
  const SubRiemannianModel& model_;
  std::vector<double> base_;
  ShootOptions options_;
  std::deque<std::pair<std::vector<double>, Result>> recent_;
};

}  // namespace heatlab

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/geodesics.hpp"
#include "heatlab/model.hpp"

namespace heatlab {

// Hinged energy h(z) = (d(x,z)^2 + d(z,y)^2) / 2. Its minimum over the chart
// is d(x,y)^2 / 4, attained exactly at midpoints of minimal geodesics from x
// to y; the minimizing set is written Gamma below.
class HingedField {
 public:
  struct Sample {
    std::vector<double> z;
    double h = 0.0;
    double d_xz = 0.0;
    double d_zy = 0.0;
  };

  // Solves the x-to-y problem once (distance, multiplicity, family flag are
  // kept in minimizer_set()). Throws ShootError when x and y are unreachable.
  HingedField(const SubRiemannianModel& model, std::vector<double> x,
              std::vector<double> y, ShootOptions options = {});

  // Per-scan-line evaluator owning warm-started solvers for the two legs.
  // Not thread-safe; use one Probe per thread or grid line.
  class Probe {
   public:
    explicit Probe(const HingedField& field);
    // Same, with overriding solver options (scan tiers use lighter sweeps).
    Probe(const HingedField& field, const ShootOptions& solver_options);

    // Seeds both legs' warm caches with known solutions at z, sparing the
    // first query its multistart sweep.
    void prime(const std::vector<double>& z, const DistanceSolver::Result& leg_x,
               const DistanceSolver::Result& leg_y);

    Sample eval(const std::vector<double>& z);
    // Minimal-leg solutions (x -> z, y -> z) with covectors.
    std::pair<DistanceSolver::Result, DistanceSolver::Result> legs(
        const std::vector<double>& z);
    // dh at z is the sum of the two terminal covectors: each leg's terminal
    // covector is the chart differential of half its squared distance.
    std::vector<double> gradient(const std::vector<double>& z);

   private:
    const HingedField& field_;
    DistanceSolver from_x_;
    DistanceSolver from_y_;
  };

  Probe probe() const { return Probe(*this); }

  // Serial conveniences backed by a shared probe; they append to cache().
  Sample eval(const std::vector<double>& z);
  std::vector<double> gradient(const std::vector<double>& z);
  // Fattened-set membership: both legs within (d(x,y) + eps) / 2.
  // Solver failure at z reports false (z is not certified to belong).
  bool in_fattened(const std::vector<double>& z, double eps);

  const SubRiemannianModel& model() const { return model_; }
  const std::vector<double>& x() const { return x_; }
  const std::vector<double>& y() const { return y_; }
  double endpoint_distance() const { return set_.distance; }
  const MinimizerSet& minimizer_set() const { return set_; }
  const ShootOptions& options() const { return options_; }

  const std::vector<Sample>& cache() const { return cache_; }
  void append_cache(const Sample& s) { cache_.push_back(s); }
  void clear_cache() { cache_.clear(); }

 private:
  const SubRiemannianModel& model_;
  std::vector<double> x_;
  std::vector<double> y_;
  ShootOptions options_;
  MinimizerSet set_;
  std::vector<Sample> cache_;
  std::optional<Probe> main_probe_;  // backs the serial conveniences
};

enum class SingularityType { NonDegenerate, AType, MorseBott, Unknown };

// One Gamma point with its Hessian eigendecomposition.
struct NormalFormPoint {
  std::vector<double> z;
  double h = 0.0;
  double d_xz = 0.0;
  double d_zy = 0.0;
  std::vector<double> eigenvalues;   // ascending
  std::vector<double> eigenvectors;  // column-major d x d, col j ~ value j
  int kernel_dim = 0;                // eigenvalues below kernel_rel_tol * max
};

struct MidpointOptions {
  int grid_per_axis = 0;     // 0: 25 in dimension 2, 11 in dimension 3, 7 above
  int max_candidates = 256;  // grid cells polished (lowest h first)
  int max_gamma_points = 64; // cloud kept after dedupe (even subsample beyond)
  double capture_delta = 0.0;  // 0: 0.35 * max(1, grid minimum of h)
  double cluster_tol = 0.0;    // 0: 1e-5 * max(1, h_min); Gamma = {h <= min + tol}
  double dedupe_tol = 0.0;     // 0: 1e-3 * scale
  int polish_max_iter = 30;
  double grad_tol = 0.0;       // 0: 1e-6 * scale
  double fd_scale = 1e-3;      // Hessian step = fd_scale * scale, Richardson-refined
  double kernel_rel_tol = 1e-4;
  double atype_span = 0.15;    // 1-D restriction sampled over +-span * scale
  double pca_gap = 100.0;      // eigenvalue ratio declaring a dimension gap
  double bott_min_extent = 0.05;  // cloud diameter below this * scale collapses
                                  // to one representative (polish slop, not a
                                  // positive-dimensional Gamma)
  double eps_fraction = 0.1;   // starting eps = fraction * d(x,y)
  bool classify = true;
  // Scan-tier solver budget. Ranking grid cells only needs coarse distances,
  // so scan probes run fewer, shorter multistarts with a deeper warm-start
  // budget; polish and classification probes keep the field's own options.
  int scan_seeds = 24;
  int scan_steps = 64;
  int scan_newton_iter = 24;
  int scan_warm_candidates = 4;
  double scan_residual_tol = 1e-6;  // the 64-step RK4 endpoint error floor
                                    // sits near 1e-7 on curved models
};

struct MidpointSetResult {
  std::vector<NormalFormPoint> gamma;  // deduped minimizers of h, h ascending
  double h_min = 0.0;
  double eps = 0.0;        // fattening width: both-leg non-conjugacy certified
  int grid_in_eps = 0;     // scan cells inside the fattened set at final eps
  SingularityType type = SingularityType::Unknown;
  int atype_p = 0;         // type AType: h ~ h_min + c u^{2p} along the kernel
  double atype_coeff = 0.0;
  int bott_rank = 0;       // type MorseBott: dim Gamma, Hessian rank d - rank
  std::string diagnostics; // set when classification falls back to Unknown
};

// Coarse grid scan of h over search_box, quasi-Newton polish of the lowest
// cells, dedupe, fattening-width selection (shrinks until both legs are
// non-conjugate across the fattened scan cells), then classification.
// Throws std::invalid_argument when search_box leaves the chart bounds and
// std::runtime_error when the grid minimum sits on the box boundary.
MidpointSetResult find_midpoint_set(HingedField& field,
                                    const ChartBounds& search_box,
                                    const MidpointOptions& options = {});

// Classification of an existing Gamma cloud: recomputes per-point Hessian
// eigendata from the field and fills type / atype_p / bott_rank.
void classify_singularity(HingedField& field, MidpointSetResult& result,
                          const MidpointOptions& options = {});

using ScalarFn = std::function<double(const std::vector<double>&)>;
using GradientFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Richardson-refined central-difference Hessian eigendecomposition at z.
// Uses gradient differences when grad is callable, value stencils otherwise.
NormalFormPoint analyze_point(const ScalarFn& h, const GradientFn& grad,
                              const std::vector<double>& z, double step,
                              double kernel_rel_tol);

// Shared classification core over a prepared cloud (planted analytic phases
// use this directly). Reads result.gamma and result.h_min; needs h only for
// the 1-D restriction fit on the A-type branch. scale sets sampling widths.
void classify_cloud(MidpointSetResult& result, const ScalarFn& h, int dim,
                    double scale, const MidpointOptions& options = {});

}  // namespace heatlab

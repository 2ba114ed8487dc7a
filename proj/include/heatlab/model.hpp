#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/expr.hpp"

namespace heatlab {

struct VectorFieldExpr {
  std::vector<Expr> components;  // length = chart dimension
};

struct ChartBounds {
  std::vector<double> lo;
  std::vector<double> hi;
};

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A sub-Riemannian structure in a single chart: an orthonormal frame
// Z_1..Z_k for the horizontal distribution, an optional drift field Z_0,
// and a smooth positive volume density against Lebesgue measure on the
// chart. The generator is sum Z_i^2 + Z_0 (no 1/2 factor), so Euclidean
// heat kernels have variance 2t per axis.
class SubRiemannianModel {
 public:
  // Validates dimensions, positivity of the density on a sample grid, and
  // that the frame plus first-order brackets span R^d on the grid (step-2
  // check; deeper structures are rejected).
  SubRiemannianModel(int dim, int rank, std::vector<VectorFieldExpr> frame,
                     std::optional<VectorFieldExpr> drift, Expr volume_density,
                     ChartBounds bounds, bool symmetric);

  int dim() const { return dim_; }
  int rank() const { return rank_; }
  const std::vector<VectorFieldExpr>& frame() const { return frame_; }
  const std::optional<VectorFieldExpr>& drift() const { return drift_; }
  const Expr& volume_density() const { return volume_density_; }
  const ChartBounds& bounds() const { return bounds_; }
  bool symmetric() const { return symmetric_; }

  bool inside_chart(const double* x, double margin = 0.0) const;

  // H(x,p) = 1/2 sum_i <p, Z_i(x)>^2. Degree-2 homogeneous in p.
  double hamiltonian(const double* x, const double* p) const;

  // dHdx and dHdp must have length dim. dH/dx uses the precompiled symbolic
  // frame partials; dH/dp is the closed form sum_i u_i Z_i.
  void hamiltonian_gradient(const double* x, const double* p, double* dHdx,
                            double* dHdp) const;

  // Second-derivative blocks for the variational (Jacobi) flow. Row-major
  // dim x dim buffers: Hpp[a*d+b], Hxp[m*d+a] = d2H/dx_m dp_a, Hxx[m*d+n].
  void hamiltonian_blocks(const double* x, const double* p, double* Hpp,
                          double* Hxp, double* Hxx) const;

  // Frame and drift values at x: Z[i*d + j] = Z_i^j(x); drift length d
  // (zero-filled when absent). Used by the diffusion simulator.
  void frame_values(const double* x, double* Z) const;
  void drift_values(const double* x, double* b) const;

  double volume_density_at(const double* x) const;

  std::string to_json() const;
  static SubRiemannianModel from_json(const std::string& text);

 private:
  void prepare();
  void validate() const;

  int dim_;
  int rank_;
  std::vector<VectorFieldExpr> frame_;
  std::optional<VectorFieldExpr> drift_;
  Expr volume_density_;
  ChartBounds bounds_;
  bool symmetric_;

  // Compiled tapes, indexed [i*d + j] for component j of field i, with first
  // partials at [(i*d + j)*d + m] and symmetric second partials at
  // [((i*d + j)*d + m)*d + n].
  std::vector<CompiledExpr> frame_c_;
  std::vector<CompiledExpr> dframe_c_;
  std::vector<CompiledExpr> d2frame_c_;
  std::vector<CompiledExpr> drift_c_;
  CompiledExpr volume_c_;
};

}  // namespace heatlab

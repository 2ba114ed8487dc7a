#include "heatlab/registry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace heatlab {

namespace {

constexpr double kPi = std::numbers::pi;

Expr e_const(double v) { return Expr::constant(v); }
Expr e_var(int i) { return Expr::variable(i); }

double euclid_norm2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

}  // namespace

RegistryEntry make_euclidean(int dim) {
  if (dim < 1 || dim > 3) throw ModelError("euclidean registry entries cover dim 1..3");
  std::vector<VectorFieldExpr> frame;
  for (int i = 0; i < dim; ++i) {
    VectorFieldExpr f;
    for (int j = 0; j < dim; ++j) f.components.push_back(e_const(i == j ? 1.0 : 0.0));
    frame.push_back(std::move(f));
  }
  ChartBounds bounds{std::vector<double>(dim, -6.0), std::vector<double>(dim, 6.0)};
  SubRiemannianModel model(dim, dim, std::move(frame), std::nullopt, e_const(1.0),
                           std::move(bounds), true);

  RegistryEntry entry{
      "euclidean" + std::to_string(dim),
      "flat R^" + std::to_string(dim) + " with the coordinate frame",
      std::move(model), nullptr, nullptr, nullptr, nullptr, {}};
  entry.exact_kernel = [dim](double t, const std::vector<double>& x,
                             const std::vector<double>& y) {
    return std::pow(4.0 * kPi * t, -0.5 * dim) *
           std::exp(-euclid_norm2(x, y) / (4.0 * t));
  };
  entry.exact_distance = [](const std::vector<double>& x,
                            const std::vector<double>& y) {
    return std::sqrt(euclid_norm2(x, y));
  };
  entry.exact_c0 = [dim](const std::vector<double>&, const std::vector<double>&) {
    return std::pow(4.0 * kPi, -0.5 * dim);
  };
  entry.pair_admissible = [](const std::vector<double>&, const std::vector<double>&) {
    return true;
  };
  if (dim == 1) {
    entry.canonical_pairs.push_back({{-0.5}, {0.7}});
  } else if (dim == 2) {
    entry.canonical_pairs.push_back({{0.0, 0.0}, {1.0, 0.5}});
    entry.canonical_pairs.push_back({{-0.3, 0.2}, {0.8, -0.4}});
  } else {
    entry.canonical_pairs.push_back({{0.0, 0.0, 0.0}, {0.6, 0.4, 0.5}});
  }
  return entry;
}

RegistryEntry make_heisenberg() {
  // Frame Z1 = d/dx1 - (x2/2) d/dx3, Z2 = d/dx2 + (x1/2) d/dx3; Lebesgue
  // measure is the Haar measure in these exponential coordinates.
  VectorFieldExpr z1;
  z1.components = {e_const(1.0), e_const(0.0),
                   Expr::neg(Expr::div(e_var(2), e_const(2.0)))};
  VectorFieldExpr z2;
  z2.components = {e_const(0.0), e_const(1.0), Expr::div(e_var(1), e_const(2.0))};
  std::vector<VectorFieldExpr> frame{z1, z2};
  ChartBounds bounds{{-4.0, -4.0, -4.0}, {4.0, 4.0, 4.0}};
  SubRiemannianModel model(3, 2, std::move(frame), std::nullopt, e_const(1.0),
                           std::move(bounds), true);
  RegistryEntry entry{"heisenberg",
                      "first Heisenberg group, step-2 frame, Haar volume",
                      std::move(model), nullptr, nullptr, nullptr, nullptr, {}};
  entry.pair_admissible = [](const std::vector<double>&, const std::vector<double>&) {
    return true;
  };
  entry.canonical_pairs.push_back({{0.0, 0.0, 0.0}, {0.8, 0.5, 0.3}});
  entry.canonical_pairs.push_back({{0.0, 0.0, 0.0}, {0.0, 0.0, 0.5}});
  return entry;
}

std::array<double, 3> sphere_chart_to_r3(const double* xi) {
  const double r2 = xi[0] * xi[0] + xi[1] * xi[1];
  const double s = 1.0 / (1.0 + r2);
  return {2.0 * xi[0] * s, 2.0 * xi[1] * s, (r2 - 1.0) * s};
}

std::array<double, 2> sphere_r3_to_chart(const std::array<double, 3>& p) {
  const double denom = 1.0 - p[2];
  if (denom <= 1e-12)
    throw std::domain_error("point at or too close to the excluded pole");
  return {p[0] / denom, p[1] / denom};
}

double sphere_distance(const std::vector<double>& a, const std::vector<double>& b) {
  const auto pa = sphere_chart_to_r3(a.data());
  const auto pb = sphere_chart_to_r3(b.data());
  const double dot = pa[0] * pb[0] + pa[1] * pb[1] + pa[2] * pb[2];
  const double cx = pa[1] * pb[2] - pa[2] * pb[1];
  const double cy = pa[2] * pb[0] - pa[0] * pb[2];
  const double cz = pa[0] * pb[1] - pa[1] * pb[0];
  // atan2 form stays accurate near antipodal pairs, where acos loses half
  // the significant digits.
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot);
}

RegistryEntry make_sphere2() {
  // Stereographic chart from the north pole. Round-metric orthonormal frame
  // Z_i = ((1+|xi|^2)/2) d/dxi_i; volume density 4/(1+|xi|^2)^2.
  const Expr lam = Expr::div(
      Expr::add(e_const(1.0),
                Expr::add(Expr::power(e_var(1), 2), Expr::power(e_var(2), 2))),
      e_const(2.0));
  VectorFieldExpr z1;
  z1.components = {lam, e_const(0.0)};
  VectorFieldExpr z2;
  z2.components = {e_const(0.0), lam};
  std::vector<VectorFieldExpr> frame{z1, z2};
  const Expr density = Expr::div(
      e_const(4.0),
      Expr::power(Expr::add(e_const(1.0), Expr::add(Expr::power(e_var(1), 2),
                                                    Expr::power(e_var(2), 2))),
                  2));
  ChartBounds bounds{{-6.0, -6.0}, {6.0, 6.0}};
  SubRiemannianModel model(2, 2, std::move(frame), std::nullopt, density,
                           std::move(bounds), true);
  RegistryEntry entry{"sphere2",
                      "round 2-sphere in a single stereographic chart "
                      "(north pole excluded)",
                      std::move(model), nullptr, nullptr, nullptr, nullptr, {}};
  entry.exact_distance = sphere_distance;
  entry.pair_admissible = [](const std::vector<double>& x,
                             const std::vector<double>& y) {
    // Midpoints of minimizers lie on the great circle through x and y (or,
    // for antipodal pairs, on the full equatorial circle normal to x). The
    // pair is admissible when every candidate midpoint keeps a margin from
    // the excluded pole.
    const auto px = sphere_chart_to_r3(x.data());
    const auto py = sphere_chart_to_r3(y.data());
    // Ambient angle margin from the pole; matches the chart bounds (|xi|<=6
    // corresponds to roughly 19 degrees from the pole).
    const double margin = 0.35;
    double dot = px[0] * py[0] + px[1] * py[1] + px[2] * py[2];
    if (dot < -1.0 + 1e-9) {
      // Antipodal: midpoint circle = {q : q . px = 0}; its closest approach
      // to the pole (0,0,1) has angle acos(sqrt(1 - pz^2)) ... the circle
      // contains a point with z = sqrt(1 - px_z^2), so require that to stay
      // below cos(margin).
      const double zmax = std::sqrt(std::max(0.0, 1.0 - px[2] * px[2]));
      return zmax < std::cos(margin);
    }
    // Unique minimizing arc: its midpoint is the normalized bisector for
    // non-antipodal pairs; check the whole arc to be safe for the hinge
    // neighbourhood.
    const int samples = 33;
    const double ang = std::acos(std::min(1.0, std::max(-1.0, dot)));
    if (ang < 1e-12) return true;
    for (int s = 0; s <= samples; ++s) {
      const double u = static_cast<double>(s) / samples;
      const double w0 = std::sin((1.0 - u) * ang) / std::sin(ang);
      const double w1 = std::sin(u * ang) / std::sin(ang);
      const double qz = w0 * px[2] + w1 * py[2];
      if (qz > std::cos(margin)) return false;
    }
    return true;
  };
  // Quarter-circle pair: south pole to a point on the equator.
  entry.canonical_pairs.push_back({{0.0, 0.0}, {1.0, 0.0}});
  // A generic non-cut pair off the axes.
  entry.canonical_pairs.push_back({{-0.2, 0.1}, {0.5, 0.6}});
  // Antipodal pair tilted 45 degrees from the pole axis so the midpoint
  // circle clears the excluded pole: chart images of (s,0,-s) and (-s,0,s),
  // s = sqrt(1/2).
  const double s = std::sqrt(0.5);
  entry.canonical_pairs.push_back(
      {{s / (1.0 + s), 0.0}, {-s / (1.0 - s), 0.0}});
  return entry;
}

RegistryEntry lookup_model(const std::string& name) {
  if (name == "euclidean1") return make_euclidean(1);
  if (name == "euclidean2") return make_euclidean(2);
  if (name == "euclidean3") return make_euclidean(3);
  if (name == "heisenberg") return make_heisenberg();
  if (name == "sphere2") return make_sphere2();
  throw ModelError("unknown model `" + name + "`; known: euclidean1, euclidean2, "
                   "euclidean3, heisenberg, sphere2");
}

std::vector<std::string> registry_names() {
  return {"euclidean1", "euclidean2", "euclidean3", "heisenberg", "sphere2"};
}

}  // namespace heatlab

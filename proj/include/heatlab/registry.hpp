#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heatlab/model.hpp"

namespace heatlab {

using PointPair = std::pair<std::vector<double>, std::vector<double>>;

// A named model plus whatever independent reference data it admits. Every
// reference member is optional; consumers must check before use.
struct RegistryEntry {
  std::string name;
  std::string description;
  SubRiemannianModel model;

  // Exact heat kernel p_t(x,y), when a closed form exists (Euclidean).
  std::function<double(double, const std::vector<double>&,
                       const std::vector<double>&)> exact_kernel;
  // Exact chart-coordinate distance, when a closed form exists
  // (Euclidean, round sphere).
  std::function<double(const std::vector<double>&, const std::vector<double>&)>
      exact_distance;
  // Exact leading Molchanov amplitude c0(x,y) off the cut locus, when known.
  std::function<double(const std::vector<double>&, const std::vector<double>&)>
      exact_c0;
  // Admissibility predicate for endpoint pairs (single-chart models reject
  // pairs whose midpoint set meets the excluded point).
  std::function<bool(const std::vector<double>&, const std::vector<double>&)>
      pair_admissible;

  // Canonical endpoint pairs exercised by the cross-model test sweeps.
  std::vector<PointPair> canonical_pairs;
};

RegistryEntry make_euclidean(int dim);
RegistryEntry make_heisenberg();
RegistryEntry make_sphere2();

// Names: euclidean1, euclidean2, euclidean3, heisenberg, sphere2.
RegistryEntry lookup_model(const std::string& name);
std::vector<std::string> registry_names();

// Stereographic chart helpers for the sphere entry (projection from the
// excluded north pole; the chart origin is the south pole).
std::array<double, 3> sphere_chart_to_r3(const double* xi);
std::array<double, 2> sphere_r3_to_chart(const std::array<double, 3>& p);
double sphere_distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace heatlab

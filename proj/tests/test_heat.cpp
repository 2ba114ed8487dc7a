#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "heatlab/heat.hpp"
#include "heatlab/hinged.hpp"
#include "heatlab/laplace.hpp"
#include "heatlab/registry.hpp"

using namespace heatlab;

namespace {

constexpr double kPi = 3.14159265358979323846;
const double kSqrtPi = std::sqrt(kPi);
// (4 pi)^{-d/2}: the Gaussian leading coefficient of e^{d^2/4t} p_t.
constexpr double kGauss1 = 0.2820947917738781;
constexpr double kGauss2 = 0.0795774715459477;
constexpr double kGauss3 = 0.0224483902656458;

// One isolated nondegenerate minimizer with Hessian lambda * I.
MidpointSetResult gaussian_cloud(const std::vector<double>& z, double lambda,
                                 double h_min) {
  const int d = static_cast<int>(z.size());
  NormalFormPoint pt;
  pt.z = z;
  pt.h = h_min;
  pt.eigenvalues.assign(d, lambda);
  pt.eigenvectors.assign(d * d, 0.0);
  for (int j = 0; j < d; ++j) pt.eigenvectors[j * d + j] = 1.0;
  pt.kernel_dim = 0;

  MidpointSetResult result;
  result.gamma = {pt};
  result.h_min = h_min;
  result.eps = 0.5;
  result.type = SingularityType::NonDegenerate;
  return result;
}

}  // namespace

TEST_CASE("heat exponent table reproduces the classification formulas") {
  // e^{d^2/4t} p_t: -d/2, -(d+1)/2 + 1/(2p), -(d+r)/2; derivatives shift by
  // -(|alpha| + 2l).
  CHECK(heat_exponent(SingularityType::NonDegenerate, 2, 0, 0) == Rational(-1));
  CHECK(heat_exponent(SingularityType::NonDegenerate, 3, 0, 0) ==
        Rational(-3, 2));
  CHECK(heat_exponent(SingularityType::NonDegenerate, 3, 0, 0, 1, 2) ==
        Rational(-11, 2));
  CHECK(heat_exponent(SingularityType::AType, 2, 2, 0) == Rational(-5, 4));
  CHECK(heat_exponent(SingularityType::AType, 3, 3, 0) == Rational(-23, 12));
  CHECK(heat_exponent(SingularityType::AType, 2, 2, 0, 0, 1) ==
        Rational(-9, 4));
  CHECK(heat_exponent(SingularityType::MorseBott, 3, 0, 1) == Rational(-2));
  CHECK(heat_exponent(SingularityType::MorseBott, 3, 0, 2, 1, 1) ==
        Rational(-11, 2));

  CHECK_THROWS_AS(heat_exponent(SingularityType::Unknown, 2, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(heat_exponent(SingularityType::AType, 2, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(heat_exponent(SingularityType::MorseBott, 2, 0, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(heat_exponent(SingularityType::NonDegenerate, 2, 0, 0, -1, 0),
                  std::invalid_argument);
}

TEST_CASE("default heat grid is geometric from the squared distance") {
  const auto grid = default_heat_tgrid(2.0);
  REQUIRE(grid.size() == 9);
  CHECK(grid.front() == doctest::Approx(0.4).epsilon(1e-15));
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    CHECK(grid[i + 1] == doctest::Approx(0.5 * grid[i]).epsilon(1e-15));
  CHECK_THROWS_AS(default_heat_tgrid(0.0), std::invalid_argument);
}

TEST_CASE("curve weights chain shuffled loops and open segments") {
  SUBCASE("shuffled circle closes into the polygon length") {
    const int n = 48;
    const double radius = 0.8;
    std::vector<std::vector<double>> points(n);
    for (int i = 0; i < n; ++i) {
      // 29 is coprime to 48, so this visits every angle once, out of order.
      const double theta = 2.0 * kPi * ((i * 29) % n) / n;
      points[i] = {radius * std::cos(theta), radius * std::sin(theta)};
    }
    const auto weights = curve_weights(points);
    const double chord = 2.0 * radius * std::sin(kPi / n);
    double total = 0.0;
    for (const double w : weights) {
      CHECK(w == doctest::Approx(chord).epsilon(1e-9));
      total += w;
    }
    CHECK(total == doctest::Approx(n * chord).epsilon(1e-12));
    // The polygon length sits within 1e-3 of the circumference at n = 48.
    CHECK(total == doctest::Approx(2.0 * kPi * radius).epsilon(1e-3));
  }

  SUBCASE("collinear points stay an open chain") {
    // Uneven spacing along a segment of length 1.3.
    std::vector<std::vector<double>> points = {
        {0.0, 0.0}, {0.9, 0.0}, {0.2, 0.0}, {1.3, 0.0}, {0.5, 0.0}};
    const auto weights = curve_weights(points);
    double total = 0.0;
    for (const double w : weights) total += w;
    CHECK(total == doctest::Approx(1.3).epsilon(1e-12));
  }

  SUBCASE("two points form a segment, not a loop") {
    const auto weights = curve_weights({{0.0}, {1.0}});
    CHECK(weights[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(weights[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  CHECK_THROWS_AS(curve_weights({{0.0}}), std::invalid_argument);
}

TEST_CASE("heat normalization rescales a Laplace sweep by (2/t)^d") {
  std::vector<OraclePoint> points;
  for (const double t : {1e-2, 1e-3, 1e-4})
    points.push_back({t, 3.0 * std::sqrt(t), 0.0});
  const auto sweep = heat_normalized_fit(points, 2);
  REQUIRE(sweep.points.size() == 3);
  CHECK(sweep.points[0].value == doctest::Approx(12.0 * std::pow(1e-2, -1.5)));
  CHECK(sweep.fit.exponent == doctest::Approx(-1.5).epsilon(1e-12));
  CHECK(sweep.fit.coefficient == doctest::Approx(12.0).epsilon(1e-10));
  CHECK(sweep.fit.log_power == 0);
  REQUIRE(sweep.local_slopes.size() == 2);
  CHECK(sweep.local_slopes[0] == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("molchanov assembly on the Euclidean pipeline recovers (4 pi)^{-d/2}") {
  // p_t = (4 pi t)^{-d/2} e^{-d^2/4t} exactly, so the leading coefficient of
  // e^{d^2/4t} p_t is (4 pi)^{-d/2}; both c0 factors equal (4 pi)^{-d/2}.
  SUBCASE("dimension 2") {
    auto entry = lookup_model("euclidean2");
    HingedField field(entry.model, {0.0, 0.0}, {2.0, 0.0});
    MidpointOptions opts;
    opts.max_candidates = 64;
    auto midpoints = find_midpoint_set(field, {{-0.5, -1.5}, {2.5, 1.5}}, opts);
    REQUIRE(midpoints.type == SingularityType::NonDegenerate);

    MolchanovOptions options;
    options.prefactor = [&](const std::vector<double>& z) {
      return entry.exact_c0(field.x(), z) * entry.exact_c0(z, field.y());
    };
    const auto heat = molchanov_leading(field, midpoints, {}, options);

    CHECK(heat.type == SingularityType::NonDegenerate);
    CHECK(heat.distance == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(heat.exponent() == Rational(-1));
    CHECK(heat.leading_coefficient == doctest::Approx(kGauss2).epsilon(5e-3));
    CHECK(heat.coefficient_error == 0.0);
    CHECK(heat.derivative_exponent(0, 0) == Rational(-1));
    CHECK(heat.derivative_exponent(1, 0) == Rational(-3));
    CHECK(heat.derivative_exponent(0, 2) == Rational(-3));
    CHECK(!heat.empirical);

    MolchanovOptions with_error = options;
    with_error.prefactor_rel_error = 0.02;
    const auto flagged = molchanov_leading(field, midpoints, {}, with_error);
    CHECK(flagged.coefficient_error ==
          doctest::Approx(0.02 * flagged.leading_coefficient).epsilon(1e-12));
  }

  SUBCASE("dimension 1") {
    auto entry = lookup_model("euclidean1");
    HingedField field(entry.model, {0.0}, {1.0});
    auto midpoints = find_midpoint_set(field, {{-0.5}, {1.5}}, {});
    REQUIRE(midpoints.type == SingularityType::NonDegenerate);

    MolchanovOptions options;
    options.prefactor = [](const std::vector<double>&) {
      return kGauss1 * kGauss1;
    };
    const auto heat = molchanov_leading(field, midpoints, {}, options);
    CHECK(heat.exponent() == Rational(-1, 2));
    CHECK(heat.leading_coefficient == doctest::Approx(kGauss1).epsilon(5e-3));
  }
}

TEST_CASE("synthetic A-type cloud assembles the quartic normal form") {
  // Phase h - h_min = 0.7 z1^4 + z2^2 in d = 2: kernel along z1 with
  // c = 0.7, transverse eigenvalue 2. Leading coefficient of the assembled
  // series is 2^d pi^{(d-1)/2} Gamma(1/4)/2 * 0.7^{-1/4} * sqrt(2/2) at
  // exponent -(d+1)/2 + 1/4 = -5/4.
  NormalFormPoint pt;
  pt.z = {0.0, 0.0};
  pt.h = 0.25;
  pt.eigenvalues = {0.0, 2.0};
  pt.eigenvectors = {1.0, 0.0, 0.0, 1.0};
  pt.kernel_dim = 1;

  MidpointSetResult midpoints;
  midpoints.gamma = {pt};
  midpoints.h_min = 0.25;
  midpoints.type = SingularityType::AType;
  midpoints.atype_p = 2;
  midpoints.atype_coeff = 0.7;

  const ScalarFn one = [](const std::vector<double>&) { return 1.0; };
  const auto heat = assemble_leading(midpoints, 2, 1.0, one);

  const double expected =
      4.0 * kSqrtPi * 0.5 * std::tgamma(0.25) * std::pow(0.7, -0.25);
  CHECK(heat.exponent() == Rational(-5, 4));
  CHECK(heat.leading_coefficient == doctest::Approx(expected).epsilon(1e-12));
  CHECK(heat.derivative_exponent(0, 0) == Rational(-5, 4));

  // Independent check: quadrature of the planted phase, heat-normalized.
  const FieldFn phase = [](const std::vector<double>& u) {
    return 0.7 * u[0] * u[0] * u[0] * u[0] + u[1] * u[1];
  };
  const FieldFn amp = [](const std::vector<double>&) { return 1.0; };
  const auto oracle = quadrature_oracle(phase, amp, {{-1.5, 1.5}, {-1.5, 1.5}},
                                        default_heat_tgrid(1.0));
  const auto sweep = heat_normalized_fit(oracle.points, 2);
  CHECK(sweep.fit.exponent == doctest::Approx(-1.25).epsilon(2e-4));
  CHECK(sweep.fit.log_power == 0);
  for (const auto& point : sweep.points)
    CHECK(point.value ==
          doctest::Approx(expected * std::pow(point.t, -1.25)).epsilon(1e-6));
}

TEST_CASE("synthetic Morse-Bott circle assembles the chained curve quadrature") {
  // Gamma = circle of radius 0.8 in d = 2 with transverse eigenvalue 3, fed
  // out of order: chaining must close the loop. Continuum coefficient
  // 2^d sqrt(pi) (2 pi R)/sqrt(3/2) at exponent -(d+r)/2 = -3/2; the chained
  // polygon carries n sin(pi/n)/pi of the circumference.
  const int n = 48;
  const double radius = 0.8;
  std::vector<NormalFormPoint> cloud(n);
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * kPi * ((i * 29) % n) / n;
    cloud[i].z = {radius * std::cos(theta), radius * std::sin(theta)};
    cloud[i].h = 0.25;
    cloud[i].eigenvalues = {0.0, 3.0};
    cloud[i].kernel_dim = 1;
  }
  MidpointSetResult midpoints;
  midpoints.gamma = cloud;
  midpoints.h_min = 0.25;
  midpoints.type = SingularityType::MorseBott;
  midpoints.bott_rank = 1;

  const ScalarFn one = [](const std::vector<double>&) { return 1.0; };
  const auto heat = assemble_leading(midpoints, 2, 1.0, one);

  const double polygon = n * 2.0 * radius * std::sin(kPi / n);
  const double expected = 4.0 * kSqrtPi * polygon / std::sqrt(1.5);
  CHECK(heat.exponent() == Rational(-3, 2));
  CHECK(heat.leading_coefficient == doctest::Approx(expected).epsilon(1e-12));

  // Independent check: polar-phase quadrature, heat-normalized; the polygon
  // defect keeps the engine within 1e-3 of the continuum value.
  const FieldFn phase = [&](const std::vector<double>& u) {
    const double rho = std::hypot(u[0], u[1]);
    return 1.5 * (rho - radius) * (rho - radius);
  };
  const FieldFn amp = [](const std::vector<double>&) { return 1.0; };
  const auto oracle =
      quadrature_oracle(phase, amp, {{-2.0, 2.0}, {-2.0, 2.0}}, {1e-2, 1e-3});
  const double continuum = 4.0 * kSqrtPi * 2.0 * kPi * radius / std::sqrt(1.5);
  for (const auto& point : oracle.points) {
    const double scaled = std::pow(2.0 / point.t, 2) * point.value;
    CHECK(scaled ==
          doctest::Approx(continuum * std::pow(point.t, -1.5)).epsilon(1e-5));
  }
  CHECK(heat.leading_coefficient == doctest::Approx(continuum).epsilon(1e-3));
}

TEST_CASE("assembly rejects incomplete clouds") {
  const ScalarFn one = [](const std::vector<double>&) { return 1.0; };

  MidpointSetResult empty;
  empty.type = SingularityType::NonDegenerate;
  CHECK_THROWS_AS(assemble_leading(empty, 2, 1.0, one), std::invalid_argument);

  MidpointSetResult unknown = gaussian_cloud({0.5, 0.0}, 2.0, 0.25);
  unknown.type = SingularityType::Unknown;
  CHECK_THROWS_AS(assemble_leading(unknown, 2, 1.0, one),
                  std::invalid_argument);

  // A-type points must carry a one-dimensional kernel.
  MidpointSetResult atype = gaussian_cloud({0.0, 0.0}, 2.0, 0.25);
  atype.type = SingularityType::AType;
  atype.atype_p = 2;
  atype.atype_coeff = 1.0;
  CHECK_THROWS_AS(assemble_leading(atype, 2, 1.0, one), std::invalid_argument);

  // Morse-Bott needs rank 1 and at least 4 points to chain.
  MidpointSetResult bott = gaussian_cloud({0.0, 0.0}, 2.0, 0.25);
  bott.type = SingularityType::MorseBott;
  bott.bott_rank = 2;
  CHECK_THROWS_AS(assemble_leading(bott, 3, 1.0, one), std::invalid_argument);
  bott.bott_rank = 1;
  CHECK_THROWS_AS(assemble_leading(bott, 2, 1.0, one), std::invalid_argument);

  CHECK_THROWS_AS(assemble_leading(gaussian_cloud({0.5}, 2.0, 0.25), 1, 1.0,
                                   ScalarFn{}),
                  std::invalid_argument);
}

TEST_CASE("empirical slope sweep recovers the Euclidean heat law") {
  // With prefactor (4 pi)^{-d} the sweep reproduces e^{d^2/4t} p_t =
  // (4 pi)^{-d/2} t^{-d/2}; midpoint-rule sums of Gaussians are spectrally
  // accurate, so the tolerances are tight.
  SUBCASE("dimension 1") {
    auto entry = lookup_model("euclidean1");
    HingedField field(entry.model, {0.0}, {1.0});
    const auto midpoints = gaussian_cloud({0.5}, 2.0, 0.25);

    EmpiricalOptions options;
    options.prefactor = [](const std::vector<double>&) {
      return kGauss1 * kGauss1;
    };
    const auto sweep =
        empirical_heat_slope(field, midpoints, default_heat_tgrid(1.0), options);
    CHECK(sweep.fit.exponent == doctest::Approx(-0.5).epsilon(2e-5));
    CHECK(sweep.fit.coefficient == doctest::Approx(kGauss1).epsilon(1e-4));
    CHECK(sweep.fit.log_power == 0);
    for (const double s : sweep.local_slopes)
      CHECK(s == doctest::Approx(-0.5).epsilon(1e-4));
  }

  SUBCASE("dimension 2") {
    auto entry = lookup_model("euclidean2");
    HingedField field(entry.model, {0.0, 0.0}, {1.0, 0.0});
    const auto midpoints = gaussian_cloud({0.5, 0.0}, 2.0, 0.25);

    EmpiricalOptions options;
    options.prefactor = [](const std::vector<double>&) {
      return kGauss2 * kGauss2;
    };
    const auto sweep =
        empirical_heat_slope(field, midpoints, default_heat_tgrid(1.0), options);
    CHECK(sweep.fit.exponent == doctest::Approx(-1.0).epsilon(2e-5));
    CHECK(sweep.fit.coefficient == doctest::Approx(kGauss2).epsilon(1e-4));
  }

  SUBCASE("node budget failure is reported, not degraded") {
    auto entry = lookup_model("euclidean1");
    HingedField field(entry.model, {0.0}, {1.0});
    const auto midpoints = gaussian_cloud({0.5}, 2.0, 0.25);
    EmpiricalOptions tight;
    tight.min_nodes = 3;
    tight.max_nodes = 5;
    CHECK_THROWS_AS(empirical_heat_slope(field, midpoints, {1e-5}, tight),
                    QuadratureError);
  }
}

TEST_CASE("unknown classification falls back to the grid sweep") {
  auto entry = lookup_model("euclidean1");
  HingedField field(entry.model, {0.0}, {1.0});
  auto midpoints = gaussian_cloud({0.5}, 2.0, 0.25);
  midpoints.type = SingularityType::Unknown;

  MolchanovOptions options;
  options.prefactor = [](const std::vector<double>&) {
    return kGauss1 * kGauss1;
  };
  CHECK_THROWS_AS(molchanov_leading(field, midpoints, {}, options),
                  std::invalid_argument);

  const auto heat =
      molchanov_leading(field, midpoints, default_heat_tgrid(1.0), options);
  REQUIRE(heat.empirical.has_value());
  CHECK(heat.empirical->fit.exponent == doctest::Approx(-0.5).epsilon(2e-5));
  CHECK(heat.leading_coefficient == doctest::Approx(kGauss1).epsilon(1e-4));
  CHECK(heat.series.coefficients.empty());
  CHECK(heat.series.validity.find("empirical") != std::string::npos);
  CHECK_THROWS_AS(heat.exponent(), std::logic_error);
}

TEST_CASE("Chapman-Kolmogorov glues Euclidean half-time kernels") {
  // p_{t/2}(x,.) p_{t/2}(.,y) integrates to p_t(x,y); in Molchanov form
  // (2/t)^d (4 pi)^{-d} int e^{-h/t} dz with h the hinged energy. Quadrature
  // of the closed-form phase validates the gluing identity to oracle
  // tolerance.
  const FieldFn phase = [](const std::vector<double>& z) {
    return 0.5 * (z[0] * z[0] + (z[0] - 1.0) * (z[0] - 1.0));
  };
  const FieldFn amp = [](const std::vector<double>&) { return 1.0; };
  const std::vector<double> t_list = {0.05, 0.02};
  const auto oracle = quadrature_oracle(phase, amp, {{-2.0, 3.0}}, t_list);
  for (const auto& point : oracle.points) {
    const double glued = (2.0 / point.t) * (kGauss1 * kGauss1) * point.value;
    const double exact = std::pow(4.0 * kPi * point.t, -0.5) *
                         std::exp(-0.25 / point.t);
    CHECK(glued == doctest::Approx(exact).epsilon(1e-7));
  }
}

TEST_CASE("restricting to the half fattening leaves an exponentially small tail") {
  // The mass between the eps and eps/2 fattened sets decays like e^{-c/t}
  // with c at least the shell's phase floor: legs at (d + eps/2)/2 put
  // h - h_min at eps^2/16 = 0.0025 for eps = 0.2, d = 1.
  auto entry = lookup_model("euclidean2");
  HingedField field(entry.model, {0.0, 0.0}, {1.0, 0.0});
  const auto grid = tabulate_hinged(field, {0.05, -0.45}, {0.95, 0.45}, 61);

  std::vector<double> t_list, gaps;
  for (double t = 2e-3; t >= 4e-4; t *= 0.7) {
    const double wide = grid_sum(grid, t, 0.25, 40.0, 0.2);
    const double narrow = grid_sum(grid, t, 0.25, 40.0, 0.1);
    REQUIRE(wide > narrow);
    t_list.push_back(t);
    gaps.push_back(wide - narrow);
  }
  for (std::size_t i = 0; i + 1 < gaps.size(); ++i) CHECK(gaps[i] > gaps[i + 1]);

  // Fit log gap = b + a log t - c/t; the grid quantizes the shell floor, so
  // c lands above 0.0025 but within the same decade.
  const std::size_t n = t_list.size();
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd rhs(n);
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::log(t_list[i]);
    design(i, 2) = -1.0 / t_list[i];
    rhs(i) = std::log(gaps[i]);
  }
  const Eigen::VectorXd sol = design.colPivHouseholderQr().solve(rhs);
  CHECK(sol(2) > 0.002);
  CHECK(sol(2) < 0.006);
}

TEST_CASE("universal bounds hold on Euclidean grids and flag violations") {
  HeatAsymptotics context;
  context.x = {0.0, 0.0};
  context.y = {2.0, 0.0};
  context.distance = 2.0;

  // Deep grid: d^2/4t reaches 640, so the scaled values can only be formed
  // in log space.
  const auto t_list = default_heat_tgrid(2.0);

  SUBCASE("exact Gaussian kernel passes with constants near (4 pi)^{-1}") {
    std::vector<double> pt_values;
    for (const double t : t_list)
      pt_values.push_back(std::pow(4.0 * kPi * t, -1.0) *
                          std::exp(-1.0 / t));
    const auto report = universal_bounds_check(context, t_list, pt_values);
    CHECK(report.ok);
    CHECK(report.lower_constant == doctest::Approx(kGauss2).epsilon(1e-9));
    CHECK(std::abs(report.lower_slope) < 1e-9);
    CHECK(report.upper_slope == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(report.upper_constant ==
          doctest::Approx(std::sqrt(0.4) * kGauss2).epsilon(1e-9));
  }

  SUBCASE("too-singular kernels violate the upper bound") {
    std::vector<double> pt_values;
    for (const double t : t_list)
      pt_values.push_back(std::pow(t, -1.8) * std::exp(-1.0 / t));
    const auto report = universal_bounds_check(context, t_list, pt_values);
    CHECK_FALSE(report.ok);
    CHECK(report.detail.find("diverges") != std::string::npos);
  }

  SUBCASE("too-flat kernels violate the lower bound") {
    std::vector<double> pt_values;
    for (const double t : t_list)
      pt_values.push_back(std::pow(t, -0.7) * std::exp(-1.0 / t));
    const auto report = universal_bounds_check(context, t_list, pt_values);
    CHECK_FALSE(report.ok);
    CHECK(report.detail.find("decays") != std::string::npos);
  }

  SUBCASE("nonpositive values are reported") {
    std::vector<double> pt_values(t_list.size(), 0.0);
    const auto report = universal_bounds_check(context, t_list, pt_values);
    CHECK_FALSE(report.ok);
    CHECK(report.detail.find("nonpositive") != std::string::npos);
  }
}

TEST_CASE("c0 extrapolation recovers the Gaussian prefactors") {
  const auto t_list = default_heat_tgrid(1.0);

  SUBCASE("closed forms give the constant intercept exactly") {
    const KernelFn kernel2 = [](double t) {
      return std::pow(4.0 * kPi * t, -1.0) * std::exp(-0.25 / t);
    };
    const auto est2 = c0_estimate(2, 1.0, t_list, kernel2);
    CHECK(est2.ok);
    CHECK(est2.c0 == doctest::Approx(kGauss2).epsilon(1e-10));
    CHECK(std::abs(est2.slope) < 1e-8);

    const KernelFn kernel3 = [](double t) {
      return std::pow(4.0 * kPi * t, -1.5) * std::exp(-0.25 / t);
    };
    const auto est3 = c0_estimate(3, 1.0, t_list, kernel3);
    CHECK(est3.c0 == doctest::Approx(kGauss3).epsilon(1e-10));
  }

  SUBCASE("a linear-in-t correction lands in the slope, not the intercept") {
    const KernelFn kernel = [](double t) {
      return std::pow(4.0 * kPi * t, -1.0) * std::exp(-0.25 / t) *
             (1.0 + 0.3 * t);
    };
    const auto est = c0_estimate(2, 1.0, t_list, kernel);
    CHECK(est.ok);
    CHECK(est.c0 == doctest::Approx(kGauss2).epsilon(1e-10));
    CHECK(est.slope == doctest::Approx(0.3 * kGauss2).epsilon(1e-8));
  }

  SUBCASE("non-linear wiggle trips the residual flag") {
    const KernelFn kernel = [](double t) {
      return std::pow(4.0 * kPi * t, -1.0) * std::exp(-0.25 / t) *
             (1.0 + 0.1 * std::sin(200.0 * t));
    };
    const auto est = c0_estimate(2, 1.0, t_list, kernel);
    CHECK_FALSE(est.ok);
  }

  SUBCASE("per-point sigmas drive the confidence interval") {
    const KernelFn kernel = [](double t) {
      return std::pow(4.0 * kPi * t, -1.0) * std::exp(-0.25 / t);
    };
    std::vector<double> sigmas;
    for (const double t : t_list) sigmas.push_back(0.01 * kernel(t));
    const auto est = c0_estimate(2, 1.0, t_list, kernel, sigmas);
    CHECK(est.ci_halfwidth > 0.0);
    CHECK(std::abs(est.c0 - kGauss2) < est.ci_halfwidth);
  }

  CHECK_THROWS_AS(c0_estimate(2, 1.0, {0.1, 0.05}, [](double) { return 1.0; }),
                  std::invalid_argument);
  CHECK_THROWS_AS(c0_estimate(2, 1.0, t_list, [](double) { return 0.0; }),
                  std::invalid_argument);
}

TEST_CASE("Heisenberg vertical pair assembles the Morse-Bott heat exponent") {
  auto entry = lookup_model("heisenberg");
  const double h0 = 0.5;
  HingedField field(entry.model, {0.0, 0.0, 0.0}, {0.0, 0.0, h0});

  MidpointOptions opts;
  opts.grid_per_axis = 9;
  opts.max_candidates = 96;
  opts.max_gamma_points = 48;
  auto midpoints =
      find_midpoint_set(field, {{-1.3, -1.3, 0.05}, {1.3, 1.3, 0.45}}, opts);
  REQUIRE_MESSAGE(midpoints.type == SingularityType::MorseBott,
                  midpoints.diagnostics);
  REQUIRE(midpoints.bott_rank == 1);
  REQUIRE(midpoints.gamma.size() >= 16);

  const auto heat = molchanov_leading(field, midpoints, {});
  CHECK(heat.exponent() == Rational(-2));
  CHECK(heat.leading_coefficient > 0.0);
  CHECK(!heat.empirical);
  CHECK(heat.derivative_exponent(0, 1) == Rational(-3));
  CHECK(heat.derivative_exponent(1, 0) == Rational(-4));
}

TEST_CASE("grid tabulation rejects malformed boxes") {
  auto entry = lookup_model("euclidean2");
  HingedField field(entry.model, {0.0, 0.0}, {1.0, 0.0});
  CHECK_THROWS_AS(tabulate_hinged(field, {0.0}, {1.0}, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(tabulate_hinged(field, {0.0, 0.0}, {1.0, -1.0}, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(tabulate_hinged(field, {-7.0, 0.0}, {1.0, 1.0}, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(tabulate_hinged(field, {0.0, 0.0}, {1.0, 1.0}, 0),
                  std::invalid_argument);
}

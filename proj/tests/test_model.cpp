#include <doctest.h>

#include <cmath>
#include <vector>

#include "heatlab/model.hpp"
#include "heatlab/registry.hpp"
#include "heatlab/rng.hpp"

using namespace heatlab;

namespace {

SubRiemannianModel heisenberg() { return make_heisenberg().model; }

ChartBounds cube(int d, double r) {
  return {std::vector<double>(d, -r), std::vector<double>(d, r)};
}

}  // namespace

TEST_CASE("Heisenberg Hamiltonian hand value") {
  const SubRiemannianModel m = heisenberg();
  const double x[3] = {0.4, -0.2, 0.3};
  const double p[3] = {0.5, 0.25, 2.0};
  // <p,Z1> = 0.5 + 2*(0.2/2) = 0.7, <p,Z2> = 0.25 + 2*(0.4/2) = 0.65.
  CHECK(m.hamiltonian(x, p) == doctest::Approx(0.45625).epsilon(1e-15));
}

TEST_CASE("Hamiltonian is degree-2 homogeneous in the covector") {
  const SubRiemannianModel m = heisenberg();
  const double x[3] = {0.4, -0.2, 0.3};
  const double p[3] = {0.5, 0.25, 2.0};
  const double base = m.hamiltonian(x, p);
  for (double s : {-2.0, 0.5, 3.0}) {
    const double sp[3] = {s * p[0], s * p[1], s * p[2]};
    CHECK(m.hamiltonian(x, sp) == doctest::Approx(s * s * base).epsilon(1e-14));
  }
}

TEST_CASE("hamiltonian_gradient agrees with central differences") {
  const SubRiemannianModel m = make_sphere2().model;
  Xoshiro256 rng(42u);
  for (int trial = 0; trial < 20; ++trial) {
    double x[2], p[2];
    for (int i = 0; i < 2; ++i) {
      x[i] = -1.5 + 3.0 * rng.uniform();
      p[i] = -2.0 + 4.0 * rng.uniform();
    }
    double dHdx[2], dHdp[2];
    m.hamiltonian_gradient(x, p, dHdx, dHdp);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      double xp[2] = {x[0], x[1]}, xm[2] = {x[0], x[1]};
      xp[i] += h;
      xm[i] -= h;
      const double fd = (m.hamiltonian(xp, p) - m.hamiltonian(xm, p)) / (2 * h);
      CHECK(dHdx[i] == doctest::Approx(fd).epsilon(1e-7));
      double pp[2] = {p[0], p[1]}, pm[2] = {p[0], p[1]};
      pp[i] += h;
      pm[i] -= h;
      const double fdp = (m.hamiltonian(x, pp) - m.hamiltonian(x, pm)) / (2 * h);
      CHECK(dHdp[i] == doctest::Approx(fdp).epsilon(1e-7));
    }
  }
}

TEST_CASE("hamiltonian_blocks agree with finite differences of the gradient") {
  const SubRiemannianModel m = heisenberg();
  Xoshiro256 rng(43u);
  const int d = 3;
  for (int trial = 0; trial < 8; ++trial) {
    double x[3], p[3];
    for (int i = 0; i < d; ++i) {
      x[i] = -1.0 + 2.0 * rng.uniform();
      p[i] = -2.0 + 4.0 * rng.uniform();
    }
    std::vector<double> Hpp(d * d), Hxp(d * d), Hxx(d * d);
    m.hamiltonian_blocks(x, p, Hpp.data(), Hxp.data(), Hxx.data());
    // Symmetry of the pure blocks.
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        CHECK(Hpp[a * d + b] == doctest::Approx(Hpp[b * d + a]).epsilon(1e-13));
        CHECK(Hxx[a * d + b] == doctest::Approx(Hxx[b * d + a]).epsilon(1e-13));
      }
    const double h = 1e-5;
    double gxp[3], gpp[3], gxm[3], gpm[3];
    for (int m_i = 0; m_i < d; ++m_i) {
      double xp[3] = {x[0], x[1], x[2]}, xm[3] = {x[0], x[1], x[2]};
      xp[m_i] += h;
      xm[m_i] -= h;
      m.hamiltonian_gradient(xp, p, gxp, gpp);
      m.hamiltonian_gradient(xm, p, gxm, gpm);
      for (int n = 0; n < d; ++n) {
        const double fd_xx = (gxp[n] - gxm[n]) / (2 * h);
        CHECK(Hxx[m_i * d + n] == doctest::Approx(fd_xx).epsilon(5e-6).scale(1.0));
        const double fd_xp = (gpp[n] - gpm[n]) / (2 * h);
        CHECK(Hxp[m_i * d + n] == doctest::Approx(fd_xp).epsilon(5e-6).scale(1.0));
      }
      double pp2[3] = {p[0], p[1], p[2]}, pm2[3] = {p[0], p[1], p[2]};
      pp2[m_i] += h;
      pm2[m_i] -= h;
      m.hamiltonian_gradient(x, pp2, gxp, gpp);
      m.hamiltonian_gradient(x, pm2, gxm, gpm);
      for (int n = 0; n < d; ++n) {
        const double fd_pp = (gpp[n] - gpm[n]) / (2 * h);
        CHECK(Hpp[m_i * d + n] == doctest::Approx(fd_pp).epsilon(5e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("frame and drift values evaluate the expressions") {
  const SubRiemannianModel m = heisenberg();
  const double x[3] = {0.4, -0.2, 0.3};
  double Z[6];
  m.frame_values(x, Z);
  CHECK(Z[0] == 1.0);
  CHECK(Z[1] == 0.0);
  CHECK(Z[2] == doctest::Approx(0.1));  // -x2/2
  CHECK(Z[3] == 0.0);
  CHECK(Z[4] == 1.0);
  CHECK(Z[5] == doctest::Approx(0.2));  // x1/2
  double b[3];
  m.drift_values(x, b);
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 0.0);
  CHECK(b[2] == 0.0);
}

TEST_CASE("construction rejects rank-deficient distributions") {
  // Two commuting horizontal fields in a 3d chart: brackets vanish, so the
  // step-2 span test must fail.
  std::vector<VectorFieldExpr> frame(2);
  frame[0].components = {parse("1", 3), parse("0", 3), parse("0", 3)};
  frame[1].components = {parse("0", 3), parse("1", 3), parse("0", 3)};
  try {
    SubRiemannianModel(3, 2, frame, std::nullopt, parse("1", 3), cube(3, 2.0),
                       true);
    FAIL("expected ModelError");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("step-2") != std::string::npos);
  }
}

TEST_CASE("construction rejects non-positive densities and bad bounds") {
  std::vector<VectorFieldExpr> frame(1);
  frame[0].components = {parse("1", 1)};
  CHECK_THROWS_AS(SubRiemannianModel(1, 1, frame, std::nullopt, parse("x1", 1),
                                     cube(1, 2.0), true),
                  ModelError);
  ChartBounds bad{{1.0}, {-1.0}};
  CHECK_THROWS_AS(
      SubRiemannianModel(1, 1, frame, std::nullopt, parse("1", 1), bad, true),
      ModelError);
  // Component dimension mismatch.
  std::vector<VectorFieldExpr> short_frame(1);
  short_frame[0].components = {parse("1", 2)};
  CHECK_THROWS_AS(SubRiemannianModel(2, 1, short_frame, std::nullopt,
                                     parse("1", 2), cube(2, 2.0), true),
                  ModelError);
}

TEST_CASE("JSON round trip preserves behavior") {
  const SubRiemannianModel m = heisenberg();
  const std::string text = m.to_json();
  const SubRiemannianModel back = SubRiemannianModel::from_json(text);
  CHECK(back.dim() == 3);
  CHECK(back.rank() == 2);
  CHECK(back.symmetric() == m.symmetric());
  Xoshiro256 rng(5u);
  for (int trial = 0; trial < 10; ++trial) {
    double x[3], p[3];
    for (int i = 0; i < 3; ++i) {
      x[i] = -1.0 + 2.0 * rng.uniform();
      p[i] = -2.0 + 4.0 * rng.uniform();
    }
    CHECK(back.hamiltonian(x, p) ==
          doctest::Approx(m.hamiltonian(x, p)).epsilon(1e-15));
    CHECK(back.volume_density_at(x) ==
          doctest::Approx(m.volume_density_at(x)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(SubRiemannianModel::from_json("{\"schema\": 2}"), ModelError);
  CHECK_THROWS_AS(SubRiemannianModel::from_json("{\"schema\": 1}"), ModelError);
}

TEST_CASE("inside_chart respects margins") {
  const SubRiemannianModel m = heisenberg();  // bounds +-4
  const double in[3] = {3.9, 0.0, 0.0};
  const double out[3] = {4.1, 0.0, 0.0};
  CHECK(m.inside_chart(in));
  CHECK(!m.inside_chart(out));
  CHECK(!m.inside_chart(in, 0.2));
}

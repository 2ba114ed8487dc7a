#include "heatlab/hinged.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>

#include "heatlab/parallel.hpp"

namespace heatlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double chart_norm(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace

HingedField::HingedField(const SubRiemannianModel& model, std::vector<double> x,
                         std::vector<double> y, ShootOptions options)
    : model_(model),
      x_(std::move(x)),
      y_(std::move(y)),
      options_(std::move(options)) {
  const int d = model_.dim();
  if (static_cast<int>(x_.size()) != d || static_cast<int>(y_.size()) != d)
    throw std::invalid_argument("HingedField: endpoint dimension mismatch");
  if (!model_.inside_chart(x_.data()) || !model_.inside_chart(y_.data()))
    throw std::invalid_argument("HingedField: endpoints must lie in the chart");
  set_ = shoot(model_, x_, y_, options_);
}

HingedField::Probe::Probe(const HingedField& field)
    : Probe(field, field.options()) {}

HingedField::Probe::Probe(const HingedField& field,
                          const ShootOptions& solver_options)
    : field_(field),
      from_x_(field.model(), field.x(), solver_options),
      from_y_(field.model(), field.y(), solver_options) {}

void HingedField::Probe::prime(const std::vector<double>& z,
                               const DistanceSolver::Result& leg_x,
                               const DistanceSolver::Result& leg_y) {
  from_x_.prime(z, leg_x);
  from_y_.prime(z, leg_y);
}

std::pair<DistanceSolver::Result, DistanceSolver::Result>
HingedField::Probe::legs(const std::vector<double>& z) {
  return {from_x_.query(z), from_y_.query(z)};
}

HingedField::Sample HingedField::Probe::eval(const std::vector<double>& z) {
  const auto [rx, ry] = legs(z);
  Sample s;
  s.z = z;
  s.d_xz = rx.distance;
  s.d_zy = ry.distance;
  s.h = 0.5 * (rx.distance * rx.distance + ry.distance * ry.distance);
  return s;
}

std::vector<double> HingedField::Probe::gradient(const std::vector<double>& z) {
  const auto [rx, ry] = legs(z);
  std::vector<double> g(z.size(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j)
    g[j] = rx.p_end[j] + ry.p_end[j];
  return g;
}

HingedField::Sample HingedField::eval(const std::vector<double>& z) {
  if (!main_probe_) main_probe_.emplace(*this);
  Sample s = main_probe_->eval(z);
  cache_.push_back(s);
  return s;
}

std::vector<double> HingedField::gradient(const std::vector<double>& z) {
  if (!main_probe_) main_probe_.emplace(*this);
  return main_probe_->gradient(z);
}

bool HingedField::in_fattened(const std::vector<double>& z, double eps) {
  const double half = 0.5 * (set_.distance + eps);
  try {
    const Sample s = eval(z);
    return s.d_xz <= half && s.d_zy <= half;
  } catch (const ShootError&) {
    return false;
  } catch (const ChartExitError&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Finite-difference Hessians.

namespace {

// Plain central-difference Hessian at one step size.
Eigen::MatrixXd hessian_once(const ScalarFn& h, const GradientFn& grad,
                             const std::vector<double>& z, double step) {
  const int d = static_cast<int>(z.size());
  Eigen::MatrixXd H(d, d);
  std::vector<double> q = z;
  if (grad) {
    Eigen::MatrixXd G(d, d);  // column j = dg at +- step along axis j
    for (int j = 0; j < d; ++j) {
      q[j] = z[j] + step;
      const std::vector<double> gp = grad(q);
      q[j] = z[j] - step;
      const std::vector<double> gm = grad(q);
      q[j] = z[j];
      for (int i = 0; i < d; ++i) G(i, j) = (gp[i] - gm[i]) / (2.0 * step);
    }
    H = 0.5 * (G + G.transpose());
    return H;
  }
  const double h0 = h(z);
  for (int i = 0; i < d; ++i) {
    q[i] = z[i] + step;
    const double hp = h(q);
    q[i] = z[i] - step;
    const double hm = h(q);
    q[i] = z[i];
    H(i, i) = (hp - 2.0 * h0 + hm) / (step * step);
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      double v[4];
      const double si[4] = {+1.0, +1.0, -1.0, -1.0};
      const double sj[4] = {+1.0, -1.0, +1.0, -1.0};
      for (int k = 0; k < 4; ++k) {
        q[i] = z[i] + si[k] * step;
        q[j] = z[j] + sj[k] * step;
        v[k] = h(q);
        q[i] = z[i];
        q[j] = z[j];
      }
      H(i, j) = H(j, i) = (v[0] - v[1] - v[2] + v[3]) / (4.0 * step * step);
    }
  }
  return H;
}

}  // namespace

NormalFormPoint analyze_point(const ScalarFn& h, const GradientFn& grad,
                              const std::vector<double>& z, double step,
                              double kernel_rel_tol) {
  const int d = static_cast<int>(z.size());
  // Richardson pair cancels the O(step^2) truncation of the central stencil.
  const Eigen::MatrixXd H =
      (4.0 * hessian_once(h, grad, z, 0.5 * step) - hessian_once(h, grad, z, step)) /
      3.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);

  NormalFormPoint out;
  out.z = z;
  if (h) out.h = h(z);
  out.eigenvalues.assign(es.eigenvalues().data(), es.eigenvalues().data() + d);
  out.eigenvectors.resize(d * d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i)
      out.eigenvectors[j * d + i] = es.eigenvectors()(i, j);
  const double lead = out.eigenvalues.back();
  if (lead <= 0.0) {
    out.kernel_dim = d;
    return out;
  }
  const double thresh = kernel_rel_tol * lead;
  for (const double lam : out.eigenvalues)
    if (lam < thresh) ++out.kernel_dim;
  return out;
}

// ---------------------------------------------------------------------------
// Cloud classification.

namespace {

// Local PCA dimension at one cloud point: singular spectrum of the patch of
// nearest neighbours, dimension = position of the first ratio gap.
int local_pca_dim(const std::vector<NormalFormPoint>& cloud, std::size_t i,
                  int k_nn, double gap) {
  const int d = static_cast<int>(cloud[i].z.size());
  std::vector<std::pair<double, std::size_t>> by_dist;
  for (std::size_t j = 0; j < cloud.size(); ++j)
    if (j != i) by_dist.push_back({chart_norm(cloud[i].z, cloud[j].z), j});
  std::sort(by_dist.begin(), by_dist.end());
  const int m = std::min<int>(k_nn, static_cast<int>(by_dist.size()));

  Eigen::MatrixXd P(m + 1, d);
  for (int c = 0; c < d; ++c) P(0, c) = cloud[i].z[c];
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < d; ++c) P(r + 1, c) = cloud[by_dist[r].second].z[c];
  const Eigen::RowVectorXd mean = P.colwise().mean();
  P.rowwise() -= mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P);
  const auto& sv = svd.singularValues();
  const int nsv = static_cast<int>(sv.size());
  for (int j = 0; j < d; ++j) {
    const double hi = j < nsv ? sv(j) : 0.0;
    const double lo = j + 1 < nsv ? sv(j + 1) : 0.0;
    // Ratios compare variances, so the gap applies to squared singular values.
    if (hi * hi >= gap * lo * lo && hi > 0.0) return j + 1;
  }
  return d;
}

}  // namespace

void classify_cloud(MidpointSetResult& result, const ScalarFn& h, int dim,
                    double scale, const MidpointOptions& options) {
  result.type = SingularityType::Unknown;
  result.atype_p = 0;
  result.atype_coeff = 0.0;
  result.bott_rank = 0;
  result.diagnostics.clear();
  if (result.gamma.empty()) {
    result.diagnostics = "empty cloud";
    return;
  }

  // A strongly negative eigenvalue means the point is not a local minimum.
  for (const auto& pt : result.gamma) {
    if (pt.eigenvalues.front() < -0.05 * std::abs(pt.eigenvalues.back())) {
      result.diagnostics = "negative curvature at a cloud point";
      return;
    }
  }

  double diameter = 0.0;
  for (std::size_t i = 0; i < result.gamma.size(); ++i)
    for (std::size_t j = i + 1; j < result.gamma.size(); ++j)
      diameter =
          std::max(diameter, chart_norm(result.gamma[i].z, result.gamma[j].z));

  // Clouds tighter than the polish slop are one analytic point; flat
  // directions smear quasi-Newton iterates without describing a manifold.
  const bool pointlike = diameter < options.bott_min_extent * scale;

  if (result.gamma.size() == 1 || pointlike) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < result.gamma.size(); ++i)
      if (result.gamma[i].h < result.gamma[best].h) best = i;
    if (pointlike && result.gamma.size() > 1)
      result.gamma = {result.gamma[best]};
    const NormalFormPoint& pt = result.gamma.front();
    const int d = dim;

    if (pt.kernel_dim == 0) {
      result.type = SingularityType::NonDegenerate;
      return;
    }
    if (pt.kernel_dim > 1) {
      result.diagnostics = "isolated point with kernel dimension " +
                           std::to_string(pt.kernel_dim);
      return;
    }

    // 1-D restriction along the kernel direction: symmetric samples fitted
    // against even monomials s^2..s^10 in the edge-normalized variable.
    const double span = options.atype_span * scale;
    const double h0 = h(pt.z);
    constexpr int kPairs = 9;
    constexpr int kOrders = 5;
    Eigen::MatrixXd A(kPairs, kOrders);
    Eigen::VectorXd b(kPairs);
    std::vector<double> zp(d), zm(d);
    for (int k = 1; k <= kPairs; ++k) {
      const double s = static_cast<double>(k) / kPairs;
      const double u = s * span;
      for (int j = 0; j < d; ++j) {
        const double vj = pt.eigenvectors[j];  // column 0 = kernel direction
        zp[j] = pt.z[j] + u * vj;
        zm[j] = pt.z[j] - u * vj;
      }
      b(k - 1) = 0.5 * (h(zp) + h(zm)) - h0;  // symmetrized: odd noise drops
      double sm = s * s;
      for (int m = 0; m < kOrders; ++m) {
        A(k - 1, m) = sm;
        sm *= s * s;
      }
    }
    const Eigen::VectorXd c =
        A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);
    const double residual = std::sqrt((A * c - b).squaredNorm() / kPairs);
    const double floor =
        10.0 * std::max(residual, 1e-13 * std::max(std::abs(h0), 1.0));
    for (int m = 0; m < kOrders; ++m) {
      if (std::abs(c(m)) <= floor) continue;
      if (m == 0) {
        result.diagnostics =
            "kernel direction shows quadratic growth; classification unstable";
        return;
      }
      result.type = SingularityType::AType;
      result.atype_p = m + 1;
      result.atype_coeff = c(m) / std::pow(span, 2.0 * (m + 1));
      return;
    }
    result.diagnostics = "no even order up to 10 dominates the kernel fit";
    return;
  }

  // Positive-dimensional candidate: Hessian rank must be constant.
  const int kdim = result.gamma.front().kernel_dim;
  for (const auto& pt : result.gamma) {
    if (pt.kernel_dim != kdim) {
      result.diagnostics = "inconsistent Hessian rank across the cloud";
      return;
    }
  }
  if (kdim == 0) {
    // Several isolated nondegenerate minima (multiplicity without degeneracy).
    result.type = SingularityType::NonDegenerate;
    return;
  }
  if (result.gamma.size() < 16) {
    result.diagnostics = "cloud too small to certify a positive-dimensional set";
    return;
  }

  const int n = static_cast<int>(result.gamma.size());
  const int k_nn = std::max(3, n / 16);
  std::map<int, int> votes;
  for (std::size_t i = 0; i < result.gamma.size(); ++i)
    ++votes[local_pca_dim(result.gamma, i, k_nn, options.pca_gap)];
  int r = 0, best_count = -1;
  for (const auto& [dim_est, count] : votes) {
    if (count > best_count) {
      best_count = count;
      r = dim_est;
    }
  }
  if (r != kdim) {
    result.diagnostics = "cloud dimension " + std::to_string(r) +
                         " does not match Hessian kernel dimension " +
                         std::to_string(kdim);
    return;
  }
  result.type = SingularityType::MorseBott;
  result.bott_rank = r;
}

void classify_singularity(HingedField& field, MidpointSetResult& result,
                          const MidpointOptions& options) {
  if (result.gamma.empty()) {
    result.type = SingularityType::Unknown;
    result.diagnostics = "empty cloud";
    return;
  }
  const int d = field.model().dim();
  const double scale = std::max(1.0, field.endpoint_distance());
  const double step = options.fd_scale * scale;

  // Warm primes: midpoints of the known x-to-y minimizers with their exact
  // half covectors (halving the covector halves the duration-1 geodesic).
  std::vector<std::vector<double>> prime_z;
  std::vector<DistanceSolver::Result> prime_x, prime_y;
  for (const auto& min : field.minimizer_set().minimizers) {
    ExpMapOptions eo;
    eo.steps = field.options().polish_steps;
    eo.n_samples = 3;
    std::vector<double> half(min.record.p0);
    for (auto& v : half) v *= 0.5;
    try {
      const GeodesicRecord rec =
          exp_map(field.model(), field.x(), half, 1.0, eo);
      DistanceSolver::Result rx, ry;
      rx.distance = 0.5 * field.endpoint_distance();
      rx.p0 = half;
      ry.distance = rx.distance;
      ry.p0 = min.record.samples.back().p;
      for (auto& v : ry.p0) v *= -0.5;  // reversed second half
      prime_z.push_back(rec.samples.back().x);
      prime_x.push_back(std::move(rx));
      prime_y.push_back(std::move(ry));
    } catch (const ChartExitError&) {
      continue;
    }
  }

  auto primed_probe = [&]() {
    HingedField::Probe p = field.probe();
    for (std::size_t k = 0; k < prime_z.size(); ++k)
      p.prime(prime_z[k], prime_x[k], prime_y[k]);
    return p;
  };

  std::vector<NormalFormPoint> analyzed(result.gamma.size());
  std::vector<std::string> failures(result.gamma.size());
  parallel_for(result.gamma.size(), [&](std::size_t i) {
    HingedField::Probe probe = primed_probe();
    const ScalarFn hfn = [&probe](const std::vector<double>& q) {
      return probe.eval(q).h;
    };
    const GradientFn gfn = [&probe](const std::vector<double>& q) {
      return probe.gradient(q);
    };
    try {
      NormalFormPoint pt = analyze_point(hfn, gfn, result.gamma[i].z, step,
                                         options.kernel_rel_tol);
      const HingedField::Sample s = probe.eval(pt.z);
      pt.h = s.h;
      pt.d_xz = s.d_xz;
      pt.d_zy = s.d_zy;
      analyzed[i] = std::move(pt);
    } catch (const ShootError& e) {
      failures[i] = e.what();
    } catch (const ChartExitError& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < analyzed.size(); ++i) {
    if (!failures[i].empty()) {
      result.type = SingularityType::Unknown;
      result.diagnostics = "hinged evaluation failed during classification: " +
                           failures[i];
      return;
    }
  }
  result.gamma = std::move(analyzed);

  HingedField::Probe serial = primed_probe();
  const ScalarFn hfn = [&serial](const std::vector<double>& q) {
    return serial.eval(q).h;
  };
  classify_cloud(result, hfn, d, scale, options);
}

// ---------------------------------------------------------------------------
// Grid scan, polish, and fattening.

namespace {

// Boustrophedon enumeration of the (dims)-dimensional index box [0,n)^dims:
// consecutive entries differ by one step in one axis, so a warm-started
// solver walking the list always moves to an adjacent cell.
void build_snake(int dims, int n, std::vector<std::vector<int>>& out) {
  if (dims == 0) {
    out.push_back({});
    return;
  }
  std::vector<std::vector<int>> inner;
  build_snake(dims - 1, n, inner);
  out.reserve(inner.size() * static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    if (k % 2 == 0) {
      for (auto it = inner.begin(); it != inner.end(); ++it) {
        out.push_back(*it);
        out.back().push_back(k);
      }
    } else {
      for (auto it = inner.rbegin(); it != inner.rend(); ++it) {
        out.push_back(*it);
        out.back().push_back(k);
      }
    }
  }
}

struct PolishOutcome {
  std::vector<double> z;
  DistanceSolver::Result leg_x, leg_y;
  double h = kInf;
  bool ok = false;
};

// BFGS descent on h with backtracking line search. Each candidate runs in
// its own probe; solver failures and halo exits act as +infinity values.
// Trial steps are capped at max_step so every query stays inside the probe's
// warm-start radius (a cold query costs a full multistart sweep).
PolishOutcome bfgs_polish(HingedField::Probe& probe, std::vector<double> z,
                          const std::vector<double>& halo_lo,
                          const std::vector<double>& halo_hi, int max_iter,
                          double grad_tol, double scale, double max_step) {
  const int d = static_cast<int>(z.size());
  PolishOutcome out;

  using Legs = std::pair<DistanceSolver::Result, DistanceSolver::Result>;
  auto try_legs = [&](const std::vector<double>& q) -> std::optional<Legs> {
    for (int j = 0; j < d; ++j)
      if (q[j] < halo_lo[j] || q[j] > halo_hi[j]) return std::nullopt;
    try {
      return probe.legs(q);
    } catch (const ShootError&) {
      return std::nullopt;
    } catch (const ChartExitError&) {
      return std::nullopt;
    }
  };
  auto h_of = [](const Legs& l) {
    return 0.5 * (l.first.distance * l.first.distance +
                  l.second.distance * l.second.distance);
  };
  auto g_of = [&](const Legs& l) {
    Eigen::VectorXd g(d);
    for (int j = 0; j < d; ++j) g(j) = l.first.p_end[j] + l.second.p_end[j];
    return g;
  };

  auto legs0 = try_legs(z);
  if (!legs0) return out;
  double h = h_of(*legs0);
  Eigen::VectorXd g = g_of(*legs0);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(d, d);
  Legs best_legs = *legs0;
  bool scaled = false;
  int stall = 0;  // consecutive iterations without meaningful descent

  for (int iter = 0; iter < max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= grad_tol) break;
    Eigen::VectorXd s = -Hinv * g;
    if (s.dot(g) >= 0.0) {  // stale curvature model: restart from steepest
      Hinv.setIdentity();
      scaled = false;
      s = -g;
    }

    double alpha = std::min(1.0, max_step / s.norm());
    std::optional<Legs> legs_new;
    std::vector<double> z_new(d);
    double h_new = kInf;
    bool accepted = false;
    for (int back = 0; back < 25; ++back, alpha *= 0.5) {
      for (int j = 0; j < d; ++j) z_new[j] = z[j] + alpha * s(j);
      legs_new = try_legs(z_new);
      if (!legs_new) continue;
      h_new = h_of(*legs_new);
      if (h_new <= h + 1e-4 * alpha * g.dot(s)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Eigen::VectorXd step = alpha * s;
    if (h - h_new <= 1e-13 * std::max(1.0, std::abs(h_new)))
      ++stall;
    else
      stall = 0;
    if (step.norm() < 1e-13 * scale || stall >= 2) {
      z = z_new;
      h = h_new;
      best_legs = *legs_new;
      break;
    }
    const Eigen::VectorXd g_new = g_of(*legs_new);
    const Eigen::VectorXd yv = g_new - g;
    const double sy = step.dot(yv);
    if (sy > 1e-12 * step.norm() * yv.norm()) {
      if (!scaled) {  // standard first-step scaling of the inverse model
        Hinv *= sy / yv.dot(yv);
        scaled = true;
      }
      const Eigen::VectorXd Hy = Hinv * yv;
      const double yHy = yv.dot(Hy);
      Hinv += ((sy + yHy) / (sy * sy)) * (step * step.transpose()) -
              (Hy * step.transpose() + step * Hy.transpose()) / sy;
    }
    z = z_new;
    h = h_new;
    g = g_new;
    best_legs = *legs_new;
  }

  out.z = std::move(z);
  out.leg_x = std::move(best_legs.first);
  out.leg_y = std::move(best_legs.second);
  out.h = h;
  out.ok = std::isfinite(h);
  return out;
}

}  // namespace

MidpointSetResult find_midpoint_set(HingedField& field,
                                    const ChartBounds& search_box,
                                    const MidpointOptions& options) {
  const SubRiemannianModel& model = field.model();
  const int d = model.dim();
  if (static_cast<int>(search_box.lo.size()) != d ||
      static_cast<int>(search_box.hi.size()) != d)
    throw std::invalid_argument("find_midpoint_set: search box dimension");
  const ChartBounds& bounds = model.bounds();
  for (int j = 0; j < d; ++j) {
    if (!(search_box.lo[j] < search_box.hi[j]))
      throw std::invalid_argument("find_midpoint_set: empty search box axis");
    if (search_box.lo[j] < bounds.lo[j] || search_box.hi[j] > bounds.hi[j])
      throw std::invalid_argument(
          "find_midpoint_set: search box leaves the chart bounds");
  }

  const double d_xy = field.endpoint_distance();
  const double scale = std::max(1.0, d_xy);
  const int n = options.grid_per_axis > 0
                    ? std::max(options.grid_per_axis, 5)
                    : (d <= 2 ? 25 : d == 3 ? 11 : 7);

  std::vector<std::vector<double>> nodes(d);
  std::vector<double> spacing(d);
  for (int j = 0; j < d; ++j) {
    spacing[j] = (search_box.hi[j] - search_box.lo[j]) / (n - 1);
    nodes[j].resize(n);
    for (int i = 0; i < n; ++i) nodes[j][i] = search_box.lo[j] + i * spacing[j];
  }

  std::size_t n_lines = 1;
  for (int j = 1; j < d; ++j) n_lines *= static_cast<std::size_t>(n);
  const std::size_t total = n_lines * static_cast<std::size_t>(n);
  const int m0 = n / 2;

  // Flat cell index: axis-0 index + n * line id (line id encodes axes 1..d-1).
  auto line_id = [&](const std::vector<int>& v) {
    std::size_t lid = 0, mult = 1;
    for (std::size_t j = 0; j < v.size(); ++j) {
      lid += static_cast<std::size_t>(v[j]) * mult;
      mult *= static_cast<std::size_t>(n);
    }
    return lid;
  };
  auto cell_point = [&](int i0, const std::vector<int>& v) {
    std::vector<double> z(d);
    z[0] = nodes[0][i0];
    for (std::size_t j = 0; j < v.size(); ++j) z[1 + j] = nodes[1 + j][v[j]];
    return z;
  };

  // Scan tier: ranking cells only needs coarse distances, so grid probes run
  // a reduced sweep with a deeper warm-start budget. Polish and
  // classification stay on the field's own options.
  ShootOptions scan_opts = field.options();
  scan_opts.seeds = options.scan_seeds;
  scan_opts.integration_steps = options.scan_steps;
  scan_opts.newton_max_iter = options.scan_newton_iter;
  scan_opts.residual_tol = std::max(scan_opts.residual_tol,
                                    options.scan_residual_tol);
  scan_opts.warm_candidates = options.scan_warm_candidates;
  scan_opts.warm_newton_iter = options.scan_newton_iter;

  std::vector<double> h_grid(total, kInf);
  std::vector<DistanceSolver::Result> leg_x(total), leg_y(total);

  auto scan_cell = [&](HingedField::Probe& probe, int i0,
                       const std::vector<int>& v) {
    const std::size_t flat = static_cast<std::size_t>(i0) + n * line_id(v);
    const std::vector<double> z = cell_point(i0, v);
    try {
      auto [rx, ry] = probe.legs(z);
      h_grid[flat] =
          0.5 * (rx.distance * rx.distance + ry.distance * ry.distance);
      leg_x[flat] = std::move(rx);
      leg_y[flat] = std::move(ry);
    } catch (const ShootError&) {
    } catch (const ChartExitError&) {
    }
  };

  const bool phase_times = std::getenv("HEATLAB_PHASE_TIMES") != nullptr;
  auto tick = std::chrono::steady_clock::now();
  auto phase = [&](const char* name) {
    if (!phase_times) return;
    const auto now = std::chrono::steady_clock::now();
    std::fprintf(stderr, "[phase] %-14s %8.1f ms\n", name,
                 std::chrono::duration<double, std::milli>(now - tick).count());
    tick = now;
  };

  // Serial spine: the center column of axis 0, walked in snake order so the
  // warm caches always move one cell. It seeds every parallel line below.
  std::vector<std::vector<int>> snake;
  build_snake(d - 1, n, snake);
  {
    HingedField::Probe spine_probe(field, scan_opts);
    for (const auto& v : snake) scan_cell(spine_probe, m0, v);
  }

  // Parallel lines: each walks outward from the spine cell in both
  // directions, priming fresh probes with the spine solution.
  parallel_for(snake.size(), [&](std::size_t li) {
    const std::vector<int>& v = snake[li];
    const std::size_t spine_flat = static_cast<std::size_t>(m0) + n * line_id(v);
    const bool spine_ok = std::isfinite(h_grid[spine_flat]);
    const std::vector<double> spine_z = cell_point(m0, v);
    for (const int dir : {-1, +1}) {
      HingedField::Probe probe(field, scan_opts);
      if (spine_ok) probe.prime(spine_z, leg_x[spine_flat], leg_y[spine_flat]);
      for (int i0 = m0 + dir; i0 >= 0 && i0 < n; i0 += dir)
        scan_cell(probe, i0, v);
    }
  });

  phase("scan");

  // Grid minimum; it must be bracketed strictly inside the box.
  std::size_t argmin = total;
  double h_min_grid = kInf;
  for (std::size_t i = 0; i < total; ++i) {
    if (h_grid[i] < h_min_grid) {
      h_min_grid = h_grid[i];
      argmin = i;
    }
  }
  if (argmin == total)
    throw std::runtime_error(
        "find_midpoint_set: no finite hinged-energy value in the search box");
  {
    std::size_t rest = argmin;
    for (int j = 0; j < d; ++j) {
      const int ij = static_cast<int>(rest % static_cast<std::size_t>(n));
      rest /= static_cast<std::size_t>(n);
      if (ij == 0 || ij == n - 1)
        throw std::runtime_error(
            "find_midpoint_set: grid minimum sits on the search box boundary; "
            "enlarge the box");
    }
  }

  // Candidate capture: lowest cells within delta of the grid minimum.
  const double delta = options.capture_delta > 0.0
                           ? options.capture_delta
                           : 0.35 * std::max(1.0, h_min_grid);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < total; ++i)
    if (h_grid[i] <= h_min_grid + delta) candidates.push_back(i);
  std::sort(candidates.begin(), candidates.end(),
            [&](std::size_t a, std::size_t b) { return h_grid[a] < h_grid[b]; });
  if (static_cast<int>(candidates.size()) > options.max_candidates)
    candidates.resize(options.max_candidates);

  std::vector<double> halo_lo(d), halo_hi(d);
  for (int j = 0; j < d; ++j) {
    halo_lo[j] = std::max(search_box.lo[j] - spacing[j], bounds.lo[j]);
    halo_hi[j] = std::min(search_box.hi[j] + spacing[j], bounds.hi[j]);
  }
  const double grad_tol =
      options.grad_tol > 0.0 ? options.grad_tol : 1e-6 * scale;

  const double max_step = *std::max_element(spacing.begin(), spacing.end());
  // Two-stage polish: the scan tier does the travelling (cheap sweeps when
  // the warm path misses), then a full-accuracy stage closes the remaining
  // gap that coarse-tier noise leaves in the line search.
  auto polish_candidate = [&](const std::vector<double>& z0,
                              const DistanceSolver::Result& px,
                              const DistanceSolver::Result& py) {
    HingedField::Probe probe(field, scan_opts);
    probe.prime(z0, px, py);
    PolishOutcome out = bfgs_polish(probe, z0, halo_lo, halo_hi,
                                    options.polish_max_iter, grad_tol, scale,
                                    max_step);
    if (out.ok) {
      HingedField::Probe fine = field.probe();
      fine.prime(out.z, out.leg_x, out.leg_y);
      PolishOutcome fin =
          bfgs_polish(fine, out.z, halo_lo, halo_hi, options.polish_max_iter,
                      grad_tol, scale, max_step);
      if (fin.ok) out = std::move(fin);
    }
    return out;
  };

  std::vector<PolishOutcome> polished(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t ci) {
    const std::size_t flat = candidates[ci];
    std::size_t rest = flat;
    const int i0 = static_cast<int>(rest % static_cast<std::size_t>(n));
    rest /= static_cast<std::size_t>(n);
    std::vector<int> v(d - 1);
    for (int j = 0; j < d - 1; ++j) {
      v[j] = static_cast<int>(rest % static_cast<std::size_t>(n));
      rest /= static_cast<std::size_t>(n);
    }
    polished[ci] = polish_candidate(cell_point(i0, v), leg_x[flat], leg_y[flat]);
  });

  double h_min = kInf;
  for (const auto& p : polished)
    if (p.ok) h_min = std::min(h_min, p.h);
  if (!std::isfinite(h_min))
    throw std::runtime_error("find_midpoint_set: every polish candidate failed");

  const double cluster_tol = options.cluster_tol > 0.0
                                 ? options.cluster_tol
                                 : 1e-5 * std::max(1.0, h_min);
  const double dedupe_tol =
      options.dedupe_tol > 0.0 ? options.dedupe_tol : 1e-3 * scale;

  phase("polish");

  std::vector<PolishOutcome> cloud;
  {
    std::vector<const PolishOutcome*> sorted;
    for (const auto& p : polished)
      if (p.ok && p.h <= h_min + cluster_tol) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const PolishOutcome* a, const PolishOutcome* b) {
                return a->h < b->h;
              });
    for (const PolishOutcome* p : sorted) {
      bool dup = false;
      for (const PolishOutcome& q : cloud)
        if (chart_norm(p->z, q.z) <= dedupe_tol) {
          dup = true;
          break;
        }
      if (!dup) cloud.push_back(*p);
    }
  }

  // Flat-direction continuation: a positive-dimensional Gamma reaches the
  // grid only at cell-quantized spots, too sparse for dimension estimates.
  // Polishing the chord midpoint between neighbouring cloud points lands
  // back on Gamma (transverse directions are quadratic, the along-set
  // direction is flat), roughly bisecting each gap per pass. Chords between
  // isolated minima polish above the cluster band and are discarded.
  for (int pass = 0;
       pass < 4 && cloud.size() >= 2 &&
       static_cast<int>(cloud.size()) < options.max_gamma_points;
       ++pass) {
    std::vector<std::vector<double>> starts;
    std::vector<std::size_t> parents;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      // Chords to the two nearest neighbours cover both adjacent gaps along
      // a curve; on isolated minima the extra chord dies in the cluster band.
      std::vector<std::pair<double, std::size_t>> near;
      for (std::size_t j = 0; j < cloud.size(); ++j)
        if (j != i) near.push_back({chart_norm(cloud[i].z, cloud[j].z), j});
      std::sort(near.begin(), near.end());
      for (std::size_t k = 0; k < near.size() && k < 2; ++k) {
        if (near[k].first <= 2.0 * dedupe_tol) continue;  // gap resolved
        std::vector<double> mid(d);
        for (int j = 0; j < d; ++j)
          mid[j] = 0.5 * (cloud[i].z[j] + cloud[near[k].second].z[j]);
        bool dup = false;
        for (const auto& q : cloud)
          if (chart_norm(mid, q.z) <= dedupe_tol) {
            dup = true;
            break;
          }
        for (const auto& q : starts)
          if (!dup && chart_norm(mid, q) <= dedupe_tol) dup = true;
        if (!dup) {
          starts.push_back(std::move(mid));
          parents.push_back(i);
        }
      }
    }
    if (starts.empty()) break;

    std::vector<PolishOutcome> extra(starts.size());
    parallel_for(starts.size(), [&](std::size_t k) {
      extra[k] = polish_candidate(starts[k], cloud[parents[k]].leg_x,
                                  cloud[parents[k]].leg_y);
    });
    bool grew = false;
    for (auto& e : extra) {
      if (!e.ok) continue;
      h_min = std::min(h_min, e.h);
      if (e.h > h_min + cluster_tol) continue;
      bool dup = false;
      for (const PolishOutcome& q : cloud)
        if (chart_norm(e.z, q.z) <= dedupe_tol) {
          dup = true;
          break;
        }
      if (!dup) {
        cloud.push_back(std::move(e));
        grew = true;
      }
    }
    if (!grew) break;
  }

  phase("continuation");

  // Continuation may have lowered h_min below early members' band.
  cloud.erase(std::remove_if(cloud.begin(), cloud.end(),
                             [&](const PolishOutcome& p) {
                               return p.h > h_min + cluster_tol;
                             }),
              cloud.end());
  std::sort(cloud.begin(), cloud.end(),
            [](const PolishOutcome& a, const PolishOutcome& b) {
              return a.h < b.h;
            });
  if (static_cast<int>(cloud.size()) > options.max_gamma_points) {
    // Even subsample over the h-sorted list keeps the spatial spread.
    std::vector<PolishOutcome> sub;
    const double stride =
        static_cast<double>(cloud.size()) / options.max_gamma_points;
    for (int i = 0; i < options.max_gamma_points; ++i)
      sub.push_back(cloud[static_cast<std::size_t>(i * stride)]);
    cloud = std::move(sub);
  }

  MidpointSetResult result;
  result.h_min = h_min;
  std::vector<DistanceSolver::Result> gamma_x, gamma_y;
  for (const PolishOutcome& p : cloud) {
    NormalFormPoint pt;
    pt.z = p.z;
    pt.h = p.h;
    pt.d_xz = p.leg_x.distance;
    pt.d_zy = p.leg_y.distance;
    result.gamma.push_back(std::move(pt));
    gamma_x.push_back(p.leg_x);
    gamma_y.push_back(p.leg_y);
  }

  // Fattening width: shrink until every in-width scan cell and every gamma
  // point has both legs non-conjugate, and the certified region keeps off
  // the box boundary (beyond it nothing was scanned).
  if (d_xy > 0.0) {
    double eps = options.eps_fraction * d_xy;
    const double eps_floor = 1e-4 * scale;
    const int steps = field.options().polish_steps;
    const double sigma_tol = field.options().sigma_tol;
    auto members_of = [&](double e) {
      std::vector<std::size_t> mem;
      const double half = 0.5 * (d_xy + e);
      for (std::size_t i = 0; i < total; ++i)
        if (std::isfinite(h_grid[i]) && leg_x[i].distance <= half &&
            leg_y[i].distance <= half)
          mem.push_back(i);
      return mem;
    };
    auto on_boundary = [&](std::size_t flat) {
      for (int j = 0; j < d; ++j) {
        const int ij = static_cast<int>(flat % static_cast<std::size_t>(n));
        flat /= static_cast<std::size_t>(n);
        if (ij == 0 || ij == n - 1) return true;
      }
      return false;
    };
    for (int trial = 0; trial < 24; ++trial) {
      const std::vector<std::size_t> members = members_of(eps);
      std::vector<char> bad(members.size() + result.gamma.size(), 0);
      parallel_for(members.size() + result.gamma.size(), [&](std::size_t k) {
        const std::vector<double>* p0x;
        const std::vector<double>* p0y;
        if (k < members.size()) {
          if (on_boundary(members[k])) {
            bad[k] = 1;
            return;
          }
          p0x = &leg_x[members[k]].p0;
          p0y = &leg_y[members[k]].p0;
        } else {
          p0x = &gamma_x[k - members.size()].p0;
          p0y = &gamma_y[k - members.size()].p0;
        }
        if (p0x->empty() || p0y->empty()) return;  // coincident leg: regular
        try {
          if (jacobi_flow(model, field.x(), *p0x, 1.0, steps, sigma_tol)
                  .rank_deficient ||
              jacobi_flow(model, field.y(), *p0y, 1.0, steps, sigma_tol)
                  .rank_deficient)
            bad[k] = 1;
        } catch (const ChartExitError&) {
          bad[k] = 1;  // can't certify a leg that leaves the chart
        }
      });
      if (std::none_of(bad.begin(), bad.end(), [](char c) { return c != 0; })) {
        result.grid_in_eps = static_cast<int>(members.size());
        break;
      }
      eps *= 0.5;
      if (eps < eps_floor) {
        result.diagnostics =
            "fattening width shrank to its floor without certifying "
            "non-conjugacy";
        result.grid_in_eps = static_cast<int>(members_of(eps).size());
        break;
      }
    }
    result.eps = eps;
  }
  phase("fattening");

  // Deterministic cache merge: finite scan cells in flat order, then gamma.
  for (std::size_t i = 0; i < total; ++i) {
    if (!std::isfinite(h_grid[i])) continue;
    HingedField::Sample s;
    std::size_t rest = i;
    const int i0 = static_cast<int>(rest % static_cast<std::size_t>(n));
    rest /= static_cast<std::size_t>(n);
    std::vector<int> v(d - 1);
    for (int j = 0; j < d - 1; ++j) {
      v[j] = static_cast<int>(rest % static_cast<std::size_t>(n));
      rest /= static_cast<std::size_t>(n);
    }
    s.z = cell_point(i0, v);
    s.h = h_grid[i];
    s.d_xz = leg_x[i].distance;
    s.d_zy = leg_y[i].distance;
    field.append_cache(s);
  }
  for (const auto& pt : result.gamma)
    field.append_cache({pt.z, pt.h, pt.d_xz, pt.d_zy});

  phase("cache");
  if (options.classify) classify_singularity(field, result, options);
  phase("classify");
  return result;
}

}  // namespace heatlab

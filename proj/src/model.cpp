#include "heatlab/model.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <nlohmann/json.hpp>

namespace heatlab {

namespace {

using ordered_json = nlohmann::ordered_json;

thread_local std::vector<double> tl_scratch;

double* scratch(std::size_t n) {
  if (tl_scratch.size() < n) tl_scratch.resize(n);
  return tl_scratch.data();
}

}  // namespace

SubRiemannianModel::SubRiemannianModel(int dim, int rank,
                                       std::vector<VectorFieldExpr> frame,
                                       std::optional<VectorFieldExpr> drift,
                                       Expr volume_density, ChartBounds bounds,
                                       bool symmetric)
    : dim_(dim),
      rank_(rank),
      frame_(std::move(frame)),
      drift_(std::move(drift)),
      volume_density_(std::move(volume_density)),
      bounds_(std::move(bounds)),
      symmetric_(symmetric) {
  validate();
  prepare();
}

void SubRiemannianModel::validate() const {
  if (dim_ < 1) throw ModelError("dimension must be positive");
  if (rank_ < 1 || rank_ > dim_)
    throw ModelError("rank must be in [1, dim]");
  if (static_cast<int>(frame_.size()) != rank_)
    throw ModelError("frame must contain exactly rank fields");
  for (const auto& field : frame_) {
    if (static_cast<int>(field.components.size()) != dim_)
      throw ModelError("frame field has wrong number of components");
    for (const auto& c : field.components)
      if (c.max_var_index() > dim_)
        throw ModelError("frame component references variable beyond dimension");
  }
  if (drift_) {
    if (static_cast<int>(drift_->components.size()) != dim_)
      throw ModelError("drift has wrong number of components");
    for (const auto& c : drift_->components)
      if (c.max_var_index() > dim_)
        throw ModelError("drift component references variable beyond dimension");
  }
  if (volume_density_.max_var_index() > dim_)
    throw ModelError("volume density references variable beyond dimension");
  if (static_cast<int>(bounds_.lo.size()) != dim_ ||
      static_cast<int>(bounds_.hi.size()) != dim_)
    throw ModelError("chart bounds must have dim entries");
  for (int j = 0; j < dim_; ++j)
    if (!(bounds_.lo[j] < bounds_.hi[j]))
      throw ModelError("chart bounds must satisfy lo < hi");

  // Sample grid for the positivity and span checks: a product grid at three
  // interior stations per axis (capped at 4 axes of product structure).
  std::vector<std::vector<double>> points;
  const double fractions[3] = {0.15, 0.5, 0.85};
  if (dim_ <= 4) {
    std::vector<int> idx(dim_, 0);
    for (;;) {
      std::vector<double> x(dim_);
      for (int j = 0; j < dim_; ++j)
        x[j] = bounds_.lo[j] + fractions[idx[j]] * (bounds_.hi[j] - bounds_.lo[j]);
      points.push_back(std::move(x));
      int j = 0;
      while (j < dim_ && ++idx[j] == 3) idx[j++] = 0;
      if (j == dim_) break;
    }
  } else {
    // Halton points for higher dimensions.
    const auto halton = [](int index, int base) {
      double f = 1.0, r = 0.0;
      while (index > 0) {
        f /= base;
        r += f * (index % base);
        index /= base;
      }
      return r;
    };
    const int primes[8] = {2, 3, 5, 7, 11, 13, 17, 19};
    for (int i = 1; i <= 81; ++i) {
      std::vector<double> x(dim_);
      for (int j = 0; j < dim_; ++j) {
        const double u = halton(i, primes[j % 8]);
        x[j] = bounds_.lo[j] + (0.1 + 0.8 * u) * (bounds_.hi[j] - bounds_.lo[j]);
      }
      points.push_back(std::move(x));
    }
  }

  for (const auto& x : points) {
    double dens;
    try {
      dens = volume_density_.eval(x);
    } catch (const EvalError& e) {
      throw ModelError(std::string("volume density not evaluable on chart: ") + e.what());
    }
    if (!(dens > 0.0))
      throw ModelError("volume density is not positive at a sample point");
  }

  // Step-2 bracket span: columns Z_i and [Z_i, Z_j]. Deeper bracket
  // structures are out of scope and rejected here.
  const int n_brackets = rank_ * (rank_ - 1) / 2;
  if (rank_ + n_brackets < dim_)
    throw ModelError(
        "frame plus first-order brackets cannot span the chart (step-2 check)");
  for (const auto& x : points) {
    Eigen::MatrixXd cols(dim_, rank_ + n_brackets);
    std::vector<std::vector<double>> Z(rank_, std::vector<double>(dim_));
    std::vector<std::vector<double>> dZ(rank_, std::vector<double>(dim_ * dim_));
    for (int i = 0; i < rank_; ++i)
      for (int j = 0; j < dim_; ++j) {
        Z[i][j] = frame_[i].components[j].eval(x);
        for (int m = 0; m < dim_; ++m)
          dZ[i][j * dim_ + m] =
              frame_[i].components[j].differentiate(m + 1).eval(x);
      }
    for (int i = 0; i < rank_; ++i)
      for (int j = 0; j < dim_; ++j) cols(j, i) = Z[i][j];
    int col = rank_;
    for (int i = 0; i < rank_; ++i)
      for (int j = i + 1; j < rank_; ++j, ++col)
        for (int a = 0; a < dim_; ++a) {
          double v = 0.0;
          for (int m = 0; m < dim_; ++m)
            v += Z[i][m] * dZ[j][a * dim_ + m] - Z[j][m] * dZ[i][a * dim_ + m];
          cols(a, col) = v;
        }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(cols);
    const auto& sv = svd.singularValues();
    const double tol = sv(0) * 1e-10;
    int rank_est = 0;
    for (int i = 0; i < sv.size(); ++i)
      if (sv(i) > tol) ++rank_est;
    if (rank_est < dim_)
      throw ModelError(
          "frame plus first-order brackets do not span at a sample point "
          "(step-2 check only; deeper structures are not supported)");
  }
}

void SubRiemannianModel::prepare() {
  const int d = dim_;
  frame_c_.resize(static_cast<std::size_t>(rank_) * d);
  dframe_c_.resize(static_cast<std::size_t>(rank_) * d * d);
  d2frame_c_.resize(static_cast<std::size_t>(rank_) * d * d * d);
  for (int i = 0; i < rank_; ++i)
    for (int j = 0; j < d; ++j) {
      const Expr& comp = frame_[i].components[j];
      frame_c_[i * d + j] = CompiledExpr::compile(comp);
      for (int m = 0; m < d; ++m) {
        const Expr dm = comp.differentiate(m + 1);
        dframe_c_[(i * d + j) * d + m] = CompiledExpr::compile(dm);
        for (int n = 0; n < d; ++n)
          d2frame_c_[((i * d + j) * d + m) * d + n] =
              CompiledExpr::compile(dm.differentiate(n + 1));
      }
    }
  if (drift_) {
    drift_c_.resize(d);
    for (int j = 0; j < d; ++j)
      drift_c_[j] = CompiledExpr::compile(drift_->components[j]);
  }
  volume_c_ = CompiledExpr::compile(volume_density_);
}

bool SubRiemannianModel::inside_chart(const double* x, double margin) const {
  for (int j = 0; j < dim_; ++j)
    if (x[j] < bounds_.lo[j] + margin || x[j] > bounds_.hi[j] - margin)
      return false;
  return true;
}

double SubRiemannianModel::hamiltonian(const double* x, const double* p) const {
  const int d = dim_;
  double H = 0.0;
  for (int i = 0; i < rank_; ++i) {
    double u = 0.0;
    for (int j = 0; j < d; ++j) u += p[j] * frame_c_[i * d + j].eval(x);
    H += u * u;
  }
  return 0.5 * H;
}

void SubRiemannianModel::hamiltonian_gradient(const double* x, const double* p,
                                              double* dHdx, double* dHdp) const {
  const int d = dim_;
  double* Z = scratch(static_cast<std::size_t>(rank_) * d);
  for (int j = 0; j < d; ++j) {
    dHdx[j] = 0.0;
    dHdp[j] = 0.0;
  }
  for (int i = 0; i < rank_; ++i) {
    double u = 0.0;
    for (int j = 0; j < d; ++j) {
      Z[i * d + j] = frame_c_[i * d + j].eval(x);
      u += p[j] * Z[i * d + j];
    }
    if (u == 0.0) continue;
    for (int a = 0; a < d; ++a) dHdp[a] += u * Z[i * d + a];
    for (int m = 0; m < d; ++m) {
      double w = 0.0;
      for (int j = 0; j < d; ++j)
        w += p[j] * dframe_c_[(i * d + j) * d + m].eval(x);
      dHdx[m] += u * w;
    }
  }
}

void SubRiemannianModel::hamiltonian_blocks(const double* x, const double* p,
                                            double* Hpp, double* Hxp,
                                            double* Hxx) const {
  const int d = dim_;
  double* buf = scratch(static_cast<std::size_t>(rank_) * d * (d + 2));
  double* Z = buf;                                   // rank x d
  double* w = Z + static_cast<std::size_t>(rank_) * d;     // rank x d
  double* dZ = w + static_cast<std::size_t>(rank_) * d;    // rank x d x d (component a, partial m)
  for (int t = 0; t < d * d; ++t) {
    Hpp[t] = 0.0;
    Hxp[t] = 0.0;
    Hxx[t] = 0.0;
  }
  for (int i = 0; i < rank_; ++i) {
    double u = 0.0;
    for (int j = 0; j < d; ++j) {
      Z[i * d + j] = frame_c_[i * d + j].eval(x);
      u += p[j] * Z[i * d + j];
    }
    for (int a = 0; a < d; ++a)
      for (int m = 0; m < d; ++m)
        dZ[(i * d + a) * d + m] = dframe_c_[(i * d + a) * d + m].eval(x);
    for (int m = 0; m < d; ++m) {
      double wm = 0.0;
      for (int j = 0; j < d; ++j) wm += p[j] * dZ[(i * d + j) * d + m];
      w[i * d + m] = wm;
    }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) Hpp[a * d + b] += Z[i * d + a] * Z[i * d + b];
    for (int m = 0; m < d; ++m)
      for (int a = 0; a < d; ++a)
        Hxp[m * d + a] += w[i * d + m] * Z[i * d + a] + u * dZ[(i * d + a) * d + m];
    for (int m = 0; m < d; ++m)
      for (int n = m; n < d; ++n) {
        double v = w[i * d + m] * w[i * d + n];
        double second = 0.0;
        for (int j = 0; j < d; ++j)
          second += p[j] * d2frame_c_[((i * d + j) * d + m) * d + n].eval(x);
        v += u * second;
        Hxx[m * d + n] += v;
        if (n != m) Hxx[n * d + m] += v;
      }
  }
}

void SubRiemannianModel::frame_values(const double* x, double* Z) const {
  const int d = dim_;
  for (int i = 0; i < rank_; ++i)
    for (int j = 0; j < d; ++j) Z[i * d + j] = frame_c_[i * d + j].eval(x);
}

void SubRiemannianModel::drift_values(const double* x, double* b) const {
  for (int j = 0; j < dim_; ++j) b[j] = 0.0;
  if (!drift_) return;
  for (int j = 0; j < dim_; ++j) b[j] = drift_c_[j].eval(x);
}

double SubRiemannianModel::volume_density_at(const double* x) const {
  return volume_c_.eval(x);
}

std::string SubRiemannianModel::to_json() const {
  ordered_json j;
  j["schema"] = 1;
  j["dim"] = dim_;
  j["rank"] = rank_;
  ordered_json frame = ordered_json::array();
  for (const auto& field : frame_) {
    ordered_json comps = ordered_json::array();
    for (const auto& c : field.components) comps.push_back(c.str());
    frame.push_back(comps);
  }
  j["frame"] = frame;
  if (drift_) {
    ordered_json comps = ordered_json::array();
    for (const auto& c : drift_->components) comps.push_back(c.str());
    j["drift"] = comps;
  } else {
    j["drift"] = nullptr;
  }
  j["volume_density"] = volume_density_.str();
  j["bounds"] = {{"lo", bounds_.lo}, {"hi", bounds_.hi}};
  j["symmetric"] = symmetric_;
  return j.dump(2);
}

SubRiemannianModel SubRiemannianModel::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ModelError(std::string("model JSON malformed: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"].get<int>() != 1)
    throw ModelError("model JSON must declare schema 1");
  const auto need = [&](const char* key) -> const ordered_json& {
    if (!j.contains(key))
      throw ModelError(std::string("model JSON missing key `") + key + "`");
    return j[key];
  };
  const int dim = need("dim").get<int>();
  const int rank = need("rank").get<int>();
  std::vector<VectorFieldExpr> frame;
  for (const auto& field : need("frame")) {
    VectorFieldExpr vf;
    for (const auto& comp : field)
      vf.components.push_back(parse(comp.get<std::string>(), dim));
    frame.push_back(std::move(vf));
  }
  std::optional<VectorFieldExpr> drift;
  if (j.contains("drift") && !j["drift"].is_null()) {
    VectorFieldExpr vf;
    for (const auto& comp : j["drift"])
      vf.components.push_back(parse(comp.get<std::string>(), dim));
    drift = std::move(vf);
  }
  Expr density = parse(need("volume_density").get<std::string>(), dim);
  ChartBounds bounds;
  bounds.lo = need("bounds")["lo"].get<std::vector<double>>();
  bounds.hi = need("bounds")["hi"].get<std::vector<double>>();
  const bool symmetric = need("symmetric").get<bool>();
  return SubRiemannianModel(dim, rank, std::move(frame), std::move(drift),
                            std::move(density), std::move(bounds), symmetric);
}

}  // namespace heatlab

#include "eki/forward_models.hpp"

#include "eki/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <mutex>

namespace eki {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

// ---------------------------------------------------------------------------
// 1-D

Vector Mesh1D::nodes() const {
  Vector x(n_interior());
  for (Index i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1) * width();
  return x;
}

void Mesh1D::validate() const {
  if (n_cells < 4 || (n_cells & (n_cells - 1)) != 0)
    throw Error("1-D mesh needs a power-of-two cell count >= 4");
  if (!(length > 0.0)) throw Error("1-D mesh length must be positive");
}

Fem1DLinear Fem1DLinear::assemble(const Mesh1D& mesh, Index n_obs) {
  mesh.validate();
  if (n_obs < 1) throw Error("need at least one observation point");
  const Index d = mesh.n_interior();
  const double h = mesh.width();

  Fem1DLinear fem;
  fem.mesh_ = mesh;
  Matrix stiff = Matrix::Zero(d, d);
  fem.mass_ = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    stiff(i, i) = 2.0 / h;
    fem.mass_(i, i) = 4.0 * h / 6.0;
    if (i + 1 < d) {
      stiff(i, i + 1) = stiff(i + 1, i) = -1.0 / h;
      fem.mass_(i, i + 1) = fem.mass_(i + 1, i) = h / 6.0;
    }
  }
  fem.op_ = stiff + fem.mass_;

  // Nodal interpolation at x_k; node 0 and node n_cells are boundary (p = 0).
  fem.obs_ = Matrix::Zero(n_obs, d);
  fem.obs_points_.resize(n_obs);
  for (Index k = 0; k < n_obs; ++k) {
    const double x = static_cast<double>(k + 1) * mesh.length / static_cast<double>(n_obs + 1);
    fem.obs_points_[k] = x;
    const double s = x / h;
    Index left = static_cast<Index>(std::floor(s));
    double frac = s - static_cast<double>(left);
    if (frac > 1.0 - 1e-12) {
      ++left;
      frac = 0.0;
    }
    if (frac < 1e-12) frac = 0.0;
    auto add = [&](Index node, double w) {
      if (node >= 1 && node <= d && w != 0.0) fem.obs_(k, node - 1) += w;
    };
    add(left, 1.0 - frac);
    add(left + 1, frac);
  }

  auto llt = std::make_shared<Eigen::LLT<Matrix>>(fem.op_);
  if (llt->info() != Eigen::Success) throw NumericalError("1-D FEM operator is not SPD");
  fem.llt_ = llt;
  fem.forward_ = fem.obs_ * llt->solve(fem.mass_);
  return fem;
}

Vector Fem1DLinear::solve(const Vector& u) const {
  if (u.size() != mesh_.n_interior()) throw DimensionError("source has wrong dimension");
  return llt_->solve(mass_ * u);
}

Vector Fem1DLinear::observe(const Vector& u) const { return obs_ * solve(u); }

ForwardMap Fem1DLinear::forward_map() const { return ForwardMap::from_matrix(forward_); }

Vector linear_forward(const Fem1DLinear& fem, const Vector& u) { return fem.observe(u); }

// ---------------------------------------------------------------------------
// Priors

Matrix PriorSpec::covariance() const { return modes * lambda.asDiagonal() * modes.transpose(); }

Vector PriorSpec::colour(const Eigen::Ref<const Vector>& zeta) const {
  if (zeta.size() != n_modes()) throw DimensionError("need one standard normal per prior mode");
  return modes * (lambda.cwiseSqrt().asDiagonal() * zeta);
}

double PriorSpec::quadratic_form(const Eigen::Ref<const Vector>& v) const {
  const Vector c = modes.transpose() * v;
  return c.dot(lambda.asDiagonal() * c);
}

PriorSpec inverse_shifted_laplacian_prior(const Mesh1D& mesh, double beta) {
  mesh.validate();
  if (!(beta > 0.0)) throw Error("prior scale must be positive");
  const Index d = mesh.n_interior();
  const Vector x = mesh.nodes();
  PriorSpec prior;
  prior.kind = PriorKind::InverseShiftedLaplacian;
  prior.scale = beta;
  prior.lambda.resize(d);
  prior.modes.resize(d, d);
  const double norm = std::sqrt(2.0 / mesh.length);
  for (Index j = 0; j < d; ++j) {
    const double freq = static_cast<double>(j + 1) * kPi / mesh.length;
    // Eigenvalue of beta (-d^2/dx^2)^{-1} for sin(freq x).
    prior.lambda[j] = beta / (freq * freq);
    for (Index i = 0; i < d; ++i) prior.modes(i, j) = norm * std::sin(freq * x[i]);
  }
  return prior;
}

PriorSpec diagonal_prior(const Vector& variances) {
  PriorSpec prior;
  prior.kind = PriorKind::Diagonal;
  prior.scale = 1.0;
  prior.lambda = variances;
  prior.modes = Matrix::Identity(variances.size(), variances.size());
  return prior;
}

Ensemble kl_initial_ensemble(const PriorSpec& prior, Index J, std::uint64_t seed) {
  if (J < 1) throw Error("ensemble size must be positive");
  if (J > prior.n_modes())
    throw Error("ensemble size " + std::to_string(J) + " exceeds the " +
                std::to_string(prior.n_modes()) + " available prior modes");
  Matrix members(prior.dim(), J);
  for (Index j = 0; j < J; ++j) {
    RandomStream rs(seed, 0, static_cast<std::uint64_t>(j), RandomStream::kInitial);
    members.col(j) = std::sqrt(prior.lambda[j]) * rs.normal() * prior.modes.col(j);
  }
  return Ensemble(std::move(members));
}

Vector prior_draw(const PriorSpec& prior, std::uint64_t seed) {
  RandomStream rs(seed, 0, 0, RandomStream::kData);
  return prior.colour(rs.normal_vector(prior.n_modes()));
}

Vector adaptive_first_member(const Vector& truth, const Eigen::Ref<const Matrix>& others,
                             const Vector& alphas) {
  const Index J = others.cols() + 1;
  if (alphas.size() != J) throw DimensionError("need one coefficient per ensemble member");
  if (others.rows() != truth.size()) throw DimensionError("members and truth differ in dimension");
  const double dJ = static_cast<double>(J);
  const double alpha_sum = alphas.sum();
  const double denom = 1.0 - alphas[0] + alpha_sum / dJ;
  if (std::abs(denom) < 1e-14)
    throw Error("degenerate coefficients: 1 - alpha_1 + sum(alpha)/J is zero");
  const Vector others_sum = others.rowwise().sum();
  Vector rhs = truth - (alpha_sum / dJ) * others_sum;
  for (Index k = 1; k < J; ++k) rhs += alphas[k] * others.col(k - 1);
  return rhs / denom;
}

// ---------------------------------------------------------------------------
// 2-D

bool Mesh2D::on_boundary(Index ix, Index iy) const {
  return ix == 0 || iy == 0 || ix == n_cells || iy == n_cells;
}

Matrix Mesh2D::coordinates() const {
  Matrix xy(n_nodes(), 2);
  for (Index iy = 0; iy < nodes_per_side(); ++iy)
    for (Index ix = 0; ix < nodes_per_side(); ++ix) {
      xy(node(ix, iy), 0) = lo + static_cast<double>(ix) * width();
      xy(node(ix, iy), 1) = lo + static_cast<double>(iy) * width();
    }
  return xy;
}

void Mesh2D::validate() const {
  if (n_cells < 2) throw Error("2-D mesh needs at least two cells per side");
  if (!(hi > lo)) throw Error("2-D mesh needs hi > lo");
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// P1 element matrices on a triangle: stiffness (unit coefficient) and mass.
struct ElementMatrices {
  double stiffness[3][3];
  double mass[3][3];
  double area;
};

ElementMatrices element_matrices(const Matrix& xy, const std::array<Index, 3>& tri) {
  const double x0 = xy(tri[0], 0), y0 = xy(tri[0], 1);
  const double x1 = xy(tri[1], 0), y1 = xy(tri[1], 1);
  const double x2 = xy(tri[2], 0), y2 = xy(tri[2], 1);
  const double det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
  ElementMatrices em{};
  em.area = 0.5 * std::abs(det);
  // Barycentric gradients: grad(lambda_i) = (y_j - y_k, x_k - x_j) / det.
  const double gx[3] = {(y1 - y2) / det, (y2 - y0) / det, (y0 - y1) / det};
  const double gy[3] = {(x2 - x1) / det, (x0 - x2) / det, (x1 - x0) / det};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      em.stiffness[i][j] = em.area * (gx[i] * gx[j] + gy[i] * gy[j]);
      em.mass[i][j] = em.area / 12.0 * (i == j ? 2.0 : 1.0);
    }
  return em;
}

std::vector<std::array<Index, 3>> triangulate(const Mesh2D& mesh) {
  std::vector<std::array<Index, 3>> tris;
  tris.reserve(static_cast<std::size_t>(2 * mesh.n_cells * mesh.n_cells));
  for (Index cy = 0; cy < mesh.n_cells; ++cy)
    for (Index cx = 0; cx < mesh.n_cells; ++cx) {
      const Index n00 = mesh.node(cx, cy), n10 = mesh.node(cx + 1, cy);
      const Index n11 = mesh.node(cx + 1, cy + 1), n01 = mesh.node(cx, cy + 1);
      tris.push_back({n00, n10, n11});
      tris.push_back({n00, n11, n01});
    }
  return tris;
}

std::vector<Index> number_dofs(const Mesh2D& mesh, Index& n_dofs) {
  std::vector<Index> dof(static_cast<std::size_t>(mesh.n_nodes()), -1);
  n_dofs = 0;
  for (Index iy = 0; iy < mesh.nodes_per_side(); ++iy)
    for (Index ix = 0; ix < mesh.nodes_per_side(); ++ix)
      if (!mesh.on_boundary(ix, iy)) dof[static_cast<std::size_t>(mesh.node(ix, iy))] = n_dofs++;
  return dof;
}

}  // namespace

// Sparse Cholesky solvers with the symbolic analysis of the stiffness
// pattern already done. Solvers are not copyable, so concurrent solves each
// take one from the pool and hand it back.
struct SolverPool {
  using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

  std::unique_ptr<Solver> acquire(const Eigen::SparseMatrix<double>& pattern) {
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (!idle.empty()) {
        auto s = std::move(idle.back());
        idle.pop_back();
        return s;
      }
    }
    auto s = std::make_unique<Solver>();
    s->analyzePattern(pattern);
    return s;
  }

  void release(std::unique_ptr<Solver> s) {
    std::lock_guard<std::mutex> lock(mutex);
    idle.push_back(std::move(s));
  }

  std::mutex mutex;
  std::vector<std::unique_ptr<Solver>> idle;
};

Fem2DNonlinear Fem2DNonlinear::assemble(const Mesh2D& mesh, double source, Index obs_per_side) {
  mesh.validate();
  if (obs_per_side < 1) throw Error("need at least one observation per side");
  Fem2DNonlinear fem;
  fem.mesh_ = mesh;
  fem.source_ = source;
  fem.triangles_ = triangulate(mesh);
  fem.dof_ = number_dofs(mesh, fem.n_dofs_);

  fem.load_ = Vector::Zero(fem.n_dofs_);
  const double tri_area = 0.5 * mesh.width() * mesh.width();
  for (const auto& tri : fem.triangles_)
    for (Index a : tri) {
      const Index i = fem.dof_[static_cast<std::size_t>(a)];
      if (i >= 0) fem.load_[i] += source * tri_area / 3.0;
    }

  // Point evaluation of the P1 solution by barycentric interpolation.
  const Index n_obs = obs_per_side * obs_per_side;
  fem.obs_points_.resize(n_obs, 2);
  Triplets trip;
  const double h = mesh.width();
  for (Index oy = 0; oy < obs_per_side; ++oy)
    for (Index ox = 0; ox < obs_per_side; ++ox) {
      const Index k = oy * obs_per_side + ox;
      const double span = mesh.hi - mesh.lo;
      const double x = mesh.lo + static_cast<double>(ox + 1) * span / static_cast<double>(obs_per_side + 1);
      const double y = mesh.lo + static_cast<double>(oy + 1) * span / static_cast<double>(obs_per_side + 1);
      fem.obs_points_(k, 0) = x;
      fem.obs_points_(k, 1) = y;
      const double sx = (x - mesh.lo) / h, sy = (y - mesh.lo) / h;
      Index cx = std::min<Index>(static_cast<Index>(std::floor(sx)), mesh.n_cells - 1);
      Index cy = std::min<Index>(static_cast<Index>(std::floor(sy)), mesh.n_cells - 1);
      const double a = sx - static_cast<double>(cx), b = sy - static_cast<double>(cy);
      const Index n00 = mesh.node(cx, cy), n10 = mesh.node(cx + 1, cy);
      const Index n11 = mesh.node(cx + 1, cy + 1), n01 = mesh.node(cx, cy + 1);
      if (a >= b) {
        trip.emplace_back(k, n00, 1.0 - a);
        trip.emplace_back(k, n10, a - b);
        trip.emplace_back(k, n11, b);
      } else {
        trip.emplace_back(k, n00, 1.0 - b);
        trip.emplace_back(k, n11, a);
        trip.emplace_back(k, n01, b - a);
      }
    }
  fem.obs_.resize(n_obs, mesh.n_nodes());
  fem.obs_.setFromTriplets(trip.begin(), trip.end());
  fem.obs_.prune(0.0);

  Triplets pattern;
  for (const auto& tri : fem.triangles_)
    for (Index a : tri)
      for (Index b : tri) {
        const Index da = fem.dof_[static_cast<std::size_t>(a)];
        const Index db = fem.dof_[static_cast<std::size_t>(b)];
        if (da >= 0 && db >= 0) pattern.emplace_back(da, db, 0.0);
      }
  fem.pattern_.resize(fem.n_dofs_, fem.n_dofs_);
  fem.pattern_.setFromTriplets(pattern.begin(), pattern.end());
  fem.pattern_.makeCompressed();
  const auto& sp = fem.pattern_;
  auto slot = [&sp](Index row, Index col) -> Index {
    const auto* first = sp.innerIndexPtr() + sp.outerIndexPtr()[col];
    const auto* last = sp.innerIndexPtr() + sp.outerIndexPtr()[col + 1];
    return static_cast<Index>(std::lower_bound(first, last, row) - sp.innerIndexPtr());
  };
  fem.slots_.reserve(fem.triangles_.size());
  for (const auto& tri : fem.triangles_) {
    std::array<Index, 9> s{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const Index di = fem.dof_[static_cast<std::size_t>(tri[i])];
        const Index dj = fem.dof_[static_cast<std::size_t>(tri[j])];
        s[3 * i + j] = (di >= 0 && dj >= 0) ? slot(di, dj) : -1;
      }
    fem.slots_.push_back(s);
  }
  fem.pool_ = std::make_shared<SolverPool>();
  return fem;
}

Vector Fem2DNonlinear::solve(const Vector& u) const {
  if (u.size() != mesh_.n_nodes()) throw DimensionError("log-permeability has wrong dimension");
  // Both triangle orientations are translates of two reference shapes, so the
  // unit-coefficient element stiffness is computed once per orientation.
  const Matrix xy = mesh_.coordinates();
  const ElementMatrices lower = element_matrices(xy, triangles_[0]);
  const ElementMatrices upper = element_matrices(xy, triangles_[1]);

  Eigen::SparseMatrix<double> k = pattern_;
  double* values = k.valuePtr();
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    const ElementMatrices& em = (t % 2 == 0) ? lower : upper;
    const double kappa = std::exp((u[tri[0]] + u[tri[1]] + u[tri[2]]) / 3.0);
    if (!std::isfinite(kappa)) throw NumericalError("non-finite permeability coefficient");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const Index s = slots_[t][static_cast<std::size_t>(3 * i + j)];
        if (s >= 0) values[s] += kappa * em.stiffness[i][j];
      }
  }

  auto solver = pool_->acquire(pattern_);
  solver->factorize(k);
  const bool factored = solver->info() == Eigen::Success;
  const Vector p_dofs = factored ? Vector(solver->solve(load_)) : Vector();
  pool_->release(std::move(solver));
  if (!factored) throw NumericalError("2-D stiffness factorization failed");
  if (!p_dofs.allFinite()) throw NumericalError("2-D pressure solve failed");

  Vector p = Vector::Zero(mesh_.n_nodes());
  for (std::size_t n = 0; n < dof_.size(); ++n)
    if (dof_[n] >= 0) p[static_cast<Index>(n)] = p_dofs[dof_[n]];
  return p;
}

Vector Fem2DNonlinear::observe(const Vector& u) const { return obs_ * solve(u); }

ForwardMap Fem2DNonlinear::forward_map() const {
  auto self = std::make_shared<const Fem2DNonlinear>(*this);
  ForwardMap f;
  f.input_dim = mesh_.n_nodes();
  f.output_dim = n_obs();
  f.evaluate = [self](const Vector& u) -> Vector { return self->observe(u); };
  return f;
}

Vector nonlinear_forward_2d(const Fem2DNonlinear& fem, const Vector& u) { return fem.observe(u); }

namespace {

struct PencilEigen {
  Vector lambda;  // mu^{-2}, descending
  Matrix modes;   // n_nodes x n_dofs
};

PencilEigen compute_bilaplacian(const Mesh2D& mesh) {
  const Matrix xy = mesh.coordinates();
  const auto tris = triangulate(mesh);
  Index n_dofs = 0;
  const auto dof = number_dofs(mesh, n_dofs);
  Matrix s = Matrix::Zero(n_dofs, n_dofs);
  Matrix m = Matrix::Zero(n_dofs, n_dofs);
  for (const auto& tri : tris) {
    const ElementMatrices em = element_matrices(xy, tri);
    for (int i = 0; i < 3; ++i) {
      const Index di = dof[static_cast<std::size_t>(tri[i])];
      if (di < 0) continue;
      for (int j = 0; j < 3; ++j) {
        const Index dj = dof[static_cast<std::size_t>(tri[j])];
        if (dj < 0) continue;
        s(di, dj) += em.stiffness[i][j];
        m(di, dj) += em.mass[i][j];
      }
    }
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(s, m);
  if (eig.info() != Eigen::Success) throw NumericalError("bilaplacian eigensolve failed");
  PencilEigen out;
  out.lambda.resize(n_dofs);
  out.modes = Matrix::Zero(mesh.n_nodes(), n_dofs);
  for (Index j = 0; j < n_dofs; ++j) {
    const double mu = eig.eigenvalues()[j];  // ascending
    out.lambda[j] = 1.0 / (mu * mu);
    for (std::size_t n = 0; n < dof.size(); ++n)
      if (dof[n] >= 0) out.modes(static_cast<Index>(n), j) = eig.eigenvectors()(dof[n], j);
  }
  return out;
}

}  // namespace

PriorSpec bilaplacian_prior(const Mesh2D& mesh, Index n_modes) {
  mesh.validate();
  static std::mutex cache_mutex;
  static std::map<std::tuple<int, double, double>, std::shared_ptr<const PencilEigen>> cache;
  std::shared_ptr<const PencilEigen> pe;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto key = std::make_tuple(mesh.n_cells, mesh.lo, mesh.hi);
    auto it = cache.find(key);
    if (it == cache.end())
      it = cache.emplace(key, std::make_shared<const PencilEigen>(compute_bilaplacian(mesh))).first;
    pe = it->second;
  }
  const Index m = std::min<Index>(n_modes, pe->lambda.size());
  PriorSpec prior;
  prior.kind = PriorKind::Bilaplacian;
  prior.scale = 1.0;
  prior.lambda = pe->lambda.head(m);
  prior.modes = pe->modes.leftCols(m);
  return prior;
}

// ---------------------------------------------------------------------------
// Builders

Vector draw_noise(Index k, double std, std::uint64_t seed) {
  if (std == 0.0) return Vector::Zero(k);
  RandomStream rs(seed, 0, 0, RandomStream::kData);
  return std * rs.normal_vector(k);
}

Linear1DSetup make_linear_1d(const Linear1DOptions& opts) {
  Linear1DSetup s;
  s.mesh.n_cells = opts.n_cells;
  s.fem = std::make_shared<const Fem1DLinear>(Fem1DLinear::assemble(s.mesh, opts.n_obs));
  s.prior = inverse_shifted_laplacian_prior(s.mesh, opts.beta);
  const Vector truth = prior_draw(s.prior, opts.truth_seed);
  s.clean_data = s.fem->forward_matrix() * truth;
  s.noise = draw_noise(opts.n_obs, opts.noise_std, opts.noise_seed);
  s.problem.forward = s.fem->forward_map();
  s.problem.data = s.clean_data + s.noise;
  s.problem.noise = NoiseModel::identity(opts.n_obs);
  s.problem.truth = truth;
  s.problem.validate();
  return s;
}

Nonlinear2DSetup make_nonlinear_2d(const Nonlinear2DOptions& opts) {
  Nonlinear2DSetup s;
  s.mesh.n_cells = opts.n_cells;
  s.fem = std::make_shared<const Fem2DNonlinear>(
      Fem2DNonlinear::assemble(s.mesh, opts.source, opts.obs_per_side));
  s.prior = bilaplacian_prior(s.mesh, opts.n_modes);
  const Vector truth = prior_draw(s.prior, opts.truth_seed);
  s.problem.forward = s.fem->forward_map();
  s.problem.data = s.fem->observe(truth);
  s.problem.noise = NoiseModel::identity(s.fem->n_obs());
  s.problem.truth = truth;
  s.problem.validate();
  return s;
}

}  // namespace eki

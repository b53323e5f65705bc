#pragma once

// PDE forward maps, Gaussian priors via their KL eigenpairs, and initial
// ensemble constructions.
//
//  * 1-D: -p'' + p = u on (0, pi), p = 0 on the boundary, P1 elements,
//    point observations of p. Linear in u.
//  * 2-D: -div(exp(u) grad p) = f on (-1, 1)^2, p = 0 on the boundary, P1
//    elements on a uniform right-triangle mesh, exp(u) constant per element.
//    Nonlinear in u.

#include "eki/core.hpp"

#include <Eigen/SparseCore>

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace eki {

// ---------------------------------------------------------------------------
// 1-D linear elliptic model

struct Mesh1D {
  int n_cells = 256;
  double length = 3.14159265358979323846;

  double width() const { return length / n_cells; }
  Index n_interior() const { return n_cells - 1; }
  /// Interior node coordinates x_i = i * width, i = 1..n_cells-1.
  Vector nodes() const;
  void validate() const;
};

class Fem1DLinear {
 public:
  /// Assembles the operator and K equispaced point observations at
  /// x_k = k L / (K + 1), k = 1..K.
  static Fem1DLinear assemble(const Mesh1D& mesh, Index n_obs = 15);

  const Mesh1D& mesh() const { return mesh_; }
  /// Stiffness + mass of -d^2/dx^2 + id on interior nodes (SPD).
  const Matrix& operator_matrix() const { return op_; }
  const Matrix& mass() const { return mass_; }
  /// K x d nodal interpolation weights.
  const Matrix& observation() const { return obs_; }
  const Vector& observation_points() const { return obs_points_; }
  /// Cached K x d matrix O (K + M)^{-1} M.
  const Matrix& forward_matrix() const { return forward_; }

  /// Nodal FEM solution p for source u (u given at the interior nodes).
  Vector solve(const Vector& u) const;
  /// Observations of the solution (solve path, not the cached matrix).
  Vector observe(const Vector& u) const;

  ForwardMap forward_map() const;

 private:
  Mesh1D mesh_;
  Matrix op_;
  Matrix mass_;
  Matrix obs_;
  Vector obs_points_;
  Matrix forward_;
  std::shared_ptr<const Eigen::LLT<Matrix>> llt_;
};

/// Solve + observe; equivalent to fem.observe(u).
Vector linear_forward(const Fem1DLinear& fem, const Vector& u);

// ---------------------------------------------------------------------------
// Priors

enum class PriorKind { InverseShiftedLaplacian, Bilaplacian, Diagonal };

/// Gaussian N(0, C0) described by its eigenpairs. Modes are orthonormal under
/// the discrete L2 inner product; as a matrix on nodal vectors
/// C0 = Z diag(lambda) Z^T.
struct PriorSpec {
  PriorKind kind = PriorKind::InverseShiftedLaplacian;
  double scale = 10.0;  // beta for the 1-D prior
  Vector lambda;        // non-increasing
  Matrix modes;         // d x m, column j is z_j

  Index dim() const { return modes.rows(); }
  Index n_modes() const { return modes.cols(); }

  /// C0 m, column by column.
  template <class Derived>
  typename Derived::PlainObject apply(const Eigen::MatrixBase<Derived>& m) const {
    return modes * (lambda.asDiagonal() * (modes.transpose() * m));
  }
  Matrix covariance() const;
  /// Z diag(sqrt(lambda)) zeta for zeta in R^m; maps N(0, I) to N(0, C0).
  Vector colour(const Eigen::Ref<const Vector>& zeta) const;
  /// ||C0^{1/2} v||^2 = v^T C0 v.
  double quadratic_form(const Eigen::Ref<const Vector>& v) const;
};

/// C0 = beta (A - id)^{-1} = beta (-d^2/dx^2)^{-1} with Dirichlet conditions:
/// lambda_j = beta / j^2, z_j = sqrt(2/L) sin(j pi x / L) at the interior nodes.
PriorSpec inverse_shifted_laplacian_prior(const Mesh1D& mesh, double beta = 10.0);

/// Diagonal prior on R^d with given variances (unit-vector modes). Used for
/// small synthetic checks.
PriorSpec diagonal_prior(const Vector& variances);

/// Member j is sqrt(lambda_j) zeta_j z_j with zeta_j ~ N(0, 1).
Ensemble kl_initial_ensemble(const PriorSpec& prior, Index J, std::uint64_t seed);

/// A full draw sum_j sqrt(lambda_j) xi_j z_j over all available modes.
Vector prior_draw(const PriorSpec& prior, std::uint64_t seed);

/// First member u_1 built so that u_1 - u_dagger = sum_k alpha_k e_k, which
/// places A r_1 inside span{A e_k} for any linear A. `others` holds
/// u_2..u_J as columns; alphas has J entries.
Vector adaptive_first_member(const Vector& truth, const Eigen::Ref<const Matrix>& others,
                             const Vector& alphas);

// ---------------------------------------------------------------------------
// 2-D nonlinear elliptic model

struct Mesh2D {
  int n_cells = 32;  // per side
  double lo = -1.0;
  double hi = 1.0;

  double width() const { return (hi - lo) / n_cells; }
  Index nodes_per_side() const { return n_cells + 1; }
  Index n_nodes() const { return nodes_per_side() * nodes_per_side(); }
  Index node(Index ix, Index iy) const { return iy * nodes_per_side() + ix; }
  bool on_boundary(Index ix, Index iy) const;
  /// n_nodes x 2 coordinates.
  Matrix coordinates() const;
  void validate() const;
};

class Fem2DNonlinear {
 public:
  /// Observations on the obs_per_side x obs_per_side interior grid
  /// lo + k (hi - lo) / (obs_per_side + 1).
  static Fem2DNonlinear assemble(const Mesh2D& mesh, double source = 100.0, Index obs_per_side = 7);

  const Mesh2D& mesh() const { return mesh_; }
  double source() const { return source_; }
  Index n_obs() const { return obs_.rows(); }
  const Eigen::SparseMatrix<double>& observation() const { return obs_; }
  const Matrix& observation_points() const { return obs_points_; }

  /// Nodal pressure on all nodes (boundary entries zero) for log-permeability
  /// u given at all nodes.
  Vector solve(const Vector& u) const;
  Vector observe(const Vector& u) const;
  ForwardMap forward_map() const;

  /// Triangles as node index triples, two per cell.
  const std::vector<std::array<Index, 3>>& triangles() const { return triangles_; }
  /// Interior node -> unknown index (-1 on the boundary).
  const std::vector<Index>& dof_of_node() const { return dof_; }
  Index n_dofs() const { return n_dofs_; }

 private:
  Mesh2D mesh_;
  double source_ = 100.0;
  std::vector<std::array<Index, 3>> triangles_;
  std::vector<Index> dof_;
  Index n_dofs_ = 0;
  Vector load_;  // f-weighted load on the unknowns
  Eigen::SparseMatrix<double> obs_;
  Matrix obs_points_;
  // Stiffness sparsity pattern; slots_[t][3 i + j] is the value index of the
  // (i, j) entry of triangle t, or -1 when either node is on the boundary.
  Eigen::SparseMatrix<double> pattern_;
  std::vector<std::array<Index, 9>> slots_;
  std::shared_ptr<struct SolverPool> pool_;
};

Vector nonlinear_forward_2d(const Fem2DNonlinear& fem, const Vector& u);

/// C0 = (-Laplacian)^{-2} with Dirichlet conditions, from the generalized
/// eigenproblem S z = mu M z of the P1 stiffness/mass pencil: lambda = mu^{-2}.
/// Modes are M-orthonormal and zero on the boundary. Results are cached per
/// mesh resolution.
PriorSpec bilaplacian_prior(const Mesh2D& mesh, Index n_modes = 200);

// ---------------------------------------------------------------------------
// Problem builders for the two experiment families.

struct Linear1DOptions {
  int n_cells = 256;
  Index n_obs = 15;
  double beta = 10.0;
  std::uint64_t truth_seed = 1;
  /// Standard deviation gamma of the data noise; 0 gives noise-free data.
  double noise_std = 0.0;
  std::uint64_t noise_seed = 2;
};

struct Linear1DSetup {
  Mesh1D mesh;
  std::shared_ptr<const Fem1DLinear> fem;
  PriorSpec prior;
  InverseProblem problem;
  Vector clean_data;  // A u_dagger
  Vector noise;       // eta_dagger
};

Linear1DSetup make_linear_1d(const Linear1DOptions& opts = {});

struct Nonlinear2DOptions {
  int n_cells = 32;
  double source = 100.0;
  Index obs_per_side = 7;
  Index n_modes = 200;
  std::uint64_t truth_seed = 1;
};

struct Nonlinear2DSetup {
  Mesh2D mesh;
  std::shared_ptr<const Fem2DNonlinear> fem;
  PriorSpec prior;
  InverseProblem problem;
};

Nonlinear2DSetup make_nonlinear_2d(const Nonlinear2DOptions& opts = {});

/// Gaussian observation noise N(0, std^2 I) of length k.
Vector draw_noise(Index k, double std, std::uint64_t seed);

}  // namespace eki

#include "eki/discrete.hpp"
#include "eki/forward_models.hpp"
#include "eki/persist.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>

using namespace eki;
using eki::testing::random_matrix;
using eki::testing::random_vector;

namespace {

constexpr double kPi = 3.14159265358979323846;

double sin_error(int n_cells) {
  Mesh1D mesh;
  mesh.n_cells = n_cells;
  const auto fem = Fem1DLinear::assemble(mesh);
  const Vector x = mesh.nodes();
  const Vector u = x.array().sin();
  return (fem.solve(u) - 0.5 * u).cwiseAbs().maxCoeff();
}

// Center value of -Laplace(p) = f on (-1,1)^2, p = 0 on the boundary, from
// the double sine series p = sum_{m,n odd} 16 f / (pi^2 m n mu_mn)
// sin(m pi/2) sin(n pi/2) with mu_mn = (pi/2)^2 (m^2 + n^2).
double series_center(double f) {
  double sum = 0.0;
  for (int m = 1; m < 4001; m += 2)
    for (int n = 1; n < 4001; n += 2) {
      const double sign = (((m - 1) / 2 + (n - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
      const double mu = 0.25 * kPi * kPi * (m * m + n * n);
      sum += sign * 16.0 * f / (kPi * kPi * m * n * mu);
    }
  return sum;
}

// Dense P1 assembly written from the element formulas, independent of the
// library's sparse path: K_T = area * kappa_T * G G^T with G the barycentric
// gradients of triangle T.
Vector dense_reference_solve(const Mesh2D& mesh, const Vector& u, double f) {
  const Index n = mesh.nodes_per_side();
  const Matrix xy = mesh.coordinates();
  std::vector<Index> dof(static_cast<std::size_t>(mesh.n_nodes()), -1);
  Index nd = 0;
  for (Index iy = 0; iy < n; ++iy)
    for (Index ix = 0; ix < n; ++ix)
      if (!mesh.on_boundary(ix, iy)) dof[static_cast<std::size_t>(mesh.node(ix, iy))] = nd++;

  Matrix k = Matrix::Zero(nd, nd);
  Vector b = Vector::Zero(nd);
  auto element = [&](std::array<Index, 3> t) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i) m.row(i) << 1.0, xy(t[i], 0), xy(t[i], 1);
    const double area = 0.5 * std::abs(m.determinant());
    const Eigen::Matrix3d inv = m.inverse();  // rows 1, 2 hold the gradients
    const Eigen::Matrix<double, 3, 2> g = inv.bottomRows(2).transpose();
    const double kappa = std::exp((u[t[0]] + u[t[1]] + u[t[2]]) / 3.0);
    for (int i = 0; i < 3; ++i) {
      const Index di = dof[static_cast<std::size_t>(t[i])];
      if (di < 0) continue;
      b[di] += f * area / 3.0;
      for (int j = 0; j < 3; ++j) {
        const Index dj = dof[static_cast<std::size_t>(t[j])];
        if (dj >= 0) k(di, dj) += area * kappa * g.row(i).dot(g.row(j));
      }
    }
  };
  for (Index iy = 0; iy + 1 < n; ++iy)
    for (Index ix = 0; ix + 1 < n; ++ix) {
      const Index n00 = mesh.node(ix, iy), n10 = mesh.node(ix + 1, iy);
      const Index n01 = mesh.node(ix, iy + 1), n11 = mesh.node(ix + 1, iy + 1);
      element({n00, n10, n11});
      element({n00, n11, n01});
    }
  const Vector p_dof = k.llt().solve(b);
  Vector p = Vector::Zero(mesh.n_nodes());
  for (Index i = 0; i < mesh.n_nodes(); ++i)
    if (dof[static_cast<std::size_t>(i)] >= 0) p[i] = p_dof[dof[static_cast<std::size_t>(i)]];
  return p;
}

Index centre_node(const Mesh2D& mesh) { return mesh.node(mesh.n_cells / 2, mesh.n_cells / 2); }

}  // namespace

TEST_CASE("1-D FEM: operator, observation and manufactured solution") {
  Mesh1D mesh;
  const auto fem = Fem1DLinear::assemble(mesh);
  CHECK(fem.operator_matrix().rows() == 255);
  CHECK((fem.operator_matrix() - fem.operator_matrix().transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(fem.operator_matrix());
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  CHECK(fem.observation().rows() == 15);
  for (Index k = 0; k < 15; ++k) {
    CHECK(fem.observation().row(k).sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(fem.observation_points()[k] == doctest::Approx((k + 1) * kPi / 16.0).epsilon(1e-14));
  }

  CHECK(fem.solve(Vector::Zero(255)).norm() == 0.0);
  CHECK(sin_error(256) <= 1e-4);
  const double e128 = sin_error(128), e256 = sin_error(256), e512 = sin_error(512);
  CHECK(std::log2(e128 / e256) == doctest::Approx(2.0).epsilon(0.05));
  CHECK(std::log2(e256 / e512) == doctest::Approx(2.0).epsilon(0.05));

  const Vector x = mesh.nodes();
  const Vector u = x.array().sin();
  const Vector exact = 0.5 * fem.observation_points().array().sin();
  CHECK((linear_forward(fem, u) - exact).cwiseAbs().maxCoeff() <= 1e-4);

  CHECK_THROWS_AS(Fem1DLinear::assemble(Mesh1D{6}), Error);
  CHECK_THROWS_AS(fem.solve(Vector::Zero(10)), DimensionError);
}

TEST_CASE("1-D forward map: linearity and cached matrix consistency") {
  const auto fem = Fem1DLinear::assemble(Mesh1D{});
  const Vector u = random_vector(255, 1), v = random_vector(255, 2);
  const Vector fu = linear_forward(fem, u), fv = linear_forward(fem, v);
  CHECK((linear_forward(fem, u + v) - fu - fv).norm() <= 1e-12 * (fu.norm() + fv.norm()));
  CHECK((fem.forward_matrix() * u - fu).norm() <= 1e-12 * fu.norm());
  // O (K + M)^{-1} M formed explicitly.
  const Matrix explicit_a = fem.observation() * fem.operator_matrix().inverse() * fem.mass();
  CHECK((explicit_a * u - fu).norm() <= 1e-12 * fu.norm());
  const ForwardMap f = fem.forward_map();
  CHECK((f.evaluate(u) - fu).norm() <= 1e-12 * fu.norm());
}

TEST_CASE("1-D prior spectrum and KL modes") {
  const Mesh1D mesh;
  const PriorSpec prior = inverse_shifted_laplacian_prior(mesh, 10.0);
  CHECK(prior.lambda[0] == doctest::Approx(10.0).epsilon(1e-14));
  for (Index j = 1; j < prior.n_modes(); ++j) {
    CHECK(prior.lambda[j] == doctest::Approx(10.0 / double((j + 1) * (j + 1))).epsilon(1e-14));
  }
  const Matrix gram = mesh.width() * prior.modes.transpose() * prior.modes;
  CHECK((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-10);

  // Numerical eigensolve of beta (-d^2/dx^2)^{-1}: S z = mu M z, lambda = beta / mu.
  const auto fem = Fem1DLinear::assemble(mesh);
  const Matrix stiff = fem.operator_matrix() - fem.mass();
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(stiff, fem.mass());
  for (Index j = 0; j < 5; ++j)
    CHECK(10.0 / ges.eigenvalues()[j] == doctest::Approx(prior.lambda[j]).epsilon(1e-3));

  CHECK_THROWS_AS(inverse_shifted_laplacian_prior(mesh, -1.0), Error);
  const Vector zeta = random_vector(prior.n_modes(), 3);
  const Vector c = prior.colour(zeta);
  CHECK((c - prior.modes * (prior.lambda.cwiseSqrt().asDiagonal() * zeta)).norm() <= 1e-12 * c.norm());
  const Vector w = random_vector(255, 4);
  CHECK(prior.quadratic_form(w) == doctest::Approx(w.dot(prior.covariance() * w)).epsilon(1e-12));
  CHECK((prior.apply(w) - prior.covariance() * w).norm() <= 1e-12 * prior.apply(w).norm());
}

TEST_CASE("KL initial ensemble") {
  const Mesh1D mesh;
  const PriorSpec prior = inverse_shifted_laplacian_prior(mesh);
  const Ensemble a = kl_initial_ensemble(prior, 5, 1), b = kl_initial_ensemble(prior, 5, 1);
  CHECK(a.matrix() == b.matrix());
  CHECK(kl_initial_ensemble(prior, 5, 2).matrix() != a.matrix());

  const Matrix gram = mesh.width() * a.matrix().transpose() * a.matrix();
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j)
      if (i != j) CHECK(std::abs(gram(i, j)) <= 1e-10);
  // Member j is a multiple of mode j.
  for (Index j = 0; j < 5; ++j) {
    const double coeff = mesh.width() * prior.modes.col(j).dot(a.member(j));
    CHECK((a.member(j) - coeff * prior.modes.col(j)).norm() <= 1e-12 * a.member(j).norm());
  }

  const Ensemble big = kl_initial_ensemble(prior, 50, 1);
  CHECK(subspace_distance(a, big.matrix()) <= 1e-12);
  CHECK(subspace_distance(big, a.matrix()) > 0.1);
  CHECK_THROWS_AS(kl_initial_ensemble(prior, 256, 1), Error);
  CHECK_THROWS_AS(kl_initial_ensemble(prior, 0, 1), Error);
}

TEST_CASE("adaptive first member") {
  const Vector truth = random_vector(6, 5);
  const Matrix others = random_matrix(6, 3, 6);
  Vector alphas(4);
  alphas << 0.3, -0.5, 1.2, 0.7;
  Matrix u(6, 4);
  u.col(0) = adaptive_first_member(truth, others, alphas);
  u.rightCols(3) = others;
  // u_1 - u_dagger = sum_k alpha_k (u_k - mean).
  const Vector mean = u.rowwise().mean();
  const Vector combo = (u.colwise() - mean) * alphas;
  CHECK((u.col(0) - truth - combo).norm() <= 1e-12 * truth.norm());

  // J = 2, alpha = (0, 1): u_1 = (u_dagger + u_2 / 2) / (3 / 2).
  Vector a2(2);
  a2 << 0.0, 1.0;
  const Vector u2 = random_vector(6, 7);
  const Vector u1 = adaptive_first_member(truth, u2, a2);
  CHECK((u1 - (truth + 0.5 * u2) / 1.5).norm() <= 1e-14 * truth.norm());

  // All alphas zero: the first member is the truth.
  CHECK((adaptive_first_member(truth, others, Vector::Zero(4)) - truth).norm() == 0.0);

  // 1 - alpha_1 + sum(alpha)/J = 1 - 2 + 2/2 = 0.
  Vector bad(2);
  bad << 2.0, 0.0;
  CHECK_THROWS_AS(adaptive_first_member(truth, u2, bad), Error);
  CHECK_THROWS_AS(adaptive_first_member(truth, others, Vector::Zero(3)), DimensionError);
}

TEST_CASE("2-D FEM: Poisson reference values") {
  const Mesh2D coarse;  // 2^-4 mesh width
  CHECK(coarse.width() == doctest::Approx(1.0 / 16.0));
  const auto fem = Fem2DNonlinear::assemble(coarse);
  CHECK(fem.n_obs() == 49);
  const Vector p = fem.solve(Vector::Zero(coarse.n_nodes()));

  // Discrete maximum principle: interior values positive, boundary zero.
  for (Index iy = 0; iy < coarse.nodes_per_side(); ++iy)
    for (Index ix = 0; ix < coarse.nodes_per_side(); ++ix) {
      const double v = p[coarse.node(ix, iy)];
      if (coarse.on_boundary(ix, iy))
        CHECK(v == 0.0);
      else
        CHECK(v > 0.0);
    }

  Mesh2D fine;
  fine.n_cells = 256;  // 2^-7 mesh width
  const auto fem_fine = Fem2DNonlinear::assemble(fine);
  const double centre_fine = fem_fine.solve(Vector::Zero(fine.n_nodes()))[centre_node(fine)];
  const double centre = p[centre_node(coarse)];
  CHECK(std::abs(centre - centre_fine) <= 0.01 * centre_fine);
  CHECK(centre_fine == doctest::Approx(series_center(100.0)).epsilon(1e-3));
  CHECK(series_center(100.0) == doctest::Approx(29.4685).epsilon(1e-4));

  // Observations are the nodal values at the 7 x 7 grid (every 4th node).
  const Vector obs = fem.observe(Vector::Zero(coarse.n_nodes()));
  for (Index oy = 0; oy < 7; ++oy)
    for (Index ox = 0; ox < 7; ++ox) {
      CHECK(fem.observation_points()(oy * 7 + ox, 0) == doctest::Approx(-1.0 + 0.25 * (ox + 1)));
      CHECK(fem.observation_points()(oy * 7 + ox, 1) == doctest::Approx(-1.0 + 0.25 * (oy + 1)));
      CHECK(obs[oy * 7 + ox] == doctest::Approx(p[coarse.node(4 * (ox + 1), 4 * (oy + 1))]).epsilon(1e-12));
    }
}

TEST_CASE("2-D FEM: scaling identity and independent assembly") {
  const Mesh2D mesh;
  const auto fem = Fem2DNonlinear::assemble(mesh);
  const PriorSpec prior = bilaplacian_prior(mesh, 200);
  const Vector u = prior_draw(prior, 11);
  const Vector p = fem.solve(u);

  const double c = 0.7;
  const Vector shifted = fem.solve((u.array() + c).matrix());
  CHECK((shifted - std::exp(-c) * p).norm() <= 1e-12 * p.norm());

  const Vector ref = dense_reference_solve(mesh, u, 100.0);
  CHECK((p - ref).norm() <= 1e-10 * ref.norm());
  const auto obs = fem.observe(u);
  CHECK((obs - fem.observation() * ref).norm() <= 1e-10 * obs.norm());
  CHECK((nonlinear_forward_2d(fem, u) - obs).norm() == 0.0);

  Vector bad = u;
  bad[100] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fem.solve(bad), NumericalError);
  CHECK_THROWS_AS(fem.solve(Vector::Zero(5)), DimensionError);

  // The forward map may be called concurrently; repeat calls agree exactly.
  const ForwardMap f = fem.forward_map();
  CHECK((f.evaluate(u) - obs).norm() == 0.0);
}

TEST_CASE("bilaplacian prior") {
  const Mesh2D mesh;
  const PriorSpec prior = bilaplacian_prior(mesh, 200);
  CHECK(prior.n_modes() == 200);
  CHECK(prior.dim() == mesh.n_nodes());
  // Continuum value (pi^2/2)^{-2}; P1 eigenvalues overestimate mu slightly.
  const double continuum = std::pow(kPi * kPi / 2.0, -2.0);
  CHECK(prior.lambda[0] == doctest::Approx(continuum).epsilon(1e-2));
  CHECK(prior.lambda[0] < continuum);
  for (Index j = 1; j < 200; ++j) CHECK(prior.lambda[j] <= prior.lambda[j - 1] * (1 + 1e-12));
  CHECK(prior.lambda.minCoeff() > 0.0);

  for (Index iy = 0; iy < mesh.nodes_per_side(); ++iy)
    for (Index ix = 0; ix < mesh.nodes_per_side(); ++ix)
      if (mesh.on_boundary(ix, iy)) CHECK(prior.modes.row(mesh.node(ix, iy)).norm() == 0.0);

  // Cached: a second request returns identical data.
  const PriorSpec again = bilaplacian_prior(mesh, 200);
  CHECK(again.modes == prior.modes);
}

TEST_CASE("problem builders") {
  const auto lin = make_linear_1d();
  CHECK(lin.problem.data.size() == 15);
  CHECK(lin.problem.truth->size() == 255);
  CHECK(lin.noise.norm() == 0.0);
  CHECK((lin.problem.data - lin.clean_data).norm() == 0.0);
  CHECK((*lin.problem.truth - prior_draw(lin.prior, 1)).norm() == 0.0);

  const auto noisy = make_linear_1d({.noise_std = 0.01, .noise_seed = 3});
  CHECK((noisy.problem.data - noisy.clean_data - noisy.noise).norm() <= 1e-15);
  CHECK(noisy.noise.norm() / std::sqrt(15.0) == doctest::Approx(0.01).epsilon(0.5));
  CHECK(draw_noise(15, 0.01, 3) == noisy.noise);

  const auto non = make_nonlinear_2d();
  CHECK(non.problem.data.size() == 49);
  CHECK(non.problem.truth->size() == 1089);
  CHECK(!non.problem.forward.is_linear());
}

TEST_CASE("persistence round trips exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "eki_persist_test";
  std::filesystem::create_directories(dir);
  Matrix m = random_matrix(7, 3, 8);
  m(0, 0) = 1.0 / 3.0;
  m(1, 0) = -0.0;
  m(2, 0) = 1e-300;
  save_matrix_pair(dir, "m", m);
  CHECK(load_matrix(dir, "m") == m);
  CHECK(read_matrix_csv(dir / "m.csv") == m);

  const auto lin = make_linear_1d({.noise_std = 0.01});
  save_matrix_pair(dir, "truth", *lin.problem.truth);
  save_matrix_pair(dir, "modes", lin.prior.modes);
  CHECK(load_matrix(dir, "truth") == Matrix(*lin.problem.truth));
  CHECK(load_matrix(dir, "modes") == lin.prior.modes);

  std::filesystem::remove(dir / "m.bin");
  CHECK_THROWS_AS(load_matrix(dir, "m"), Error);
  std::filesystem::remove_all(dir);
}

#include "eki/kernels.hpp"
#include "eki/forward_models.hpp"

#include "test_support.hpp"

#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace eki;
using eki::testing::random_linear_problem;
using eki::testing::random_matrix;

namespace {

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
  const Matrix gamma = eki::testing::random_spd(5, 3);
  const auto p = random_linear_problem(5, 9, 1, &gamma);
  for (Index J : {1, 2, 7, 33}) {
    CAPTURE(J);
    const Ensemble ens(random_matrix(9, J, 10 + static_cast<std::uint64_t>(J)));
    const Matrix g = kernels::forward_images(ens, p.forward);
    CHECK((g - kernels::serial::forward_images(ens, p.forward)).norm() == 0.0);

    const Matrix v = kernels::enkf_drift(ens, g, p);
    const Matrix vs = kernels::serial::enkf_drift(ens, g, p);
    CHECK((v - vs).norm() <= 1e-12 * std::max(vs.norm(), 1e-300));

    const Matrix grads = kernels::misfit_gradients(ens, p);
    const Matrix a = p.forward.matrix();
    for (Index j = 0; j < J; ++j) {
      const Vector ref = a.transpose() * gamma.llt().solve(a * ens.member(j) - p.data);
      CHECK((grads.col(j) - ref).norm() <= 1e-12 * std::max(ref.norm(), 1e-300));
    }

    const Matrix pc = kernels::precondition_by_ensemble(ens, grads);
    const Matrix pcs = kernels::serial::precondition_by_ensemble(ens, grads);
    CHECK((pc - pcs).norm() <= 1e-12 * std::max(pcs.norm(), 1e-300));

    const Vector phi = kernels::misfits(g, p);
    for (Index j = 0; j < J; ++j) CHECK(phi[j] == doctest::Approx(misfit_phi(ens.member(j), p)).epsilon(1e-12));
  }
}

TEST_CASE("kernel results do not depend on the thread count") {
  const auto lin = make_linear_1d({.noise_std = 0.01});
  const Ensemble ens = kl_initial_ensemble(lin.prior, 50, 2);
  const InverseProblem& p = lin.problem;

  set_threads(1);
  const Matrix g1 = kernels::forward_images(ens, p.forward);
  const Matrix v1 = kernels::enkf_drift(ens, g1, p);
  const Matrix m1 = kernels::misfit_gradients(ens, p);
  const Matrix c1 = kernels::precondition_by_ensemble(ens, m1);
  for (int threads : {2, 3, 4}) {
    CAPTURE(threads);
    set_threads(threads);
    const Matrix g = kernels::forward_images(ens, p.forward);
    CHECK(g == g1);
    CHECK(kernels::enkf_drift(ens, g, p) == v1);
    CHECK(kernels::misfit_gradients(ens, p) == m1);
    CHECK(kernels::precondition_by_ensemble(ens, m1) == c1);
  }
  set_threads(kernels::max_threads());
  CHECK(kernels::max_threads() >= 1);
}

TEST_CASE("2-D forward solves run concurrently with identical results") {
  Nonlinear2DOptions o;
  o.n_cells = 8;
  o.n_modes = 20;
  const auto non = make_nonlinear_2d(o);
  const Ensemble ens = kl_initial_ensemble(non.prior, 6, 3);
  set_threads(1);
  const Matrix g1 = kernels::forward_images(ens, non.problem.forward);
  set_threads(4);
  const Matrix g4 = kernels::forward_images(ens, non.problem.forward);
  CHECK(g4 == g1);
  CHECK(g1 == kernels::serial::forward_images(ens, non.problem.forward));
}

TEST_CASE("kernel errors propagate to the caller") {
  const auto p = random_linear_problem(3, 4, 5);
  const Ensemble ens(random_matrix(4, 3, 6));
  CHECK_THROWS_AS(kernels::enkf_drift(ens, Matrix::Zero(3, 2), p), DimensionError);
  CHECK_THROWS_AS(kernels::precondition_by_ensemble(ens, Matrix::Zero(4, 2)), DimensionError);

  ForwardMap bad = p.forward;
  bad.evaluate = [](const Vector& u) { return Vector::Constant(u[0] > 0 ? 2 : 3, 0.0); };
  CHECK_THROWS_AS(kernels::forward_images(ens, bad), DimensionError);
}

#include "eki/kernels.hpp"

#include "parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace eki::kernels {

using detail::parallel_members;

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Matrix forward_images(const Ensemble& ens, const ForwardMap& forward) {
  Matrix g(forward.output_dim, ens.size());
  parallel_members(ens.size(), [&](Index j) {
    Vector u = ens.member(j);
    Vector gj = forward.evaluate(u);
    if (gj.size() != forward.output_dim) throw DimensionError("forward output has wrong dimension");
    g.col(j) = gj;
  });
  return g;
}

Matrix enkf_drift(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                  const InverseProblem& prob) {
  const Index J = ens.size();
  if (images.cols() != J) throw DimensionError("need one image per member");
  const Matrix du = deviations(ens.matrix());
  const Matrix wdg = prob.noise.gamma.whiten(deviations(images));
  Matrix velocity(ens.dim(), J);
  parallel_members(J, [&](Index j) {
    const Vector wres = prob.noise.gamma.whiten(prob.data - images.col(j));
    const Vector coeff = wdg.transpose() * wres;
    velocity.col(j) = du * coeff / static_cast<double>(J);
  });
  return velocity;
}

Matrix precondition_by_ensemble(const Ensemble& ens, const Eigen::Ref<const Matrix>& gradients) {
  const Index J = ens.size();
  if (gradients.cols() != J || gradients.rows() != ens.dim())
    throw DimensionError("need one gradient per member");
  const Matrix du = deviations(ens.matrix());
  Matrix velocity(ens.dim(), J);
  parallel_members(J, [&](Index j) {
    const Vector coeff = du.transpose() * gradients.col(j);
    velocity.col(j) = -(du * coeff) / static_cast<double>(J);
  });
  return velocity;
}

Matrix misfit_gradients(const Ensemble& ens, const InverseProblem& prob) {
  const Matrix& a = prob.forward.matrix();
  Matrix grads(ens.dim(), ens.size());
  parallel_members(ens.size(), [&](Index j) {
    const Vector res = a * ens.member(j) - prob.data;
    grads.col(j) = a.transpose() * prob.noise.gamma.solve(res);
  });
  return grads;
}

Vector misfits(const Eigen::Ref<const Matrix>& images, const InverseProblem& prob) {
  Vector phi(images.cols());
  for (Index j = 0; j < images.cols(); ++j)
    phi[j] = misfit_phi_from_image(images.col(j), prob);
  return phi;
}

namespace serial {

Matrix forward_images(const Ensemble& ens, const ForwardMap& forward) {
  return eki::forward_images(ens, forward);
}

Matrix enkf_drift(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                  const InverseProblem& prob) {
  const Index J = ens.size();
  const Vector ubar = ensemble_mean(ens);
  const Vector gbar = images.rowwise().mean();
  Matrix velocity = Matrix::Zero(ens.dim(), J);
  for (Index j = 0; j < J; ++j) {
    const Vector res = prob.data - images.col(j);
    for (Index k = 0; k < J; ++k) {
      const double w = prob.noise.gamma.inner(images.col(k) - gbar, res);
      velocity.col(j) += w * (ens.member(k) - ubar);
    }
    velocity.col(j) /= static_cast<double>(J);
  }
  return velocity;
}

Matrix precondition_by_ensemble(const Ensemble& ens, const Eigen::Ref<const Matrix>& gradients) {
  return -empirical_cov(ens) * gradients;
}

}  // namespace serial

}  // namespace eki::kernels

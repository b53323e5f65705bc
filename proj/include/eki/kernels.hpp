#pragma once

// Member-parallel kernels. Every loop over ensemble members runs under
// OpenMP; each member's column is computed with the same arithmetic in the
// same order regardless of thread count, so results are bit-stable.
//
// The `serial` namespace keeps straightforward reference implementations
// written directly from the defining sums. Tests compare the two and the
// benchmark target times them against each other.

#include "eki/core.hpp"

namespace eki::kernels {

/// Forward images of all members (K x J). The forward map must be safe to
/// call concurrently.
Matrix forward_images(const Ensemble& ens, const ForwardMap& forward);

/// EnKF drift from cached images:
///   v_j = (1/J) sum_k <G_k - mean(G), y - G_j>_Gamma (u_k - mean(u)).
Matrix enkf_drift(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                  const InverseProblem& prob);

/// v_j = -C(u) g_j for gradient columns g (d x J), without forming C(u).
Matrix precondition_by_ensemble(const Ensemble& ens, const Eigen::Ref<const Matrix>& gradients);

/// Columns A^* Gamma^{-1} (A u_j - y) for a linear problem.
Matrix misfit_gradients(const Ensemble& ens, const InverseProblem& prob);

/// Phi for every member from cached images.
Vector misfits(const Eigen::Ref<const Matrix>& images, const InverseProblem& prob);

namespace serial {

Matrix forward_images(const Ensemble& ens, const ForwardMap& forward);
Matrix enkf_drift(const Ensemble& ens, const Eigen::Ref<const Matrix>& images,
                  const InverseProblem& prob);
Matrix precondition_by_ensemble(const Ensemble& ens, const Eigen::Ref<const Matrix>& gradients);

}  // namespace serial

/// Number of OpenMP threads kernels will use (1 without OpenMP).
int max_threads();

}  // namespace eki::kernels

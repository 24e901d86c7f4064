#pragma once

#include <Eigen/Dense>

namespace hvae::matexp {

/// Parameters of the scaling-and-squaring Taylor scheme.
///
/// The argument is scaled by 2^-s so that its 1-norm drops below `theta`,
/// the degree-`degree` Taylor polynomial is evaluated by Horner's rule and
/// the result is squared s times.
struct ExpConfig {
  int degree = 18;
  double theta = 1.0;
  int max_squarings = 32;

  void validate() const;
};

/// Number of squarings s = max(0, ceil(log2(|A|_1 / theta))).
int squarings_for(const Eigen::MatrixXd& a, const ExpConfig& cfg = {});

Eigen::MatrixXd expm(const Eigen::MatrixXd& a, const ExpConfig& cfg = {});

/// Directional derivative L(A, E) = d/de expm(A + eE) at e = 0.
///
/// Obtained by forward-mode differentiation of the same Horner and squaring
/// recurrence that `expm` runs, so it is the exact derivative of the
/// computed exponential rather than of the true one.
Eigen::MatrixXd expm_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e,
                             const ExpConfig& cfg = {});

struct ExpWithFrechet {
  Eigen::MatrixXd value;
  Eigen::MatrixXd derivative;
};

/// expm(A) and L(A, E) in one pass.
ExpWithFrechet expm_and_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e,
                                const ExpConfig& cfg = {});

}  // namespace hvae::matexp

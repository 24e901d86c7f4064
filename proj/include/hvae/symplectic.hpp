#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "hvae/matexp.hpp"

namespace hvae {
class Rng;
}

namespace hvae::symplectic {

enum class Flavor { FullSymplectic, SkewOrthogonal };

std::string to_string(Flavor flavor);
Flavor flavor_from_string(const std::string& name);

/// Shape of one action's generator: half-dimension d and structure flavor.
class HamiltonianSpec {
 public:
  HamiltonianSpec(int d, Flavor flavor);

  int d() const noexcept { return d_; }
  Flavor flavor() const noexcept { return flavor_; }
  /// 2d^2 + d for FullSymplectic, (d^2 - d) / 2 for SkewOrthogonal.
  int parameter_count() const noexcept;

  bool operator==(const HamiltonianSpec&) const = default;

 private:
  int d_;
  Flavor flavor_;
};

/// Unconstrained coordinates of a generator in its Lie algebra.
class HamiltonianParams {
 public:
  HamiltonianParams(HamiltonianSpec spec, std::vector<double> raw);

  /// raw ~ N(0, stddev^2), drawn in index order.
  static HamiltonianParams random(HamiltonianSpec spec, Rng& rng, double stddev = 0.05);
  static HamiltonianParams zeros(HamiltonianSpec spec);

  const HamiltonianSpec& spec() const noexcept { return spec_; }
  std::span<const double> raw() const noexcept { return raw_; }

 private:
  HamiltonianSpec spec_;
  std::vector<double> raw_;
};

/// J for the phase layout [q; p] of one block: [[0, I], [-I, 0]].
Eigen::MatrixXd symplectic_form(int d);

/// Block-diagonal J for consecutive blocks laid out (q1, p1, q2, p2, ...).
Eigen::MatrixXd symplectic_form(std::span<const int> half_dims);

/// A generator H with J H symmetric, together with its block layout.
class HamiltonianMatrix {
 public:
  /// Checks the algebra and trace conditions at `tol`; throws ContractError.
  HamiltonianMatrix(Eigen::MatrixXd values, std::vector<int> half_dims, double tol = 1e-10);

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  /// Total half-dimension (sum over blocks).
  int d() const noexcept { return d_; }
  std::span<const int> half_dims() const noexcept { return half_dims_; }
  int dim() const noexcept { return 2 * d_; }
  Eigen::MatrixXd form() const { return symplectic_form(half_dims_); }

  /// ||(J H)^T - J H||_F.
  double algebra_residual() const;
  double trace() const { return values_.trace(); }

 private:
  Eigen::MatrixXd values_;
  std::vector<int> half_dims_;
  int d_;
};

struct PhaseState {
  Eigen::VectorXd q;
  Eigen::VectorXd p;

  static PhaseState zeros(int d);
  /// Splits s = [q; p].
  static PhaseState from_stacked(const Eigen::VectorXd& s);
  Eigen::VectorXd stacked() const;
  int d() const noexcept { return static_cast<int>(q.size()); }
  bool finite() const { return q.allFinite() && p.allFinite(); }
};

/// Per-action phase points where every inactive block is exactly zero.
class MotionState {
 public:
  /// Throws ContractError if an inactive block holds any non-zero bit pattern.
  MotionState(std::vector<PhaseState> per_action, int active);

  const std::vector<PhaseState>& per_action() const noexcept { return per_action_; }
  int active() const noexcept { return active_; }
  const PhaseState& active_state() const { return per_action_[active_]; }

  /// True when every inactive coordinate is +0.0 bit for bit.
  static bool inactive_blocks_zero(const std::vector<PhaseState>& per_action, int active);

 private:
  std::vector<PhaseState> per_action_;
  int active_;
};

/// Unpacks n(n+1)/2 values (row-major upper triangle, diagonal included).
Eigen::MatrixXd unpack_symmetric(std::span<const double> packed, int n);
/// Unpacks n(n-1)/2 values into A = U - U^T (row-major strict upper triangle).
Eigen::MatrixXd unpack_skew(std::span<const double> packed, int n);

/// FullSymplectic: H = J M with M the unpacked symmetric matrix.
/// SkewOrthogonal: H = blockdiag(A, A) with A the unpacked skew matrix.
HamiltonianMatrix assemble_hamiltonian(const HamiltonianParams& params);

/// Gradient of a scalar with respect to raw parameters given its gradient
/// with respect to the assembled matrix H (adjoint of assemble_hamiltonian).
std::vector<double> assemble_pullback(const HamiltonianSpec& spec, const Eigen::MatrixXd& grad_h);

/// Symmetric metric M for FullSymplectic params (H = J M).
Eigen::MatrixXd metric(const HamiltonianParams& params);

/// E = 1/2 s^T M s. Throws ContractError when M is not symmetric within 1e-10.
double energy(const Eigen::MatrixXd& m, const PhaseState& s);
double energy(const Eigen::MatrixXd& m, const Eigen::VectorXd& s);

HamiltonianMatrix block_diag(std::span<const HamiltonianMatrix> blocks);

/// exp(dt H) s.
PhaseState step(const PhaseState& s, const HamiltonianMatrix& h, double dt,
                const matexp::ExpConfig& cfg = {});

/// One-step propagators exp(dt H) and exp(-dt H).
struct Propagators {
  Eigen::MatrixXd forward;
  Eigen::MatrixXd backward;
};

Propagators propagators(const Eigen::MatrixXd& h, double dt, const matexp::ExpConfig& cfg = {});

/// States at t = 1..T (returned at index t-1) with states[t_ref - 1] = s_ref,
/// built by repeated application of the cached one-step propagators.
std::vector<PhaseState> rollout(const PhaseState& s_ref, const HamiltonianMatrix& h, int t_ref,
                                int length, double dt = 1.0, const matexp::ExpConfig& cfg = {});

/// Same recurrence on stacked vectors.
std::vector<Eigen::VectorXd> rollout_stacked(const Eigen::VectorXd& s_ref,
                                             const Propagators& props, int t_ref, int length);

/// Invariant residuals of one generator and the flow it generates at time t.
struct OperatorResiduals {
  double algebra = 0;        ///< ||(JH)^T - JH||_F
  double trace = 0;          ///< |tr H|
  double group = 0;          ///< ||S^T J S - J||_F, S = exp(tH)
  double volume = 0;         ///< |det S - 1|
  double reversibility = 0;  ///< ||exp(tH) exp(-tH) - I||_F
};

OperatorResiduals residuals(const HamiltonianMatrix& h, double t,
                            const matexp::ExpConfig& cfg = {});

}  // namespace hvae::symplectic

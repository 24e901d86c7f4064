#include "hvae/symplectic.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>

#include "hvae/error.hpp"
#include "hvae/rng.hpp"

namespace hvae::symplectic {

std::string to_string(Flavor flavor) {
  return flavor == Flavor::FullSymplectic ? "full" : "skew";
}

Flavor flavor_from_string(const std::string& name) {
  if (name == "full" || name == "FullSymplectic") return Flavor::FullSymplectic;
  if (name == "skew" || name == "SkewOrthogonal") return Flavor::SkewOrthogonal;
  throw ContractError("unknown Hamiltonian flavor '" + name + "' (expected full or skew)");
}

HamiltonianSpec::HamiltonianSpec(int d, Flavor flavor) : d_(d), flavor_(flavor) {
  if (d < 1) throw ContractError("HamiltonianSpec: d must be >= 1, got " + std::to_string(d));
}

int HamiltonianSpec::parameter_count() const noexcept {
  return flavor_ == Flavor::FullSymplectic ? 2 * d_ * d_ + d_ : (d_ * d_ - d_) / 2;
}

HamiltonianParams::HamiltonianParams(HamiltonianSpec spec, std::vector<double> raw)
    : spec_(spec), raw_(std::move(raw)) {
  if (static_cast<int>(raw_.size()) != spec_.parameter_count()) {
    throw ParameterShapeError("HamiltonianParams: expected " +
                              std::to_string(spec_.parameter_count()) + " values for d=" +
                              std::to_string(spec_.d()) + ", got " + std::to_string(raw_.size()));
  }
}

HamiltonianParams HamiltonianParams::random(HamiltonianSpec spec, Rng& rng, double stddev) {
  std::vector<double> raw(static_cast<std::size_t>(spec.parameter_count()));
  for (auto& v : raw) v = stddev * rng.normal();
  return {spec, std::move(raw)};
}

HamiltonianParams HamiltonianParams::zeros(HamiltonianSpec spec) {
  return {spec, std::vector<double>(static_cast<std::size_t>(spec.parameter_count()), 0.0)};
}

Eigen::MatrixXd symplectic_form(int d) {
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  j.topRightCorner(d, d).setIdentity();
  j.bottomLeftCorner(d, d) = -Eigen::MatrixXd::Identity(d, d);
  return j;
}

Eigen::MatrixXd symplectic_form(std::span<const int> half_dims) {
  const int total = std::accumulate(half_dims.begin(), half_dims.end(), 0);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * total, 2 * total);
  int offset = 0;
  for (const int d : half_dims) {
    j.block(offset, offset, 2 * d, 2 * d) = symplectic_form(d);
    offset += 2 * d;
  }
  return j;
}

HamiltonianMatrix::HamiltonianMatrix(Eigen::MatrixXd values, std::vector<int> half_dims, double tol)
    : values_(std::move(values)), half_dims_(std::move(half_dims)) {
  if (half_dims_.empty()) throw ContractError("HamiltonianMatrix: no blocks");
  d_ = std::accumulate(half_dims_.begin(), half_dims_.end(), 0);
  if (values_.rows() != 2 * d_ || values_.cols() != 2 * d_) {
    throw ShapeError("HamiltonianMatrix: expected " + std::to_string(2 * d_) + " square, got " +
                     std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()));
  }
  if (!values_.allFinite()) throw DomainError("HamiltonianMatrix: non-finite entries");
  const double algebra = algebra_residual();
  if (algebra > tol * std::max(1.0, values_.norm())) {
    throw ContractError("HamiltonianMatrix: (JH)^T != JH, residual " + std::to_string(algebra));
  }
  if (std::abs(trace()) > tol * std::max(1.0, values_.norm())) {
    throw ContractError("HamiltonianMatrix: trace " + std::to_string(trace()) + " is not zero");
  }
}

double HamiltonianMatrix::algebra_residual() const {
  const Eigen::MatrixXd jh = form() * values_;
  return (jh.transpose() - jh).norm();
}

PhaseState PhaseState::zeros(int d) {
  return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
}

PhaseState PhaseState::from_stacked(const Eigen::VectorXd& s) {
  if (s.size() % 2 != 0) throw ShapeError("PhaseState: stacked vector must have even length");
  const Eigen::Index d = s.size() / 2;
  return {s.head(d), s.tail(d)};
}

Eigen::VectorXd PhaseState::stacked() const {
  if (q.size() != p.size()) throw ShapeError("PhaseState: q and p differ in length");
  Eigen::VectorXd s(q.size() + p.size());
  s << q, p;
  return s;
}

MotionState::MotionState(std::vector<PhaseState> per_action, int active)
    : per_action_(std::move(per_action)), active_(active) {
  if (active_ < 0 || active_ >= static_cast<int>(per_action_.size())) {
    throw IndexError("MotionState: active index " + std::to_string(active_) + " out of range");
  }
  if (!inactive_blocks_zero(per_action_, active_)) {
    throw ContractError("MotionState: inactive subspace holds non-zero values");
  }
}

bool MotionState::inactive_blocks_zero(const std::vector<PhaseState>& per_action, int active) {
  for (int k = 0; k < static_cast<int>(per_action.size()); ++k) {
    if (k == active) continue;
    for (const auto* vec : {&per_action[k].q, &per_action[k].p}) {
      for (Eigen::Index i = 0; i < vec->size(); ++i) {
        if (std::bit_cast<std::uint64_t>((*vec)[i]) != 0) return false;
      }
    }
  }
  return true;
}

Eigen::MatrixXd unpack_symmetric(std::span<const double> packed, int n) {
  if (static_cast<int>(packed.size()) != n * (n + 1) / 2) {
    throw ParameterShapeError("unpack_symmetric: wrong packed length");
  }
  Eigen::MatrixXd m(n, n);
  std::size_t idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      m(i, j) = packed[idx];
      m(j, i) = packed[idx];
      ++idx;
    }
  }
  return m;
}

Eigen::MatrixXd unpack_skew(std::span<const double> packed, int n) {
  if (static_cast<int>(packed.size()) != n * (n - 1) / 2) {
    throw ParameterShapeError("unpack_skew: wrong packed length");
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  std::size_t idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      a(i, j) = packed[idx];
      a(j, i) = -packed[idx];
      ++idx;
    }
  }
  return a;
}

Eigen::MatrixXd metric(const HamiltonianParams& params) {
  const int d = params.spec().d();
  if (params.spec().flavor() == Flavor::FullSymplectic) {
    return unpack_symmetric(params.raw(), 2 * d);
  }
  // H = blockdiag(A, A) = J M with M = J^T H = [[0, -A], [A, 0]], which is
  // symmetric because A is skew.
  const Eigen::MatrixXd a = unpack_skew(params.raw(), d);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  m.topRightCorner(d, d) = -a;
  m.bottomLeftCorner(d, d) = a;
  return m;
}

HamiltonianMatrix assemble_hamiltonian(const HamiltonianParams& params) {
  const int d = params.spec().d();
  if (params.spec().flavor() == Flavor::FullSymplectic) {
    return {symplectic_form(d) * unpack_symmetric(params.raw(), 2 * d), {d}};
  }
  const Eigen::MatrixXd a = unpack_skew(params.raw(), d);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  h.topLeftCorner(d, d) = a;
  h.bottomRightCorner(d, d) = a;
  return {std::move(h), {d}};
}

std::vector<double> assemble_pullback(const HamiltonianSpec& spec, const Eigen::MatrixXd& grad_h) {
  const int d = spec.d();
  if (grad_h.rows() != 2 * d || grad_h.cols() != 2 * d) {
    throw ShapeError("assemble_pullback: gradient has wrong shape");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(spec.parameter_count()));
  if (spec.flavor() == Flavor::FullSymplectic) {
    const Eigen::MatrixXd grad_m = symplectic_form(d).transpose() * grad_h;
    const int n = 2 * d;
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        out.push_back(i == j ? grad_m(i, i) : grad_m(i, j) + grad_m(j, i));
      }
    }
    return out;
  }
  const Eigen::MatrixXd grad_a = grad_h.topLeftCorner(d, d) + grad_h.bottomRightCorner(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) out.push_back(grad_a(i, j) - grad_a(j, i));
  }
  return out;
}

double energy(const Eigen::MatrixXd& m, const Eigen::VectorXd& s) {
  if (m.rows() != m.cols() || m.rows() != s.size()) {
    throw ShapeError("energy: metric and state dimensions differ");
  }
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw ContractError("energy: metric is not symmetric");
  }
  return 0.5 * s.dot(m * s);
}

double energy(const Eigen::MatrixXd& m, const PhaseState& s) { return energy(m, s.stacked()); }

HamiltonianMatrix block_diag(std::span<const HamiltonianMatrix> blocks) {
  if (blocks.empty()) throw ContractError("block_diag: need at least one block");
  std::vector<int> half_dims;
  int total = 0;
  for (const auto& b : blocks) {
    for (const int d : b.half_dims()) half_dims.push_back(d);
    total += b.dim();
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(total, total);
  int offset = 0;
  for (const auto& b : blocks) {
    out.block(offset, offset, b.dim(), b.dim()) = b.values();
    offset += b.dim();
  }
  return {std::move(out), std::move(half_dims)};
}

PhaseState step(const PhaseState& s, const HamiltonianMatrix& h, double dt,
                const matexp::ExpConfig& cfg) {
  const Eigen::VectorXd stacked = s.stacked();
  if (stacked.size() != h.dim()) throw ShapeError("step: state and operator dimensions differ");
  return PhaseState::from_stacked(matexp::expm(dt * h.values(), cfg) * stacked);
}

Propagators propagators(const Eigen::MatrixXd& h, double dt, const matexp::ExpConfig& cfg) {
  return {matexp::expm(dt * h, cfg), matexp::expm(-dt * h, cfg)};
}

std::vector<Eigen::VectorXd> rollout_stacked(const Eigen::VectorXd& s_ref,
                                             const Propagators& props, int t_ref, int length) {
  if (length < 1) throw IndexError("rollout: length must be >= 1");
  if (t_ref < 1 || t_ref > length) {
    throw IndexError("rollout: t_ref " + std::to_string(t_ref) + " outside 1.." +
                     std::to_string(length));
  }
  if (s_ref.size() != props.forward.rows()) {
    throw ShapeError("rollout: state and operator dimensions differ");
  }
  std::vector<Eigen::VectorXd> states(static_cast<std::size_t>(length));
  const int ref = t_ref - 1;
  states[ref] = s_ref;
  for (int t = ref + 1; t < length; ++t) states[t] = props.forward * states[t - 1];
  for (int t = ref - 1; t >= 0; --t) states[t] = props.backward * states[t + 1];
  return states;
}

std::vector<PhaseState> rollout(const PhaseState& s_ref, const HamiltonianMatrix& h, int t_ref,
                                int length, double dt, const matexp::ExpConfig& cfg) {
  const auto stacked = rollout_stacked(s_ref.stacked(), propagators(h.values(), dt, cfg), t_ref,
                                       length);
  std::vector<PhaseState> out;
  out.reserve(stacked.size());
  for (const auto& s : stacked) out.push_back(PhaseState::from_stacked(s));
  return out;
}

OperatorResiduals residuals(const HamiltonianMatrix& h, double t, const matexp::ExpConfig& cfg) {
  OperatorResiduals r;
  r.algebra = h.algebra_residual();
  r.trace = std::abs(h.trace());
  const Eigen::MatrixXd j = h.form();
  const Eigen::MatrixXd fwd = matexp::expm(t * h.values(), cfg);
  const Eigen::MatrixXd bwd = matexp::expm(-t * h.values(), cfg);
  r.group = (fwd.transpose() * j * fwd - j).norm();
  r.volume = std::abs(fwd.determinant() - 1.0);
  r.reversibility = (fwd * bwd - Eigen::MatrixXd::Identity(h.dim(), h.dim())).norm();
  return r;
}

}  // namespace hvae::symplectic

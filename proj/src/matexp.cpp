#include "hvae/matexp.hpp"

#include <cmath>
#include <string>

#include "hvae/error.hpp"

namespace hvae::matexp {

namespace {

void check_input(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) {
    throw ShapeError("expm: matrix must be square, got " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()));
  }
  if (!a.allFinite()) throw DomainError("expm: matrix has non-finite entries");
}

double one_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace

void ExpConfig::validate() const {
  if (degree < 1) throw ContractError("ExpConfig: degree must be >= 1");
  if (!(theta > 0.0)) throw ContractError("ExpConfig: theta must be > 0");
  if (max_squarings < 0) throw ContractError("ExpConfig: max_squarings must be >= 0");
}

int squarings_for(const Eigen::MatrixXd& a, const ExpConfig& cfg) {
  cfg.validate();
  check_input(a);
  const double norm = one_norm(a);
  if (norm <= cfg.theta) return 0;
  const double needed = std::ceil(std::log2(norm / cfg.theta));
  if (needed > cfg.max_squarings) {
    throw OverflowError("expm: norm " + std::to_string(norm) + " needs " +
                        std::to_string(static_cast<long long>(needed)) +
                        " squarings, limit is " + std::to_string(cfg.max_squarings));
  }
  return static_cast<int>(needed);
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& a, const ExpConfig& cfg) {
  const int s = squarings_for(a, cfg);
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd x = a * std::ldexp(1.0, -s);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  // Horner: P <- I + X P / k for k = degree..1 yields sum_{j<=degree} X^j / j!
  Eigen::MatrixXd p = eye;
  for (int k = cfg.degree; k >= 1; --k) {
    p = eye + (x * p) / static_cast<double>(k);
  }
  for (int i = 0; i < s; ++i) p = p * p;
  return p;
}

ExpWithFrechet expm_and_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e,
                                const ExpConfig& cfg) {
  check_input(e);
  if (e.rows() != a.rows() || e.cols() != a.cols()) {
    throw ShapeError("expm_frechet: direction must match the matrix shape");
  }
  const int s = squarings_for(a, cfg);
  const Eigen::Index n = a.rows();
  const double scale = std::ldexp(1.0, -s);
  const Eigen::MatrixXd x = a * scale;
  const Eigen::MatrixXd dx = e * scale;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

  Eigen::MatrixXd p = eye;
  Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(n, n);
  for (int k = cfg.degree; k >= 1; --k) {
    const double kd = static_cast<double>(k);
    Eigen::MatrixXd next_dp = (dx * p + x * dp) / kd;
    p = eye + (x * p) / kd;
    dp = std::move(next_dp);
  }
  for (int i = 0; i < s; ++i) {
    Eigen::MatrixXd next_dp = dp * p + p * dp;
    p = p * p;
    dp = std::move(next_dp);
  }
  return {std::move(p), std::move(dp)};
}

Eigen::MatrixXd expm_frechet(const Eigen::MatrixXd& a, const Eigen::MatrixXd& e,
                             const ExpConfig& cfg) {
  return expm_and_frechet(a, e, cfg).derivative;
}

}  // namespace hvae::matexp

#ifndef HSFUSE_FUSION_HPP
#define HSFUSE_FUSION_HPP

// Subspace feature fusion of an HS image Y_h (m x N_lambda) and a
// morphological profile Y_mp (n x M_mp):
//
//   min_{C, Q}  1/2 ||S K C Q - Y_h||_F^2 + lambda/2 ||C Q_mp - Y_mp||_F^2
//               + lambda_tv sum_i ||[Dh C_i  Dv C_i]||_{2,1}
//   s.t. Q Q^T = I
//
// solved by alternating optimization: an ADMM inner loop for C (splitting
// U = [Dh C; Dv C]) and an orthogonal Procrustes step for Q. Q_mp is fixed by
// the SVD initialization.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/normal_equations.hpp"
#include "hsfuse/operators.hpp"

namespace hsfuse {

struct SubspaceFactors {
  Eigen::MatrixXd C;     // n x N_e
  Eigen::MatrixXd Q;     // N_e x N_lambda
  Eigen::MatrixXd Q_mp;  // N_e x M_mp
};

struct FusionConfig {
  int ne = 10;
  double lambda = 1.0;
  double lambda_tv = 0.05;
  double rho0 = 1.0;
  double eps_ao = 1e-4;
  double eps_admm = 1e-4;
  int max_ao_iters = 100;
  int max_admm_iters = 500;
  bool rho_adapt = false;
  double rho_mu = 10.0;
  double rho_tau_incr = 2.0;
  double rho_tau_decr = 2.0;
  SolverBackend backend = SolverBackend::fft;

  void validate() const
  {
    if (ne < 1) throw ParameterError("N_e must be >= 1");
    if (!(lambda > 0.0)) throw ParameterError("lambda must be > 0");
    if (!(lambda_tv >= 0.0)) throw ParameterError("lambda_tv must be >= 0");
    if (!(rho0 > 0.0)) throw ParameterError("rho0 must be > 0");
    if (!(eps_ao > 0.0) || !(eps_admm > 0.0)) throw ParameterError("tolerances must be > 0");
    if (max_ao_iters < 1 || max_admm_iters < 1)
      throw ParameterError("iteration limits must be >= 1");
    if (rho_adapt && (!(rho_mu > 1.0) || !(rho_tau_incr > 1.0) || !(rho_tau_decr > 1.0)))
      throw ParameterError("rho adaptation needs mu > 1 and tau factors > 1");
  }
};

/// Split variables, scaled duals and penalty of the C-subproblem.
struct AdmmState {
  Eigen::MatrixXd U1, U2;
  Eigen::MatrixXd G1, G2;
  double rho = 1.0;
  double r_res = 0.0;
  double s_res = 0.0;

  static AdmmState zeros(Eigen::Index n, Eigen::Index ne, double rho)
  {
    AdmmState s;
    s.U1 = Eigen::MatrixXd::Zero(n, ne);
    s.U2 = Eigen::MatrixXd::Zero(n, ne);
    s.G1 = Eigen::MatrixXd::Zero(n, ne);
    s.G2 = Eigen::MatrixXd::Zero(n, ne);
    s.rho = rho;
    return s;
  }
};

/// One record per AO iteration; also the line format of the --trace stream.
struct AoRecord {
  int iteration = 0;
  double objective = 0.0;
  double r_res = 0.0;
  double s_res = 0.0;
  double rho = 0.0;
  int admm_iterations = 0;
  double relative_change = 0.0;
};

struct FusionResult {
  SubspaceFactors factors;
  std::vector<double> objective_trace;
  std::vector<int> admm_iter_counts;
  std::vector<AoRecord> records;
  bool converged = false;
  bool degenerate_procrustes = false;
};

// ---- subspace initialization and Procrustes -------------------------------

/// Transposed top-N_e right singular vectors of Y^T Y (rows orthonormal). Each
/// row's sign is fixed so that its largest-magnitude entry is positive.
inline Eigen::MatrixXd init_subspace(const Eigen::Ref<const Eigen::MatrixXd>& y, int ne)
{
  if (ne < 1 || ne > y.cols())
    throw ParameterError("N_e=" + std::to_string(ne) + " must lie in [1, " +
                         std::to_string(y.cols()) + "]");
  const Eigen::MatrixXd gram = y.transpose() * y;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeFullV);
  Eigen::MatrixXd basis = svd.matrixV().leftCols(ne).transpose();
  for (Eigen::Index r = 0; r < basis.rows(); ++r) {
    Eigen::Index arg = 0;
    basis.row(r).cwiseAbs().maxCoeff(&arg);
    if (basis(r, arg) < 0.0) basis.row(r) *= -1.0;
  }
  return basis;
}

struct ProcrustesResult {
  Eigen::MatrixXd Q;
  Eigen::VectorXd singular_values;
  bool degenerate = false;  // some singular value of (SKC)^T Y_h below 1e-12
};

/// Q = U V^T from the thin SVD of (S K C)^T Y_h.
inline ProcrustesResult update_Q_procrustes(const Eigen::Ref<const Eigen::MatrixXd>& c,
                                            const ForwardOperators& ops,
                                            const Eigen::Ref<const Eigen::MatrixXd>& y_h)
{
  if (c.rows() != ops.fine().pixels() || y_h.rows() != ops.coarse().pixels())
    throw DimensionError("procrustes: C or Y_h does not match the operator grids");
  if (c.cols() > y_h.cols()) throw ParameterError("procrustes: N_e exceeds the HS band count");
  const Eigen::MatrixXd cross = ops.sk(c).transpose() * y_h;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeThinU | Eigen::ComputeThinV);
  ProcrustesResult res;
  res.Q = svd.matrixU() * svd.matrixV().transpose();
  res.singular_values = svd.singularValues();
  res.degenerate = (res.singular_values.array() < 1e-12).any();
  return res;
}

// ---- objective -------------------------------------------------------------

inline double tv_norm(const Eigen::Ref<const Eigen::MatrixXd>& dh_c,
                      const Eigen::Ref<const Eigen::MatrixXd>& dv_c)
{
  return (dh_c.array().square() + dv_c.array().square()).sqrt().sum();
}

inline double objective_J(const Eigen::Ref<const Eigen::MatrixXd>& c,
                          const Eigen::Ref<const Eigen::MatrixXd>& q,
                          const Eigen::Ref<const Eigen::MatrixXd>& q_mp,
                          const Eigen::Ref<const Eigen::MatrixXd>& y_h,
                          const Eigen::Ref<const Eigen::MatrixXd>& y_mp,
                          const ForwardOperators& ops, double lambda, double lambda_tv)
{
  if (c.rows() != ops.fine().pixels() || y_h.rows() != ops.coarse().pixels() ||
      y_mp.rows() != ops.fine().pixels() || q.rows() != c.cols() || q_mp.rows() != c.cols() ||
      q.cols() != y_h.cols() || q_mp.cols() != y_mp.cols())
    throw DimensionError("objective_J: inconsistent shapes");
  const double hs = 0.5 * (ops.sk(c) * q - y_h).squaredNorm();
  const double mp = 0.5 * lambda * (c * q_mp - y_mp).squaredNorm();
  const double tv = lambda_tv == 0.0 ? 0.0 : lambda_tv * tv_norm(ops.dh(c), ops.dv(c));
  return hs + mp + tv;
}

// ---- ADMM pieces -------------------------------------------------------------

/// Group soft threshold applied entrywise to the pixel 2-vectors (e2, e3):
/// x * max(|x| - tau, 0) / (max(|x| - tau, 0) + tau), with 0 mapped to 0.
inline void vect_soft_threshold(Eigen::Ref<Eigen::MatrixXd> e2, Eigen::Ref<Eigen::MatrixXd> e3,
                                double tau)
{
  if (tau < 0.0) throw ParameterError("threshold must be >= 0");
  for (Eigen::Index c = 0; c < e2.cols(); ++c)
    for (Eigen::Index i = 0; i < e2.rows(); ++i) {
      const double a = e2(i, c);
      const double b = e3(i, c);
      const double norm = std::sqrt(a * a + b * b);
      const double shrunk = std::max(norm - tau, 0.0);
      const double denom = shrunk + tau;
      const double f = denom > 0.0 ? shrunk / denom : 0.0;
      e2(i, c) = a * f;
      e3(i, c) = b * f;
    }
}

/// Residual-balancing penalty update. G is rescaled so that rho * G (the
/// unscaled multiplier) is unchanged.
inline AdmmState adapt_rho(AdmmState state, double mu = 10.0, double tau_incr = 2.0,
                           double tau_decr = 2.0)
{
  if (!(mu > 1.0) || !(tau_incr > 1.0) || !(tau_decr > 1.0))
    throw ParameterError("adapt_rho needs mu > 1 and tau factors > 1");
  if (state.r_res > mu * state.s_res) {
    state.rho *= tau_incr;
    state.G1 /= tau_incr;
    state.G2 /= tau_incr;
  } else if (state.s_res > mu * state.r_res) {
    state.rho /= tau_decr;
    state.G1 *= tau_decr;
    state.G2 *= tau_decr;
  }
  return state;
}

/// Fixed data of the C-subproblem.
struct FusionProblem {
  const ForwardOperators& ops;
  Eigen::Ref<const Eigen::MatrixXd> y_h;
  Eigen::Ref<const Eigen::MatrixXd> y_mp;
  Eigen::Ref<const Eigen::MatrixXd> q_mp;
  double lambda;
  double lambda_tv;
};

struct AdmmResult {
  Eigen::MatrixXd C;
  AdmmState state;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// num / den with the degenerate cases of the stopping rule: 0/0 is 0 and a
// vanishing denominator counts as trivially converged.
inline double residual_ratio(double num, double den)
{
  if (den == 0.0) return 0.0;
  return num / den;
}

}  // namespace detail

/// E1 without the splitting term: (SK)^T Y_h Q^T + lambda Y_mp Q_mp^T.
inline Eigen::MatrixXd data_rhs(const FusionProblem& p, const Eigen::Ref<const Eigen::MatrixXd>& q)
{
  return p.ops.sk_adjoint(p.y_h * q.transpose()) + p.lambda * (p.y_mp * p.q_mp.transpose());
}

/// C-update of the ADMM loop: solves M C = E1 for the current (U, G, rho).
inline Eigen::MatrixXd update_C_linear_solve(const NormalEquations& solver,
                                             const ForwardOperators& ops,
                                             const Eigen::Ref<const Eigen::MatrixXd>& rhs0,
                                             const AdmmState& s)
{
  Eigen::MatrixXd e1 = rhs0;
  e1 += s.rho * (ops.dh_adjoint(s.U1 - s.G1) + ops.dv_adjoint(s.U2 - s.G2));
  return solver.solve(e1);
}

/// ADMM for C with Q fixed, warm-started from `state`. The solver must belong
/// to p.ops; it is re-prepared here whenever rho differs from its own.
inline AdmmResult admm_estimate_C(const FusionProblem& p, const Eigen::Ref<const Eigen::MatrixXd>& q,
                                  AdmmState state, const FusionConfig& cfg, NormalEquations& solver)
{
  const Eigen::Index n = p.ops.fine().pixels();
  const Eigen::Index ne = q.rows();
  if (state.U1.rows() != n || state.U1.cols() != ne || state.U2.rows() != n ||
      state.U2.cols() != ne || state.G1.rows() != n || state.G1.cols() != ne ||
      state.G2.rows() != n || state.G2.cols() != ne)
    throw DimensionError("ADMM state does not match n x N_e");
  if (!(state.rho > 0.0)) throw ParameterError("rho must be > 0");

  const Eigen::MatrixXd rhs0 = data_rhs(p, q);
  AdmmResult out;

  if (p.lambda_tv == 0.0) {
    // Without the TV term the U-step is the identity, so minimizing the
    // augmented Lagrangian jointly over (C, U) eliminates the penalty: one
    // exact step gives the unregularized minimizer, U = D C and G = 0.
    if (solver.lambda() != p.lambda || solver.rho() != 0.0) solver.prepare(p.lambda, 0.0);
    out.C = solver.solve(rhs0);
    state.U1 = p.ops.dh(out.C);
    state.U2 = p.ops.dv(out.C);
    state.G1.setZero();
    state.G2.setZero();
    state.r_res = 0.0;
    state.s_res = 0.0;
    out.state = std::move(state);
    out.iterations = 1;
    out.converged = true;
    return out;
  }

  // A^T U and A^T G feed both the next right-hand side and the dual residual.
  auto adjoint_pair = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd r = p.ops.dh_adjoint(a);
    r += p.ops.dv_adjoint(b);
    return r;
  };
  Eigen::MatrixXd at_u = adjoint_pair(state.U1, state.U2);
  Eigen::MatrixXd at_g = adjoint_pair(state.G1, state.G2);

  Eigen::MatrixXd c;
  for (int t = 1; t <= cfg.max_admm_iters; ++t) {
    if (solver.lambda() != p.lambda || solver.rho() != state.rho)
      solver.prepare(p.lambda, state.rho);

    Eigen::MatrixXd e1 = rhs0;
    e1 += state.rho * (at_u - at_g);
    c = solver.solve(e1);
    Eigen::MatrixXd ac1 = p.ops.dh(c);
    Eigen::MatrixXd ac2 = p.ops.dv(c);
    const double ac_norm = std::sqrt(ac1.squaredNorm() + ac2.squaredNorm());

    Eigen::MatrixXd u1 = ac1 + state.G1;
    Eigen::MatrixXd u2 = ac2 + state.G2;
    vect_soft_threshold(u1, u2, p.lambda_tv / state.rho);
    const double u_norm = std::sqrt(u1.squaredNorm() + u2.squaredNorm());

    ac1 -= u1;  // primal residual A C + B U
    ac2 -= u2;
    const double prim = std::sqrt(ac1.squaredNorm() + ac2.squaredNorm());
    state.G1 += ac1;
    state.G2 += ac2;

    Eigen::MatrixXd at_u_next = adjoint_pair(u1, u2);
    at_g = adjoint_pair(state.G1, state.G2);
    const double dual = state.rho * (at_u_next - at_u).norm();
    state.r_res = detail::residual_ratio(prim, std::max(ac_norm, u_norm));
    state.s_res = detail::residual_ratio(dual, at_g.norm());
    state.U1 = std::move(u1);
    state.U2 = std::move(u2);
    at_u = std::move(at_u_next);
    out.iterations = t;

    if (state.r_res < cfg.eps_admm && state.s_res < cfg.eps_admm) {
      out.converged = true;
      break;
    }
    if (cfg.rho_adapt) {
      const double before = state.rho;
      state = adapt_rho(std::move(state), cfg.rho_mu, cfg.rho_tau_incr, cfg.rho_tau_decr);
      if (state.rho != before) at_g = adjoint_pair(state.G1, state.G2);
    }
  }
  out.C = std::move(c);
  out.state = std::move(state);
  return out;
}

/// Convenience overload that builds its own solver.
inline AdmmResult admm_estimate_C(const FusionProblem& p, const Eigen::Ref<const Eigen::MatrixXd>& q,
                                  AdmmState state, const FusionConfig& cfg)
{
  NormalEquations solver(p.ops, cfg.backend);
  return admm_estimate_C(p, q, std::move(state), cfg, solver);
}

// ---- alternating optimization ------------------------------------------------

using AoObserver = std::function<void(const AoRecord&)>;

namespace detail {

// ||C_t - C_{t-1}|| / ||C_{t-1}||. The first iteration compares against the
// zero matrix and counts as a full change (1), or no change if C_1 = 0 too.
inline double relative_change(const Eigen::MatrixXd* prev, const Eigen::MatrixXd& cur)
{
  if (prev == nullptr) return cur.squaredNorm() == 0.0 ? 0.0 : 1.0;
  const double diff = (cur - *prev).norm();
  const double base = prev->norm();
  if (base == 0.0) return diff == 0.0 ? 0.0 : 1.0;
  return diff / base;
}

}  // namespace detail

inline FusionResult ao_fuse(const Eigen::Ref<const Eigen::MatrixXd>& y_h,
                            const Eigen::Ref<const Eigen::MatrixXd>& y_mp,
                            const ForwardOperators& ops, const FusionConfig& cfg,
                            const AoObserver& observer = {})
{
  cfg.validate();
  if (y_h.rows() != ops.coarse().pixels())
    throw DimensionError("Y_h has " + std::to_string(y_h.rows()) + " pixels, coarse grid " +
                         to_string(ops.coarse()) + " needs " +
                         std::to_string(ops.coarse().pixels()));
  if (y_mp.rows() != ops.fine().pixels())
    throw DimensionError("Y_mp has " + std::to_string(y_mp.rows()) + " pixels, fine grid " +
                         to_string(ops.fine()) + " needs " + std::to_string(ops.fine().pixels()));
  if (cfg.ne > std::min(y_h.cols(), y_mp.cols()))
    throw ParameterError("N_e=" + std::to_string(cfg.ne) + " exceeds min(N_lambda=" +
                         std::to_string(y_h.cols()) + ", M_mp=" + std::to_string(y_mp.cols()) +
                         ")");
  if (!y_h.allFinite() || !y_mp.allFinite()) throw ParameterError("inputs contain NaN or Inf");

  FusionResult res;
  res.factors.Q_mp = init_subspace(y_mp, cfg.ne);
  res.factors.Q = init_subspace(y_h, cfg.ne);

  const FusionProblem problem{ops, y_h, y_mp, res.factors.Q_mp, cfg.lambda, cfg.lambda_tv};
  NormalEquations solver(ops, cfg.backend);
  AdmmState state = AdmmState::zeros(ops.fine().pixels(), cfg.ne, cfg.rho0);

  Eigen::MatrixXd prev;
  for (int t = 1; t <= cfg.max_ao_iters; ++t) {
    AdmmResult admm = admm_estimate_C(problem, res.factors.Q, std::move(state), cfg, solver);
    state = std::move(admm.state);
    ProcrustesResult proc = update_Q_procrustes(admm.C, ops, y_h);
    res.degenerate_procrustes = res.degenerate_procrustes || proc.degenerate;
    res.factors.Q = std::move(proc.Q);

    AoRecord rec;
    rec.iteration = t;
    rec.objective = objective_J(admm.C, res.factors.Q, res.factors.Q_mp, y_h, y_mp, ops,
                                cfg.lambda, cfg.lambda_tv);
    rec.r_res = state.r_res;
    rec.s_res = state.s_res;
    rec.rho = state.rho;
    rec.admm_iterations = admm.iterations;
    rec.relative_change = detail::relative_change(t == 1 ? nullptr : &prev, admm.C);
    res.objective_trace.push_back(rec.objective);
    res.admm_iter_counts.push_back(admm.iterations);
    res.records.push_back(rec);
    if (observer) observer(rec);

    prev = std::move(admm.C);
    if (rec.relative_change < cfg.eps_ao) {
      res.converged = true;
      break;
    }
  }
  res.factors.C = std::move(prev);
  return res;
}

/// Exposes C as an n x N_e feature cube on the fine grid.
inline SpectralCube fused_features(const FusionResult& result, GridShape fine)
{
  std::vector<std::string> labels;
  for (Eigen::Index i = 0; i < result.factors.C.cols(); ++i)
    labels.push_back("feature_" + std::to_string(i + 1));
  return SpectralCube(result.factors.C, fine, std::move(labels));
}

}  // namespace hsfuse

#endif  // HSFUSE_FUSION_HPP

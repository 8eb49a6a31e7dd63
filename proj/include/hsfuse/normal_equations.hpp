#ifndef HSFUSE_NORMAL_EQUATIONS_HPP
#define HSFUSE_NORMAL_EQUATIONS_HPP

// Solvers for the C-update system
//
//   M C = E1,   M = (S K)^T S K + lambda I + rho (Dh^T Dh + Dv^T Dv)
//
// shared by all N_e columns of C.
//
// Frequency-domain backend: K, Dh and Dv are diagonal in the 2-D DFT basis with
// symbols kappa, h, v. Zero-filled decimation S^T S folds the spectrum: the
// d^2 frequencies k + (a W/d, b H/d), a, b in [0, d), form a block on which
// S^T S acts as (1/d^2) u u^H with u_(a,b) = exp(-2 pi i (a + b) phase / d).
// On each block M is therefore
//
//   (1/d^2) w w^H + diag(delta),  w = conj(kappa) .* u,
//   delta = lambda + rho (|h|^2 + |v|^2),
//
// a diagonal plus rank-one matrix inverted with Sherman-Morrison. Blocks with
// a zero diagonal entry (lambda = 0 at the DC frequency) fall back to a dense
// LU of the d^2 x d^2 block.
//
// Conjugate-gradient backend: matrix-free CG on M, column by column.

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/error.hpp"
#include "hsfuse/fft.hpp"
#include "hsfuse/operators.hpp"

namespace hsfuse {

enum class SolverBackend { fft, cg };

inline const char* to_string(SolverBackend b) { return b == SolverBackend::fft ? "fft" : "cg"; }

inline SolverBackend parse_backend(const std::string& s)
{
  if (s == "fft") return SolverBackend::fft;
  if (s == "cg") return SolverBackend::cg;
  throw ParameterError("unknown solver backend '" + s + "' (expected fft or cg)");
}

struct CgOptions {
  double relative_tolerance = 1e-12;
  int max_iterations = 5000;
};

class NormalEquations {
 public:
  NormalEquations(const ForwardOperators& ops, SolverBackend backend, CgOptions cg = {})
      : ops_(ops), backend_(backend), cg_(cg)
  {
  }

  SolverBackend backend() const { return backend_; }
  double lambda() const { return lambda_; }
  double rho() const { return rho_; }

  /// Fixes lambda and rho. Must be called again whenever rho changes.
  void prepare(double lambda, double rho)
  {
    if (lambda < 0.0 || rho < 0.0) throw ParameterError("lambda and rho must be non-negative");
    lambda_ = lambda;
    rho_ = rho;
    prepared_ = true;
    if (backend_ == SolverBackend::fft) prepare_fourier();
  }

  /// M x, matrix-free.
  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    Eigen::MatrixXd out = ops_.sk_adjoint(ops_.sk(x));
    out += lambda_ * x;
    if (rho_ != 0.0) out += rho_ * (ops_.dh_adjoint(ops_.dh(x)) + ops_.dv_adjoint(ops_.dv(x)));
    return out;
  }

  Eigen::MatrixXd solve(const Eigen::Ref<const Eigen::MatrixXd>& rhs) const
  {
    if (!prepared_) throw SolverError("normal equations solved before prepare()");
    if (rhs.rows() != ops_.fine().pixels())
      throw DimensionError("normal equations: right-hand side has wrong row count");
    return backend_ == SolverBackend::fft ? solve_fourier(rhs) : solve_cg(rhs);
  }

 private:
  struct DenseBlock {
    int block = 0;
    Eigen::FullPivLU<Eigen::MatrixXcd> lu;
  };

  // Frequencies are stored block by block: entry j of block b is member
  // order_[b * d^2 + j]. For Sherman-Morrison blocks, scaled_w_ holds
  // w / delta and inv_delta_ holds 1 / delta at the same positions.
  void prepare_fourier()
  {
    const GridShape fine = ops_.fine();
    const GridShape coarse = ops_.coarse();
    const int d = ops_.decimation().factor;
    const int phase = ops_.decimation().phase;
    const std::size_t n = static_cast<std::size_t>(fine.pixels());
    const int d2 = d * d;

    if (!fft_) fft_.emplace(fine);
    const auto h = diff_h_symbol(fine);
    const auto v = diff_v_symbol(fine);
    const ComplexField& kappa = ops_.blur().transfer();

    order_.assign(n, 0);
    inv_delta_.assign(n, 0.0);
    scaled_w_.assign(n, Complex{});
    block_scale_.assign(static_cast<std::size_t>(coarse.pixels()), 0.0);
    dense_.clear();
    dense_index_.assign(static_cast<std::size_t>(coarse.pixels()), -1);

    std::vector<Complex> w(static_cast<std::size_t>(d2));
    std::vector<double> delta(static_cast<std::size_t>(d2));
    for (int by = 0; by < coarse.height; ++by)
      for (int bx = 0; bx < coarse.width; ++bx) {
        const int block = coarse.index(bx, by);
        const std::size_t base = static_cast<std::size_t>(block) * d2;
        bool singular_diagonal = false;
        int j = 0;
        for (int b = 0; b < d; ++b)
          for (int a = 0; a < d; ++a, ++j) {
            const int k = fine.index(bx + a * coarse.width, by + b * coarse.height);
            const Complex kap = ops_.identity_blur() ? Complex(1.0, 0.0) : kappa[k];
            const Complex u =
                std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((a + b) * phase) / d);
            order_[base + j] = k;
            w[j] = std::conj(kap) * u;
            delta[j] = lambda_ + rho_ * (std::norm(h[k]) + std::norm(v[k]));
            if (!(delta[j] > 0.0)) singular_diagonal = true;
          }
        if (!singular_diagonal) {
          double sum = d2;
          for (int m = 0; m < d2; ++m) {
            inv_delta_[base + m] = 1.0 / delta[m];
            scaled_w_[base + m] = w[m] / delta[m];
            sum += std::norm(w[m]) / delta[m];
          }
          block_scale_[block] = 1.0 / sum;
        } else {
          Eigen::MatrixXcd dense(d2, d2);
          for (int r = 0; r < d2; ++r)
            for (int c = 0; c < d2; ++c)
              dense(r, c) = w[r] * std::conj(w[c]) / static_cast<double>(d2) + (r == c ? delta[r] : 0.0);
          DenseBlock db{block, Eigen::FullPivLU<Eigen::MatrixXcd>(dense)};
          if (!db.lu.isInvertible())
            throw SolverError("singular normal equations (lambda=" + std::to_string(lambda_) +
                              ", rho=" + std::to_string(rho_) + ")");
          dense_index_[block] = static_cast<int>(dense_.size());
          dense_.push_back(std::move(db));
        }
      }
  }

  // (D + w w^H / d^2)^-1 f = D^-1 f - (D^-1 w) (w^H D^-1 f) / (d^2 + w^H D^-1 w)
  void apply_block_inverse(ComplexField& f) const
  {
    const int d2 = ops_.decimation().factor * ops_.decimation().factor;
    const std::size_t blocks = block_scale_.size();
    for (std::size_t block = 0; block < blocks; ++block) {
      const std::size_t base = block * d2;
      if (dense_index_[block] >= 0) {
        const DenseBlock& db = dense_[dense_index_[block]];
        Eigen::VectorXcd rhs(d2);
        for (int j = 0; j < d2; ++j) rhs[j] = f[order_[base + j]];
        const Eigen::VectorXcd sol = db.lu.solve(rhs);
        for (int j = 0; j < d2; ++j) f[order_[base + j]] = sol[j];
        continue;
      }
      Complex proj{};
      for (int j = 0; j < d2; ++j) proj += detail::cmul_conj(f[order_[base + j]], scaled_w_[base + j]);
      proj *= block_scale_[block];
      for (int j = 0; j < d2; ++j) {
        Complex& fk = f[order_[base + j]];
        fk = inv_delta_[base + j] * fk - detail::cmul(scaled_w_[base + j], proj);
      }
    }
  }

  Eigen::MatrixXd solve_fourier(const Eigen::Ref<const Eigen::MatrixXd>& rhs) const
  {
    return apply_fourier_operator(rhs, *fft_, [this](ComplexField& f) { apply_block_inverse(f); });
  }

  Eigen::MatrixXd solve_cg(const Eigen::Ref<const Eigen::MatrixXd>& rhs) const
  {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rhs.rows(), rhs.cols());
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
      const Eigen::VectorXd b = rhs.col(c);
      const double bnorm = b.norm();
      if (bnorm == 0.0) continue;
      Eigen::VectorXd xc = Eigen::VectorXd::Zero(b.size());
      Eigen::VectorXd r = b;
      Eigen::VectorXd p = r;
      double rr = r.squaredNorm();
      int it = 0;
      while (std::sqrt(rr) > cg_.relative_tolerance * bnorm) {
        if (it++ >= cg_.max_iterations) {
          std::ostringstream msg;
          msg << "conjugate gradient did not converge in " << cg_.max_iterations
              << " iterations (relative residual " << std::sqrt(rr) / bnorm << ")";
          throw SolverError(msg.str());
        }
        const Eigen::VectorXd q = apply(p);
        const double pq = p.dot(q);
        if (!(pq > 0.0)) throw SolverError("conjugate gradient: system is not positive definite");
        const double alpha = rr / pq;
        xc += alpha * p;
        r -= alpha * q;
        const double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
      }
      x.col(c) = xc;
    }
    return x;
  }

  const ForwardOperators& ops_;
  SolverBackend backend_;
  CgOptions cg_;
  double lambda_ = 0.0;
  double rho_ = 0.0;
  bool prepared_ = false;

  std::optional<Fft2d> fft_;
  std::vector<int> order_;
  std::vector<double> inv_delta_;
  std::vector<Complex> scaled_w_;
  std::vector<double> block_scale_;
  std::vector<DenseBlock> dense_;
  std::vector<int> dense_index_;
};

}  // namespace hsfuse

#endif  // HSFUSE_NORMAL_EQUATIONS_HPP

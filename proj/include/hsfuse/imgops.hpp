#ifndef HSFUSE_IMGOPS_HPP
#define HSFUSE_IMGOPS_HPP

// Linear operators of the acquisition model, applied matrix-free to the
// columns of an n x B matrix laid out on a GridShape:
//   K   cyclic blur (block circulant with circulant blocks)
//   S   decimation by d with a phase offset, S^T zero-filling interpolation
//   R   spectral response (right multiplication)
//   Dh  cyclic forward difference along x, Dv along y

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/fft.hpp"

namespace hsfuse {

/// Centered (2r+1) x (2r+1) non-negative taps summing to one.
/// taps()(r + dy, r + dx) is the weight of offset (dx, dy).
class BlurKernel {
 public:
  static constexpr double kSumTolerance = 1e-12;

  BlurKernel() : BlurKernel(Eigen::MatrixXd::Ones(1, 1)) {}

  explicit BlurKernel(Eigen::MatrixXd taps) : taps_(std::move(taps))
  {
    if (taps_.rows() != taps_.cols() || taps_.rows() % 2 == 0)
      throw ParameterError("blur kernel must have odd square support");
    if ((taps_.array() < 0.0).any()) throw ParameterError("blur kernel taps must be non-negative");
    if (!taps_.allFinite()) throw ParameterError("blur kernel taps must be finite");
    if (std::abs(taps_.sum() - 1.0) > kSumTolerance)
      throw ParameterError("blur kernel taps must sum to 1");
  }

  static BlurKernel identity() { return BlurKernel(); }

  int radius() const { return static_cast<int>(taps_.rows() / 2); }
  int support() const { return static_cast<int>(taps_.rows()); }
  const Eigen::MatrixXd& taps() const { return taps_; }
  double tap(int dx, int dy) const { return taps_(radius() + dy, radius() + dx); }

  bool is_point_symmetric() const { return taps_ == taps_.reverse(); }

 private:
  Eigen::MatrixXd taps_;
};

/// Decimation by `factor` on both axes keeping samples at phase + k * factor.
struct Decimation {
  int factor = 1;
  int phase = 0;

  Decimation() = default;
  Decimation(int f, int p = 0) : factor(f), phase(p)
  {
    if (factor < 1) throw ParameterError("decimation factor must be >= 1");
    if (phase < 0 || phase >= factor) throw ParameterError("decimation phase must lie in [0, d)");
  }

  GridShape coarse(GridShape fine) const
  {
    if (fine.width % factor != 0 || fine.height % factor != 0)
      throw DimensionError("grid " + to_string(fine) + " is not divisible by d=" +
                           std::to_string(factor));
    return {fine.width / factor, fine.height / factor};
  }
};

/// N_lambda x M_lambda spectral response; column j is MS band j's response.
class SpectralResponse {
 public:
  static constexpr double kSumTolerance = 1e-12;

  SpectralResponse() = default;
  explicit SpectralResponse(Eigen::MatrixXd r) : r_(std::move(r))
  {
    if (r_.size() == 0) throw ParameterError("spectral response is empty");
    if (!r_.allFinite() || (r_.array() < 0.0).any())
      throw ParameterError("spectral response entries must be finite and non-negative");
    for (Eigen::Index j = 0; j < r_.cols(); ++j)
      if (std::abs(r_.col(j).sum() - 1.0) > kSumTolerance)
        throw ParameterError("spectral response column " + std::to_string(j) +
                             " does not sum to 1");
  }

  /// Rescales every column to unit sum before validating.
  static SpectralResponse normalized(Eigen::MatrixXd r)
  {
    for (Eigen::Index j = 0; j < r.cols(); ++j) {
      const double s = r.col(j).sum();
      if (!(s > 0.0)) throw ParameterError("spectral response column has zero total response");
      r.col(j) /= s;
    }
    return SpectralResponse(std::move(r));
  }

  const Eigen::MatrixXd& matrix() const { return r_; }
  int hs_bands() const { return static_cast<int>(r_.rows()); }
  int ms_bands() const { return static_cast<int>(r_.cols()); }

 private:
  Eigen::MatrixXd r_;
};

/// K, S and R together describe how both observations arise from the scene.
struct DegradationModel {
  BlurKernel kernel;
  Decimation decimation;
  SpectralResponse response;
};

inline BlurKernel build_gaussian_kernel(double sigma, int radius)
{
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("gaussian sigma must be > 0");
  if (radius < 1) throw ParameterError("gaussian radius must be >= 1");
  const int s = 2 * radius + 1;
  Eigen::MatrixXd taps(s, s);
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      taps(dy + radius, dx + radius) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  taps /= taps.sum();
  // Renormalize once more so the sum is 1 to the last ulp where possible.
  taps /= taps.sum();
  return BlurKernel(std::move(taps));
}

/// Default simulation blur for decimation d: sigma = 1.7 * d / 4, radius = 2d.
inline BlurKernel default_blur_for(int d)
{
  if (d <= 1) return BlurKernel::identity();
  return build_gaussian_kernel(1.7 * d / 4.0, 2 * d);
}

namespace detail {

inline void require_rows(const Eigen::Ref<const Eigen::MatrixXd>& x, GridShape shape,
                         const char* what)
{
  if (x.rows() != shape.pixels())
    throw DimensionError(std::string(what) + ": matrix has " + std::to_string(x.rows()) +
                         " rows, grid " + to_string(shape) + " needs " +
                         std::to_string(shape.pixels()));
}

}  // namespace detail

/// Cyclic convolution with a fixed kernel on a fixed grid. Holds the kernel's
/// transfer function so repeated applications cost two FFTs per column pair.
class CyclicConvolution {
 public:
  CyclicConvolution(const BlurKernel& kernel, GridShape shape)
      : shape_(shape), fft_(std::make_shared<Fft2d>(shape)),
        transfer_(static_cast<std::size_t>(shape.pixels())), identity_(kernel.support() == 1)
  {
    if (kernel.support() > std::min(shape.width, shape.height))
      throw DimensionError("kernel support " + std::to_string(kernel.support()) +
                           " exceeds image " + to_string(shape));
    const int r = kernel.radius();
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const int x = ((dx % shape.width) + shape.width) % shape.width;
        const int y = ((dy % shape.height) + shape.height) % shape.height;
        transfer_[shape.index(x, y)] += kernel.tap(dx, dy);
      }
    fft_->forward(transfer_);
  }

  GridShape shape() const { return shape_; }
  const ComplexField& transfer() const { return transfer_; }
  const Fft2d& fft() const { return *fft_; }

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    detail::require_rows(x, shape_, "cyclic_blur");
    if (identity_) return x;  // a 1x1 kernel is exactly 1; skip the FFT round-off
    return apply_fourier_operator(x, *fft_, [this](ComplexField& f) {
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = detail::cmul(f[i], transfer_[i]);
    });
  }

  Eigen::MatrixXd apply_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    detail::require_rows(x, shape_, "cyclic_blur_adjoint");
    if (identity_) return x;
    return apply_fourier_operator(x, *fft_, [this](ComplexField& f) {
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = detail::cmul_conj(f[i], transfer_[i]);
    });
  }

 private:
  GridShape shape_;
  std::shared_ptr<Fft2d> fft_;
  ComplexField transfer_;
  bool identity_;
};

// ---- matrix-level operators ----------------------------------------------

inline Eigen::MatrixXd downsample(const Eigen::Ref<const Eigen::MatrixXd>& x, GridShape fine,
                                  Decimation s)
{
  detail::require_rows(x, fine, "downsample");
  const GridShape coarse = s.coarse(fine);
  Eigen::MatrixXd out(coarse.pixels(), x.cols());
  for (int j = 0; j < coarse.height; ++j)
    for (int i = 0; i < coarse.width; ++i)
      out.row(coarse.index(i, j)) =
          x.row(fine.index(s.phase + i * s.factor, s.phase + j * s.factor));
  return out;
}

inline Eigen::MatrixXd upsample_zeros(const Eigen::Ref<const Eigen::MatrixXd>& x, GridShape fine,
                                      Decimation s)
{
  const GridShape coarse = s.coarse(fine);
  detail::require_rows(x, coarse, "upsample_zeros");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(fine.pixels(), x.cols());
  for (int j = 0; j < coarse.height; ++j)
    for (int i = 0; i < coarse.width; ++i)
      out.row(fine.index(s.phase + i * s.factor, s.phase + j * s.factor)) =
          x.row(coarse.index(i, j));
  return out;
}

inline Eigen::MatrixXd spectral_project(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                        const SpectralResponse& r)
{
  if (x.cols() != r.hs_bands())
    throw DimensionError("spectral_project: cube has " + std::to_string(x.cols()) +
                         " bands, response expects " + std::to_string(r.hs_bands()));
  return x * r.matrix();
}

/// out(x, y) = in(x + 1 mod W, y) - in(x, y)
inline Eigen::MatrixXd diff_h(const Eigen::Ref<const Eigen::MatrixXd>& in, GridShape g)
{
  detail::require_rows(in, g, "diff_h");
  Eigen::MatrixXd out(in.rows(), in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c)
    for (int y = 0; y < g.height; ++y) {
      const int row = y * g.width;
      for (int x = 0; x + 1 < g.width; ++x) out(row + x, c) = in(row + x + 1, c) - in(row + x, c);
      out(row + g.width - 1, c) = in(row, c) - in(row + g.width - 1, c);
    }
  return out;
}

/// out(x, y) = in(x - 1 mod W, y) - in(x, y)
inline Eigen::MatrixXd diff_h_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& in, GridShape g)
{
  detail::require_rows(in, g, "diff_h_adjoint");
  Eigen::MatrixXd out(in.rows(), in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c)
    for (int y = 0; y < g.height; ++y) {
      const int row = y * g.width;
      out(row, c) = in(row + g.width - 1, c) - in(row, c);
      for (int x = 1; x < g.width; ++x) out(row + x, c) = in(row + x - 1, c) - in(row + x, c);
    }
  return out;
}

/// out(x, y) = in(x, y + 1 mod H) - in(x, y)
inline Eigen::MatrixXd diff_v(const Eigen::Ref<const Eigen::MatrixXd>& in, GridShape g)
{
  detail::require_rows(in, g, "diff_v");
  const Eigen::Index w = g.width;
  const Eigen::Index last = static_cast<Eigen::Index>(g.height - 1) * w;
  Eigen::MatrixXd out(in.rows(), in.cols());
  out.topRows(last) = in.bottomRows(last) - in.topRows(last);
  out.bottomRows(w) = in.topRows(w) - in.bottomRows(w);
  return out;
}

/// out(x, y) = in(x, y - 1 mod H) - in(x, y)
inline Eigen::MatrixXd diff_v_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& in, GridShape g)
{
  detail::require_rows(in, g, "diff_v_adjoint");
  const Eigen::Index w = g.width;
  const Eigen::Index last = static_cast<Eigen::Index>(g.height - 1) * w;
  Eigen::MatrixXd out(in.rows(), in.cols());
  out.topRows(w) = in.bottomRows(w) - in.topRows(w);
  out.bottomRows(last) = in.topRows(last) - in.bottomRows(last);
  return out;
}

/// Fourier symbols of Dh and Dv: e^{2 pi i k/N} - 1 along the respective axis.
inline std::vector<Complex> diff_h_symbol(GridShape g)
{
  std::vector<Complex> s(static_cast<std::size_t>(g.pixels()));
  for (int ky = 0; ky < g.height; ++ky)
    for (int kx = 0; kx < g.width; ++kx)
      s[g.index(kx, ky)] = std::polar(1.0, 2.0 * std::numbers::pi * kx / g.width) - 1.0;
  return s;
}

inline std::vector<Complex> diff_v_symbol(GridShape g)
{
  std::vector<Complex> s(static_cast<std::size_t>(g.pixels()));
  for (int ky = 0; ky < g.height; ++ky)
    for (int kx = 0; kx < g.width; ++kx)
      s[g.index(kx, ky)] = std::polar(1.0, 2.0 * std::numbers::pi * ky / g.height) - 1.0;
  return s;
}

// ---- cube-level operators ------------------------------------------------

inline SpectralCube cyclic_blur(const SpectralCube& cube, const BlurKernel& k)
{
  CyclicConvolution conv(k, cube.shape());
  return SpectralCube(conv.apply(cube.data()), cube.shape(), cube.band_labels());
}

inline SpectralCube cyclic_blur_adjoint(const SpectralCube& cube, const BlurKernel& k)
{
  CyclicConvolution conv(k, cube.shape());
  return SpectralCube(conv.apply_adjoint(cube.data()), cube.shape(), cube.band_labels());
}

inline SpectralCube downsample(const SpectralCube& cube, Decimation s)
{
  return SpectralCube(downsample(cube.data(), cube.shape(), s), s.coarse(cube.shape()),
                      cube.band_labels());
}

inline SpectralCube upsample_zeros(const SpectralCube& cube, Decimation s, GridShape fine)
{
  if (s.coarse(fine) != cube.shape())
    throw DimensionError("upsample_zeros: coarse grid " + to_string(cube.shape()) + " times d=" +
                         std::to_string(s.factor) + " does not give " + to_string(fine));
  return SpectralCube(upsample_zeros(cube.data(), fine, s), fine, cube.band_labels());
}

inline SpectralCube spectral_project(const SpectralCube& cube, const SpectralResponse& r)
{
  return SpectralCube(spectral_project(cube.data(), r), cube.shape());
}

inline SpectralCube diff_h(const SpectralCube& c)
{
  return SpectralCube(diff_h(c.data(), c.shape()), c.shape());
}
inline SpectralCube diff_v(const SpectralCube& c)
{
  return SpectralCube(diff_v(c.data(), c.shape()), c.shape());
}
inline SpectralCube diff_h_adjoint(const SpectralCube& c)
{
  return SpectralCube(diff_h_adjoint(c.data(), c.shape()), c.shape());
}
inline SpectralCube diff_v_adjoint(const SpectralCube& c)
{
  return SpectralCube(diff_v_adjoint(c.data(), c.shape()), c.shape());
}

}  // namespace hsfuse

#endif  // HSFUSE_IMGOPS_HPP

#ifndef HSFUSE_FFT_HPP
#define HSFUSE_FFT_HPP

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <new>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"

namespace hsfuse {

using Complex = std::complex<double>;

namespace detail {

// FFTW's planner is not thread safe; execution of an existing plan is.
inline std::mutex& fftw_planner_mutex()
{
  static std::mutex m;
  return m;
}

// Plain complex product. std::complex's operator* also handles inf/NaN
// corner cases through a slow library call, which dominates the tight loops.
inline Complex cmul(Complex a, Complex b)
{
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline Complex cmul_conj(Complex a, Complex b)  // a * conj(b)
{
  return {a.real() * b.real() + a.imag() * b.imag(), a.imag() * b.real() - a.real() * b.imag()};
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace detail

/// FFTW-aligned complex buffer of one image.
class ComplexField {
 public:
  explicit ComplexField(std::size_t n)
      : size_(n), data_(static_cast<Complex*>(fftw_malloc(sizeof(Complex) * (n == 0 ? 1 : n))))
  {
    if (!data_) throw std::bad_alloc();
    std::fill_n(data_.get(), size_, Complex{});
  }

  Complex* data() { return data_.get(); }
  const Complex* data() const { return data_.get(); }
  std::size_t size() const { return size_; }
  Complex& operator[](std::size_t i) { return data_.get()[i]; }
  const Complex& operator[](std::size_t i) const { return data_.get()[i]; }

 private:
  std::size_t size_;
  std::unique_ptr<Complex, detail::FftwFree> data_;
};

/// In-place 2-D complex DFT on the row-major (x fastest) grid.
/// forward() is unnormalized; inverse() divides by the pixel count.
class Fft2d {
 public:
  explicit Fft2d(GridShape shape) : shape_(shape)
  {
    ComplexField scratch(static_cast<std::size_t>(shape.pixels()));
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_2d(shape.height, shape.width, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_2d(shape.height, shape.width, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  Fft2d(const Fft2d&) = delete;
  Fft2d& operator=(const Fft2d&) = delete;
  Fft2d(Fft2d&& o) noexcept : shape_(o.shape_), forward_(o.forward_), inverse_(o.inverse_)
  {
    o.forward_ = nullptr;
    o.inverse_ = nullptr;
  }
  Fft2d& operator=(Fft2d&&) = delete;

  ~Fft2d()
  {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    if (forward_) fftw_destroy_plan(forward_);
    if (inverse_) fftw_destroy_plan(inverse_);
  }

  GridShape shape() const { return shape_; }

  void forward(ComplexField& f) const
  {
    auto* p = reinterpret_cast<fftw_complex*>(f.data());
    fftw_execute_dft(forward_, p, p);
  }

  void inverse(ComplexField& f) const
  {
    inverse_unnormalized(f);
    const double scale = 1.0 / static_cast<double>(shape_.pixels());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= scale;
  }

  /// Inverse transform without the 1/n factor.
  void inverse_unnormalized(ComplexField& f) const
  {
    auto* p = reinterpret_cast<fftw_complex*>(f.data());
    fftw_execute_dft(inverse_, p, p);
  }

 private:
  GridShape shape_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

/// Applies a real-to-real operator that is diagonal (or block diagonal) in the
/// Fourier domain to every column of `in`. Columns are packed two at a time as
/// a + i*b; since the operator maps real images to real images, the real and
/// imaginary parts of the result are the two outputs.
template <typename SpectralFn>
Eigen::MatrixXd apply_fourier_operator(const Eigen::Ref<const Eigen::MatrixXd>& in,
                                       const Fft2d& fft, SpectralFn&& fn)
{
  const Eigen::Index n = in.rows();
  const Eigen::Index cols = in.cols();
  Eigen::MatrixXd out(n, cols);
  ComplexField field(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < cols; c += 2) {
    const bool pair = c + 1 < cols;
    for (Eigen::Index i = 0; i < n; ++i)
      field[i] = Complex(in(i, c), pair ? in(i, c + 1) : 0.0);
    fft.forward(field);
    fn(field);
    fft.inverse_unnormalized(field);
    const double scale = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i, c) = scale * field[i].real();
    if (pair)
      for (Eigen::Index i = 0; i < n; ++i) out(i, c + 1) = scale * field[i].imag();
  }
  return out;
}

}  // namespace hsfuse

#endif  // HSFUSE_FFT_HPP

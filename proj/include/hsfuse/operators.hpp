#ifndef HSFUSE_OPERATORS_HPP
#define HSFUSE_OPERATORS_HPP

#include <memory>

#include <Eigen/Dense>

#include "hsfuse/imgops.hpp"

namespace hsfuse {

/// The spatial part of the HS acquisition (S K) on a fixed fine grid, plus the
/// difference operators used by the TV term.
class ForwardOperators {
 public:
  ForwardOperators(GridShape fine, BlurKernel kernel, Decimation decimation)
      : fine_(fine), coarse_(decimation.coarse(fine)), kernel_(std::move(kernel)),
        decimation_(decimation), blur_(std::make_shared<CyclicConvolution>(kernel_, fine)),
        identity_blur_(kernel_.support() == 1)
  {
  }

  GridShape fine() const { return fine_; }
  GridShape coarse() const { return coarse_; }
  const BlurKernel& kernel() const { return kernel_; }
  Decimation decimation() const { return decimation_; }
  const CyclicConvolution& blur() const { return *blur_; }
  bool identity_blur() const { return identity_blur_; }

  Eigen::MatrixXd blur(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    return identity_blur_ ? Eigen::MatrixXd(x) : blur_->apply(x);
  }

  Eigen::MatrixXd blur_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    return identity_blur_ ? Eigen::MatrixXd(x) : blur_->apply_adjoint(x);
  }

  /// S K x : fine -> coarse
  Eigen::MatrixXd sk(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    return downsample(blur(x), fine_, decimation_);
  }

  /// (S K)^T y : coarse -> fine
  Eigen::MatrixXd sk_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& y) const
  {
    return blur_adjoint(upsample_zeros(y, fine_, decimation_));
  }

  Eigen::MatrixXd dh(const Eigen::Ref<const Eigen::MatrixXd>& x) const { return diff_h(x, fine_); }
  Eigen::MatrixXd dv(const Eigen::Ref<const Eigen::MatrixXd>& x) const { return diff_v(x, fine_); }
  Eigen::MatrixXd dh_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    return diff_h_adjoint(x, fine_);
  }
  Eigen::MatrixXd dv_adjoint(const Eigen::Ref<const Eigen::MatrixXd>& x) const
  {
    return diff_v_adjoint(x, fine_);
  }

 private:
  GridShape fine_;
  GridShape coarse_;
  BlurKernel kernel_;
  Decimation decimation_;
  std::shared_ptr<CyclicConvolution> blur_;
  bool identity_blur_;
};

}  // namespace hsfuse

#endif  // HSFUSE_OPERATORS_HPP

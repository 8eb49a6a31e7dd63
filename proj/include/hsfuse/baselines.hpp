#ifndef HSFUSE_BASELINES_HPP
#define HSFUSE_BASELINES_HPP

// Reference feature sets the fused features are compared against.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/fusion.hpp"
#include "hsfuse/imgops.hpp"

namespace hsfuse {

/// Bilinear interpolation of a coarse cube onto the fine grid. Coarse sample j
/// sits at fine coordinate phase + j * d; outside the sample lattice the
/// nearest samples are replicated.
inline SpectralCube interpolate_bilinear(const SpectralCube& coarse, Decimation s, GridShape fine)
{
  if (s.coarse(fine) != coarse.shape())
    throw DimensionError("coarse cube " + to_string(coarse.shape()) + " does not match fine grid " +
                         to_string(fine) + " at d=" + std::to_string(s.factor));
  const GridShape cg = coarse.shape();
  auto axis = [&](int x, int extent, int& i0, int& i1, double& w) {
    const double u = static_cast<double>(x - s.phase) / s.factor;
    const double fl = std::floor(u);
    i0 = std::clamp(static_cast<int>(fl), 0, extent - 1);
    i1 = std::clamp(static_cast<int>(fl) + 1, 0, extent - 1);
    w = u - fl;
  };
  Eigen::MatrixXd out(fine.pixels(), coarse.bands());
  for (int y = 0; y < fine.height; ++y) {
    int y0, y1;
    double wy;
    axis(y, cg.height, y0, y1, wy);
    for (int x = 0; x < fine.width; ++x) {
      int x0, x1;
      double wx;
      axis(x, cg.width, x0, x1, wx);
      out.row(fine.index(x, y)) =
          (1.0 - wy) * ((1.0 - wx) * coarse.data().row(cg.index(x0, y0)) +
                        wx * coarse.data().row(cg.index(x1, y0))) +
          wy * ((1.0 - wx) * coarse.data().row(cg.index(x0, y1)) + wx * coarse.data().row(cg.index(x1, y1)));
    }
  }
  return SpectralCube(std::move(out), fine);
}

/// Column-wise z-scores (population std; constant columns are only centered).
inline Eigen::MatrixXd standardize_columns(const Eigen::Ref<const Eigen::MatrixXd>& x)
{
  Eigen::MatrixXd out = x.rowwise() - x.colwise().mean();
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double sd = std::sqrt(out.col(j).squaredNorm() / n);
    if (sd > 0.0) out.col(j) /= sd;
  }
  return out;
}

/// Stacks the standardized blocks side by side and keeps the first ne
/// principal components.
inline SpectralCube stacked_pca(const std::vector<const SpectralCube*>& blocks, int ne)
{
  if (blocks.empty()) throw ParameterError("stacked PCA needs at least one block");
  const GridShape g = blocks.front()->shape();
  Eigen::Index cols = 0;
  for (const SpectralCube* b : blocks) {
    if (b->shape() != g) throw DimensionError("stacked PCA blocks lie on different grids");
    cols += b->bands();
  }
  Eigen::MatrixXd x(g.pixels(), cols);
  Eigen::Index at = 0;
  for (const SpectralCube* b : blocks) {
    x.middleCols(at, b->bands()) = standardize_columns(b->data());
    at += b->bands();
  }
  const Eigen::MatrixXd basis = init_subspace(x, ne);
  std::vector<std::string> labels;
  for (int i = 0; i < ne; ++i) labels.push_back("pc_" + std::to_string(i + 1));
  return SpectralCube(x * basis.transpose(), g, std::move(labels));
}

}  // namespace hsfuse

#endif  // HSFUSE_BASELINES_HPP

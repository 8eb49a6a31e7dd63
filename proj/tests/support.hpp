#ifndef HSFUSE_TESTS_SUPPORT_HPP
#define HSFUSE_TESTS_SUPPORT_HPP

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/rng.hpp"

namespace hsfuse::testing {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

// Row-orthonormal rows x cols matrix from a QR of a Gaussian matrix.
inline Eigen::MatrixXd random_orthonormal_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
  const Eigen::MatrixXd g = random_matrix(cols, rows, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return (qr.householderQ() * Eigen::MatrixXd::Identity(cols, rows)).transpose();
}

// Two vertical half-planes with distinct coefficient vectors plus a mild ramp.
inline Eigen::MatrixXd two_region_coefficients(GridShape g, Eigen::Index ne)
{
  Eigen::MatrixXd c(g.pixels(), ne);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (Eigen::Index j = 0; j < ne; ++j) {
        const double level = x < g.width / 2 ? 1.0 + 0.5 * j : -0.5 + 0.25 * j;
        c(g.index(x, y), j) = level + 0.02 * y;
      }
  return c;
}

/// Materializes a linear map R^in -> R^out by applying it to basis vectors.
inline Eigen::MatrixXd materialize(
    Eigen::Index in_dim,
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& op)
{
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(in_dim, in_dim);
  return op(eye);
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace hsfuse::testing

#endif  // HSFUSE_TESTS_SUPPORT_HPP

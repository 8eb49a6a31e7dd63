#ifndef HSFUSE_MORPHOLOGY_HPP
#define HSFUSE_MORPHOLOGY_HPP

// Grayscale morphology on single bands: disk erosion/dilation with edge
// replication, reconstruction by dilation (4-connectivity), opening and closing
// by reconstruction, and the morphological profile of a multispectral cube.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"

namespace hsfuse {

/// Discrete disk {(dx, dy) : dx^2 + dy^2 <= r^2}.
class StructuringElement {
 public:
  explicit StructuringElement(int radius) : radius_(radius)
  {
    if (radius < 0) throw ParameterError("structuring element radius must be >= 0");
  }

  int radius() const { return radius_; }
  int support() const { return 2 * radius_ + 1; }

  /// Largest dx with dx^2 + dy^2 <= r^2, i.e. the half-width of row dy.
  int half_width(int dy) const
  {
    const int rem = radius_ * radius_ - dy * dy;
    if (rem < 0) return -1;
    int w = static_cast<int>(std::sqrt(static_cast<double>(rem)));
    while ((w + 1) * (w + 1) <= rem) ++w;
    while (w * w > rem) --w;
    return w;
  }

  bool contains(int dx, int dy) const { return dx * dx + dy * dy <= radius_ * radius_; }

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask() const
  {
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m(support(), support());
    for (int dy = -radius_; dy <= radius_; ++dy)
      for (int dx = -radius_; dx <= radius_; ++dx) m(dy + radius_, dx + radius_) = contains(dx, dy);
    return m;
  }

 private:
  int radius_;
};

namespace detail {

// Flat disk filter by row decomposition. Row dy of the disk is a horizontal
// segment of half-width w(dy); the running 1-D filter of half-width w is grown
// from w - 1 by one three-point step, so the total cost is O(n * r).
template <typename Pick>
Band disk_filter(const Eigen::Ref<const Band>& in, const StructuringElement& se, Pick pick)
{
  const int h = static_cast<int>(in.rows());
  const int w = static_cast<int>(in.cols());
  const int r = se.radius();
  if (se.support() > std::min(w, h))
    throw DimensionError("structuring element of radius " + std::to_string(r) +
                         " does not fit a " + std::to_string(w) + "x" + std::to_string(h) +
                         " image");

  std::vector<std::vector<int>> rows_by_width(static_cast<std::size_t>(r + 1));
  for (int dy = -r; dy <= r; ++dy) rows_by_width[se.half_width(dy)].push_back(dy);

  Band out = in;
  Band line = in;
  Band next(h, w);
  for (int hw = 0; hw <= r; ++hw) {
    if (hw > 0) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double a = line(y, std::max(x - 1, 0));
          const double b = line(y, std::min(x + 1, w - 1));
          next(y, x) = pick(pick(a, b), line(y, x));
        }
      line.swap(next);
    }
    for (int dy : rows_by_width[hw])
      for (int y = 0; y < h; ++y) {
        const int src = std::clamp(y + dy, 0, h - 1);
        for (int x = 0; x < w; ++x) out(y, x) = pick(out(y, x), line(src, x));
      }
  }
  return out;
}

inline double pick_min(double a, double b) { return b < a ? b : a; }
inline double pick_max(double a, double b) { return b > a ? b : a; }

}  // namespace detail

inline Band erode(const Eigen::Ref<const Band>& band, const StructuringElement& se)
{
  return detail::disk_filter(band, se, detail::pick_min);
}

inline Band dilate(const Eigen::Ref<const Band>& band, const StructuringElement& se)
{
  return detail::disk_filter(band, se, detail::pick_max);
}

/// Grayscale reconstruction by dilation of `marker` under `mask` with
/// 4-connectivity. Uses the raster / anti-raster sweep followed by FIFO
/// propagation; the result is the unique fixpoint of iterated geodesic dilation.
inline Band reconstruct_by_dilation(const Eigen::Ref<const Band>& marker,
                                    const Eigen::Ref<const Band>& mask)
{
  if (marker.rows() != mask.rows() || marker.cols() != mask.cols())
    throw DimensionError("reconstruction: marker and mask shapes differ");
  if ((marker > mask).any())
    throw PreconditionError("reconstruction: marker exceeds mask");

  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Band j = marker;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = j(y, x);
      if (x > 0) v = std::max(v, j(y, x - 1));
      if (y > 0) v = std::max(v, j(y - 1, x));
      j(y, x) = std::min(v, mask(y, x));
    }

  std::deque<int> queue;
  for (int y = h - 1; y >= 0; --y)
    for (int x = w - 1; x >= 0; --x) {
      double v = j(y, x);
      if (x + 1 < w) v = std::max(v, j(y, x + 1));
      if (y + 1 < h) v = std::max(v, j(y + 1, x));
      v = std::min(v, mask(y, x));
      j(y, x) = v;
      const bool right = x + 1 < w && j(y, x + 1) < v && j(y, x + 1) < mask(y, x + 1);
      const bool down = y + 1 < h && j(y + 1, x) < v && j(y + 1, x) < mask(y + 1, x);
      if (right || down) queue.push_back(y * w + x);
    }

  while (!queue.empty()) {
    const int p = queue.front();
    queue.pop_front();
    const int py = p / w;
    const int px = p % w;
    const double v = j(py, px);
    const int nx[4] = {px - 1, px + 1, px, px};
    const int ny[4] = {py, py, py - 1, py + 1};
    for (int k = 0; k < 4; ++k) {
      if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
      double& q = j(ny[k], nx[k]);
      const double lim = mask(ny[k], nx[k]);
      if (q < v && q != lim) {
        q = std::min(v, lim);
        queue.push_back(ny[k] * w + nx[k]);
      }
    }
  }
  return j;
}

/// psi: reconstruction by dilation of the eroded band under the band.
inline Band opening_by_reconstruction(const Eigen::Ref<const Band>& band,
                                      const StructuringElement& se)
{
  return reconstruct_by_dilation(erode(band, se), band);
}

/// phi: the dual of psi under negation, phi(f) = -psi(-f). Negation is exact,
/// so this equals reconstruction by erosion of dilate(f) over f.
inline Band closing_by_reconstruction(const Eigen::Ref<const Band>& band,
                                      const StructuringElement& se)
{
  const Band neg = -band;
  return -opening_by_reconstruction(neg, se);
}

/// Y_mp = [Y_1 ... Y_M], Y_i = [psi_p(y_i) ... psi_1(y_i)  y_i  phi_1(y_i) ... phi_p(y_i)].
struct MorphProfile {
  Eigen::MatrixXd data;
  int p = 0;
  std::vector<int> radii;
  int source_bands = 0;

  int columns_per_band() const { return 2 * p + 1; }
  int column_of_opening(int band, int level) const { return band * columns_per_band() + p - level; }
  int column_of_source(int band) const { return band * columns_per_band() + p; }
  int column_of_closing(int band, int level) const
  {
    return band * columns_per_band() + p + level;
  }
};

inline void validate_radii(const std::vector<int>& radii)
{
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (radii[i] <= 0) throw ParameterError("profile radii must be positive");
    if (i > 0 && radii[i] <= radii[i - 1])
      throw ParameterError("profile radii must be strictly increasing");
  }
}

inline MorphProfile build_morphological_profile(const SpectralCube& ms,
                                                const std::vector<int>& radii)
{
  validate_radii(radii);
  if (!radii.empty() && 2 * radii.back() + 1 > std::min(ms.width(), ms.height()))
    throw DimensionError("largest profile radius " + std::to_string(radii.back()) +
                         " does not fit image " + to_string(ms.shape()));

  MorphProfile mp;
  mp.p = static_cast<int>(radii.size());
  mp.radii = radii;
  mp.source_bands = ms.bands();
  mp.data.resize(ms.pixels(), static_cast<Eigen::Index>(mp.columns_per_band()) * ms.bands());

  auto put = [&](int col, const Band& img) {
    mp.data.col(col) = Eigen::Map<const Eigen::VectorXd>(img.data(), img.size());
  };
  for (int b = 0; b < ms.bands(); ++b) {
    const Band f = ms.band(b);
    const Band neg = -f;
    mp.data.col(mp.column_of_source(b)) = ms.data().col(b);
    for (int level = 1; level <= mp.p; ++level) {
      const StructuringElement se(radii[level - 1]);
      put(mp.column_of_opening(b, level), opening_by_reconstruction(f, se));
      put(mp.column_of_closing(b, level), Band(-opening_by_reconstruction(neg, se)));
    }
  }
  return mp;
}

/// The reference radii [10 20 50 100 200] rescaled to an image of the given
/// width (max(1, round(r * width / 256))), clamped so the disk fits inside the
/// smaller image side, with duplicates created by the clamp removed.
inline std::vector<int> default_profile_radii(GridShape shape)
{
  static constexpr int kReference[] = {10, 20, 50, 100, 200};
  const int fit = (std::min(shape.width, shape.height) - 1) / 2;
  std::vector<int> radii;
  for (int r : kReference) {
    int scaled = std::max(1, static_cast<int>(std::lround(r * shape.width / 256.0)));
    scaled = std::min(scaled, fit);
    if (scaled >= 1 && (radii.empty() || scaled > radii.back())) radii.push_back(scaled);
  }
  return radii;
}

}  // namespace hsfuse

#endif  // HSFUSE_MORPHOLOGY_HPP

#ifndef HSFUSE_CUBE_HPP
#define HSFUSE_CUBE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "hsfuse/error.hpp"

namespace hsfuse {

/// A single band viewed as a height x width image. Storage is row-major so that
/// pixel (x, y) lives at index y * width + x, the vectorization used everywhere.
using Band = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridShape {
  int width = 0;
  int height = 0;

  int pixels() const { return width * height; }
  int index(int x, int y) const { return y * width + x; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline std::string to_string(const GridShape& s)
{
  return std::to_string(s.width) + "x" + std::to_string(s.height);
}

/// n-pixel x B-band matrix with its spatial grid. Row i is pixel i, column j is band j.
class SpectralCube {
 public:
  SpectralCube() = default;

  SpectralCube(Eigen::MatrixXd data, GridShape shape, std::vector<std::string> band_labels = {})
      : data_(std::move(data)), shape_(shape), band_labels_(std::move(band_labels))
  {
    if (shape_.width <= 0 || shape_.height <= 0)
      throw DimensionError("cube grid must be positive, got " + to_string(shape_));
    if (data_.rows() != shape_.pixels())
      throw DimensionError("cube has " + std::to_string(data_.rows()) + " rows but grid " +
                           to_string(shape_) + " needs " + std::to_string(shape_.pixels()));
    if (!band_labels_.empty() && static_cast<Eigen::Index>(band_labels_.size()) != data_.cols())
      throw DimensionError("band label count does not match band count");
  }

  static SpectralCube zeros(GridShape shape, int bands)
  {
    return SpectralCube(Eigen::MatrixXd::Zero(shape.pixels(), bands), shape);
  }

  const Eigen::MatrixXd& data() const { return data_; }
  Eigen::MatrixXd& data() { return data_; }
  GridShape shape() const { return shape_; }
  int width() const { return shape_.width; }
  int height() const { return shape_.height; }
  int pixels() const { return static_cast<int>(data_.rows()); }
  int bands() const { return static_cast<int>(data_.cols()); }
  const std::vector<std::string>& band_labels() const { return band_labels_; }
  void set_band_labels(std::vector<std::string> labels)
  {
    if (!labels.empty() && static_cast<int>(labels.size()) != bands())
      throw DimensionError("band label count does not match band count");
    band_labels_ = std::move(labels);
  }

  Eigen::Map<const Band> band(int j) const
  {
    return Eigen::Map<const Band>(data_.col(j).data(), shape_.height, shape_.width);
  }
  Eigen::Map<Band> band(int j)
  {
    return Eigen::Map<Band>(data_.col(j).data(), shape_.height, shape_.width);
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Eigen::MatrixXd data_;
  GridShape shape_;
  std::vector<std::string> band_labels_;
};

/// Per-pixel class labels. 0 is reserved for "unlabeled"; classes are 1..L.
struct LabelMap {
  static constexpr int kUnlabeled = 0;

  GridShape shape;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(GridShape s, std::vector<int> l) : shape(s), labels(std::move(l))
  {
    if (static_cast<int>(labels.size()) != shape.pixels())
      throw DimensionError("label map size does not match grid " + to_string(shape));
    for (int v : labels)
      if (v < 0) throw ParameterError("negative class label " + std::to_string(v));
  }
  explicit LabelMap(GridShape s) : LabelMap(s, std::vector<int>(s.pixels(), kUnlabeled)) {}

  int size() const { return static_cast<int>(labels.size()); }
  int n_classes() const
  {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  }
  int operator[](int i) const { return labels[i]; }
  int& operator[](int i) { return labels[i]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Boolean pixel selection (training or test pixels).
using PixelMask = std::vector<bool>;

}  // namespace hsfuse

#endif  // HSFUSE_CUBE_HPP

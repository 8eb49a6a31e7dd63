#ifndef HSFUSE_EVAL_HPP
#define HSFUSE_EVAL_HPP

// Pixel classification of feature cubes and the accuracy metrics (overall
// accuracy, average accuracy, Cohen's kappa) averaged over random trials.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/rng.hpp"

namespace hsfuse {

struct TrainTestSplit {
  PixelMask train;
  PixelMask test;
};

/// Draws per_class training pixels per class uniformly without replacement;
/// every other labeled pixel is a test pixel. Classes are visited in label
/// order and each class's pixels in raster order, all from one Rng(seed).
inline TrainTestSplit sample_training(const LabelMap& truth, int per_class, std::uint64_t seed)
{
  if (per_class < 1) throw ParameterError("per_class must be >= 1");
  const int l = truth.n_classes();
  if (l < 1) throw ParameterError("label map has no labeled pixels");
  std::vector<std::vector<int>> members(static_cast<std::size_t>(l));
  for (int i = 0; i < truth.size(); ++i)
    if (truth[i] != LabelMap::kUnlabeled) members[truth[i] - 1].push_back(i);

  TrainTestSplit split{PixelMask(truth.size(), false), PixelMask(truth.size(), false)};
  Rng rng(seed);
  for (int c = 0; c < l; ++c) {
    auto& idx = members[c];
    const int count = static_cast<int>(idx.size());
    if (count <= per_class)
      throw ParameterError("class " + std::to_string(c + 1) + " has " + std::to_string(count) +
                           " labeled pixels; " + std::to_string(per_class) +
                           " training pixels per class would leave no test pixels");
    rng.partial_shuffle(idx, static_cast<std::size_t>(per_class));
    for (int k = 0; k < count; ++k) (k < per_class ? split.train : split.test)[idx[k]] = true;
  }
  return split;
}

enum class ClassifierKind { kernel_poly3, nearest_neighbor };

inline const char* to_string(ClassifierKind k)
{
  return k == ClassifierKind::kernel_poly3 ? "kernel-poly3" : "nearest-neighbor";
}

inline ClassifierKind parse_classifier(const std::string& s)
{
  if (s == "kernel-poly3") return ClassifierKind::kernel_poly3;
  if (s == "nearest-neighbor") return ClassifierKind::nearest_neighbor;
  throw ParameterError("unknown classifier '" + s + "' (expected kernel-poly3 or nearest-neighbor)");
}

struct ClassifierOptions {
  ClassifierKind kind = ClassifierKind::kernel_poly3;
  double ridge = 1e-3;      // relative to the mean kernel diagonal
  int max_ridge_decades = 8;
};

struct ClassifierModel {
  ClassifierKind kind = ClassifierKind::kernel_poly3;
  int n_classes = 0;
  Eigen::RowVectorXd mean;       // train-set standardization
  Eigen::RowVectorXd scale;
  Eigen::MatrixXd train_x;       // standardized training features
  std::vector<int> train_labels;
  Eigen::MatrixXd alpha;         // n_train x L dual weights (kernel ridge)
  double ridge = 0.0;            // absolute ridge finally used
};

namespace detail {

inline Eigen::MatrixXd poly3_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  Eigen::MatrixXd k = a * b.transpose();
  k.array() += 1.0;
  return k.array().cube().matrix();
}

inline std::vector<int> masked_rows(const PixelMask& mask)
{
  std::vector<int> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(static_cast<int>(i));
  return rows;
}

// argmax with ties going to the lowest index
inline int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& v)
{
  int best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace detail

/// Standardizes with train-set statistics, then fits either one-vs-rest kernel
/// ridge regression with k(x, z) = (1 + x^T z)^3 on +-1 targets, or stores the
/// training set for 1-nearest-neighbor. A singular kernel system raises the
/// ridge tenfold, up to max_ridge_decades times.
inline ClassifierModel train_classifier(const SpectralCube& features, const LabelMap& labels,
                                        const PixelMask& train_mask, const ClassifierOptions& opt = {})
{
  if (features.shape() != labels.shape)
    throw DimensionError("features " + to_string(features.shape()) + " and labels " +
                         to_string(labels.shape) + " are on different grids");
  if (static_cast<int>(train_mask.size()) != labels.size())
    throw DimensionError("training mask size does not match the label map");
  if (!features.all_finite()) throw ParameterError("features contain NaN or Inf");

  const std::vector<int> rows = detail::masked_rows(train_mask);
  if (rows.empty()) throw ParameterError("empty training set");
  ClassifierModel m;
  m.kind = opt.kind;
  m.n_classes = 0;
  for (int r : rows) {
    if (labels[r] == LabelMap::kUnlabeled) throw ParameterError("training pixel without a label");
    m.n_classes = std::max(m.n_classes, labels[r]);
    m.train_labels.push_back(labels[r]);
  }
  std::vector<int> per_class(static_cast<std::size_t>(m.n_classes), 0);
  for (int c : m.train_labels) ++per_class[c - 1];
  for (int c = 0; c < m.n_classes; ++c)
    if (per_class[c] == 0)
      throw ParameterError("class " + std::to_string(c + 1) + " has no training samples");

  const Eigen::Index nt = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(nt, features.bands());
  for (Eigen::Index i = 0; i < nt; ++i) x.row(i) = features.data().row(rows[i]);
  m.mean = x.colwise().mean();
  x.rowwise() -= m.mean;
  m.scale = (x.colwise().squaredNorm() / static_cast<double>(nt)).cwiseSqrt();
  for (Eigen::Index j = 0; j < m.scale.size(); ++j)
    if (!(m.scale[j] > 0.0)) m.scale[j] = 1.0;
  x.array().rowwise() /= m.scale.array();
  m.train_x = std::move(x);
  if (opt.kind == ClassifierKind::nearest_neighbor) return m;

  const Eigen::MatrixXd k = detail::poly3_kernel(m.train_x, m.train_x);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Constant(nt, m.n_classes, -1.0);
  for (Eigen::Index i = 0; i < nt; ++i) targets(i, m.train_labels[i] - 1) = 1.0;

  if (!(opt.ridge >= 0.0)) throw ParameterError("ridge must be >= 0");
  const double diag = k.diagonal().mean();
  double ridge = opt.ridge * diag;
  // a zero ridge escalates from 1e-12 of the diagonal
  for (int attempt = 0; attempt <= opt.max_ridge_decades;
       ++attempt, ridge = ridge > 0.0 ? ridge * 10.0 : 1e-12 * diag) {
    Eigen::MatrixXd reg = k;
    reg.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
    Eigen::MatrixXd alpha = ldlt.solve(targets);
    if (!alpha.allFinite() || (reg * alpha - targets).norm() > 1e-6 * targets.norm()) continue;
    m.alpha = std::move(alpha);
    m.ridge = ridge;
    return m;
  }
  throw SolverError("kernel system stayed singular after raising the ridge " +
                    std::to_string(opt.max_ridge_decades) + " decades");
}

/// Class scores (n x L) for every pixel; predictions are their row-wise argmax.
inline Eigen::MatrixXd class_scores(const ClassifierModel& m, const SpectralCube& features)
{
  if (features.bands() != m.train_x.cols())
    throw DimensionError("feature cube has " + std::to_string(features.bands()) +
                         " bands, classifier expects " + std::to_string(m.train_x.cols()));
  const Eigen::Index n = features.pixels();
  Eigen::MatrixXd scores(n, m.n_classes);
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    Eigen::MatrixXd x = features.data().middleRows(start, len);
    x.rowwise() -= m.mean;
    x.array().rowwise() /= m.scale.array();
    if (m.kind == ClassifierKind::kernel_poly3) {
      scores.middleRows(start, len) = detail::poly3_kernel(x, m.train_x) * m.alpha;
      continue;
    }
    // 1-NN: score 1 for the nearest training sample's class (first one on ties)
    const Eigen::VectorXd tn = m.train_x.rowwise().squaredNorm();
    const Eigen::MatrixXd cross = x * m.train_x.transpose();
    scores.middleRows(start, len).setZero();
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m.train_x.rows(); ++j) {
        const double dist = tn[j] - 2.0 * cross(i, j);
        if (dist < best_d) {
          best_d = dist;
          best = j;
        }
      }
      scores(start + i, m.train_labels[best] - 1) = 1.0;
    }
  }
  return scores;
}

inline LabelMap predict(const ClassifierModel& m, const SpectralCube& features)
{
  const Eigen::MatrixXd scores = class_scores(m, features);
  LabelMap out(features.shape());
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    out[static_cast<int>(i)] = 1 + detail::argmax_lowest(scores.row(i));
  return out;
}

// ---- metrics ---------------------------------------------------------------------

using ConfusionMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;

struct ClassificationMetrics {
  ConfusionMatrix confusion;          // rows: truth, columns: prediction
  Eigen::VectorXd per_class_accuracy; // recall per class; NaN for classes absent from the test set
  double overall_accuracy = 0.0;
  double average_accuracy = 0.0;
  double kappa = 0.0;
  bool kappa_degenerate = false;      // chance agreement p_e = 1
};

/// OA, AA and kappa from a confusion matrix.
inline ClassificationMetrics metrics_from_confusion(ConfusionMatrix confusion)
{
  if (confusion.rows() != confusion.cols() || confusion.rows() < 1)
    throw DimensionError("confusion matrix must be square and non-empty");
  ClassificationMetrics m;
  const Eigen::Index l = confusion.rows();
  const double total = static_cast<double>(confusion.sum());
  if (!(total > 0.0)) throw ParameterError("confusion matrix is empty");
  m.per_class_accuracy.resize(l);
  double aa_sum = 0.0;
  int aa_count = 0;
  double chance = 0.0;
  for (Eigen::Index c = 0; c < l; ++c) {
    const double row = static_cast<double>(confusion.row(c).sum());
    const double col = static_cast<double>(confusion.col(c).sum());
    chance += (row / total) * (col / total);
    if (row > 0.0) {
      m.per_class_accuracy[c] = static_cast<double>(confusion(c, c)) / row;
      aa_sum += m.per_class_accuracy[c];
      ++aa_count;
    } else {
      m.per_class_accuracy[c] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  m.overall_accuracy = static_cast<double>(confusion.trace()) / total;
  m.average_accuracy = aa_sum / aa_count;
  if (chance >= 1.0) {
    m.kappa = 0.0;
    m.kappa_degenerate = true;
  } else {
    m.kappa = (m.overall_accuracy - chance) / (1.0 - chance);
  }
  m.confusion = std::move(confusion);
  return m;
}

/// Metrics over the test pixels. The class count is the largest label seen in
/// truth or predictions over the test set.
inline ClassificationMetrics compute_metrics(const LabelMap& pred, const LabelMap& truth,
                                             const PixelMask& test_mask, int n_classes = 0)
{
  if (pred.shape != truth.shape) throw DimensionError("prediction and truth grids differ");
  if (static_cast<int>(test_mask.size()) != truth.size())
    throw DimensionError("test mask size does not match the label map");
  int l = n_classes;
  bool any = false;
  for (int i = 0; i < truth.size(); ++i)
    if (test_mask[i]) {
      if (truth[i] == LabelMap::kUnlabeled)
        throw ParameterError("test pixel " + std::to_string(i) + " is unlabeled");
      if (pred[i] == LabelMap::kUnlabeled)
        throw ParameterError("test pixel " + std::to_string(i) + " has no prediction");
      l = std::max({l, truth[i], pred[i]});
      any = true;
    }
  if (!any) throw ParameterError("empty test mask");
  ConfusionMatrix confusion = ConfusionMatrix::Zero(l, l);
  for (int i = 0; i < truth.size(); ++i)
    if (test_mask[i]) ++confusion(truth[i] - 1, pred[i] - 1);
  return metrics_from_confusion(std::move(confusion));
}

struct MetricStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single trial
};

inline MetricStat summarize(const std::vector<double>& v)
{
  MetricStat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct MetricsReport {
  std::vector<ClassificationMetrics> trials;
  MetricStat overall_accuracy;
  MetricStat average_accuracy;
  MetricStat kappa;
  std::vector<MetricStat> per_class_accuracy;

  int n_trials() const { return static_cast<int>(trials.size()); }
  int n_classes() const { return trials.empty() ? 0 : static_cast<int>(trials[0].confusion.rows()); }
};

inline MetricsReport make_report(std::vector<ClassificationMetrics> trials)
{
  if (trials.empty()) throw ParameterError("a report needs at least one trial");
  MetricsReport r;
  const Eigen::Index l = trials[0].confusion.rows();
  std::vector<double> oa, aa, kappa;
  std::vector<std::vector<double>> per(static_cast<std::size_t>(l));
  for (const auto& t : trials) {
    if (t.confusion.rows() != l) throw DimensionError("trials disagree on the class count");
    oa.push_back(t.overall_accuracy);
    aa.push_back(t.average_accuracy);
    kappa.push_back(t.kappa);
    for (Eigen::Index c = 0; c < l; ++c)
      if (!std::isnan(t.per_class_accuracy[c])) per[c].push_back(t.per_class_accuracy[c]);
  }
  r.overall_accuracy = summarize(oa);
  r.average_accuracy = summarize(aa);
  r.kappa = summarize(kappa);
  for (const auto& p : per)
    r.per_class_accuracy.push_back(p.empty() ? MetricStat{std::numeric_limits<double>::quiet_NaN(), 0.0}
                                             : summarize(p));
  r.trials = std::move(trials);
  return r;
}

using TrialFunction = std::function<ClassificationMetrics(int trial, std::uint64_t seed)>;

/// Runs trial t with seed base_seed + t, on up to `jobs` threads. Results are
/// collected in trial order, so the report does not depend on `jobs`.
inline MetricsReport run_trials(int n_trials, std::uint64_t base_seed, const TrialFunction& trial,
                                int jobs = 1)
{
  if (n_trials < 1) throw ParameterError("n_trials must be >= 1");
  if (jobs < 1) throw ParameterError("jobs must be >= 1");
  std::vector<ClassificationMetrics> results(static_cast<std::size_t>(n_trials));
  if (jobs == 1) {
    for (int t = 0; t < n_trials; ++t) results[t] = trial(t, base_seed + static_cast<std::uint64_t>(t));
    return make_report(std::move(results));
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_trials));
  std::vector<std::thread> workers;
  const int n_workers = std::min(jobs, n_trials);
  for (int w = 0; w < n_workers; ++w)
    workers.emplace_back([&, w] {
      for (int t = w; t < n_trials; t += n_workers) {
        try {
          results[t] = trial(t, base_seed + static_cast<std::uint64_t>(t));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      }
    });
  for (auto& th : workers) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return make_report(std::move(results));
}

}  // namespace hsfuse

#endif  // HSFUSE_EVAL_HPP

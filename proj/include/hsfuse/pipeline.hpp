#ifndef HSFUSE_PIPELINE_HPP
#define HSFUSE_PIPELINE_HPP

// End-to-end experiment: simulate -> features (fused or a baseline) -> classify,
// repeated over trials that redraw the noise and the training pixels.

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hsfuse/baselines.hpp"
#include "hsfuse/eval.hpp"
#include "hsfuse/fusion.hpp"
#include "hsfuse/morphology.hpp"
#include "hsfuse/operators.hpp"
#include "hsfuse/synth.hpp"

namespace hsfuse {

enum class FeatureKind { fused, hs_interp, ms_raw, stacked_pca, profile };

inline const char* to_string(FeatureKind k)
{
  switch (k) {
    case FeatureKind::fused: return "fused";
    case FeatureKind::hs_interp: return "hs-interp";
    case FeatureKind::ms_raw: return "ms-raw";
    case FeatureKind::stacked_pca: return "stacked-pca";
    case FeatureKind::profile: return "profile";
  }
  return "?";
}

inline FeatureKind parse_feature_kind(const std::string& s)
{
  for (FeatureKind k : {FeatureKind::fused, FeatureKind::hs_interp, FeatureKind::ms_raw,
                        FeatureKind::stacked_pca, FeatureKind::profile})
    if (s == to_string(k)) return k;
  throw ParameterError("unknown feature set '" + s + "'");
}

struct ExperimentSettings {
  SimulationSettings sim;
  std::optional<std::vector<int>> radii;  // unset: default radii for the MS grid
  // lambda balances the HS and profile data terms at the default sizes
  FusionConfig fusion{.lambda = 0.1, .eps_ao = 1e-3, .eps_admm = 1e-3, .rho_adapt = true};
  int per_class = 50;
  ClassifierOptions classifier;
};

inline std::vector<int> effective_radii(const ExperimentSettings& s, GridShape fine)
{
  return s.radii ? *s.radii : default_profile_radii(fine);
}

inline SpectralCube profile_cube(const SpectralCube& y_m, const std::vector<int>& radii)
{
  MorphProfile mp = build_morphological_profile(y_m, radii);
  return SpectralCube(std::move(mp.data), y_m.shape());
}

/// Runs the fusion of an HS cube against the profile of its MS image.
inline FusionResult fuse_pair(const SpectralCube& y_h, const SpectralCube& profile, const BlurKernel& kernel,
                              Decimation decimation, const FusionConfig& cfg,
                              const AoObserver& observer = {})
{
  const GridShape fine = profile.shape();
  if (decimation.coarse(fine) != y_h.shape())
    throw ParameterError("HS grid " + to_string(y_h.shape()) + " and MS grid " + to_string(fine) +
                         " are inconsistent with d=" + std::to_string(decimation.factor));
  const ForwardOperators ops(fine, kernel, decimation);
  return ao_fuse(y_h.data(), profile.data(), ops, cfg, observer);
}

inline FusionResult fuse_pair(const SpectralCube& y_h, const SpectralCube& profile,
                              const DegradationModel& model, const FusionConfig& cfg,
                              const AoObserver& observer = {})
{
  return fuse_pair(y_h, profile, model.kernel, model.decimation, cfg, observer);
}

/// Feature cube of the given kind on the fine grid.
inline SpectralCube compute_features(FeatureKind kind, const SimulatedPair& pair,
                                     const ExperimentSettings& s)
{
  const GridShape fine = pair.y_m.shape();
  switch (kind) {
    case FeatureKind::ms_raw: return pair.y_m;
    case FeatureKind::hs_interp: return interpolate_bilinear(pair.y_h, pair.model.decimation, fine);
    case FeatureKind::profile: return profile_cube(pair.y_m, effective_radii(s, fine));
    case FeatureKind::stacked_pca: {
      const SpectralCube hs = interpolate_bilinear(pair.y_h, pair.model.decimation, fine);
      return stacked_pca({&hs, &pair.y_m}, s.fusion.ne);
    }
    case FeatureKind::fused: {
      const SpectralCube mp = profile_cube(pair.y_m, effective_radii(s, fine));
      return fused_features(fuse_pair(pair.y_h, mp, pair.model, s.fusion), fine);
    }
  }
  throw ParameterError("unknown feature kind");
}

/// Training-pixel seed of a trial; noise uses other sub-streams of the same seed.
inline std::uint64_t training_seed(std::uint64_t trial_seed) { return Rng::derive_seed(trial_seed, 3); }

inline ClassificationMetrics classify_once(const SpectralCube& features, const LabelMap& truth,
                                           int per_class, std::uint64_t trial_seed,
                                           const ClassifierOptions& opt, LabelMap* prediction = nullptr)
{
  const TrainTestSplit split = sample_training(truth, per_class, training_seed(trial_seed));
  const ClassifierModel model = train_classifier(features, truth, split.train, opt);
  LabelMap pred = predict(model, features);
  ClassificationMetrics m = compute_metrics(pred, truth, split.test, truth.n_classes());
  if (prediction) *prediction = std::move(pred);
  return m;
}

/// Trial t simulates the scene with noise seed base_seed + t, computes every
/// requested feature set and classifies each with the same training pixels.
inline std::map<FeatureKind, MetricsReport> run_comparison(const Scene& scene,
                                                           const ExperimentSettings& s,
                                                           const std::vector<FeatureKind>& kinds,
                                                           int n_trials, std::uint64_t base_seed,
                                                           int jobs = 1)
{
  if (kinds.empty()) throw ParameterError("no feature sets requested");
  std::vector<std::vector<ClassificationMetrics>> per_trial(static_cast<std::size_t>(n_trials));
  // run_trials only carries one metrics record per trial; the others ride along here
  run_trials(
      n_trials, base_seed,
      [&](int t, std::uint64_t seed) {
        const SimulatedPair pair = simulate(scene, s.sim, seed);
        std::vector<ClassificationMetrics> out;
        for (FeatureKind k : kinds)
          out.push_back(classify_once(compute_features(k, pair, s), pair.truth, s.per_class, seed,
                                      s.classifier));
        per_trial[t] = out;
        return out.front();
      },
      jobs);
  std::map<FeatureKind, MetricsReport> reports;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    std::vector<ClassificationMetrics> trials;
    for (const auto& t : per_trial) trials.push_back(t[k]);
    reports[kinds[k]] = make_report(std::move(trials));
  }
  return reports;
}

struct SweepCell {
  int row = 0;  // index into the N_e grid
  int col = 0;  // index into the lambda_TV grid
  int ne = 0;
  double lambda_tv = 0.0;
  MetricsReport report;
};

using SweepCallback = std::function<void(const SweepCell&)>;

/// Classifies fused features for every (N_e, lambda_TV) pair. All cells share
/// the scene and the trial seeds, so a cell's result depends only on its grid
/// position. Cells run on up to `jobs` threads; on_cell is called once per
/// finished cell, one call at a time, in completion order.
inline std::vector<SweepCell> run_sweep(const Scene& scene, const ExperimentSettings& s,
                                        const std::vector<int>& ne_grid,
                                        const std::vector<double>& tv_grid, int n_trials,
                                        std::uint64_t base_seed, int jobs = 1,
                                        const SweepCallback& on_cell = {})
{
  if (ne_grid.empty() || tv_grid.empty()) throw ParameterError("sweep grid is empty");
  if (jobs < 1) throw ParameterError("jobs must be >= 1");
  const int cols = static_cast<int>(tv_grid.size());
  const int n_cells = static_cast<int>(ne_grid.size()) * cols;
  std::vector<SweepCell> cells(static_cast<std::size_t>(n_cells));
  for (int k = 0; k < n_cells; ++k) {
    ExperimentSettings cs = s;
    cs.fusion.ne = ne_grid[k / cols];
    cs.fusion.lambda_tv = tv_grid[k % cols];
    cs.fusion.validate();
    cells[k] = SweepCell{k / cols, k % cols, cs.fusion.ne, cs.fusion.lambda_tv, {}};
  }

  std::mutex done;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_cells));
  auto worker = [&] {
    for (int k = next++; k < n_cells; k = next++) {
      try {
        ExperimentSettings cs = s;
        cs.fusion.ne = cells[k].ne;
        cs.fusion.lambda_tv = cells[k].lambda_tv;
        cells[k].report =
            run_comparison(scene, cs, {FeatureKind::fused}, n_trials, base_seed).at(FeatureKind::fused);
        std::lock_guard lock(done);
        if (on_cell) on_cell(cells[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(jobs, n_cells); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

}  // namespace hsfuse

#endif  // HSFUSE_PIPELINE_HPP

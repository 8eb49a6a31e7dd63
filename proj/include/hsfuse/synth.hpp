#ifndef HSFUSE_SYNTH_HPP
#define HSFUSE_SYNTH_HPP

// Synthetic scenes and Wald-protocol simulation: a labeled reference cube is
// degraded into a coarse HS image (blur + decimation) and a fine MS image
// (spectral response), each with SNR-calibrated white Gaussian noise.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/imgops.hpp"
#include "hsfuse/rng.hpp"

namespace hsfuse {

struct SceneSpec {
  int width = 256;
  int height = 256;
  int n_classes = 6;
  int n_bands = 103;
  std::uint64_t seed = 0;
  double region_scale = 32.0;          // characteristic Voronoi cell size in pixels
  double signature_smoothness = 0.04;  // width of class-specific spectral detail, fraction of band range
  double variability = 0.1;            // relative amplitude of within-class variation
  double texture = 0.2;                // largest per-pixel mixing fraction with background spectra
  std::vector<int> object_classes = {2, 6};  // classes drawn as small disks over the mosaic
  double object_radius = 4.0;          // mean disk radius in pixels
  double radiance_scale = 100.0;       // reflectance-like values times this give the stored units

  void validate() const
  {
    if (width < 1 || height < 1) throw ParameterError("scene dimensions must be positive");
    if (n_classes < 2) throw ParameterError("scene needs at least 2 classes");
    if (n_classes > width * height)
      throw ParameterError("scene has more classes (" + std::to_string(n_classes) + ") than pixels");
    if (n_bands < 1) throw ParameterError("scene needs at least 1 band");
    if (!(region_scale > 0.0)) throw ParameterError("region_scale must be > 0");
    if (!(signature_smoothness > 0.0)) throw ParameterError("signature_smoothness must be > 0");
    if (!(variability >= 0.0)) throw ParameterError("variability must be >= 0");
    if (!(texture >= 0.0 && texture < 1.0)) throw ParameterError("texture must lie in [0, 1)");
    std::vector<int> sorted = object_classes;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ParameterError("object_classes lists a class twice");
    for (int c : sorted)
      if (c < 1 || c > n_classes)
        throw ParameterError("object class " + std::to_string(c) + " is outside 1.." +
                             std::to_string(n_classes));
    if (static_cast<int>(sorted.size()) >= n_classes)
      throw ParameterError("at least one class must tile the mosaic");
    if (!(radiance_scale > 0.0) || !std::isfinite(radiance_scale))
      throw ParameterError("radiance_scale must be a positive number");
    if (!sorted.empty() && !(object_radius >= 1.0))
      throw ParameterError("object_radius must be >= 1");
  }
};

struct Scene {
  SpectralCube reference;
  LabelMap truth;
};

/// Smallest pairwise angle (degrees) between the rows of `spectra`.
inline double min_pairwise_angle_deg(const Eigen::MatrixXd& spectra)
{
  double best = 180.0;
  for (Eigen::Index a = 0; a < spectra.rows(); ++a)
    for (Eigen::Index b = a + 1; b < spectra.rows(); ++b) {
      const double denom = spectra.row(a).norm() * spectra.row(b).norm();
      const double cosine = denom > 0.0 ? spectra.row(a).dot(spectra.row(b)) / denom : 1.0;
      best = std::min(best, std::acos(std::clamp(cosine, -1.0, 1.0)) * 180.0 / std::numbers::pi);
    }
  return best;
}

/// L x B matrix of per-class mean spectra over the labeled pixels.
inline Eigen::MatrixXd class_means(const SpectralCube& cube, const LabelMap& truth)
{
  const int l = truth.n_classes();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(l, cube.bands());
  std::vector<int> counts(static_cast<std::size_t>(l), 0);
  for (int i = 0; i < truth.size(); ++i)
    if (truth[i] != LabelMap::kUnlabeled) {
      sums.row(truth[i] - 1) += cube.data().row(i);
      ++counts[truth[i] - 1];
    }
  for (int c = 0; c < l; ++c)
    if (counts[c] > 0) sums.row(c) /= counts[c];
  return sums;
}

namespace detail {

// Smooth positive curve on t in [0, 1]: a level plus three low cosines.
inline Eigen::VectorXd broad_curve(const Eigen::VectorXd& t, Rng& rng)
{
  Eigen::VectorXd out = Eigen::VectorXd::Constant(t.size(), rng.uniform(0.3, 0.7));
  for (int k = 1; k <= 3; ++k) {
    const double amp = rng.uniform(-0.15, 0.15) / k;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    out.array() += amp * (k * std::numbers::pi * t.array() + phase).cos();
  }
  return out;
}

// Narrow oscillating features (Gaussian envelope of width w, period 2w). Their
// energy sits near spectral frequency 1/(2w), which broad MS responses filter
// out almost entirely, so classes differing only here look alike to the MS sensor.
inline Eigen::VectorXd detail_curve(const Eigen::VectorXd& t, double w, Rng& rng)
{
  Eigen::VectorXd out = Eigen::VectorXd::Zero(t.size());
  for (int j = 0; j < 4; ++j) {
    const double mu = rng.uniform(0.05, 0.95);
    const double amp = rng.uniform(0.1, 0.2);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Eigen::ArrayXd z = (t.array() - mu) / w;
    out.array() += amp * (-0.5 * z.square()).exp() * (std::numbers::pi * z + phase).cos();
  }
  return out;
}

}  // namespace detail

/// Voronoi class mosaic with compact objects on top, smooth class signatures
/// and within-class variation.
///
/// Classes not listed in object_classes tile the scene: sites sit on distinct
/// pixel centers, one per region_scale^2 pixels, the first ones taking each
/// mosaic class once and the rest drawing uniformly. Object classes are disks
/// of radius 0.5..1.5 object_radius scattered over the mosaic, about n / L
/// pixels' worth per class. Classes come in pairs sharing a broad spectral
/// shape and differing in narrow features. Every region and object gets its
/// own brightness and a mild spectral perturbation, a low-frequency brightness
/// field spans the whole scene, and every pixel mixes in one of two background
/// spectra with a fraction drawn from [0, texture). Values are reflectance-like
/// (around 0.1..1) times radiance_scale. The scene is redrawn
/// (continuing the same random stream) until every class is present and all
/// class-mean spectra are at least 5 degrees apart.
inline Scene generate_scene(const SceneSpec& spec)
{
  spec.validate();
  const GridShape grid{spec.width, spec.height};
  const int n = grid.pixels();
  const int n_bands = spec.n_bands;

  std::vector<bool> is_object(static_cast<std::size_t>(spec.n_classes + 1), false);
  for (int c : spec.object_classes) is_object[c] = true;
  std::vector<int> mosaic_classes;
  for (int c = 1; c <= spec.n_classes; ++c)
    if (!is_object[c]) mosaic_classes.push_back(c);
  const int n_mosaic = static_cast<int>(mosaic_classes.size());
  const int n_regions = std::clamp(
      static_cast<int>(std::lround(static_cast<double>(n) / (spec.region_scale * spec.region_scale))),
      n_mosaic, n);
  const int objects_per_class =
      spec.object_classes.empty()
          ? 0
          : std::max(1, static_cast<int>(std::lround(n / (static_cast<double>(spec.n_classes) *
                                                           std::numbers::pi * spec.object_radius *
                                                           spec.object_radius))));
  const int n_objects = objects_per_class * static_cast<int>(spec.object_classes.size());
  const int n_sites = n_regions + n_objects;

  Eigen::VectorXd t(n_bands);
  for (int b = 0; b < n_bands; ++b) t[b] = n_bands == 1 ? 0.0 : static_cast<double>(b) / (n_bands - 1);

  Rng rng(spec.seed);
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.partial_shuffle(order, static_cast<std::size_t>(n_regions));
    std::vector<int> sx(n_regions), sy(n_regions), site_class(n_sites);
    for (int s = 0; s < n_regions; ++s) {
      sx[s] = order[s] % grid.width;
      sy[s] = order[s] / grid.width;
      site_class[s] = s < n_mosaic ? mosaic_classes[s] : mosaic_classes[rng.below(n_mosaic)];
    }

    std::vector<int> owner(static_cast<std::size_t>(n));
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x) {
        long best = std::numeric_limits<long>::max();
        int arg = 0;
        for (int s = 0; s < n_regions; ++s) {
          const long dx = x - sx[s];
          const long dy = y - sy[s];
          const long d2 = dx * dx + dy * dy;
          if (d2 < best) {
            best = d2;
            arg = s;
          }
        }
        owner[grid.index(x, y)] = arg;
      }

    // objects of the different classes interleave so none is systematically painted over
    for (int k = 0, s = n_regions; k < objects_per_class; ++k)
      for (int c : spec.object_classes) {
        const double cx = rng.uniform(0.0, grid.width);
        const double cy = rng.uniform(0.0, grid.height);
        const double r = spec.object_radius * rng.uniform(0.5, 1.5);
        site_class[s] = c;
        for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y)
          for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
            if (x < 0 || y < 0 || x >= grid.width || y >= grid.height) continue;
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r) owner[grid.index(x, y)] = s;
          }
        ++s;
      }

    const int n_groups = (spec.n_classes + 1) / 2;
    std::vector<Eigen::VectorXd> groups;
    for (int g = 0; g < n_groups; ++g) groups.push_back(detail::broad_curve(t, rng));
    Eigen::MatrixXd signatures(spec.n_classes, n_bands);
    for (int c = 0; c < spec.n_classes; ++c) {
      Eigen::VectorXd s = groups[c / 2] + detail::detail_curve(t, spec.signature_smoothness, rng);
      signatures.row(c) = s.cwiseMax(0.01).transpose();
    }

    std::vector<double> site_gain(n_sites);
    Eigen::MatrixXd site_tilt(n_sites, n_bands);
    for (int s = 0; s < n_sites; ++s) {
      site_gain[s] = std::max(0.1, 1.0 + spec.variability * rng.normal());
      const double slope = 0.5 * spec.variability * rng.normal();
      const double curve = 0.5 * spec.variability * rng.normal();
      site_tilt.row(s) = (1.0 + slope * (t.array() - 0.5) + curve * (std::numbers::pi * t.array()).sin() -
                          curve * 2.0 / std::numbers::pi)
                             .matrix()
                             .transpose();
    }

    const Eigen::VectorXd background[2] = {detail::broad_curve(t, rng), 0.3 * detail::broad_curve(t, rng)};

    double fx[4], fy[4], fphase[4];
    for (int k = 0; k < 4; ++k) {
      fx[k] = rng.uniform(-3.0, 3.0) / grid.width;
      fy[k] = rng.uniform(-3.0, 3.0) / grid.height;
      fphase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    Eigen::MatrixXd data(n, n_bands);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x) {
        double field = 0.0;
        for (int k = 0; k < 4; ++k)
          field += std::cos(2.0 * std::numbers::pi * (fx[k] * x + fy[k] * y) + fphase[k]);
        field = std::max(0.1, 1.0 + 0.125 * spec.variability * field);
        const int i = grid.index(x, y);
        const int s = owner[i];
        labels[i] = site_class[s];
        const double mix = spec.texture * rng.uniform();
        const Eigen::VectorXd& bg = background[rng.below(2)];
        data.row(i) = (spec.radiance_scale * field * site_gain[s]) *
                      ((1.0 - mix) * signatures.row(site_class[s] - 1).cwiseProduct(site_tilt.row(s)) +
                       mix * bg.transpose())
                          .cwiseMax(0.0);
      }

    std::vector<bool> present(static_cast<std::size_t>(spec.n_classes + 1), false);
    for (int v : labels) present[v] = true;
    if (std::count(present.begin() + 1, present.end(), true) != spec.n_classes) continue;
    Scene scene{SpectralCube(std::move(data), grid), LabelMap(grid, std::move(labels))};
    if (min_pairwise_angle_deg(class_means(scene.reference, scene.truth)) >= 5.0) return scene;
  }
  throw ParameterError("could not draw a scene with every class present and class signatures "
                       "at least 5 degrees apart");
}

/// Clean Wald-protocol observations: (S K Z, Z R).
inline std::pair<SpectralCube, SpectralCube> wald_degrade(const SpectralCube& reference,
                                                          const DegradationModel& model)
{
  if (model.response.hs_bands() != reference.bands())
    throw DimensionError("spectral response expects " + std::to_string(model.response.hs_bands()) +
                         " bands, reference has " + std::to_string(reference.bands()));
  SpectralCube y_h = downsample(cyclic_blur(reference, model.kernel), model.decimation);
  SpectralCube y_m = spectral_project(reference, model.response);
  return {std::move(y_h), std::move(y_m)};
}

/// 10 log10(||clean||^2 / ||noisy - clean||^2); +inf when identical.
inline double realized_snr_db(const SpectralCube& clean, const SpectralCube& noisy)
{
  const double noise = (noisy.data() - clean.data()).squaredNorm();
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(clean.data().squaredNorm() / noise);
}

/// Adds white Gaussian noise at the requested SNR. By default one sigma serves
/// the whole cube (sigma^2 = ||cube||^2 / (n B 10^(snr/10))); with per_band
/// each band is calibrated against its own energy. snr_db = +inf returns the
/// cube unchanged. Noise is drawn band by band in pixel order.
inline SpectralCube add_noise_snr(const SpectralCube& cube, double snr_db, std::uint64_t seed,
                                  bool per_band = false)
{
  if (std::isinf(snr_db) && snr_db > 0.0) return cube;
  if (!std::isfinite(snr_db)) throw ParameterError("SNR must be a finite number of dB or +inf");
  const double energy = cube.data().squaredNorm();
  if (energy == 0.0) throw ParameterError("SNR is undefined for an all-zero cube");
  const double ratio = std::pow(10.0, snr_db / 10.0);
  const double n = static_cast<double>(cube.pixels());

  std::vector<double> sigma(static_cast<std::size_t>(cube.bands()));
  for (int b = 0; b < cube.bands(); ++b) {
    if (per_band) {
      const double e = cube.data().col(b).squaredNorm();
      if (e == 0.0)
        throw ParameterError("SNR is undefined for all-zero band " + std::to_string(b));
      sigma[b] = std::sqrt(e / (n * ratio));
    } else {
      sigma[b] = std::sqrt(energy / (n * cube.bands() * ratio));
    }
  }

  SpectralCube out = cube;
  Rng rng(seed);
  for (int b = 0; b < cube.bands(); ++b)
    for (int i = 0; i < cube.pixels(); ++i) out.data()(i, b) += sigma[b] * rng.normal();
  return out;
}

/// M Gaussian responses over N HS bands with centers evenly spaced from the
/// first to the last band index and standard deviation width * spacing.
inline SpectralResponse make_ikonos_like_response(int n_hs, int n_ms, double width = 0.5)
{
  if (n_hs < 1 || n_ms < 1) throw ParameterError("band counts must be positive");
  if (n_ms > n_hs)
    throw ParameterError("MS band count " + std::to_string(n_ms) + " exceeds HS band count " +
                         std::to_string(n_hs));
  if (!(width > 0.0)) throw ParameterError("response width must be > 0");
  const double spacing = n_ms == 1 ? std::max(1.0, n_hs - 1.0) : (n_hs - 1.0) / (n_ms - 1.0);
  const double sigma = width * spacing;
  Eigen::MatrixXd r(n_hs, n_ms);
  for (int j = 0; j < n_ms; ++j) {
    const double center = n_ms == 1 ? 0.5 * (n_hs - 1.0) : j * spacing;
    for (int b = 0; b < n_hs; ++b) {
      const double z = (b - center) / sigma;
      r(b, j) = std::exp(-0.5 * z * z);
    }
  }
  return SpectralResponse::normalized(std::move(r));
}

/// Reads an N x M response from whitespace-separated text ('#' starts a
/// comment). Columns are rescaled to unit sum.
inline SpectralResponse load_spectral_response(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw IoError("cannot open spectral response file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IoError("spectral response file '" + path + "': bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("spectral response file '" + path + "': ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("spectral response file '" + path + "' is empty");
  Eigen::MatrixXd r(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) r(i, j) = rows[i][j];
  return SpectralResponse::normalized(std::move(r));
}

struct SimulationSettings {
  SceneSpec scene;
  int d = 4;
  double sigma_blur = 0.0;  // 0 selects the default blur for d
  int ms_bands = 5;
  double response_width = 0.5;
  std::optional<SpectralResponse> response;  // overrides the generated response
  double snr_h = 30.0;
  double snr_m = 40.0;
  bool per_band_snr = false;
};

struct SimulatedPair {
  SpectralCube y_h;
  SpectralCube y_m;
  LabelMap truth;
  DegradationModel model;
  SpectralCube reference;
  double realized_snr_h = 0.0;
  double realized_snr_m = 0.0;
};

inline BlurKernel simulation_blur(const SimulationSettings& s)
{
  if (s.d < 1) throw ParameterError("decimation factor must be >= 1");
  if (s.sigma_blur < 0.0 || !std::isfinite(s.sigma_blur))
    throw ParameterError("sigma_blur must be >= 0");
  return s.sigma_blur == 0.0
             ? default_blur_for(s.d)
             : build_gaussian_kernel(s.sigma_blur, std::max(1, static_cast<int>(std::ceil(3.0 * s.sigma_blur))));
}

inline DegradationModel make_degradation_model(const SimulationSettings& s)
{
  BlurKernel kernel = simulation_blur(s);
  SpectralResponse response = s.response ? *s.response
                                         : make_ikonos_like_response(s.scene.n_bands, s.ms_bands,
                                                                     s.response_width);
  return DegradationModel{std::move(kernel), Decimation(s.d), std::move(response)};
}

/// Degrades a given scene; HS and MS noise use independent sub-streams of noise_seed.
inline SimulatedPair simulate(const Scene& scene, const SimulationSettings& s, std::uint64_t noise_seed)
{
  if (scene.reference.width() % s.d != 0 || scene.reference.height() % s.d != 0)
    throw DimensionError("scene " + to_string(scene.reference.shape()) +
                         " is not divisible by d=" + std::to_string(s.d));
  SimulatedPair out;
  out.model = make_degradation_model(s);
  auto [h_clean, m_clean] = wald_degrade(scene.reference, out.model);
  out.y_h = add_noise_snr(h_clean, s.snr_h, Rng::derive_seed(noise_seed, 1), s.per_band_snr);
  out.y_m = add_noise_snr(m_clean, s.snr_m, Rng::derive_seed(noise_seed, 2), s.per_band_snr);
  out.realized_snr_h = realized_snr_db(h_clean, out.y_h);
  out.realized_snr_m = realized_snr_db(m_clean, out.y_m);
  out.truth = scene.truth;
  out.reference = scene.reference;
  return out;
}

inline SimulatedPair simulate(const SimulationSettings& s, std::uint64_t noise_seed)
{
  return simulate(generate_scene(s.scene), s, noise_seed);
}

}  // namespace hsfuse

#endif  // HSFUSE_SYNTH_HPP

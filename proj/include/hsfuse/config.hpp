#ifndef HSFUSE_CONFIG_HPP
#define HSFUSE_CONFIG_HPP

// Flat "key = value" run configuration. '#' starts a comment; unknown keys
// and malformed values are rejected. to_text() echoes every key with its
// effective value, and parsing that echo reproduces the configuration.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "hsfuse/io.hpp"
#include "hsfuse/pipeline.hpp"

namespace hsfuse {

struct RunConfig {
  ExperimentSettings experiment;
  std::uint64_t seed = 0;  // scene seed; trial t uses noise and training seed seed + t
  int trials = 10;
  int jobs = 1;
  std::string response_file;  // optional spectral response table

  void validate() const
  {
    experiment.sim.scene.validate();
    experiment.fusion.validate();
    if (experiment.sim.d < 1) throw ParameterError("d must be >= 1");
    if (experiment.sim.ms_bands < 1) throw ParameterError("ms_bands must be >= 1");
    if (!(experiment.sim.response_width > 0.0)) throw ParameterError("response_width must be > 0");
    if (!(experiment.sim.sigma_blur >= 0.0) || !std::isfinite(experiment.sim.sigma_blur))
      throw ParameterError("sigma_blur must be >= 0");
    for (double snr : {experiment.sim.snr_h, experiment.sim.snr_m})
      if (std::isnan(snr) || snr == -std::numeric_limits<double>::infinity())
        throw ParameterError("SNR must be a number of dB or inf");
    if (experiment.radii) validate_radii(*experiment.radii);
    if (experiment.per_class < 1) throw ParameterError("per_class must be >= 1");
    if (!(experiment.classifier.ridge >= 0.0)) throw ParameterError("ridge must be >= 0");
    if (trials < 1) throw ParameterError("trials must be >= 1");
    if (jobs < 1) throw ParameterError("jobs must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long config_int(const std::string& key, const std::string& v)
{
  try {
    return parse_integer(v, key);
  } catch (const IoError&) {
    throw ParameterError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double config_real(const std::string& key, const std::string& v)
{
  try {
    return parse_double(v, key);
  } catch (const IoError&) {
    throw ParameterError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool config_bool(const std::string& key, const std::string& v)
{
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParameterError("config key '" + key + "' expects true or false, got '" + v + "'");
}

inline std::vector<int> config_int_list(const std::string& key, const std::string& v)
{
  std::vector<int> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ParameterError("config key '" + key + "' has an empty list item");
    out.push_back(static_cast<int>(config_int(key, item)));
  }
  return out;
}

inline std::string join(const std::vector<int>& v)
{
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct ConfigKey {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys()
{
  using S = std::string;
  auto int_key = [](const char* name, auto member) {
    return ConfigKey{name,
                     [=](RunConfig& c, const S& v) { member(c) = static_cast<int>(config_int(name, v)); },
                     [=](const RunConfig& c) { return std::to_string(member(c)); }};
  };
  auto real_key = [](const char* name, auto member) {
    return ConfigKey{name, [=](RunConfig& c, const S& v) { member(c) = config_real(name, v); },
                     [=](const RunConfig& c) { return format_double(member(c)); }};
  };
  auto bool_key = [](const char* name, auto member) {
    return ConfigKey{name, [=](RunConfig& c, const S& v) { member(c) = config_bool(name, v); },
                     [=](const RunConfig& c) { return S(member(c) ? "true" : "false"); }};
  };
  static const std::vector<ConfigKey> keys = {
      {"seed",
       [](RunConfig& c, const S& v) {
         const long long s = config_int("seed", v);
         if (s < 0) throw ParameterError("seed must be >= 0");
         c.seed = static_cast<std::uint64_t>(s);
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      int_key("width", [](auto& c) -> auto& { return c.experiment.sim.scene.width; }),
      int_key("height", [](auto& c) -> auto& { return c.experiment.sim.scene.height; }),
      int_key("n_classes", [](auto& c) -> auto& { return c.experiment.sim.scene.n_classes; }),
      int_key("n_bands", [](auto& c) -> auto& { return c.experiment.sim.scene.n_bands; }),
      real_key("region_scale", [](auto& c) -> auto& { return c.experiment.sim.scene.region_scale; }),
      real_key("signature_smoothness",
               [](auto& c) -> auto& { return c.experiment.sim.scene.signature_smoothness; }),
      real_key("variability", [](auto& c) -> auto& { return c.experiment.sim.scene.variability; }),
      real_key("texture", [](auto& c) -> auto& { return c.experiment.sim.scene.texture; }),
      {"object_classes",
       [](RunConfig& c, const S& v) { c.experiment.sim.scene.object_classes = config_int_list("object_classes", v); },
       [](const RunConfig& c) { return join(c.experiment.sim.scene.object_classes); }},
      real_key("object_radius", [](auto& c) -> auto& { return c.experiment.sim.scene.object_radius; }),
      real_key("radiance_scale", [](auto& c) -> auto& { return c.experiment.sim.scene.radiance_scale; }),
      int_key("d", [](auto& c) -> auto& { return c.experiment.sim.d; }),
      real_key("sigma_blur", [](auto& c) -> auto& { return c.experiment.sim.sigma_blur; }),
      int_key("ms_bands", [](auto& c) -> auto& { return c.experiment.sim.ms_bands; }),
      real_key("response_width", [](auto& c) -> auto& { return c.experiment.sim.response_width; }),
      {"response_file", [](RunConfig& c, const S& v) { c.response_file = v; },
       [](const RunConfig& c) { return c.response_file; }},
      real_key("snr_h", [](auto& c) -> auto& { return c.experiment.sim.snr_h; }),
      real_key("snr_m", [](auto& c) -> auto& { return c.experiment.sim.snr_m; }),
      bool_key("per_band_snr", [](auto& c) -> auto& { return c.experiment.sim.per_band_snr; }),
      {"radii",
       [](RunConfig& c, const S& v) {
         if (v == "default")
           c.experiment.radii.reset();
         else
           c.experiment.radii = config_int_list("radii", v);
       },
       [](const RunConfig& c) { return c.experiment.radii ? join(*c.experiment.radii) : S("default"); }},
      int_key("ne", [](auto& c) -> auto& { return c.experiment.fusion.ne; }),
      real_key("lambda", [](auto& c) -> auto& { return c.experiment.fusion.lambda; }),
      real_key("lambda_tv", [](auto& c) -> auto& { return c.experiment.fusion.lambda_tv; }),
      real_key("rho0", [](auto& c) -> auto& { return c.experiment.fusion.rho0; }),
      real_key("eps_ao", [](auto& c) -> auto& { return c.experiment.fusion.eps_ao; }),
      real_key("eps_admm", [](auto& c) -> auto& { return c.experiment.fusion.eps_admm; }),
      int_key("max_ao_iters", [](auto& c) -> auto& { return c.experiment.fusion.max_ao_iters; }),
      int_key("max_admm_iters", [](auto& c) -> auto& { return c.experiment.fusion.max_admm_iters; }),
      bool_key("rho_adapt", [](auto& c) -> auto& { return c.experiment.fusion.rho_adapt; }),
      real_key("rho_mu", [](auto& c) -> auto& { return c.experiment.fusion.rho_mu; }),
      real_key("rho_tau_incr", [](auto& c) -> auto& { return c.experiment.fusion.rho_tau_incr; }),
      real_key("rho_tau_decr", [](auto& c) -> auto& { return c.experiment.fusion.rho_tau_decr; }),
      {"backend", [](RunConfig& c, const S& v) { c.experiment.fusion.backend = parse_backend(v); },
       [](const RunConfig& c) { return S(to_string(c.experiment.fusion.backend)); }},
      int_key("per_class", [](auto& c) -> auto& { return c.experiment.per_class; }),
      {"classifier", [](RunConfig& c, const S& v) { c.experiment.classifier.kind = parse_classifier(v); },
       [](const RunConfig& c) { return S(to_string(c.experiment.classifier.kind)); }},
      real_key("ridge", [](auto& c) -> auto& { return c.experiment.classifier.ridge; }),
      int_key("trials", [](auto& c) -> auto& { return c.trials; }),
      int_key("jobs", [](auto& c) -> auto& { return c.jobs; }),
  };
  return keys;
}

}  // namespace detail

/// Sets one key from its text value.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value)
{
  for (const auto& k : detail::config_keys())
    if (key == k.name) {
      k.set(c, detail::trim(value));
      return;
    }
  throw ParameterError("unknown config key '" + key + "'");
}

/// Applies "key = value" lines on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& source = "config")
{
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError(source + " line " + std::to_string(n) + ": expected 'key = value'");
    set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

/// Every key with its effective value, one per line, in a fixed order.
inline std::string to_text(const RunConfig& c)
{
  std::string out;
  for (const auto& k : detail::config_keys()) out += std::string(k.name) + " = " + k.get(c) + "\n";
  return out;
}

inline Json to_json(const RunConfig& c)
{
  Json j = Json::object();
  for (const auto& k : detail::config_keys()) j[k.name] = k.get(c);
  return j;
}

inline RunConfig config_from_json(const Json& j, RunConfig base = {})
{
  if (!j.is_object()) throw ParameterError("config JSON must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw ParameterError("config JSON value of '" + key + "' must be a string");
    set_config_value(base, key, value.get<std::string>());
  }
  return base;
}

/// Reads a config file: either key = value text, or a JSON metadata sidecar
/// whose "config" member echoes a previous run.
inline RunConfig load_config(const std::string& path, RunConfig base = {})
{
  const std::string text = detail::read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      throw IoError("'" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("config")) throw ParameterError("'" + path + "' has no \"config\" member");
    return config_from_json(j["config"], base);
  }
  return parse_config(text, base, "'" + path + "'");
}

}  // namespace hsfuse

#endif  // HSFUSE_CONFIG_HPP

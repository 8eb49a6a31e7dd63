#ifndef HSFUSE_IO_HPP
#define HSFUSE_IO_HPP

// On-disk formats: cube files, label maps, small matrices, metrics reports,
// JSON metadata sidecars, JSONL traces and indexed-color class maps.
//
// Cube file: a text header terminated by "end\n", then the payload.
//
//   HSFCUBE
//   version 1
//   content cube|labels|matrix
//   width W
//   height H
//   bands B
//   scalar float64-le
//   layout band-sequential
//   vectorization y*width+x
//   label <j> <text>        (optional, one per band)
//   end
//
// The payload is B bands of W*H little-endian IEEE doubles, each band in
// pixel order, so it is exactly the column-major n x B data matrix.

#include <png.h>

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsfuse/cube.hpp"
#include "hsfuse/error.hpp"
#include "hsfuse/eval.hpp"
#include "hsfuse/fusion.hpp"

namespace hsfuse {

using Json = nlohmann::ordered_json;

namespace detail {

constexpr const char* kCubeMagic = "HSFCUBE";
constexpr int kCubeVersion = 1;

inline void put_le64(std::string& out, double v)
{
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
}

inline double get_le64(const unsigned char* p)
{
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

inline void write_file(const std::string& path, const std::string& bytes)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return ss.str();
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v)
{
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what)
{
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IoError(what + ": bad number '" + std::string(s) + "'");
  return v;
}

inline long long parse_integer(std::string_view s, const std::string& what)
{
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw IoError(what + ": bad integer '" + std::string(s) + "'");
  return v;
}

struct CubeHeader {
  std::string content;
  GridShape shape;
  int bands = 0;
  std::vector<std::string> labels;
};

inline std::string encode_cube(const Eigen::MatrixXd& data, GridShape shape, const std::string& content,
                               const std::vector<std::string>& labels)
{
  std::string out;
  out += std::string(kCubeMagic) + "\n";
  out += "version " + std::to_string(kCubeVersion) + "\n";
  out += "content " + content + "\n";
  out += "width " + std::to_string(shape.width) + "\n";
  out += "height " + std::to_string(shape.height) + "\n";
  out += "bands " + std::to_string(data.cols()) + "\n";
  out += "scalar float64-le\nlayout band-sequential\nvectorization y*width+x\n";
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j].find('\n') != std::string::npos) throw ParameterError("band label contains a newline");
    out += "label " + std::to_string(j) + " " + labels[j] + "\n";
  }
  out += "end\n";
  out.reserve(out.size() + static_cast<std::size_t>(data.size()) * 8);
  for (Eigen::Index k = 0; k < data.size(); ++k) put_le64(out, data.data()[k]);
  return out;
}

inline Eigen::MatrixXd decode_cube(const std::string& bytes, const std::string& path, CubeHeader& h)
{
  const std::string what = "cube file '" + path + "'";
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw IoError(what + ": truncated header");
    std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    return line;
  };
  if (next_line() != kCubeMagic) throw IoError(what + ": not a cube file");
  bool have_w = false, have_h = false, have_b = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    const std::size_t sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "version") {
      if (parse_integer(value, what) != kCubeVersion)
        throw IoError(what + ": unsupported version " + value);
    } else if (key == "content") {
      h.content = value;
    } else if (key == "width") {
      h.shape.width = static_cast<int>(parse_integer(value, what));
      have_w = true;
    } else if (key == "height") {
      h.shape.height = static_cast<int>(parse_integer(value, what));
      have_h = true;
    } else if (key == "bands") {
      h.bands = static_cast<int>(parse_integer(value, what));
      have_b = true;
    } else if (key == "scalar") {
      if (value != "float64-le") throw IoError(what + ": unsupported scalar type '" + value + "'");
    } else if (key == "layout") {
      if (value != "band-sequential") throw IoError(what + ": unsupported layout '" + value + "'");
    } else if (key == "vectorization") {
      if (value != "y*width+x") throw IoError(what + ": unsupported vectorization '" + value + "'");
    } else if (key == "label") {
      const std::size_t sp2 = value.find(' ');
      const long long j = parse_integer(value.substr(0, sp2), what);
      if (j != static_cast<long long>(h.labels.size())) throw IoError(what + ": band labels out of order");
      h.labels.push_back(sp2 == std::string::npos ? "" : value.substr(sp2 + 1));
    } else {
      throw IoError(what + ": unknown header key '" + key + "'");
    }
  }
  if (!have_w || !have_h || !have_b) throw IoError(what + ": header lacks width, height or bands");
  if (h.shape.width < 1 || h.shape.height < 1 || h.bands < 0)
    throw IoError(what + ": invalid dimensions");
  if (!h.labels.empty() && static_cast<int>(h.labels.size()) != h.bands)
    throw IoError(what + ": band label count does not match band count");
  const std::size_t expected =
      static_cast<std::size_t>(h.shape.pixels()) * static_cast<std::size_t>(h.bands) * 8;
  if (bytes.size() - pos != expected)
    throw IoError(what + ": payload has " + std::to_string(bytes.size() - pos) + " bytes, header implies " +
                  std::to_string(expected));
  Eigen::MatrixXd data(h.shape.pixels(), h.bands);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (Eigen::Index k = 0; k < data.size(); ++k) data.data()[k] = get_le64(p + 8 * k);
  return data;
}

}  // namespace detail

// ---- cubes, labels, matrices ----------------------------------------------------

inline void write_cube(const std::string& path, const SpectralCube& cube)
{
  detail::write_file(path, detail::encode_cube(cube.data(), cube.shape(), "cube", cube.band_labels()));
}

inline SpectralCube read_cube(const std::string& path)
{
  detail::CubeHeader h;
  Eigen::MatrixXd data = detail::decode_cube(detail::read_file(path), path, h);
  if (h.content != "cube") throw IoError("'" + path + "' holds " + h.content + ", not a cube");
  return SpectralCube(std::move(data), h.shape, std::move(h.labels));
}

/// Label maps are one-band cubes of integer values.
inline void write_labels(const std::string& path, const LabelMap& labels)
{
  Eigen::MatrixXd data(labels.size(), 1);
  for (int i = 0; i < labels.size(); ++i) data(i, 0) = labels[i];
  detail::write_file(path, detail::encode_cube(data, labels.shape, "labels", {"label"}));
}

inline LabelMap read_labels(const std::string& path)
{
  detail::CubeHeader h;
  const Eigen::MatrixXd data = detail::decode_cube(detail::read_file(path), path, h);
  if (h.content != "labels") throw IoError("'" + path + "' holds " + h.content + ", not labels");
  if (h.bands != 1) throw IoError("label file '" + path + "' must have one band");
  std::vector<int> l(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double v = data(i, 0);
    if (!(v >= 0.0) || v != std::floor(v) || v > std::numeric_limits<int>::max())
      throw IoError("label file '" + path + "' has a non-integer or negative label");
    l[i] = static_cast<int>(v);
  }
  return LabelMap(h.shape, std::move(l));
}

/// An r x c matrix stored as a one-band image of width c and height r.
inline void write_matrix(const std::string& path, const Eigen::MatrixXd& m)
{
  if (m.size() == 0) throw ParameterError("cannot store an empty matrix");
  Eigen::MatrixXd col(m.size(), 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) col(r * m.cols() + c, 0) = m(r, c);
  detail::write_file(path, detail::encode_cube(col, {static_cast<int>(m.cols()), static_cast<int>(m.rows())},
                                               "matrix", {}));
}

inline Eigen::MatrixXd read_matrix(const std::string& path)
{
  detail::CubeHeader h;
  const Eigen::MatrixXd data = detail::decode_cube(detail::read_file(path), path, h);
  if (h.content != "matrix" || h.bands != 1) throw IoError("'" + path + "' is not a matrix file");
  Eigen::MatrixXd m(h.shape.height, h.shape.width);
  for (int r = 0; r < h.shape.height; ++r)
    for (int c = 0; c < h.shape.width; ++c) m(r, c) = data(r * h.shape.width + c, 0);
  return m;
}

// ---- metrics report ---------------------------------------------------------------
//
//   hsfuse-metrics 1
//   trials T
//   classes L
//   oa <mean> <std>
//   aa <mean> <std>
//   kappa <mean> <std>
//   class <c> <mean> <std>        (c = 1..L)
//   trial <t> oa <x> aa <x> kappa <x> degenerate <0|1>
//   <L rows of L counts>          (confusion of that trial; rows truth, columns prediction)
//   end

inline std::string format_report(const MetricsReport& r)
{
  using detail::format_double;
  std::string out = "hsfuse-metrics 1\n";
  const int l = r.n_classes();
  out += "trials " + std::to_string(r.n_trials()) + "\n";
  out += "classes " + std::to_string(l) + "\n";
  auto stat = [&](const char* key, const MetricStat& s) {
    out += std::string(key) + " " + format_double(s.mean) + " " + format_double(s.stddev) + "\n";
  };
  stat("oa", r.overall_accuracy);
  stat("aa", r.average_accuracy);
  stat("kappa", r.kappa);
  for (int c = 0; c < l; ++c)
    out += "class " + std::to_string(c + 1) + " " + format_double(r.per_class_accuracy[c].mean) + " " +
           format_double(r.per_class_accuracy[c].stddev) + "\n";
  for (int t = 0; t < r.n_trials(); ++t) {
    const ClassificationMetrics& m = r.trials[t];
    out += "trial " + std::to_string(t) + " oa " + format_double(m.overall_accuracy) + " aa " +
           format_double(m.average_accuracy) + " kappa " + format_double(m.kappa) + " degenerate " +
           (m.kappa_degenerate ? "1" : "0") + "\n";
    for (int i = 0; i < l; ++i) {
      for (int j = 0; j < l; ++j) out += (j ? " " : "") + std::to_string(m.confusion(i, j));
      out += "\n";
    }
  }
  out += "end\n";
  return out;
}

/// Parses a report and rebuilds every trial from its confusion matrix. The
/// stored summary values must agree with the recomputed ones to 1e-12.
inline MetricsReport parse_report(const std::string& text, const std::string& source = "report")
{
  std::istringstream in(text);
  std::string line;
  auto fail = [&](const std::string& msg) -> IoError { return IoError(source + ": " + msg); };
  auto next = [&]() {
    if (!std::getline(in, line)) throw fail("truncated report");
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    return tok;
  };
  auto expect_key = [&](const std::vector<std::string>& tok, const char* key, std::size_t n) {
    if (tok.size() != n || tok[0] != key) throw fail(std::string("expected '") + key + "' line, got '" + line + "'");
  };
  std::vector<std::string> tok = next();
  if (tok.size() != 2 || tok[0] != "hsfuse-metrics" || tok[1] != "1") throw fail("not a metrics report");
  tok = next();
  expect_key(tok, "trials", 2);
  const long long n_trials = detail::parse_integer(tok[1], source);
  tok = next();
  expect_key(tok, "classes", 2);
  const long long l = detail::parse_integer(tok[1], source);
  if (n_trials < 1 || l < 1) throw fail("report needs at least one trial and one class");

  std::vector<std::pair<double, double>> summary;
  for (const char* key : {"oa", "aa", "kappa"}) {
    tok = next();
    expect_key(tok, key, 3);
    summary.emplace_back(detail::parse_double(tok[1], source), detail::parse_double(tok[2], source));
  }
  std::vector<std::pair<double, double>> per_class;
  for (long long c = 0; c < l; ++c) {
    tok = next();
    expect_key(tok, "class", 4);
    if (detail::parse_integer(tok[1], source) != c + 1) throw fail("class lines out of order");
    per_class.emplace_back(detail::parse_double(tok[2], source), detail::parse_double(tok[3], source));
  }
  std::vector<ClassificationMetrics> trials;
  for (long long t = 0; t < n_trials; ++t) {
    tok = next();
    if (tok.size() != 10 || tok[0] != "trial" || detail::parse_integer(tok[1], source) != t)
      throw fail("expected trial " + std::to_string(t));
    ConfusionMatrix c(l, l);
    for (long long i = 0; i < l; ++i) {
      tok = next();
      if (static_cast<long long>(tok.size()) != l) throw fail("confusion row has the wrong length");
      for (long long j = 0; j < l; ++j) {
        c(i, j) = detail::parse_integer(tok[j], source);
        if (c(i, j) < 0) throw fail("negative confusion count");
      }
    }
    trials.push_back(metrics_from_confusion(std::move(c)));
  }
  tok = next();
  if (tok.size() != 1 || tok[0] != "end") throw fail("missing 'end'");

  MetricsReport r = make_report(std::move(trials));
  auto agree = [](double stored, double recomputed) {
    if (std::isnan(stored) || std::isnan(recomputed)) return std::isnan(stored) && std::isnan(recomputed);
    return std::abs(stored - recomputed) <= 1e-12;
  };
  const MetricStat* stats[] = {&r.overall_accuracy, &r.average_accuracy, &r.kappa};
  for (int k = 0; k < 3; ++k)
    if (!agree(summary[k].first, stats[k]->mean) || !agree(summary[k].second, stats[k]->stddev))
      throw fail("summary statistics do not match the confusion matrices");
  for (long long c = 0; c < l; ++c)
    if (!agree(per_class[c].first, r.per_class_accuracy[c].mean) ||
        !agree(per_class[c].second, r.per_class_accuracy[c].stddev))
      throw fail("per-class statistics do not match the confusion matrices");
  return r;
}

inline void write_report(const std::string& path, const MetricsReport& r)
{
  detail::write_file(path, format_report(r));
}

inline MetricsReport read_report(const std::string& path)
{
  return parse_report(detail::read_file(path), "report '" + path + "'");
}

// ---- JSON sidecars and traces -------------------------------------------------------

inline void write_json(const std::string& path, const Json& j)
{
  detail::write_file(path, j.dump(2) + "\n");
}

inline Json read_json(const std::string& path)
{
  const std::string text = detail::read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline Json to_json(const AoRecord& r)
{
  return Json{{"iteration", r.iteration},         {"objective", r.objective},
              {"r_res", r.r_res},                 {"s_res", r.s_res},
              {"rho", r.rho},                     {"admm_iterations", r.admm_iterations},
              {"relative_change", r.relative_change}};
}

/// One JSON object per line, flushed as records arrive.
class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc)
  {
    if (!out_) throw IoError("cannot open trace '" + path + "' for writing");
  }

  void write(const Json& record)
  {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing trace '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline std::vector<Json> read_jsonl(const std::string& path)
{
  std::istringstream in(detail::read_file(path));
  std::vector<Json> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw IoError("'" + path + "' line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ---- class maps -------------------------------------------------------------------

/// Class colors; label c uses entry (c - 1) mod 15, unlabeled pixels are black.
inline constexpr std::array<std::uint32_t, 15> kClassPalette = {
    0x800000, 0x9A6324, 0x808000, 0x469990, 0x000075, 0xE6194B, 0xF58231, 0xFFE119,
    0xBFEF45, 0x3CB44B, 0x42D4F4, 0x4363D8, 0x911EB4, 0xF032E6, 0xA9A9A9};

namespace detail {

// Kept free of locals so nothing live can be clobbered by libpng's longjmp.
inline bool write_indexed_png(std::FILE* fp, png_structp png, png_infop info, int width, int height,
                              const std::vector<png_color>& palette, const std::vector<png_byte>& pixels)
{
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(width));
  png_write_end(png, nullptr);
  return true;
}

}  // namespace detail

/// Writes an 8-bit indexed PNG: index 0 is unlabeled, index c is class c.
inline void write_class_map_png(const std::string& path, const LabelMap& labels)
{
  const int l = labels.n_classes();
  if (l > 255) throw ParameterError("class maps support at most 255 classes");
  std::vector<png_color> palette(static_cast<std::size_t>(l + 1), png_color{0, 0, 0});
  for (int c = 1; c <= l; ++c) {
    const std::uint32_t rgb = kClassPalette[(c - 1) % kClassPalette.size()];
    palette[c] = png_color{static_cast<png_byte>(rgb >> 16), static_cast<png_byte>((rgb >> 8) & 0xff),
                           static_cast<png_byte>(rgb & 0xff)};
  }
  std::vector<png_byte> pixels(labels.labels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<png_byte>(labels.labels[i]);

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  const bool ok = png && info &&
                  detail::write_indexed_png(fp, png, info, labels.shape.width, labels.shape.height, palette, pixels);
  png_destroy_write_struct(&png, &info);
  const bool closed = std::fclose(fp) == 0;
  if (!ok || !closed) throw IoError("failed writing PNG '" + path + "'");
}

}  // namespace hsfuse

#endif  // HSFUSE_IO_HPP

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include <gtest/gtest.h>

#include "hsfuse/config.hpp"
#include "hsfuse/io.hpp"
#include "support.hpp"

namespace hsfuse {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override
  {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("hsfuse_io_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string slurp(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

using CubeFile = TempDir;

TEST_F(CubeFile, RoundTripIsBitExact)
{
  Eigen::MatrixXd data = testing::random_matrix(6 * 5, 4, 1) * 1e3;
  data(0, 0) = -0.0;
  data(1, 0) = std::numeric_limits<double>::denorm_min();
  data(2, 0) = std::numeric_limits<double>::infinity();
  data(3, 0) = std::numeric_limits<double>::quiet_NaN();
  data(4, 0) = 0.1;
  const SpectralCube cube(data, {6, 5}, {"a", "b c", "", "d"});
  write_cube(path("c.cube"), cube);
  const SpectralCube back = read_cube(path("c.cube"));
  EXPECT_EQ(back.shape(), cube.shape());
  EXPECT_TRUE(bit_equal(back.data(), cube.data()));
  EXPECT_EQ(back.band_labels(), cube.band_labels());
}

TEST_F(CubeFile, PayloadIsHeaderDimsTimesEight)
{
  const SpectralCube cube(testing::random_matrix(7 * 3, 2, 2), {7, 3});
  write_cube(path("c.cube"), cube);
  const std::string bytes = slurp(path("c.cube"));
  const auto end = bytes.find("end\n");
  ASSERT_NE(end, std::string::npos);
  EXPECT_EQ(bytes.size() - (end + 4), 7u * 3u * 2u * 8u);
  EXPECT_EQ(bytes.rfind("HSFCUBE\n", 0), 0u);
  EXPECT_NE(bytes.find("scalar float64-le\n"), std::string::npos);
  EXPECT_NE(bytes.find("vectorization y*width+x\n"), std::string::npos);
}

TEST_F(CubeFile, PayloadIsLittleEndianBandSequential)
{
  Eigen::MatrixXd data(2, 2);
  data << 1.0, 3.0, 2.0, 4.0;  // band 0 = {1, 2}, band 1 = {3, 4}
  write_cube(path("c.cube"), SpectralCube(data, {2, 1}));
  const std::string bytes = slurp(path("c.cube"));
  const std::string payload = bytes.substr(bytes.find("end\n") + 4);
  ASSERT_EQ(payload.size(), 32u);
  for (int k = 0; k < 4; ++k) {
    std::uint64_t bits = 0;
    for (int j = 0; j < 8; ++j)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[8 * k + j])) << (8 * j);
    double v;
    std::memcpy(&v, &bits, 8);
    EXPECT_EQ(v, k + 1.0);
  }
}

TEST_F(CubeFile, RejectsTruncatedAndPaddedPayloads)
{
  write_cube(path("c.cube"), SpectralCube(testing::random_matrix(4, 3, 3), {2, 2}));
  const std::string bytes = slurp(path("c.cube"));
  spit(path("short.cube"), bytes.substr(0, bytes.size() - 1));
  spit(path("long.cube"), bytes + "x");
  EXPECT_THROW(read_cube(path("short.cube")), IoError);
  EXPECT_THROW(read_cube(path("long.cube")), IoError);
}

TEST_F(CubeFile, RejectsBadHeaders)
{
  write_cube(path("c.cube"), SpectralCube(testing::random_matrix(4, 1, 4), {2, 2}));
  const std::string bytes = slurp(path("c.cube"));
  auto with = [&](const std::string& from, const std::string& to) {
    std::string b = bytes;
    b.replace(b.find(from), from.size(), to);
    spit(path("bad.cube"), b);
    return path("bad.cube");
  };
  EXPECT_THROW(read_cube(with("HSFCUBE", "XSFCUBE")), IoError);
  EXPECT_THROW(read_cube(with("version 1", "version 2")), IoError);
  EXPECT_THROW(read_cube(with("float64-le", "float32-le")), IoError);
  EXPECT_THROW(read_cube(with("width 2", "width x")), IoError);
  EXPECT_THROW(read_cube(with("end\n", "ned\n")), IoError);
  EXPECT_THROW(read_cube(path("missing.cube")), IoError);
}

TEST_F(CubeFile, ContentKindsAreNotInterchangeable)
{
  write_labels(path("l.cube"), LabelMap({2, 2}, {0, 1, 2, 1}));
  write_cube(path("c.cube"), SpectralCube(Eigen::MatrixXd::Ones(4, 1), {2, 2}));
  EXPECT_THROW(read_cube(path("l.cube")), IoError);
  EXPECT_THROW(read_labels(path("c.cube")), IoError);
  EXPECT_THROW(read_matrix(path("c.cube")), IoError);
}

TEST_F(CubeFile, LabelsRoundTrip)
{
  const LabelMap labels({3, 2}, {0, 1, 2, 3, 4, 5});
  write_labels(path("l.cube"), labels);
  const LabelMap back = read_labels(path("l.cube"));
  EXPECT_EQ(back.shape, labels.shape);
  EXPECT_EQ(back.labels, labels.labels);
}

TEST_F(CubeFile, MatrixRoundTripKeepsOrientation)
{
  const Eigen::MatrixXd m = testing::random_matrix(5, 3, 5);
  write_matrix(path("m.cube"), m);
  EXPECT_TRUE(bit_equal(read_matrix(path("m.cube")), m));
}

TEST_F(CubeFile, UnwritablePathIsAnIoError)
{
  EXPECT_THROW(write_cube(path("no/such/dir/c.cube"), SpectralCube::zeros({2, 2}, 1)), IoError);
}

MetricsReport sample_report()
{
  ConfusionMatrix a(3, 3), b(3, 3);
  a << 40, 5, 5, 3, 45, 2, 0, 10, 40;
  b << 30, 10, 10, 5, 40, 5, 0, 0, 50;
  return make_report({metrics_from_confusion(a), metrics_from_confusion(b)});
}

using Report = TempDir;

TEST_F(Report, RoundTripPreservesEverything)
{
  const MetricsReport r = sample_report();
  write_report(path("r.txt"), r);
  const MetricsReport back = read_report(path("r.txt"));
  ASSERT_EQ(back.n_trials(), 2);
  ASSERT_EQ(back.n_classes(), 3);
  for (int t = 0; t < 2; ++t) EXPECT_EQ(back.trials[t].confusion, r.trials[t].confusion);
  EXPECT_EQ(back.overall_accuracy.mean, r.overall_accuracy.mean);
  EXPECT_EQ(back.kappa.stddev, r.kappa.stddev);
  EXPECT_EQ(format_report(back), format_report(r));
}

TEST_F(Report, MetricIdentitiesReverifyFromConfusion)
{
  const MetricsReport back = parse_report(format_report(sample_report()));
  for (const auto& t : back.trials) {
    const Eigen::ArrayXXd c = t.confusion.cast<double>().array();
    const double total = c.sum();
    const double po = c.matrix().trace() / total;
    const double pe = (c.rowwise().sum() * c.colwise().sum().transpose()).sum() / (total * total);
    EXPECT_NEAR(t.overall_accuracy, po, 1e-12);
    EXPECT_NEAR(t.average_accuracy, (c.matrix().diagonal().array() / c.rowwise().sum()).mean(), 1e-12);
    EXPECT_NEAR(t.kappa, (po - pe) / (1.0 - pe), 1e-12);
  }
}

TEST_F(Report, RejectsTamperedSummary)
{
  std::string text = format_report(sample_report());
  const auto pos = text.find("\noa ");
  text.replace(pos + 4, 1, "9");
  EXPECT_THROW(parse_report(text), IoError);
}

TEST_F(Report, RejectsMalformedText)
{
  EXPECT_THROW(parse_report(""), IoError);
  EXPECT_THROW(parse_report("hsfuse-metrics 2\n"), IoError);
  std::string text = format_report(sample_report());
  EXPECT_THROW(parse_report(text.substr(0, text.size() - 4)), IoError);
}

using Json_ = TempDir;

TEST_F(Json_, TraceHasOneRecordPerWrite)
{
  {
    TraceWriter w(path("t.jsonl"));
    for (int k = 1; k <= 3; ++k) w.write(to_json(AoRecord{.iteration = k, .objective = 1.0 / k}));
  }
  const auto records = read_jsonl(path("t.jsonl"));
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[2]["iteration"].get<int>(), 3);
  EXPECT_DOUBLE_EQ(records[1]["objective"].get<double>(), 0.5);
}

TEST_F(Json_, InvalidJsonIsAnIoError)
{
  spit(path("bad.json"), "{ nope");
  EXPECT_THROW(read_json(path("bad.json")), IoError);
}

struct PngImage {
  int width = 0, height = 0;
  std::vector<png_color> palette;
  std::vector<int> indices;
};

PngImage read_png(const std::string& path)
{
  PngImage img;
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open png");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  EXPECT_EQ(png_get_color_type(png, info), PNG_COLOR_TYPE_PALETTE);
  EXPECT_EQ(png_get_bit_depth(png, info), 8);
  png_colorp pal = nullptr;
  int n_pal = 0;
  png_get_PLTE(png, info, &pal, &n_pal);
  img.palette.assign(pal, pal + n_pal);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_byte v : row) img.indices.push_back(v);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

using ClassMap = TempDir;

TEST_F(ClassMap, IndexedPngCarriesLabelsAndPalette)
{
  const LabelMap labels({4, 2}, {0, 1, 2, 3, 4, 5, 6, 1});
  write_class_map_png(path("m.png"), labels);
  const PngImage img = read_png(path("m.png"));
  EXPECT_EQ(img.width, 4);
  EXPECT_EQ(img.height, 2);
  ASSERT_EQ(img.palette.size(), 7u);
  EXPECT_EQ(img.palette[0].red + img.palette[0].green + img.palette[0].blue, 0);
  for (int c = 1; c <= 6; ++c) {
    const std::uint32_t rgb = kClassPalette[c - 1];
    EXPECT_EQ(img.palette[c].red, rgb >> 16);
    EXPECT_EQ(img.palette[c].green, (rgb >> 8) & 0xff);
    EXPECT_EQ(img.palette[c].blue, rgb & 0xff);
  }
  std::vector<int> expected(labels.labels.begin(), labels.labels.end());
  EXPECT_EQ(img.indices, expected);
}

TEST_F(ClassMap, PaletteWrapsPastFifteenClasses)
{
  std::vector<int> l(20);
  for (int i = 0; i < 20; ++i) l[i] = i + 1;
  write_class_map_png(path("m.png"), LabelMap({20, 1}, l));
  const PngImage img = read_png(path("m.png"));
  ASSERT_EQ(img.palette.size(), 21u);
  EXPECT_EQ(img.palette[16].red, img.palette[1].red);
  EXPECT_EQ(img.palette[16].blue, img.palette[1].blue);
}

using Config = TempDir;

TEST_F(Config, TextEchoRoundTrips)
{
  RunConfig c;
  c.seed = 42;
  c.experiment.fusion.ne = 7;
  c.experiment.fusion.lambda_tv = 0.125;
  c.experiment.radii = std::vector<int>{1, 3};
  c.experiment.sim.snr_h = std::numeric_limits<double>::infinity();
  c.experiment.sim.scene.object_classes = {3};
  const std::string text = to_text(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.experiment.fusion.ne, 7);
  EXPECT_EQ(*back.experiment.radii, (std::vector<int>{1, 3}));
  EXPECT_TRUE(std::isinf(back.experiment.sim.snr_h));
}

TEST_F(Config, JsonEchoRoundTrips)
{
  RunConfig c;
  c.experiment.fusion.lambda = 0.3;
  c.trials = 4;
  write_json(path("meta.json"), Json{{"command", "simulate"}, {"config", to_json(c)}});
  const RunConfig back = load_config(path("meta.json"));
  EXPECT_EQ(to_text(back), to_text(c));
}

TEST_F(Config, CommentsBlankLinesAndDefaults)
{
  const RunConfig c = parse_config("# comment\n\n  ne = 3   # trailing\nradii = default\nradii =\n");
  EXPECT_EQ(c.experiment.fusion.ne, 3);
  ASSERT_TRUE(c.experiment.radii.has_value());
  EXPECT_TRUE(c.experiment.radii->empty());
  EXPECT_EQ(c.experiment.fusion.lambda_tv, RunConfig{}.experiment.fusion.lambda_tv);
}

TEST_F(Config, RejectsUnknownKeysAndBadValues)
{
  EXPECT_THROW(parse_config("nee = 3\n"), ParameterError);
  EXPECT_THROW(parse_config("ne 3\n"), ParameterError);
  EXPECT_THROW(parse_config("ne = three\n"), ParameterError);
  EXPECT_THROW(parse_config("lambda = 1e\n"), ParameterError);
  EXPECT_THROW(parse_config("rho_adapt = yes\n"), ParameterError);
  EXPECT_THROW(parse_config("seed = -1\n"), ParameterError);
  EXPECT_THROW(parse_config("radii = 1,,2\n"), ParameterError);
  EXPECT_THROW(parse_config("backend = magic\n"), ParameterError);
  EXPECT_THROW(config_from_json(Json{{"ne", 3}}), ParameterError);
}

TEST_F(Config, ValidateCatchesOutOfRangeValues)
{
  EXPECT_NO_THROW(RunConfig{}.validate());
  EXPECT_THROW(parse_config("ne = 0\n").validate(), ParameterError);
  EXPECT_THROW(parse_config("trials = 0\n").validate(), ParameterError);
  EXPECT_THROW(parse_config("d = 0\n").validate(), ParameterError);
  EXPECT_THROW(parse_config("lambda_tv = -1\n").validate(), ParameterError);
  EXPECT_THROW(parse_config("radii = 2,1\n").validate(), ParameterError);
  EXPECT_THROW(parse_config("snr_h = nan\n").validate(), ParameterError);
}

TEST_F(Config, MissingFileIsAnIoError)
{
  EXPECT_THROW(load_config(path("nope.cfg")), IoError);
}

}  // namespace
}  // namespace hsfuse

#include <gtf/data_io.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace gtf;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gtf_test_data_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TrajectoryDataset sample_dataset() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  Matrix x(37, 3);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng) * 1e3;
  TrajectoryDataset ds = make_trajectory(x, 0.01, "sample");
  standardize(ds);
  return ds;
}

}  // namespace

TEST(Dsds, RoundTripIsBitExact) {
  const TrajectoryDataset ds = sample_dataset();
  const auto path = scratch("rt.dsds").string();
  save_dataset(path, ds);
  const TrajectoryDataset back = load_dataset(path);
  EXPECT_EQ(back.length(), 37);
  EXPECT_EQ(back.dim(), 3);
  EXPECT_EQ(back.dt, 0.01);
  EXPECT_EQ(back.source, "sample");
  EXPECT_TRUE((back.data.array() == ds.data.array()).all());
  EXPECT_TRUE((back.mean.array() == ds.mean.array()).all());
  EXPECT_TRUE((back.std.array() == ds.std.array()).all());
}

TEST(Dsds, HeaderLayout) {
  const auto bytes = encode_dataset(sample_dataset());
  ASSERT_GE(bytes.size(), 30u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DSDS");
  EXPECT_EQ(bytes[4], 1);  // little-endian version
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 37);
}

TEST(Dsds, RejectsTruncationBadMagicAndVersion) {
  auto bytes = encode_dataset(sample_dataset());
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  EXPECT_THROW(decode_dataset(cut, "cut"), FormatError);
  auto tail = bytes;
  tail.pop_back();
  EXPECT_THROW(decode_dataset(tail, "tail"), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_dataset(extra, "extra"), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_dataset(magic, "magic"), FormatError);
  auto version = bytes;
  version[4] = 2;
  try {
    decode_dataset(version, "v");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
}

TEST(Dsds, MissingFileIsIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/none.dsds"), IoError);
}

TEST(Csv, HeaderAndNumbers) {
  const auto ds = parse_csv("a, b\n1,2\n\n3.5,-4e-1\n+5,6\n", 0.1);
  EXPECT_EQ(ds.length(), 3);
  ASSERT_EQ(ds.names.size(), 2u);
  EXPECT_EQ(ds.names[0], "a");
  EXPECT_EQ(ds.names[1], "b");
  EXPECT_EQ(ds.data(1, 1), -0.4);
  EXPECT_EQ(ds.data(2, 0), 5.0);
  EXPECT_EQ(ds.dt, 0.1);
}

TEST(Csv, HeaderlessAndWindowsLineEndings) {
  const auto ds = parse_csv("1,2\r\n3,4\r\n");
  EXPECT_EQ(ds.length(), 2);
  EXPECT_EQ(ds.data(1, 1), 4.0);
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse_csv(""), FormatError);
  EXPECT_THROW(parse_csv("x,y\n"), FormatError);
  EXPECT_THROW(parse_csv("1,2\n3\n"), FormatError);
  EXPECT_THROW(parse_csv("1,2\n3,abc\n"), FormatError);
  EXPECT_THROW(parse_csv("1,2\n3,nan\n"), FormatError);
  EXPECT_THROW(parse_csv("1,2\n3,\n"), FormatError);
  try {
    parse_csv("1,2\n3,4\n5,6,7\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Csv, FormatParseRoundTrip) {
  const TrajectoryDataset ds = sample_dataset();
  const auto path = scratch("rt.csv").string();
  save_csv(path, ds);
  const auto back = load_csv(path, ds.dt);
  EXPECT_TRUE((back.data.array() == ds.data.array()).all());
  EXPECT_EQ(back.names, ds.names);
}

TEST(MutualInformation, ZeroLagIsTheMaximum) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Vector x(4992);  // multiple of 16: equal bins
  double v = 0.0;
  for (Index t = 0; t < x.size(); ++t) x(t) = v = 0.9 * v + normal(rng);
  const double i0 = mutual_information(x, 0);
  EXPECT_NEAR(i0, std::log(16.0), 1e-9);  // equiprobable bins: I(0) is the bin entropy
  for (Index k : {1, 5, 20}) EXPECT_LE(mutual_information(x, k), i0);
}

TEST(MutualInformation, WhiteNoiseFallsBackToOne) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  Vector x(20000);
  for (Index t = 0; t < x.size(); ++t) x(t) = normal(rng);
  const auto d = mutual_information_delay(x, 30);
  EXPECT_FALSE(d.interior_minimum);
  EXPECT_EQ(d.tau, 1);
  EXPECT_EQ(d.mi.size(), 30u);
}

TEST(MutualInformation, SineMinimumNearQuarterPeriod) {
  // the minimum of a noisy sine is broad, so "near" is a twentieth of the period
  const double P = 200.0;
  for (double noise : {0.3, 0.5}) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, noise);
    Vector x(40000);
    for (Index t = 0; t < x.size(); ++t) x(t) = std::sin(2 * M_PI * static_cast<double>(t) / P) + normal(rng);
    const auto d = mutual_information_delay(x, 100);
    EXPECT_TRUE(d.interior_minimum);
    EXPECT_NEAR(static_cast<double>(d.tau), P / 4.0, P / 20.0) << "noise " << noise;
  }
}

TEST(MutualInformation, NoFalseDipsOnNoise) {
  int hits = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::normal_distribution<double> normal;
    Vector x(20000);
    for (Index t = 0; t < x.size(); ++t) x(t) = normal(rng);
    hits += mutual_information_delay(x, 30).interior_minimum ? 1 : 0;
  }
  EXPECT_LE(hits, 1);
}

TEST(MutualInformation, Contracts) {
  EXPECT_THROW(mutual_information_delay(Vector::Ones(500), 10), NumericError);
  EXPECT_THROW(mutual_information_delay(Vector::LinSpaced(50, 0, 1), 10), ContractError);
}

TEST(DelayEmbed, Rows) {
  const Vector x = Vector::LinSpaced(10, 0.0, 9.0);
  const auto e = delay_embed(x, {3, 2}, 0.5);
  EXPECT_EQ(e.length(), 6);
  EXPECT_EQ(e.dim(), 3);
  EXPECT_EQ(e.dt, 0.5);
  EXPECT_EQ(e.data(0, 0), 0.0);
  EXPECT_EQ(e.data(0, 1), 2.0);
  EXPECT_EQ(e.data(0, 2), 4.0);
  EXPECT_EQ(e.data(5, 2), 9.0);
  EXPECT_EQ(delay_embed(x, {1, 7}).length(), 10);
  EXPECT_THROW(delay_embed(x, {6, 2}), ConfigError);
  EXPECT_THROW(delay_embed(x, {2, 0}), ConfigError);
}

TEST(GaussianSmooth, ReferenceValues) {
  Vector x(30);
  for (Index i = 0; i < 30; ++i) x(i) = static_cast<double>((i * 7) % 11) - 5.0;
  const Vector y = gaussian_smooth(x, 2.5);
  EXPECT_NEAR(y(0), -0.7661160216694238, 1e-13);
  EXPECT_NEAR(y(1), -0.5137221746589185, 1e-13);
  EXPECT_NEAR(y(7), -0.0039523310151069425, 1e-13);
  EXPECT_NEAR(y(15), 0.47710799671219173, 1e-13);
  EXPECT_NEAR(y(29), 0.8659952437747633, 1e-13);
}

TEST(GaussianSmooth, ImpulseConstantAndVariance) {
  Vector impulse = Vector::Zero(41);
  impulse(20) = 1.0;
  const Vector y = gaussian_smooth(impulse, 3.0);
  EXPECT_NEAR(y(20), 0.1329845385507837, 1e-13);
  EXPECT_NEAR(y(23), 0.08065919989878699, 1e-13);
  EXPECT_NEAR(y.sum(), 1.0, 1e-12);
  double var = 0.0;
  for (Index i = 0; i < 41; ++i) var += y(i) * static_cast<double>((i - 20) * (i - 20));
  EXPECT_NEAR(var, 8.995244792325495, 1e-11);
  const Vector c = gaussian_smooth(Vector::Constant(50, 2.5), 4.0);
  EXPECT_NEAR((c.array() - 2.5).abs().maxCoeff(), 0.0, 1e-14);
  EXPECT_THROW(gaussian_smooth(Vector::Ones(10), 3.0), ContractError);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mctnet/io.hpp"

using namespace mctnet;

namespace {

LandscapeDataset small_dataset(std::size_t n_ts = 2) {
  const auto p = build_problem(ModelId::kLandauZener, 1.0);
  auto ds = generate_dataset(p, 0.5, 2.0, 0.5, default_mesh(n_ts, 4));
  ds.seed = 99;
  return ds;
}

std::string bytes_of(const LandscapeDataset& ds) {
  std::ostringstream os;
  save_dataset(ds, os);
  return os.str();
}

std::string error_of(const std::string& bytes) {
  std::istringstream is(bytes);
  try {
    load_dataset(is, "mem");
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(DatasetFile, RoundTrip) {
  for (std::size_t n_ts : {2u, 3u}) {
    const auto ds = small_dataset(n_ts);
    std::istringstream is(bytes_of(ds));
    const auto back = load_dataset(is);
    EXPECT_EQ(back.times, ds.times);
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.mesh.pixel_count(), ds.mesh.pixel_count());
    EXPECT_EQ(back.problem.model_id, ds.problem.model_id);
    EXPECT_EQ(back.problem.delta, ds.problem.delta);
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.landscapes[i].pixels, ds.landscapes[i].pixels);
  }
}

TEST(DatasetFile, GeneralizedModelRoundTrip) {
  const auto p = build_problem(ModelId::kGeneralizedLZ3, 1.0, 0.7, 1.3);
  const auto ds = generate_dataset(p, 1.0, 2.0, 1.0, default_mesh(2, 3));
  std::istringstream is(bytes_of(ds));
  const auto back = load_dataset(is);
  EXPECT_EQ(back.problem.delta_a, 0.7);
  EXPECT_EQ(back.problem.delta_b, 1.3);
  EXPECT_EQ(back.landscapes[1].pixels, ds.landscapes[1].pixels);
}

TEST(DatasetFile, FileRoundTripAndChecksum) {
  const auto dir = std::filesystem::temp_directory_path() / "mctnet_test_io";
  std::filesystem::create_directories(dir);
  const auto ds = small_dataset();
  save_dataset(ds, dir / "a.mctl");
  save_dataset(ds, dir / "b.mctl");
  EXPECT_EQ(sha256_file(dir / "a.mctl"), sha256_file(dir / "b.mctl"));
  EXPECT_EQ(load_dataset(dir / "a.mctl").landscapes[2].pixels, ds.landscapes[2].pixels);
  EXPECT_THROW(load_dataset(dir / "missing.mctl"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(DatasetFile, TruncationNamesOffset) {
  const auto bytes = bytes_of(small_dataset());
  const auto msg = error_of(bytes.substr(0, bytes.size() - 8));
  EXPECT_NE(msg.find("truncated landscape 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("offset " + std::to_string(bytes.size() - 8)), std::string::npos) << msg;
  EXPECT_NE(error_of(bytes.substr(0, 6)).find("truncated version at offset 6"), std::string::npos);
}

TEST(DatasetFile, BadVersionAndMagic) {
  auto bytes = bytes_of(small_dataset());
  auto v99 = bytes;
  v99[4] = 99;
  EXPECT_NE(error_of(v99).find("unsupported version 99 at offset 4"), std::string::npos) << error_of(v99);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_NE(error_of(magic).find("bad magic"), std::string::npos);
  EXPECT_NE(error_of(magic).find("offset 0"), std::string::npos);
  EXPECT_NE(error_of(bytes + "zz").find("trailing bytes"), std::string::npos);
}

TEST(DatasetFile, CorruptMetadata) {
  auto bytes = bytes_of(small_dataset());
  bytes[16] = '!';
  EXPECT_NE(error_of(bytes).find("offset 16"), std::string::npos) << error_of(bytes);
}

TEST(NetworkFile, RoundTrip) {
  NetworkFile net;
  net.params = init_network({12, 5, 2}, 4);
  net.params.layers[3].bias[7] = 0.25;
  net.config.seed = 4;
  net.config.epochs = 7;
  net.report.train_loss = {0.5, 0.25};
  net.report.train_mse = {0.4, 0.2};
  net.report.val_mse = {0.45, 0.3};
  std::ostringstream os;
  save_network(net, os);
  std::istringstream is(os.str());
  const auto back = load_network(is);
  EXPECT_EQ(back.params.spec, net.params.spec);
  for (std::size_t l = 0; l < kLayerCount; ++l) {
    EXPECT_EQ(back.params.layers[l].weights, net.params.layers[l].weights);
    EXPECT_EQ(back.params.layers[l].bias, net.params.layers[l].bias);
  }
  EXPECT_EQ(back.config.epochs, 7);
  EXPECT_EQ(back.config.seed, 4u);
  EXPECT_EQ(back.report.val_mse, net.report.val_mse);

  const std::string bytes = os.str();
  std::istringstream cut(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_network(cut), FormatError);
  std::istringstream wrong(bytes_of(small_dataset()));
  EXPECT_THROW(load_network(wrong), FormatError);
}

TEST(SplitFile, RoundTrip) {
  const auto s = split_dataset(37, 5);
  std::stringstream ss;
  write_split(s, ss);
  const auto back = read_split(ss);
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.ae_train, s.ae_train);
  EXPECT_EQ(back.km_train, s.km_train);
  EXPECT_EQ(back.ae_val, s.ae_val);
  EXPECT_EQ(back.perf, s.perf);
  std::istringstream bad("seed 1\nae_train 3 1 2\n");
  EXPECT_THROW(read_split(bad), FormatError);
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

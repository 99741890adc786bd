#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowprior/checks.hpp"
#include "flowprior/errors.hpp"
#include "flowprior/io.hpp"

using namespace flowprior;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("flowprior_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                 "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> idx_fixture() {
  // magic, N = 2, rows = 2, cols = 2, then 8 pixels
  return {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 17, 128, 255, 1, 2, 3, 4};
}

}  // namespace

TEST(Pnm, RoundTripGrayAndColor) {
  TempDir dir;
  Rng rng(1);
  for (int c : {1, 3}) {
    Tensor img({1, c, 5, 7});
    for (double& v : img.data()) v = rng.uniform_int(0, 255);
    const std::string path = dir.file("img" + std::to_string(c) + ".pnm");
    write_pnm(path, img);
    EXPECT_EQ(read_pnm(path), img);
  }
}

TEST(Pnm, HeaderCommentsAndErrors) {
  TempDir dir;
  const std::string path = dir.file("c.pgm");
  const std::string text = "P5\n# a comment\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(10);
  bytes.push_back(250);
  write_bytes(path, bytes);
  const Tensor img = read_pnm(path);
  EXPECT_EQ(img.values(), (std::vector<double>{10, 250}));

  const std::string bad = "P5\n2 1\n65535\n";
  write_bytes(path, std::vector<std::uint8_t>(bad.begin(), bad.end()));
  EXPECT_THROW(read_pnm(path), ParseError);
  const std::string short_payload = "P5\n4 4\n255\n";
  std::vector<std::uint8_t> sp(short_payload.begin(), short_payload.end());
  sp.push_back(1);
  write_bytes(path, sp);
  EXPECT_THROW(read_pnm(path), ParseError);
}

TEST(Pnm, MaskRoundTrip) {
  TempDir dir;
  Tensor mask({1, 3, 4, 4}, 1.0);
  for (int c = 0; c < 3; ++c) mask.at(0, c, 1, 2) = 0.0;
  write_mask(dir.file("m.pgm"), mask);
  EXPECT_EQ(read_mask(dir.file("m.pgm"), 3), mask);
}

TEST(Idx, Fixture) {
  const auto images = parse_idx_images(idx_fixture());
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images[0].shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(images[0].values(), (std::vector<double>{0, 17, 128, 255}));
  EXPECT_EQ(images[1].values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Idx, TruncatedAndBadMagic) {
  auto bytes = idx_fixture();
  bytes.pop_back();
  try {
    parse_idx_images(bytes);
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 8"), std::string::npos) << msg;
    EXPECT_NE(msg.find("found 7"), std::string::npos) << msg;
  }
  auto magic = idx_fixture();
  magic[3] = 1;
  EXPECT_THROW(parse_idx_images(magic), ParseError);
  EXPECT_THROW(parse_idx_images({0, 0, 8}), ParseError);
}

TEST(Idx, EmptyAndWriteBack) {
  EXPECT_TRUE(parse_idx_images({0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28}).empty());
  TempDir dir;
  const auto images = parse_idx_images(idx_fixture());
  write_idx_images(dir.file("x.idx"), images);
  EXPECT_EQ(read_file(dir.file("x.idx")), idx_fixture());
  EXPECT_EQ(read_idx_images(dir.file("x.idx")), images);
}

TEST(Idx, Labels) {
  TempDir dir;
  write_bytes(dir.file("l.idx"), {0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9});
  EXPECT_EQ(read_idx_labels(dir.file("l.idx")), (std::vector<int>{7, 0, 9}));
}

TEST(Pad, Centered) {
  const Tensor img({1, 1, 28, 28}, 5.0);
  const Tensor p = pad_image(img, 32, 32);
  EXPECT_EQ(p.at(0, 0, 1, 1), 0.0);
  EXPECT_EQ(p.at(0, 0, 2, 2), 5.0);
  EXPECT_EQ(p.at(0, 0, 29, 29), 5.0);
  EXPECT_EQ(p.at(0, 0, 30, 30), 0.0);
}

TEST(Psnr, ClosedForms) {
  const Tensor a({1, 1, 8, 8}, 100.0), b({1, 1, 8, 8}, 110.0);
  EXPECT_NEAR(psnr(a, b), 28.13, 0.01);
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0 / 10.0), 1e-12);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_EQ(psnr_capped(a, a), 99.0);
  EXPECT_THROW(psnr(a, Tensor({1, 1, 4, 4})), ShapeError);

  Rng rng(2);
  const Tensor x = rng.uniform_tensor({1, 3, 5, 5}, 0.0, 255.0), y = rng.uniform_tensor({1, 3, 5, 5}, 0.0, 255.0);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]) / static_cast<double>(x.size());
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(255.0 * 255.0 / mse), 1e-10);
}

TEST(Config, FixedPointAndOverrides) {
  TrainConfig c = TrainConfig::div2k();
  c.learning_rate = 0.1 + 0.2;  // not exactly representable in short form
  c.seed = 12345678901234ULL;
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
  const TrainConfig back = parse_config(text);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_EQ(back.model.encoder, EncoderKind::deep);

  const TrainConfig o = parse_config("preset = mnist\n# comment\nsteps = 4  \nhidden=32\n");
  EXPECT_EQ(o.model.steps, 4);
  EXPECT_EQ(o.model.hidden, 32);
  EXPECT_EQ(o.batch_size, 50);
  EXPECT_THROW(parse_config("colour = red"), ParseError);
  EXPECT_THROW(parse_config("steps = four"), ParseError);
  EXPECT_THROW(parse_config("steps 4"), ParseError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  TrainConfig cfg;
  cfg.model.height = cfg.model.width = 8;
  cfg.model.levels = 2;
  cfg.model.steps = 2;
  cfg.model.hidden = 4;
  cfg.model.blocks = 1;
  FlowModel m = checks::random_model(cfg.model, 3);
  m.levels[1].steps[0].actnorm.initialized = false;
  AdamState adam;
  adam.step = 7;
  for (const ParamRef& p : m.parameters()) {
    Rng rng(p.value->size());
    adam.first.push_back(rng.normal_tensor(p.value->shape()));
    adam.second.push_back(rng.normal_tensor(p.value->shape()));
  }
  TempDir dir;
  save_checkpoint(dir.file("m.ckpt"), cfg, m, 42, &adam);
  Checkpoint ck = load_checkpoint(dir.file("m.ckpt"));
  EXPECT_EQ(ck.step, 42);
  const auto a = m.parameters(), b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  }
  EXPECT_FALSE(ck.model.levels[1].steps[0].actnorm.initialized);
  EXPECT_TRUE(ck.model.levels[0].steps[0].actnorm.initialized);
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(ck.adam->step, 7);
  EXPECT_EQ(ck.adam->first, adam.first);
  EXPECT_EQ(ck.adam->second, adam.second);

  // Saving the loaded model reproduces the file byte for byte.
  save_checkpoint(dir.file("again.ckpt"), ck.config, ck.model, ck.step, &*ck.adam);
  EXPECT_EQ(read_file(dir.file("again.ckpt")), read_file(dir.file("m.ckpt")));
}

TEST(Checkpoint, RejectsCorruption) {
  TrainConfig cfg;
  cfg.model.height = cfg.model.width = 4;
  cfg.model.steps = 1;
  cfg.model.hidden = 2;
  FlowModel m(cfg.model);
  std::stringstream good;
  write_checkpoint(good, cfg, m, 0, nullptr);
  const std::string bytes = good.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_checkpoint(s1), ParseError);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  std::stringstream s2(bad_version);
  try {
    read_checkpoint(s2);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos);
  }

  std::stringstream s3(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(s3), ParseError);
}

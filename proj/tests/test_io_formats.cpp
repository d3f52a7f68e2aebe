#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>

#include "testing.hpp"

namespace genisp {
namespace {

namespace fs = std::filesystem;

io::GrawErrc decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    io::decode_graw(bytes);
  } catch (const io::GrawError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return io::GrawErrc::io_error;
}

std::vector<std::uint8_t> small_file() {
  BayerFrame f;
  f.width = 4;
  f.height = 2;
  f.set_black_level(10);
  f.white_level = 1000;
  f.samples = {1, 2, 3, 4, 5, 6, 7, 8};
  return io::encode_graw(f);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("genisp_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Graw, HeaderLayoutIsLittleEndian) {
  const auto bytes = small_file();
  ASSERT_EQ(bytes.size(), io::kGrawHeaderSize + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "GRAW1\n");
  EXPECT_EQ(bytes[6], 4);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[10], 2);
  EXPECT_EQ(std::string(bytes.begin() + 14, bytes.begin() + 18), "RGGB");
  EXPECT_EQ(bytes[18], 10);
  EXPECT_EQ(bytes[20], 1000 & 0xff);
  EXPECT_EQ(bytes[21], 1000 >> 8);
  EXPECT_EQ(bytes[22], 0);  // no CST
  EXPECT_EQ(bytes[io::kGrawHeaderSize], 1);
  EXPECT_EQ(bytes[io::kGrawHeaderSize + 1], 0);
}

TEST(Graw, RandomFramesRoundTripBitExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const BayerFrame f = testing::random_frame(rng);
    const auto bytes = io::encode_graw(f);
    const BayerFrame g = io::decode_graw(bytes);
    EXPECT_EQ(f, g);
    EXPECT_EQ(io::encode_graw(g), bytes);
  }
}

TEST(Graw, IdentityCstDecodesToNoOp) {
  std::mt19937_64 rng(2);
  BayerFrame f = testing::random_frame(rng, 16);
  f.cst = CstMatrix::identity();
  const auto g = io::decode_graw(io::encode_graw(f));
  ASSERT_TRUE(g.cst.has_value());
  const auto img = testing::random_image<double>(3, 4, 5, rng);
  EXPECT_EQ(apply_cst(img, *g.cst), img);
}

TEST(Graw, MissingCstStaysAbsent) {
  const auto g = io::decode_graw(small_file());
  EXPECT_FALSE(g.cst.has_value());
}

TEST(Graw, DistinctErrorCodes) {
  auto bytes = small_file();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), io::GrawErrc::bad_magic);
  EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + 3}), io::GrawErrc::bad_magic);

  EXPECT_EQ(decode_error({bytes.begin(), bytes.end() - 1}), io::GrawErrc::truncated);
  EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + 20}), io::GrawErrc::truncated);

  bad = bytes;
  bad[14] = 'X';
  EXPECT_EQ(decode_error(bad), io::GrawErrc::unknown_cfa);

  bad = bytes;
  bad[6] = 3;  // odd width
  EXPECT_EQ(decode_error(bad), io::GrawErrc::invalid_dimensions);

  bad = bytes;
  bad[20] = 5;  // white 5 <= black 10
  bad[21] = 0;
  EXPECT_EQ(decode_error(bad), io::GrawErrc::invalid_levels);

  bad = bytes;
  bad[22] = 2;
  EXPECT_EQ(decode_error(bad), io::GrawErrc::invalid_header);

  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(decode_error(bad), io::GrawErrc::trailing_data);

  EXPECT_THROW(io::read_graw("/nonexistent/file.graw"), io::GrawError);
}

TEST(Graw, RandomCorruptionNeverCrashes) {
  std::mt19937_64 rng(3);
  const auto bytes = small_file();
  for (int trial = 0; trial < 2000; ++trial) {
    auto b = bytes;
    b.resize(rng() % (bytes.size() + 4));
    for (auto& v : b) {
      if (rng() % 8 == 0) v = static_cast<std::uint8_t>(rng());
    }
    try {
      const auto f = io::decode_graw(b);
      EXPECT_NO_THROW(f.validate());
    } catch (const io::GrawError&) {
    }
  }
}

TEST(Graw, FileRoundTrip) {
  const auto dir = scratch_dir("graw");
  std::mt19937_64 rng(4);
  const auto f = testing::random_frame(rng);
  io::write_graw((dir / "a.graw").string(), f);
  EXPECT_EQ(io::read_graw((dir / "a.graw").string()), f);
  fs::remove_all(dir);
}

std::string header_of(const std::vector<std::uint8_t>& b, std::size_t n) { return std::string(b.begin(), b.begin() + n); }

TEST(Ppm, EightBitBoundaryValues) {
  Tensor<double> img({3, 1, 2});
  const double vals[6] = {0.5, 1.0, -0.2, 0.5, 1.7, 0.0};
  // Planar layout: channel-major.
  for (std::size_t i = 0; i < 6; ++i) img[i] = vals[i];
  const auto bytes = io::encode_ppm(img, 8);
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(header_of(bytes, header.size()), header);
  // Pixel (0,0): R=0.5, G=-0.2, B=1.7 ; pixel (0,1): R=1.0, G=0.5, B=0.0.
  const std::vector<std::uint8_t> px(bytes.begin() + header.size(), bytes.end());
  EXPECT_EQ(px, (std::vector<std::uint8_t>{128, 0, 255, 255, 128, 0}));
}

TEST(Ppm, AllHalfImageIs128) {
  const Tensor<float> img({3, 3, 4}, 0.5f);
  const auto bytes = io::encode_ppm(img);
  const std::size_t hsize = std::string("P6\n4 3\n255\n").size();
  for (std::size_t i = hsize; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 128);
}

TEST(Ppm, SixteenBitIsBigEndian) {
  Tensor<double> img({3, 1, 1});
  img[0] = 1.0;
  img[1] = 0.5;
  img[2] = -1.0;
  const auto bytes = io::encode_ppm(img, 16);
  const std::string header = "P6\n1 1\n65535\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(header_of(bytes, header.size()), header);
  // 0.5 * 65535 = 32767.5 rounds away from zero to 32768 = 0x8000.
  const std::vector<std::uint8_t> px(bytes.begin() + header.size(), bytes.end());
  EXPECT_EQ(px, (std::vector<std::uint8_t>{0xff, 0xff, 0x80, 0x00, 0x00, 0x00}));
}

TEST(Ppm, RejectsBadInput) {
  EXPECT_THROW(io::encode_ppm(Tensor<double>({4, 2, 2})), ShapeError);
  EXPECT_THROW(io::encode_ppm(Tensor<double>({3, 2, 2}), 12), std::invalid_argument);
  EXPECT_THROW(io::export_image(Tensor<double>({3, 2, 2}), "/nonexistent/dir/x.ppm"), std::runtime_error);
}

TEST(Weights, RoundTripIsBitExact) {
  const auto dir = scratch_dir("weights");
  GenIspModel<float> a(11), b(99);
  // Make every tensor non-trivial, including the zero-initialised heads.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& [name, t] : a.parameters()) {
    for (auto& v : t->storage()) v += u(rng);
  }
  const auto path = (dir / "w.json").string();
  io::save_weights(a.parameters(), path);
  EXPECT_TRUE(fs::exists(dir / "w.bin"));
  io::load_weights(b.parameters(), path);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(std::memcmp(pa[i].second->data().data(), pb[i].second->data().data(),
                          pa[i].second->numel() * sizeof(float)),
              0)
        << pa[i].first;
  }
  fs::remove_all(dir);
}

TEST(Weights, RejectsMismatchedManifest) {
  GenIspModel<float> m(1);
  auto enc = io::encode_weights(m.parameters(), "w.bin");
  auto bad = enc.manifest;
  bad["tensors"][0]["shape"] = {1, 2, 3};
  EXPECT_THROW(io::decode_weights(m.parameters(), bad, enc.data), io::WeightsError);
  bad = enc.manifest;
  bad["tensors"].erase(bad["tensors"].begin());
  EXPECT_THROW(io::decode_weights(m.parameters(), bad, enc.data), io::WeightsError);
  bad = enc.manifest;
  bad["format"] = "other";
  EXPECT_THROW(io::decode_weights(m.parameters(), bad, enc.data), io::WeightsError);
  std::vector<std::uint8_t> short_data(enc.data.begin(), enc.data.end() - 4);
  EXPECT_THROW(io::decode_weights(m.parameters(), enc.manifest, short_data), io::WeightsError);
}

nlohmann::json sample_annotations() {
  return nlohmann::json::parse(R"({
    "images": [{"id": 1, "file": "a.graw", "width": 64, "height": 48},
               {"id": 2, "file": "b.graw", "width": 64, "height": 48}],
    "categories": [{"id": 1, "name": "car"}, {"id": 3, "name": "person"}],
    "annotations": [{"image_id": 1, "category_id": 1, "bbox": [2, 4, 10, 6]},
                    {"image_id": 1, "category_id": 3, "bbox": [20, 20, 5, 5]}]
  })");
}

TEST(Annotations, ParsesBoxesAsCorners) {
  const auto f = io::parse_annotations(sample_annotations());
  ASSERT_EQ(f.images.size(), 2u);
  EXPECT_EQ(f.category_ids(), (std::vector<int>{1, 3}));
  EXPECT_EQ(f.annotations.images.at(1)[0], (Box{2, 4, 12, 10, 1}));
  EXPECT_TRUE(f.annotations.images.at(2).empty());
  EXPECT_EQ(io::parse_annotations(io::to_json(f)).annotations.images, f.annotations.images);
}

TEST(Annotations, RejectsInconsistentFiles) {
  auto j = sample_annotations();
  j["annotations"][0]["image_id"] = 7;
  EXPECT_THROW(io::parse_annotations(j), io::AnnotationError);
  j = sample_annotations();
  j["annotations"][0]["category_id"] = 2;
  EXPECT_THROW(io::parse_annotations(j), io::AnnotationError);
  j = sample_annotations();
  j["annotations"][0]["bbox"] = {0, 0, 0, 5};
  EXPECT_THROW(io::parse_annotations(j), io::AnnotationError);
  j = sample_annotations();
  j["images"][1]["id"] = 1;
  EXPECT_THROW(io::parse_annotations(j), io::AnnotationError);
  j = sample_annotations();
  j.erase("categories");
  EXPECT_THROW(io::parse_annotations(j), io::AnnotationError);
}

TEST(Detections, JsonRoundTrip) {
  DetectionSet d;
  d.images[3] = {{{1, 2, 5, 9, 1}, 0.75}, {{0, 0, 1, 1, 2}, 0.5}};
  const auto back = io::parse_detections(io::to_json(d));
  ASSERT_EQ(back.images.at(3).size(), 2u);
  EXPECT_EQ(back.images.at(3)[0].box, d.images[3][0].box);
  EXPECT_EQ(back.images.at(3)[1].score, 0.5);
  EXPECT_THROW(io::parse_detections(nlohmann::json::object()), io::AnnotationError);
}

TEST(ApReportJson, HasStableKeys) {
  ApReport r;
  r.ap50 = 1;
  r.per_category[1] = {1, 0.5, 0.25};
  const auto j = io::to_json(r);
  EXPECT_EQ(j.at("AP50"), 1.0);
  EXPECT_EQ(j.at("per_category").at("1").at("AP75"), 0.5);
}

TEST(RunConfig, DefaultsMatchTheRecipe) {
  const auto rc = io::parse_run_config_text("{}");
  EXPECT_EQ(rc.train.epochs, 15);
  EXPECT_EQ(rc.train.batch_size, 8u);
  EXPECT_EQ(rc.train.lr_at(0), 1e-2);
  EXPECT_EQ(rc.train.lr_at(10), 1e-4);
  EXPECT_EQ(rc.train.loss.lambda_wb, 0.1);
  EXPECT_TRUE(rc.train.use_cst);
}

TEST(RunConfig, ReadsEveryKey) {
  const auto rc = io::parse_run_config_text(R"({
    "epochs": 3, "batch_size": 2, "seed": 42, "threads": 2,
    "lr_schedule": [[0, 0.1], [2, 0.01]], "adam": {"beta1": 0.8},
    "augment": false, "augmentation": {"brightness": 0.05, "contrast": 0.1},
    "lambda_wb": 1.5, "grad_clip_norm": 0, "max_steps": 9,
    "use_convwb": false, "use_convcc": false, "use_cst": false,
    "resize": {"long_side": 100, "short_side": 50, "enabled": false},
    "inputs": ["x.graw"], "annotations": "a.json", "weights": "w.json",
    "out": "o", "detections": "d.json", "bit_depth": 16})");
  EXPECT_EQ(rc.train.epochs, 3);
  EXPECT_EQ(rc.train.seed, 42u);
  EXPECT_EQ(rc.train.lr_at(2), 0.01);
  EXPECT_EQ(rc.train.adam.beta1, 0.8);
  EXPECT_FALSE(rc.train.augment);
  EXPECT_EQ(rc.train.loss.lambda_wb, 1.5);
  EXPECT_EQ(rc.train.max_steps, 9u);
  EXPECT_FALSE(rc.train.use_convwb);
  EXPECT_FALSE(rc.train.use_cst);
  EXPECT_EQ(rc.train.resize.max_long, 100u);
  EXPECT_FALSE(rc.train.resize_enabled);
  EXPECT_EQ(rc.inputs, (std::vector<std::string>{"x.graw"}));
  EXPECT_EQ(rc.bit_depth, 16);
}

TEST(RunConfig, StrictParsing) {
  EXPECT_THROW(io::parse_run_config_text(R"({"epoch": 3})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"adam": {"beta": 0.9}})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"resize": {"long": 9}})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"lambda_wb": -0.5})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"epochs": "many"})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"lr_schedule": [[0, 1e-3], [1, 1e-2]]})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text(R"({"bit_depth": 12})"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text("{not json"), io::ConfigError);
  EXPECT_THROW(io::parse_run_config_text("[]"), io::ConfigError);
}

}  // namespace
}  // namespace genisp

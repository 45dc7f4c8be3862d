#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "medcl/dataset.hpp"
#include "medcl/png_io.hpp"

using namespace medcl;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("medcl_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PhantomSpec small_spec() {
  PhantomSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.num_classes = 3;
  return spec;
}

Dataset make_and_write(const TempDir& dir, int count = 3) {
  Dataset ds = generate_dataset(small_spec(), count, 123, "train");
  write_dataset(ds.samples, ds.manifest, dir.path);
  return ds;
}

ErrorCode read_error_code(const fs::path& dir) {
  try {
    read_dataset(dir);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected read_dataset to throw");
  return ErrorCode::InternalError;
}

}  // namespace

TEST_CASE("png 16-bit round trip is exact") {
  TempDir dir("png16");
  Grid<uint16_t> img(5, 7);
  uint16_t v = 1;
  for (auto& px : img) px = (v = static_cast<uint16_t>(v * 31 + 7));
  img(0, 0) = 0;
  img(4, 6) = 65535;

  write_png16(dir.path / "x.png", img);
  auto back = read_png16(dir.path / "x.png");
  CHECK(back == img);
}

TEST_CASE("png 8-bit round trip is exact") {
  TempDir dir("png8");
  Grid<uint8_t> img(4, 9);
  uint8_t v = 3;
  for (auto& px : img) px = (v = static_cast<uint8_t>(v * 13 + 1));

  write_png8(dir.path / "x.png", img);
  auto back = read_png8(dir.path / "x.png");
  CHECK(back == img);
}

TEST_CASE("file_crc32 matches the standard check value") {
  TempDir dir("crc");
  std::ofstream(dir.path / "check.txt") << "123456789";
  // The canonical CRC-32 test vector.
  CHECK(file_crc32(dir.path / "check.txt") == 0xCBF43926u);
}

TEST_CASE("dataset round trip preserves every field") {
  TempDir dir("roundtrip");
  Dataset ds = make_and_write(dir);

  Dataset back = read_dataset(dir.path);
  CHECK(back.manifest.split == "train");
  CHECK(back.manifest.format_version == kManifestFormatVersion);
  CHECK(back.manifest.generator == ds.manifest.generator);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CAPTURE(i);
    CHECK(back.samples[i] == ds.samples[i]);
    CHECK(back.manifest.entries[i].id == ds.manifest.entries[i].id);
    CHECK(back.manifest.entries[i].seed == ds.manifest.entries[i].seed);
    CHECK(back.manifest.entries[i].present_classes == ds.manifest.entries[i].present_classes);
  }
}

TEST_CASE("missing referenced file is reported with its path") {
  TempDir dir("missing");
  make_and_write(dir);
  fs::remove(dir.path / "labels" / "train_0001.png");

  try {
    read_dataset(dir.path);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
    CHECK(std::string(e.what()).find("train_0001.png") != std::string::npos);
  }
}

TEST_CASE("corrupted payload fails the checksum") {
  TempDir dir("crcfail");
  make_and_write(dir);
  // Appended bytes change the CRC while leaving the PNG decodable.
  std::ofstream(dir.path / "images" / "train_0000.png", std::ios::app) << "garbage";

  CHECK(read_error_code(dir.path) == ErrorCode::ChecksumMismatch);
}

TEST_CASE("label value outside the class range is rejected") {
  TempDir dir("badlabel");
  Dataset ds = generate_dataset(small_spec(), 2, 5, "train");
  ds.samples[1].labels(3, 3) = 200;
  write_dataset(ds.samples, ds.manifest, dir.path);

  CHECK(read_error_code(dir.path) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("scribble value outside class range plus sentinel is rejected") {
  TempDir dir("badscribble");
  Dataset ds = generate_dataset(small_spec(), 2, 5, "train");
  ds.samples[0].scribbles(2, 2) = 17;
  write_dataset(ds.samples, ds.manifest, dir.path);

  CHECK(read_error_code(dir.path) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("unknown format version is rejected") {
  TempDir dir("version");
  make_and_write(dir);

  auto manifest_path = dir.path / "manifest.json";
  nlohmann::json j;
  std::ifstream(manifest_path) >> j;
  j["format_version"] = 99;
  std::ofstream(manifest_path) << j.dump(2);

  CHECK(read_error_code(dir.path) == ErrorCode::VersionMismatch);
}

TEST_CASE("shape disagreement with the manifest is rejected") {
  TempDir dir("shape");
  make_and_write(dir);

  auto manifest_path = dir.path / "manifest.json";
  nlohmann::json j;
  std::ifstream(manifest_path) >> j;
  j["generator"]["height"] = 64;  // files on disk are 32 tall
  std::ofstream(manifest_path) << j.dump(2);

  CHECK(read_error_code(dir.path) == ErrorCode::ShapeMismatch);
}

TEST_CASE("manifest that is not JSON is a format error") {
  TempDir dir("notjson");
  make_and_write(dir);
  std::ofstream(dir.path / "manifest.json") << "this is not json {";

  CHECK(read_error_code(dir.path) == ErrorCode::FormatError);
}

TEST_CASE("absent manifest is an io error") {
  TempDir dir("nomanifest");
  CHECK(read_error_code(dir.path) == ErrorCode::IoError);
}

TEST_CASE("non-grayscale png is a format error") {
  TempDir dir("rgb");
  make_and_write(dir, 1);
  // Replace the image with an RGB png of the right size; CRC must be patched
  // so the format check (not the checksum) is what fires.
  auto img_path = dir.path / "images" / "train_0000.png";
  std::vector<uint8_t> rgb(32 * 32 * 3, 128);
  write_png_rgb(img_path, 32, 32, rgb);

  auto manifest_path = dir.path / "manifest.json";
  nlohmann::json j;
  std::ifstream(manifest_path) >> j;
  j["entries"][0]["image_crc32"] = file_crc32(img_path);
  std::ofstream(manifest_path) << j.dump(2);

  CHECK(read_error_code(dir.path) == ErrorCode::FormatError);
}

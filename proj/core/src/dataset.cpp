#include "medcl/dataset.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "medcl/png_io.hpp"
#include "medcl/rng.hpp"

namespace medcl {

namespace {

using json = nlohmann::ordered_json;

json spec_to_json(const PhantomSpec& spec) {
  return json{
      {"height", spec.height},
      {"width", spec.width},
      {"num_classes", spec.num_classes},
      {"mode", spec.mode == PhantomMode::Structure ? "structure" : "pathology"},
      {"noise_sigma", spec.noise_sigma},
      {"bias_field_strength", spec.bias_field_strength},
      {"shape_jitter", spec.shape_jitter},
      {"scribble_coverage", spec.scribble_coverage},
  };
}

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec spec;
  try {
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    std::string mode = j.at("mode").get<std::string>();
    if (mode == "structure") {
      spec.mode = PhantomMode::Structure;
    } else if (mode == "pathology") {
      spec.mode = PhantomMode::Pathology;
    } else {
      fail(ErrorCode::FormatError, "unknown phantom mode: " + mode);
    }
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.bias_field_strength = j.at("bias_field_strength").get<double>();
    spec.shape_jitter = j.at("shape_jitter").get<double>();
    spec.scribble_coverage = j.at("scribble_coverage").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad generator spec in manifest: ") + e.what());
  }
  return spec;
}

Grid<uint16_t> image_to_u16(const ImageF& image) {
  Grid<uint16_t> out(image.height(), image.width());
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c)
      out(r, c) = static_cast<uint16_t>(std::lround(image(r, c) * 65535.0));
  return out;
}

ImageF u16_to_image(const Grid<uint16_t>& raw) {
  ImageF out(raw.height(), raw.width());
  for (int r = 0; r < raw.height(); ++r)
    for (int c = 0; c < raw.width(); ++c) out(r, c) = raw(r, c) / 65535.0;
  return out;
}

void check_shape(const std::string& what, int h, int w, const PhantomSpec& spec) {
  require(h == spec.height && w == spec.width, ErrorCode::ShapeMismatch,
          what + " is " + std::to_string(h) + "x" + std::to_string(w) + ", manifest declares " +
              std::to_string(spec.height) + "x" + std::to_string(spec.width));
}

}  // namespace

void write_dataset(const std::vector<PhantomSample>& samples, DatasetManifest& manifest,
                   const std::filesystem::path& dir) {
  require(!samples.empty(), ErrorCode::InvalidArgument, "dataset must contain samples");
  require(samples.size() == manifest.entries.size(), ErrorCode::InvalidArgument,
          "manifest entries must align with samples");

  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  std::filesystem::create_directories(dir / "scribbles", ec);
  require(!ec, ErrorCode::IoError, "cannot create dataset directories under " + dir.string());

  for (size_t i = 0; i < samples.size(); ++i) {
    SampleEntry& entry = manifest.entries[i];
    require(!entry.id.empty(), ErrorCode::InvalidArgument, "sample entry needs an id");
    entry.image_path = "images/" + entry.id + ".png";
    entry.label_path = "labels/" + entry.id + ".png";
    entry.scribble_path = "scribbles/" + entry.id + ".png";

    write_png16(dir / entry.image_path, image_to_u16(samples[i].image));
    write_png8(dir / entry.label_path, samples[i].labels);
    write_png8(dir / entry.scribble_path, samples[i].scribbles);

    entry.image_crc = file_crc32(dir / entry.image_path);
    entry.label_crc = file_crc32(dir / entry.label_path);
    entry.scribble_crc = file_crc32(dir / entry.scribble_path);
    entry.present_classes = samples[i].present_classes;
  }

  json j;
  j["format_version"] = manifest.format_version;
  j["split"] = manifest.split;
  j["generator"] = spec_to_json(manifest.generator);
  j["entries"] = json::array();
  for (const SampleEntry& entry : manifest.entries) {
    j["entries"].push_back(json{
        {"id", entry.id},
        {"image", entry.image_path},
        {"labels", entry.label_path},
        {"scribbles", entry.scribble_path},
        {"present_classes", entry.present_classes},
        {"seed", entry.seed},
        {"image_crc32", entry.image_crc},
        {"label_crc32", entry.label_crc},
        {"scribble_crc32", entry.scribble_crc},
    });
  }

  std::ofstream out(dir / "manifest.json");
  require(out.good(), ErrorCode::IoError, "cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
  require(out.good(), ErrorCode::IoError, "short write to " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  require(in.good(), ErrorCode::IoError, "missing file: " + manifest_path.string());

  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, "manifest is not valid JSON: " + std::string(e.what()));
  }

  Dataset ds;
  try {
    ds.manifest.format_version = j.at("format_version").get<int>();
  } catch (const json::exception&) {
    fail(ErrorCode::FormatError, "manifest lacks format_version");
  }
  require(ds.manifest.format_version == kManifestFormatVersion, ErrorCode::VersionMismatch,
          "manifest format_version " + std::to_string(ds.manifest.format_version) +
              " unsupported (this build reads version " +
              std::to_string(kManifestFormatVersion) + ")");

  try {
    ds.manifest.split = j.at("split").get<std::string>();
    ds.manifest.generator = spec_from_json(j.at("generator"));
    for (const json& je : j.at("entries")) {
      SampleEntry entry;
      entry.id = je.at("id").get<std::string>();
      entry.image_path = je.at("image").get<std::string>();
      entry.label_path = je.at("labels").get<std::string>();
      entry.scribble_path = je.at("scribbles").get<std::string>();
      entry.present_classes = je.at("present_classes").get<std::set<int>>();
      entry.seed = je.at("seed").get<uint64_t>();
      entry.image_crc = je.at("image_crc32").get<uint32_t>();
      entry.label_crc = je.at("label_crc32").get<uint32_t>();
      entry.scribble_crc = je.at("scribble_crc32").get<uint32_t>();
      ds.manifest.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, "manifest entry malformed: " + std::string(e.what()));
  }
  require(!ds.manifest.entries.empty(), ErrorCode::FormatError, "manifest lists no entries");

  const PhantomSpec& spec = ds.manifest.generator;
  const int m = spec.num_classes;
  for (const SampleEntry& entry : ds.manifest.entries) {
    for (const auto& [rel, crc] :
         {std::pair{entry.image_path, entry.image_crc},
          std::pair{entry.label_path, entry.label_crc},
          std::pair{entry.scribble_path, entry.scribble_crc}}) {
      auto path = dir / rel;
      require(std::filesystem::exists(path), ErrorCode::IoError, "missing file: " + path.string());
      uint32_t actual = file_crc32(path);
      require(actual == crc, ErrorCode::ChecksumMismatch,
              path.string() + " has crc32 " + std::to_string(actual) + ", manifest says " +
                  std::to_string(crc));
    }

    PhantomSample sample;
    auto raw = read_png16(dir / entry.image_path);
    check_shape(entry.image_path, raw.height(), raw.width(), spec);
    sample.image = u16_to_image(raw);

    sample.labels = read_png8(dir / entry.label_path);
    check_shape(entry.label_path, sample.labels.height(), sample.labels.width(), spec);
    for (uint8_t v : sample.labels) {
      require(v <= m, ErrorCode::LabelOutOfRange,
              entry.label_path + " contains label value " + std::to_string(v) +
                  " outside 0.." + std::to_string(m));
    }

    sample.scribbles = read_png8(dir / entry.scribble_path);
    check_shape(entry.scribble_path, sample.scribbles.height(), sample.scribbles.width(), spec);
    for (uint8_t v : sample.scribbles) {
      require(v <= m || v == kUnlabeled, ErrorCode::LabelOutOfRange,
              entry.scribble_path + " contains scribble value " + std::to_string(v) +
                  " outside 0.." + std::to_string(m) + " plus the unlabeled sentinel");
    }

    sample.present_classes = entry.present_classes;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

Dataset generate_dataset(const PhantomSpec& spec, int count, uint64_t seed,
                         const std::string& split) {
  require(count > 0, ErrorCode::InvalidArgument, "dataset sample count must be positive");
  spec.validate();

  Dataset ds;
  ds.manifest.split = split;
  ds.manifest.generator = spec;
  for (int i = 0; i < count; ++i) {
    uint64_t sample_seed = derive_seed(seed, "dataset/" + split, static_cast<uint64_t>(i));
    ds.samples.push_back(gen_sample(spec, sample_seed));

    SampleEntry entry;
    std::string idx = std::to_string(i);
    entry.id = split + "_" + std::string(idx.size() < 4 ? 4 - idx.size() : 0, '0') + idx;
    entry.seed = sample_seed;
    entry.present_classes = ds.samples.back().present_classes;
    ds.manifest.entries.push_back(std::move(entry));
  }
  return ds;
}

}  // namespace medcl

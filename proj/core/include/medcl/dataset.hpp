#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "medcl/phantom.hpp"

namespace medcl {

inline constexpr int kManifestFormatVersion = 1;

struct SampleEntry {
  std::string id;
  std::string image_path;     // all paths relative to the dataset directory
  std::string label_path;
  std::string scribble_path;
  std::set<int> present_classes;
  uint64_t seed = 0;
  uint32_t image_crc = 0;
  uint32_t label_crc = 0;
  uint32_t scribble_crc = 0;
};

struct DatasetManifest {
  std::string split;
  PhantomSpec generator;
  std::vector<SampleEntry> entries;
  int format_version = kManifestFormatVersion;
};

// Lays out `manifest.json`, `images/{id}.png` (16-bit), `labels/{id}.png` and
// `scribbles/{id}.png` (8-bit, scribbles use 255 for unlabeled) under `dir`.
// Fills in each entry's relative paths and CRC-32 checksums. Entries must
// align one-to-one with samples.
void write_dataset(const std::vector<PhantomSample>& samples, DatasetManifest& manifest,
                   const std::filesystem::path& dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<PhantomSample> samples;
};

// Loads and fully validates a dataset: file presence, checksums, shapes
// against the generator spec, label/scribble value ranges, and the manifest
// format version. Each violation maps to a distinct error code.
Dataset read_dataset(const std::filesystem::path& dir);

// Convenience: generate `count` samples from `spec` with per-sample seeds
// derived from `seed`, returning a ready-to-write dataset.
Dataset generate_dataset(const PhantomSpec& spec, int count, uint64_t seed,
                         const std::string& split);

}  // namespace medcl

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "kneeatt/data.hpp"

namespace kneeatt {

class DatasetNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor file: "KATTTNSR" u32 rank, rank x u64 extent, raw little-endian float64.
void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;
};

/// Directory layout: manifest.json, index.csv
/// (id,label,side,split,roi_top,roi_left,roi_height,roi_width) and
/// samples/<id>.bin.
void save_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest, const std::vector<Sample>& samples);
Dataset load_dataset(const std::filesystem::path& dir);

/// FNV-1a over a file's bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace kneeatt

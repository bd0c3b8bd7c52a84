#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpflow/core.hpp"
#include "fpflow/sde.hpp"

namespace fpflow {

namespace fs = std::filesystem;

inline std::string snapshot_filename(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snapshot_%03zu.csv", index);
  return buf;
}

/// Writes manifest.json plus one CSV per snapshot (header x1..xd, values at
/// 17 significant digits). extra is merged into the manifest (ground truth,
/// seeds, problem description).
inline void save_dataset(const SnapshotDataset& ds, const nlohmann::json& extra,
                         const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("save_dataset: cannot create " + dir.string());

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["dim"] = ds.dim;
  auto times = nlohmann::json::array();
  auto counts = nlohmann::json::array();
  auto files = nlohmann::json::array();
  for (size_t i = 0; i < ds.snapshots.size(); ++i) {
    times.push_back(ds.snapshots[i].time);
    counts.push_back(ds.snapshots[i].samples.rows());
    files.push_back(snapshot_filename(i));
  }
  manifest["times"] = times;
  manifest["samples_per_snapshot"] = counts;
  manifest["files"] = files;
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("save_dataset: cannot write manifest");
    os << manifest.dump(2) << "\n";
  }
  for (size_t i = 0; i < ds.snapshots.size(); ++i) {
    std::ofstream os(dir / snapshot_filename(i));
    if (!os) throw IoError("save_dataset: cannot write snapshot file");
    const Mat& m = ds.snapshots[i].samples;
    for (int c = 0; c < ds.dim; ++c) os << (c ? "," : "") << "x" << (c + 1);
    os << "\n";
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < ds.dim; ++c) os << (c ? "," : "") << format_f64(m(r, c));
      os << "\n";
    }
  }
}

inline nlohmann::json load_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("load_dataset: missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  is >> manifest;
  return manifest;
}

inline SnapshotDataset load_dataset(const fs::path& dir, nlohmann::json* manifest_out = nullptr) {
  const auto manifest = load_manifest(dir);
  SnapshotDataset ds;
  ds.dim = manifest.at("dim").get<int>();
  const auto times = manifest.at("times");
  const auto files = manifest.at("files");
  for (size_t i = 0; i < times.size(); ++i) {
    std::ifstream is(dir / files[i].get<std::string>());
    if (!is) throw IoError("load_dataset: missing " + files[i].get<std::string>());
    std::string line;
    std::getline(is, line);  // header
    std::vector<double> values;
    int rows = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      int cols = 0;
      while (std::getline(ss, cell, ',')) {
        values.push_back(std::stod(cell));
        ++cols;
      }
      if (cols != ds.dim) throw IoError("load_dataset: bad column count");
      ++rows;
    }
    Mat m(rows, ds.dim);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < ds.dim; ++c) m(r, c) = values[static_cast<size_t>(r) * ds.dim + c];
    ds.snapshots.push_back({times[i].get<double>(), std::move(m)});
  }
  ds.validate();
  if (manifest_out) *manifest_out = manifest;
  return ds;
}

}  // namespace fpflow

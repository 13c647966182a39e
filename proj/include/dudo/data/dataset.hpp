#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dudo/data/degrade.hpp"
#include "dudo/data/phantom.hpp"
#include "dudo/tensor/io.hpp"
#include "json.hpp"

namespace dudo::data {

class ManifestError : public IoError {
 public:
  using IoError::IoError;
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

struct DatasetConfig {
  std::size_t n_train = 40;
  std::size_t n_val = 10;
  std::size_t n_test = 20;
  double dose_rate = 0.1;
  double total_counts = 2e5;
  std::uint64_t seed = 1;
  int mlem_iterations = physics::kDefaultMlemIterations;
};

struct SampleEntry {
  std::size_t index = 0;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  MyocardiumShell heart;
  double myocardium_ratio = 0.0;
};

struct DatasetManifest {
  std::filesystem::path dir;
  DatasetConfig config;
  ScannerGeometry geometry;
  std::uint64_t geometry_hash = 0;
  std::vector<std::size_t> lv_detectors;
  std::vector<SampleEntry> samples;

  std::vector<std::size_t> indices(Split s) const;
};

struct Sample {
  ProjectionStack p_fdfv;  // full dose, full view counts
  ProjectionStack p_ldfv;  // thinned, full view (stage-1 label)
  ProjectionStack p_ldlv;  // thinned, centre column only (network input)
  Volume s_ldlv;           // ML-EM of p_ldlv without attenuation
  MuMap mu;
  Volume beta;             // boundary label computed from mu
  Volume activity;         // phantom ground truth
  double dose_rate = 0.0;
  std::vector<std::size_t> lv_detectors;
  MyocardiumShell heart;
  double myocardium_ratio = 0.0;
};

// Fields persisted per sample as sample_<idx>_<field>.ddt.
const std::vector<std::string>& sample_fields();

// Generates one sample deterministically from its per-sample seed.
Sample make_sample(const ScannerGeometry& geom, const SystemMatrix& A, const DatasetConfig& cfg,
                   std::uint64_t sample_seed);

// Generates and writes the whole dataset plus manifest.json into dir.
DatasetManifest build_dataset(const DatasetConfig& cfg, const ScannerGeometry& geom,
                              const SystemMatrix& A, const std::filesystem::path& dir);

// Reads manifest.json and checks that every listed file exists.
DatasetManifest load_manifest(const std::filesystem::path& dir);
Sample load_sample(const DatasetManifest& manifest, std::size_t index);

nlohmann::json geometry_to_json(const ScannerGeometry& g);
// Rejects unknown keys with physics::ConfigError; missing keys keep `base`.
ScannerGeometry geometry_from_json(const nlohmann::json& j, ScannerGeometry base = {});
nlohmann::json shell_to_json(const MyocardiumShell& s);
MyocardiumShell shell_from_json(const nlohmann::json& j);

}  // namespace dudo::data

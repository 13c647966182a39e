#pragma once

#include <filesystem>
#include <memory>

#include "dudo/nn/networks.hpp"
#include "json.hpp"

namespace dudo::train {

nlohmann::json cascade_config_to_json(const nn::CascadeConfig& cfg);
// Rejects unknown keys with physics::ConfigError; missing keys keep `base`.
nn::CascadeConfig cascade_config_from_json(const nlohmann::json& j, nn::CascadeConfig base = {});

// Writes one DDT1 tensor per parameter (<name>.ddt) and per batch-norm
// statistic (<name>.running_mean.ddt, <name>.running_var.ddt) plus
// manifest.json holding the cascade config, the geometry and `extra`.
void save_checkpoint(nn::Cascade& cascade, const std::filesystem::path& dir,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  nlohmann::json manifest;
  std::unique_ptr<nn::Cascade> cascade;
};

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir);
// Rebuilds the cascade described by the manifest and fills in every tensor.
// The geometry and system matrix must outlive the returned cascade.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                 const physics::ScannerGeometry& geom,
                                 const physics::SystemMatrix& A);

}  // namespace dudo::train

#include "dudo/train/checkpoint.hpp"

#include <fstream>
#include <map>

#include "dudo/data/dataset.hpp"
#include "dudo/tensor/io.hpp"

namespace dudo::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "dudo-checkpoint-1";

template <typename Fn>
void for_each_key(const json& j, const char* where, Fn&& fn) {
  if (!j.is_object()) throw physics::ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, val] : j.items())
    if (!fn(key, val)) throw physics::ConfigError(std::string(where) + ": unknown key '" + key + "'");
}

}  // namespace

json cascade_config_to_json(const nn::CascadeConfig& cfg) {
  const auto& n = cfg.net;
  return json{{"iterations", cfg.iterations},
              {"seed", cfg.seed},
              {"detach_feedback", cfg.detach_feedback},
              {"net",
               {{"base_channels", n.base_channels},
                {"levels", n.levels},
                {"rdb", {{"layers", n.rdb.n_dense_layers}, {"growth", n.rdb.growth}, {"reduction", n.rdb.reduction}}},
                {"tsp_refine_blocks", n.tsp_refine_blocks},
                {"bda_refine_blocks", n.bda_refine_blocks}}},
              {"ablation",
               {{"no_tsp_stage2", cfg.ablation.no_tsp_stage2},
                {"no_bda_stage2", cfg.ablation.no_bda_stage2},
                {"no_mlf", cfg.ablation.no_mlf}}}};
}

nn::CascadeConfig cascade_config_from_json(const json& j, nn::CascadeConfig c) {
  try {
    for_each_key(j, "cascade", [&](const std::string& key, const json& val) {
      if (key == "iterations") c.iterations = val.get<std::size_t>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "detach_feedback") c.detach_feedback = val.get<bool>();
      else if (key == "net") {
        if (val.contains("preset")) {
          const auto p = val.at("preset").get<std::string>();
          if (p == "full_scale") c.net = nn::NetConfig::full_scale();
          else if (p == "desk") c.net = nn::NetConfig{};
          else throw physics::ConfigError("cascade.net: unknown preset '" + p + "'");
        }
        for_each_key(val, "cascade.net", [&](const std::string& k, const json& v) {
          if (k == "preset") return true;
          if (k == "base_channels") c.net.base_channels = v.get<std::size_t>();
          else if (k == "levels") c.net.levels = v.get<std::size_t>();
          else if (k == "tsp_refine_blocks") c.net.tsp_refine_blocks = v.get<std::size_t>();
          else if (k == "bda_refine_blocks") c.net.bda_refine_blocks = v.get<std::size_t>();
          else if (k == "rdb") {
            for_each_key(v, "cascade.net.rdb", [&](const std::string& r, const json& rv) {
              if (r == "layers") c.net.rdb.n_dense_layers = rv.get<std::size_t>();
              else if (r == "growth") c.net.rdb.growth = rv.get<std::size_t>();
              else if (r == "reduction") c.net.rdb.reduction = rv.get<std::size_t>();
              else return false;
              return true;
            });
          } else return false;
          return true;
        });
      } else if (key == "ablation") {
        for_each_key(val, "cascade.ablation", [&](const std::string& k, const json& v) {
          if (k == "no_tsp_stage2") c.ablation.no_tsp_stage2 = v.get<bool>();
          else if (k == "no_bda_stage2") c.ablation.no_bda_stage2 = v.get<bool>();
          else if (k == "no_mlf") c.ablation.no_mlf = v.get<bool>();
          else return false;
          return true;
        });
      } else return false;
      return true;
    });
  } catch (const json::exception& e) {
    throw physics::ConfigError(std::string("cascade: ") + e.what());
  }
  if (c.iterations < 1) throw physics::ConfigError("cascade: iterations must be >= 1");
  c.net.validate();
  return c;
}

void save_checkpoint(nn::Cascade& cascade, const fs::path& dir, const json& extra) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("checkpoint: cannot create " + dir.string() + ": " + ec.message());
  json params = json::array(), norms = json::array();
  cascade.visit(nn::Visitor{
      [&](const std::string& name, Tensor& t) {
        save_ddt(dir / (name + ".ddt"), t);
        params.push_back({{"name", name}, {"shape", t.shape()}});
      },
      [&](const std::string& name, ops::BatchNormState& s) {
        const Shape shape{s.running_mean.size()};
        save_ddt(dir / (name + ".running_mean.ddt"), Tensor(shape, s.running_mean));
        save_ddt(dir / (name + ".running_var.ddt"), Tensor(shape, s.running_var));
        norms.push_back({{"name", name}, {"initialized", s.initialized}});
      }});
  json m = extra;
  m["format"] = kFormat;
  m["cascade"] = cascade_config_to_json(cascade.config());
  m["geometry"] = data::geometry_to_json(cascade.geometry());
  m["geometry_hash"] = cascade.geometry().hash();
  m["parameter_count"] = cascade.parameter_count();
  m["parameters"] = params;
  m["norm_states"] = norms;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << "\n";
  if (!out) throw IoError("checkpoint: cannot write " + (dir / "manifest.json").string());
}

json read_checkpoint_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("checkpoint: cannot read " + (dir / "manifest.json").string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw IoError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != kFormat) throw IoError("checkpoint: unrecognized manifest format");
  return m;
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, const physics::ScannerGeometry& geom,
                                 const physics::SystemMatrix& A) {
  LoadedCheckpoint out;
  out.manifest = read_checkpoint_manifest(dir);
  if (out.manifest.at("geometry_hash").get<std::uint64_t>() != geom.hash())
    throw physics::ConfigError("checkpoint: trained for a different geometry");
  out.cascade = std::make_unique<nn::Cascade>(
      cascade_config_from_json(out.manifest.at("cascade")), geom, A);
  std::map<std::string, bool> initialized;
  for (const auto& n : out.manifest.at("norm_states"))
    initialized[n.at("name").get<std::string>()] = n.at("initialized").get<bool>();
  out.cascade->visit(nn::Visitor{
      [&](const std::string& name, Tensor& t) {
        const Tensor loaded = load_ddt(dir / (name + ".ddt"));
        if (loaded.shape() != t.shape())
          throw IoError("checkpoint: " + name + " has shape " + shape_str(loaded.shape()) +
                        ", expected " + shape_str(t.shape()));
        std::copy(loaded.values().begin(), loaded.values().end(), t.data().begin());
      },
      [&](const std::string& name, ops::BatchNormState& s) {
        const Tensor mean = load_ddt(dir / (name + ".running_mean.ddt"));
        const Tensor var = load_ddt(dir / (name + ".running_var.ddt"));
        if (mean.numel() != s.running_mean.size() || var.numel() != s.running_var.size())
          throw IoError("checkpoint: " + name + " statistics have the wrong size");
        s.running_mean = mean.values();
        s.running_var = var.values();
        s.initialized = initialized.count(name) ? initialized[name] : true;
      }});
  return out;
}

}  // namespace dudo::train

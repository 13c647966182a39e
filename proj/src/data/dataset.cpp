#include "dudo/data/dataset.hpp"

#include <fstream>
#include <set>

#include "dudo/util/parallel.hpp"
#include "dudo/util/rng.hpp"

namespace dudo::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream indices under a sample seed.
enum Stream : std::uint64_t { kPhantom = 1, kCounts = 2, kThin = 3 };

std::string sample_file(std::size_t index, const std::string& field) {
  return "sample_" + std::to_string(index) + "_" + field + ".ddt";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ManifestError("manifest: unknown split '" + s + "'");
}

json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

Tensor quantized(const Tensor& t) {
  Tensor q = t.clone();
  quantize_f32(q);
  return q;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (const auto& e : samples)
    if (e.split == s) out.push_back(e.index);
  return out;
}

const std::vector<std::string>& sample_fields() {
  static const std::vector<std::string> fields{"p_fdfv", "p_ldfv", "p_ldlv", "s_ldlv",
                                               "mu",     "beta",   "activity"};
  return fields;
}

Sample make_sample(const ScannerGeometry& geom, const SystemMatrix& A, const DatasetConfig& cfg,
                   std::uint64_t sample_seed) {
  Sample s;
  const Phantom ph = generate_phantom(derive_seed(sample_seed, kPhantom), geom);
  s.activity = Volume{quantized(ph.activity.data), geom.voxel_mm};
  s.mu = MuMap{quantized(ph.mu.data), geom.voxel_mm};
  s.heart = ph.heart;
  s.myocardium_ratio = ph.myocardium_ratio;
  s.dose_rate = cfg.dose_rate;
  s.lv_detectors = limited_view_detectors(geom);
  s.p_fdfv = simulate_acquisition(geom, A, ph, cfg.total_counts, derive_seed(sample_seed, kCounts));
  // The same thinning seed yields the full-view label and the limited-view
  // input, so they agree exactly on the centre column.
  s.p_ldfv = apply_low_dose(s.p_fdfv, cfg.dose_rate, derive_seed(sample_seed, kThin));
  s.p_ldlv = apply_limited_view(s.p_ldfv, geom);
  s.s_ldlv = physics::mlem_reconstruct(geom, A, s.p_ldlv, nullptr, cfg.mlem_iterations, nullptr,
                                       s.lv_detectors);
  quantize_f32(s.s_ldlv.data);
  s.beta = compute_boundary(s.mu);
  quantize_f32(s.beta.data);
  return s;
}

json geometry_to_json(const ScannerGeometry& g) {
  return json{{"n_detectors", g.n_detectors},
              {"column_layout", g.column_layout},
              {"pixels", {g.pixels_u, g.pixels_v}},
              {"grid", {g.grid[0], g.grid[1], g.grid[2]}},
              {"voxel_mm", g.voxel_mm},
              {"aperture_distance_ratio", g.aperture_distance_ratio},
              {"focal_mm", g.focal_mm},
              {"fov_ratio", g.fov_ratio},
              {"arc_deg", g.arc_deg},
              {"column_elevation_deg", g.column_elevation_deg},
              {"subrays", g.subrays}};
}

ScannerGeometry geometry_from_json(const json& j, ScannerGeometry g) {
  if (!j.is_object()) throw physics::ConfigError("geometry: expected an object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "preset") {
        const auto name = val.get<std::string>();
        if (name == "toy") g = ScannerGeometry::toy();
        else if (name == "desk") g = ScannerGeometry::desk();
        else if (name == "full_scale") g = ScannerGeometry::full_scale();
        else throw physics::ConfigError("geometry: unknown preset '" + name + "'");
      }
    }
    for (const auto& [key, val] : j.items()) {
      if (key == "preset") continue;
      else if (key == "n_detectors") g.n_detectors = val.get<std::size_t>();
      else if (key == "column_layout") g.column_layout = val.get<std::vector<std::size_t>>();
      else if (key == "pixels") {
        g.pixels_u = val.at(0).get<std::size_t>();
        g.pixels_v = val.at(1).get<std::size_t>();
      } else if (key == "grid") {
        for (int a = 0; a < 3; ++a) g.grid[a] = val.at(a).get<std::size_t>();
      } else if (key == "voxel_mm") g.voxel_mm = val.get<double>();
      else if (key == "aperture_distance_ratio") g.aperture_distance_ratio = val.get<double>();
      else if (key == "focal_mm") g.focal_mm = val.get<double>();
      else if (key == "fov_ratio") g.fov_ratio = val.get<double>();
      else if (key == "arc_deg") g.arc_deg = val.get<double>();
      else if (key == "column_elevation_deg") g.column_elevation_deg = val.get<double>();
      else if (key == "subrays") g.subrays = val.get<std::size_t>();
      else throw physics::ConfigError("geometry: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw physics::ConfigError(std::string("geometry: ") + e.what());
  }
  g.validate();
  return g;
}

json shell_to_json(const MyocardiumShell& s) {
  return json{{"centre", vec3_json(s.centre)},
              {"long_axis", vec3_json(s.long_axis)},
              {"outer_radius", s.outer_radius},
              {"outer_half_length", s.outer_half_length},
              {"inner_radius", s.inner_radius},
              {"inner_half_length", s.inner_half_length}};
}

MyocardiumShell shell_from_json(const json& j) {
  MyocardiumShell s;
  s.centre = vec3_from(j.at("centre"));
  s.long_axis = vec3_from(j.at("long_axis"));
  s.outer_radius = j.at("outer_radius").get<double>();
  s.outer_half_length = j.at("outer_half_length").get<double>();
  s.inner_radius = j.at("inner_radius").get<double>();
  s.inner_half_length = j.at("inner_half_length").get<double>();
  return s;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const ScannerGeometry& geom,
                              const SystemMatrix& A, const fs::path& dir) {
  geom.validate();
  if (A.geometry_hash() != geom.hash())
    throw physics::ConfigError("build_dataset: system matrix was built for a different geometry");
  if (!(cfg.total_counts > 0)) throw physics::ConfigError("dataset: total_counts must be positive");
  if (!(cfg.dose_rate > 0 && cfg.dose_rate <= 1)) throw physics::ConfigError("dataset: dose_rate must lie in (0, 1]");
  if (cfg.mlem_iterations < 1) throw physics::ConfigError("dataset: mlem_iterations must be >= 1");

  DatasetManifest m;
  m.dir = dir;
  m.config = cfg;
  m.geometry = geom;
  m.geometry_hash = geom.hash();
  m.lv_detectors = limited_view_detectors(geom);
  const std::size_t n = cfg.n_train + cfg.n_val + cfg.n_test;
  for (std::size_t i = 0; i < n; ++i) {
    SampleEntry e;
    e.index = i;
    e.split = i < cfg.n_train ? Split::kTrain : i < cfg.n_train + cfg.n_val ? Split::kVal : Split::kTest;
    e.seed = derive_seed(cfg.seed, i);
    m.samples.push_back(e);
  }

  fs::create_directories(dir);
  parallel_for(n, [&](std::size_t i) {
    auto& entry = m.samples[i];
    const Sample s = make_sample(geom, A, cfg, entry.seed);
    entry.heart = s.heart;
    const Tensor* tensors[] = {&s.p_fdfv.data, &s.p_ldfv.data, &s.p_ldlv.data, &s.s_ldlv.data,
                               &s.mu.data,     &s.beta.data,   &s.activity.data};
    for (std::size_t f = 0; f < sample_fields().size(); ++f)
      save_ddt(dir / sample_file(i, sample_fields()[f]), *tensors[f]);
    entry.myocardium_ratio = s.myocardium_ratio;
  });

  json samples = json::array();
  for (const auto& e : m.samples)
    samples.push_back({{"index", e.index},
                       {"split", split_name(e.split)},
                       {"seed", e.seed},
                       {"myocardium_ratio", e.myocardium_ratio},
                       {"heart", shell_to_json(e.heart)}});
  json j{{"format", "dudo-dataset-1"},
         {"geometry", geometry_to_json(geom)},
         {"geometry_hash", m.geometry_hash},
         {"n_train", cfg.n_train},
         {"n_val", cfg.n_val},
         {"n_test", cfg.n_test},
         {"dose_rate", cfg.dose_rate},
         {"total_counts", cfg.total_counts},
         {"seed", cfg.seed},
         {"mlem_iterations", cfg.mlem_iterations},
         {"lv_detectors", m.lv_detectors},
         {"samples", samples}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + (dir / "manifest.json").string());
  return m;
}

DatasetManifest load_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open " + path.string());
  DatasetManifest m;
  m.dir = dir;
  try {
    const json j = json::parse(is);
    if (j.at("format").get<std::string>() != "dudo-dataset-1")
      throw ManifestError("manifest: unsupported format");
    m.geometry = geometry_from_json(j.at("geometry"));
    m.geometry_hash = j.at("geometry_hash").get<std::uint64_t>();
    if (m.geometry_hash != m.geometry.hash()) throw ManifestError("manifest: geometry hash mismatch");
    m.config.n_train = j.at("n_train").get<std::size_t>();
    m.config.n_val = j.at("n_val").get<std::size_t>();
    m.config.n_test = j.at("n_test").get<std::size_t>();
    m.config.dose_rate = j.at("dose_rate").get<double>();
    m.config.total_counts = j.at("total_counts").get<double>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.config.mlem_iterations = j.at("mlem_iterations").get<int>();
    m.lv_detectors = j.at("lv_detectors").get<std::vector<std::size_t>>();
    std::set<std::size_t> seen;
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.index = s.at("index").get<std::size_t>();
      e.split = parse_split(s.at("split").get<std::string>());
      e.seed = s.at("seed").get<std::uint64_t>();
      e.myocardium_ratio = s.at("myocardium_ratio").get<double>();
      e.heart = shell_from_json(s.at("heart"));
      if (!seen.insert(e.index).second) throw ManifestError("manifest: duplicate sample index");
      m.samples.push_back(e);
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  } catch (const physics::ConfigError& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  if (m.samples.size() != m.config.n_train + m.config.n_val + m.config.n_test ||
      m.indices(Split::kTrain).size() != m.config.n_train ||
      m.indices(Split::kVal).size() != m.config.n_val)
    throw ManifestError("manifest: split sizes disagree with the sample list");
  for (const auto& e : m.samples)
    for (const auto& f : sample_fields())
      if (!fs::exists(dir / sample_file(e.index, f)))
        throw ManifestError("manifest: missing file " + sample_file(e.index, f));
  return m;
}

Sample load_sample(const DatasetManifest& m, std::size_t index) {
  const SampleEntry* entry = nullptr;
  for (const auto& e : m.samples)
    if (e.index == index) entry = &e;
  if (!entry) throw ManifestError("no sample " + std::to_string(index) + " in manifest");
  auto load = [&](const std::string& field) {
    try {
      return load_ddt(m.dir / sample_file(index, field));
    } catch (const IoError& e) {
      throw ManifestError(e.what());
    }
  };
  const auto& g = m.geometry;
  Sample s;
  s.p_fdfv = ProjectionStack{load("p_fdfv")};
  s.p_ldfv = ProjectionStack{load("p_ldfv")};
  s.p_ldlv = ProjectionStack{load("p_ldlv")};
  s.s_ldlv = Volume{load("s_ldlv"), g.voxel_mm};
  s.mu = MuMap{load("mu"), g.voxel_mm};
  s.beta = Volume{load("beta"), g.voxel_mm};
  s.activity = Volume{load("activity"), g.voxel_mm};
  try {
    for (const auto* p : {&s.p_fdfv, &s.p_ldfv, &s.p_ldlv}) physics::check_projection(g, p->data, "load_sample");
    for (const auto* t : {&s.s_ldlv.data, &s.mu.data, &s.beta.data, &s.activity.data})
      physics::check_volume(g, *t, "load_sample");
  } catch (const DimensionError& e) {
    throw ManifestError(std::string("sample ") + std::to_string(index) + ": " + e.what());
  }
  s.dose_rate = m.config.dose_rate;
  s.lv_detectors = m.lv_detectors;
  s.heart = entry->heart;
  s.myocardium_ratio = entry->myocardium_ratio;
  return s;
}

}  // namespace dudo::data

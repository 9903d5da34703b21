#pragma once

#include "geocorr/adapter.hpp"
#include "geocorr/camera.hpp"
#include "geocorr/canonicalize.hpp"
#include "geocorr/eval.hpp"
#include "geocorr/feature_map.hpp"
#include "geocorr/geo_filter.hpp"
#include "geocorr/geodesic.hpp"
#include "geocorr/image_io.hpp"
#include "geocorr/mesh.hpp"
#include "geocorr/refine.hpp"
#include "geocorr/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace geocorr {

// ---------------------------------------------------------------------------
// Minimal TOML subset: [section] headers, key = value with quoted strings,
// booleans, and numbers. Comments start with '#'. Nested tables, arrays, and
// string escapes are not supported; keys are addressed as "section.key".
// ---------------------------------------------------------------------------

struct TomlTable {
  std::map<std::string, std::string> values;  // raw value tokens

  bool has(const std::string& key) const { return values.count(key) > 0; }

  const std::string& raw(const std::string& key) const {
    auto it = values.find(key);
    require(it != values.end(), "config: missing key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key,
                         std::optional<std::string> fallback = {}) const {
    if (!has(key) && fallback) return *fallback;
    const std::string& token = raw(key);
    require(token.size() >= 2 && token.front() == '"' && token.back() == '"',
            "config: key '" + key + "' must be a quoted string");
    return token.substr(1, token.size() - 2);
  }

  double get_double(const std::string& key,
                    std::optional<double> fallback = {}) const {
    if (!has(key) && fallback) return *fallback;
    try {
      size_t used = 0;
      const double v = std::stod(raw(key), &used);
      require(used == raw(key).size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error("config: key '" + key + "' is not a number");
    }
  }

  long long get_int(const std::string& key,
                    std::optional<long long> fallback = {}) const {
    if (!has(key) && fallback) return *fallback;
    try {
      size_t used = 0;
      const long long v = std::stoll(raw(key), &used);
      require(used == raw(key).size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      throw Error("config: key '" + key + "' is not an integer");
    }
  }

  bool get_bool(const std::string& key,
                std::optional<bool> fallback = {}) const {
    if (!has(key) && fallback) return *fallback;
    const std::string& token = raw(key);
    if (token == "true") return true;
    if (token == "false") return false;
    throw Error("config: key '" + key + "' must be true or false");
  }
};

inline TomlTable parse_toml_lite(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto from = s.find_first_not_of(" \t\r");
    if (from == std::string::npos) return std::string();
    const auto to = s.find_last_not_of(" \t\r");
    return s.substr(from, to - from + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments, but not inside a quoted value
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() > 2,
              "config line " + std::to_string(lineno) + ": malformed section");
      section = trim(line.substr(1, line.size() - 2));
      require(!section.empty(),
              "config line " + std::to_string(lineno) + ": empty section");
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty() && !value.empty(),
            "config line " + std::to_string(lineno) + ": empty key or value");
    const std::string full = section.empty() ? key : section + "." + key;
    require(table.values.emplace(full, value).second,
            "config line " + std::to_string(lineno) + ": duplicate key '" +
                full + "'");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct CanonicalizeConfig {
  bool enabled = true;
  // the built-in orientation estimator is an oracle for synthetic scenes:
  // offset 0 means the mesh is already canonical; plant a nonzero offset to
  // exercise the vote
  double oracle_offset_deg = 0.0;
  double oracle_noise_deg = 0.0;
};

struct PipelineConfig {
  FusionWeights weights;           // alpha, beta, gamma
  double tau_cc = 0.05;
  double tau_geo = 0.05;
  int grid = 60;                   // shared correspondence-map resolution
  RefineConfig refine;
  CanonicalizeConfig canonicalize;
  TrainConfig adapter;             // adapter.iterations == 0 skips training
  int adapter_hidden = 256;        // adapter net hidden width
  int adapter_out_dim = 0;         // refined feature dim; 0 = input dim
  std::uint64_t seed = 0;
  std::string input_root;          // prefix for relative manifest paths
  std::string output_root = "out";
  bool save_fused_maps = true;
  bool save_refined_poses = true;
};

inline void validate_pipeline_config(const PipelineConfig& cfg) {
  validate_weights(cfg.weights);
  require(cfg.tau_cc > 0.0 && cfg.tau_cc < 1.0,
          "pipeline config: tau_cc must lie in (0, 1)");
  require(cfg.tau_geo > 0.0 && cfg.tau_geo < 1.0,
          "pipeline config: tau_geo must lie in (0, 1)");
  require(cfg.grid >= 1, "pipeline config: grid must be positive");
  require(cfg.refine.lr_scale > 0.0 && cfg.refine.lr_trans > 0.0,
          "pipeline config: refine learning rates must be positive");
  require(cfg.refine.steps_dt >= 0 && cfg.refine.steps_iou >= 0,
          "pipeline config: refine step counts must be non-negative");
  require(cfg.refine.lambda >= 1.0,
          "pipeline config: coverage weight must be at least 1");
  require(cfg.refine.dilation_radius >= 0,
          "pipeline config: dilation radius must be non-negative");
  require(cfg.refine.kappa > 0.0,
          "pipeline config: silhouette softness must be positive");
  require(cfg.canonicalize.oracle_noise_deg >= 0.0,
          "pipeline config: estimator noise must be non-negative");
  if (cfg.adapter.iterations > 0) validate_train_config(cfg.adapter);
  require(cfg.adapter_hidden >= 1,
          "pipeline config: adapter hidden width must be positive");
  require(cfg.adapter_out_dim >= 0,
          "pipeline config: adapter output dim must be non-negative");
  require(!cfg.output_root.empty(), "pipeline config: output root required");
}

/// Every hyperparameter at its reference default; the seed is a mandatory
/// explicit choice, so the template carries a placeholder.
inline std::string default_pipeline_toml() {
  return R"(# geocorr pipeline configuration
seed = 0            # change me: every run must pin its seed
grid = 60           # shared correspondence-map resolution
tau_cc = 0.05       # relaxed cyclic-consistency tolerance
tau_geo = 0.05      # geodesic verification threshold
input_root = ""
output_root = "out"
save_fused_maps = true
save_refined_poses = true

[fusion]
alpha = 0.5
beta = 0.33333333333333333
gamma = 0.16666666666666666

[refine]
lr_scale = 0.05
lr_trans = 0.02
steps_dt = 100
steps_iou = 50
lambda = 4.0
dilation_radius = 4
kappa = 2.0

[canonicalize]
enabled = true
oracle_offset_deg = 0.0
oracle_noise_deg = 0.0

[adapter]
iterations = 2000
lr = 0.005
weight_decay = 0.001
labels_per_pair = 50
tau_c = 0.07
window = 15
temp = 0.04
sigma_eps = 0.5
hidden = 256
out_dim = 0         # 0: refined features keep the fused dimension
)";
}

inline PipelineConfig pipeline_config_from_toml(const std::string& text) {
  const TomlTable t = parse_toml_lite(text);
  PipelineConfig cfg;
  require(t.has("seed"),
          "pipeline config: 'seed' is mandatory (determinism contract)");
  const long long seed = t.get_int("seed");
  require(seed >= 0, "pipeline config: seed must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.grid = static_cast<int>(t.get_int("grid", cfg.grid));
  cfg.tau_cc = t.get_double("tau_cc", cfg.tau_cc);
  cfg.tau_geo = t.get_double("tau_geo", cfg.tau_geo);
  cfg.input_root = t.get_string("input_root", cfg.input_root);
  cfg.output_root = t.get_string("output_root", cfg.output_root);
  cfg.save_fused_maps = t.get_bool("save_fused_maps", cfg.save_fused_maps);
  cfg.save_refined_poses =
      t.get_bool("save_refined_poses", cfg.save_refined_poses);

  cfg.weights.alpha = t.get_double("fusion.alpha", cfg.weights.alpha);
  cfg.weights.beta = t.get_double("fusion.beta", cfg.weights.beta);
  cfg.weights.gamma = t.get_double("fusion.gamma", cfg.weights.gamma);

  cfg.refine.lr_scale = t.get_double("refine.lr_scale", cfg.refine.lr_scale);
  cfg.refine.lr_trans = t.get_double("refine.lr_trans", cfg.refine.lr_trans);
  cfg.refine.steps_dt =
      static_cast<int>(t.get_int("refine.steps_dt", cfg.refine.steps_dt));
  cfg.refine.steps_iou =
      static_cast<int>(t.get_int("refine.steps_iou", cfg.refine.steps_iou));
  cfg.refine.lambda = t.get_double("refine.lambda", cfg.refine.lambda);
  cfg.refine.dilation_radius = static_cast<int>(
      t.get_int("refine.dilation_radius", cfg.refine.dilation_radius));
  cfg.refine.kappa = t.get_double("refine.kappa", cfg.refine.kappa);

  cfg.canonicalize.enabled =
      t.get_bool("canonicalize.enabled", cfg.canonicalize.enabled);
  cfg.canonicalize.oracle_offset_deg = t.get_double(
      "canonicalize.oracle_offset_deg", cfg.canonicalize.oracle_offset_deg);
  cfg.canonicalize.oracle_noise_deg = t.get_double(
      "canonicalize.oracle_noise_deg", cfg.canonicalize.oracle_noise_deg);

  cfg.adapter.iterations =
      static_cast<int>(t.get_int("adapter.iterations", cfg.adapter.iterations));
  cfg.adapter.lr = t.get_double("adapter.lr", cfg.adapter.lr);
  cfg.adapter.weight_decay =
      t.get_double("adapter.weight_decay", cfg.adapter.weight_decay);
  cfg.adapter.labels_per_pair_per_iter = static_cast<int>(t.get_int(
      "adapter.labels_per_pair", cfg.adapter.labels_per_pair_per_iter));
  cfg.adapter.tau_c = t.get_double("adapter.tau_c", cfg.adapter.tau_c);
  cfg.adapter.dense.window =
      static_cast<int>(t.get_int("adapter.window", cfg.adapter.dense.window));
  cfg.adapter.dense.temp =
      t.get_double("adapter.temp", cfg.adapter.dense.temp);
  cfg.adapter.dense.sigma_eps =
      t.get_double("adapter.sigma_eps", cfg.adapter.dense.sigma_eps);
  cfg.adapter_hidden =
      static_cast<int>(t.get_int("adapter.hidden", cfg.adapter_hidden));
  cfg.adapter_out_dim =
      static_cast<int>(t.get_int("adapter.out_dim", cfg.adapter_out_dim));
  cfg.adapter.seed = cfg.seed;

  validate_pipeline_config(cfg);
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return pipeline_config_from_toml(buf.str());
}

// ---------------------------------------------------------------------------
// Pair manifest
// ---------------------------------------------------------------------------

/// Input files for one image of a pair. `pose` is optional: when empty, pose
/// refinement starts from the identity pose.
struct ImageInputs {
  std::string image_id;
  std::string mesh;
  std::string descriptors;
  std::string camera;
  std::string mask;
  std::string sd;    // dense feature map (GCFM)
  std::string dino;  // dense feature map (GCFM)
  std::string pose;  // optional initial pose
};

struct PairEntry {
  std::string pair_id;
  ImageInputs src, tgt;
};

inline ImageInputs image_inputs_from_json(const nlohmann::json& row) {
  ImageInputs inputs;
  try {
    inputs.image_id = row.at("image_id").get<std::string>();
    inputs.mesh = row.at("mesh").get<std::string>();
    inputs.descriptors = row.at("descriptors").get<std::string>();
    inputs.camera = row.at("camera").get<std::string>();
    inputs.mask = row.at("mask").get<std::string>();
    inputs.sd = row.at("sd").get<std::string>();
    inputs.dino = row.at("dino").get<std::string>();
    if (row.contains("pose")) inputs.pose = row.at("pose").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("manifest image entry: ") + e.what());
  }
  return inputs;
}

inline std::vector<PairEntry> manifest_from_json_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("manifest: ") + e.what());
  }
  require(doc.is_array(), "manifest: expected a top-level array of pairs");
  std::vector<PairEntry> pairs;
  for (const auto& row : doc) {
    PairEntry entry;
    try {
      entry.pair_id = row.at("pair_id").get<std::string>();
      entry.src = image_inputs_from_json(row.at("src"));
      entry.tgt = image_inputs_from_json(row.at("tgt"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("manifest pair entry: ") + e.what());
    }
    pairs.push_back(std::move(entry));
  }
  return pairs;
}

inline std::vector<PairEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open manifest '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return manifest_from_json_text(buf.str());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct StageCounts {
  long in = 0;
  long kept = 0;
  std::map<std::string, long> rejected;

  long rejected_total() const {
    long n = 0;
    for (const auto& [reason, count] : rejected) n += count;
    return n;
  }
  bool conserved() const { return in == kept + rejected_total(); }
};

struct PairReport {
  std::string pair_id;
  bool ok = false;
  std::string skip_reason;
  PoseParams src_pose, tgt_pose;       // refined poses
  int src_correction_deg = 0, tgt_correction_deg = 0;
  StageCounts cyclic, lift, geodesic;
  long labels_kept = 0;
  std::vector<std::string> jsonl;      // one line per lift-stage candidate
};

struct PipelineReport {
  std::vector<PairReport> pairs;
  long processed = 0;   // pairs that ran to completion
  long failed = 0;      // pairs skipped with a reason
  long total_kept = 0;

  bool all_failed() const { return !pairs.empty() && processed == 0; }
};

inline nlohmann::json stage_to_json(const StageCounts& stage) {
  nlohmann::json row;
  row["in"] = stage.in;
  row["kept"] = stage.kept;
  row["rejected"] = nlohmann::json::object();
  for (const auto& [reason, count] : stage.rejected)
    row["rejected"][reason] = count;
  return row;
}

inline nlohmann::json report_to_json(const PipelineReport& report) {
  nlohmann::json doc;
  doc["processed"] = report.processed;
  doc["failed"] = report.failed;
  doc["total_kept"] = report.total_kept;
  auto& pairs = doc["pairs"] = nlohmann::json::array();
  for (const auto& pair : report.pairs) {
    nlohmann::json row;
    row["pair_id"] = pair.pair_id;
    row["ok"] = pair.ok;
    if (!pair.ok) row["skip_reason"] = pair.skip_reason;
    row["labels_kept"] = pair.labels_kept;
    row["stages"] = {{"cyclic", stage_to_json(pair.cyclic)},
                     {"lift", stage_to_json(pair.lift)},
                     {"geodesic", stage_to_json(pair.geodesic)}};
    row["src_correction_deg"] = pair.src_correction_deg;
    row["tgt_correction_deg"] = pair.tgt_correction_deg;
    pairs.push_back(std::move(row));
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace detail {

inline std::string resolve_path(const std::string& root,
                                const std::string& path) {
  if (root.empty() || path.empty() ||
      std::filesystem::path(path).is_absolute())
    return path;
  return (std::filesystem::path(root) / path).string();
}

struct LoadedImage {
  ImageInputs inputs;
  TriangleMesh mesh;
  CameraModel camera;
  MaskImage mask;
  DenseFeatureMap sd, dino;
  PoseParams init_pose;
};

inline LoadedImage load_image_inputs(const ImageInputs& inputs,
                                     const std::string& root) {
  LoadedImage img;
  img.inputs = inputs;
  img.mesh = load_mesh(resolve_path(root, inputs.mesh));
  img.mesh.descriptors =
      load_descriptors_file(resolve_path(root, inputs.descriptors));
  require(img.mesh.descriptors.rows() == img.mesh.vertex_count(),
          "image '" + inputs.image_id +
              "': descriptor rows do not match the mesh");
  img.camera = load_camera(resolve_path(root, inputs.camera));
  img.mask = load_mask(resolve_path(root, inputs.mask));
  require(img.mask.height == img.camera.height &&
              img.mask.width == img.camera.width,
          "image '" + inputs.image_id + "': mask does not match the camera");
  img.sd = load_feature_map(resolve_path(root, inputs.sd));
  img.dino = load_feature_map(resolve_path(root, inputs.dino));
  if (!inputs.pose.empty())
    img.init_pose = load_pose(resolve_path(root, inputs.pose));
  return img;
}

/// Refine -> canonicalize -> rasterize -> fuse for one image.
struct PreparedImage {
  TriangleMesh mesh;      // canonicalized, descriptors attached
  CameraModel camera;
  MaskImage mask;
  PoseParams pose;        // refined
  DenseFeatureMap fused;  // shared grid
  int correction_deg = 0;
};

inline PreparedImage prepare_image(const LoadedImage& img,
                                   const PipelineConfig& cfg,
                                   std::uint64_t canon_stream_index) {
  PreparedImage prep;
  prep.mesh = img.mesh;
  prep.camera = img.camera;
  prep.mask = img.mask;

  prep.pose = refine_pose(prep.mesh, prep.camera, prep.mask, img.init_pose,
                          cfg.refine)
                  .pose;

  if (cfg.canonicalize.enabled) {
    const auto estimator = make_oracle_estimator(
        cfg.canonicalize.oracle_offset_deg, cfg.canonicalize.oracle_noise_deg,
        substream_seed(cfg.seed, "canonicalize", canon_stream_index));
    const auto report =
        canonicalize_yaw(prep.mesh, prep.camera, estimator, prep.pose);
    prep.correction_deg = report.correction_deg;
  }

  const auto pf = rasterize_vertex_descriptors(
      prep.mesh, prep.camera, prep.pose, prep.mask, cfg.grid, cfg.grid);
  const int patch = prep.camera.height / cfg.grid;
  const DenseFeatureMap sd_grid =
      resample_bilinear(img.sd, cfg.grid, cfg.grid, patch);
  const DenseFeatureMap dino_grid =
      resample_bilinear(img.dino, cfg.grid, cfg.grid, patch);
  prep.fused = fuse(l2_normalize_map(sd_grid), l2_normalize_map(dino_grid),
                    l2_normalize_map(pf.map), cfg.weights);
  return prep;
}

}  // namespace detail

/// Run the label-generation stages for one manifest pair. The returned report
/// carries the JSONL lines (one per candidate that reached the lift stage) so
/// a single writer can serialize them in manifest order.
inline PairReport process_pair(const PairEntry& entry,
                               const PipelineConfig& cfg,
                               std::uint64_t pair_index,
                               DenseFeatureMap* fused_src = nullptr,
                               DenseFeatureMap* fused_tgt = nullptr) {
  PairReport report;
  report.pair_id = entry.pair_id;
  try {
    const auto src_in = detail::load_image_inputs(entry.src, cfg.input_root);
    const auto tgt_in = detail::load_image_inputs(entry.tgt, cfg.input_root);
    const auto src =
        detail::prepare_image(src_in, cfg, 2 * pair_index);
    const auto tgt =
        detail::prepare_image(tgt_in, cfg, 2 * pair_index + 1);
    report.src_pose = src.pose;
    report.tgt_pose = tgt.pose;
    report.src_correction_deg = src.correction_deg;
    report.tgt_correction_deg = tgt.correction_deg;
    if (fused_src) *fused_src = src.fused;
    if (fused_tgt) *fused_tgt = tgt.fused;

    // nearest-neighbor proposals + relaxed cyclic consistency
    const MaskImage src_cells = cell_mask_from_pixels(src.fused, src.mask);
    const MaskImage tgt_cells = cell_mask_from_pixels(tgt.fused, tgt.mask);
    const auto candidates =
        nn_match(src.fused, tgt.fused, src_cells, tgt_cells);
    double bbox_h = 0, bbox_w = 0;
    detail::mask_bbox(tgt.mask, bbox_h, bbox_w);
    const auto cyclic =
        cyclic_filter(candidates, src.fused, tgt.fused, src_cells, tgt_cells,
                      bbox_h, bbox_w, cfg.tau_cc, src.fused.patch_size);
    report.cyclic.in = static_cast<long>(candidates.size());
    report.cyclic.kept = static_cast<long>(cyclic.kept.size());
    if (cyclic.rejected > 0)
      report.cyclic.rejected["cyclic inconsistency"] = cyclic.rejected;

    // lift to the meshes and verify geodesically
    const ScenePose src_scene{src.mesh, src.camera, src.pose};
    const ScenePose tgt_scene{tgt.mesh, tgt.camera, tgt.pose};
    GeodesicCache src_cache(src.mesh), tgt_cache(tgt.mesh);
    report.lift.in = report.cyclic.kept;
    report.geodesic.in = 0;
    for (CandidateMatch cand : cyclic.kept) {
      const LiftStatus status = lift_match(cand, src_scene, tgt_scene);
      if (status != LiftStatus::ok) {
        report.lift.rejected[lift_reason(status)] += 1;
        report.jsonl.push_back(label_jsonl_line(
            entry.src.image_id, entry.tgt.image_id, cand.p_src, cand.p_tgt,
            std::nullopt, false, lift_reason(status)));
        continue;
      }
      report.lift.kept += 1;
      report.geodesic.in += 1;
      const double err = bicyclic_error(cand, src.mesh, tgt.mesh, src_cache,
                                        tgt_cache);
      const bool kept = geo_keep(err, cfg.tau_geo);
      if (kept) {
        report.geodesic.kept += 1;
        report.labels_kept += 1;
      } else {
        report.geodesic.rejected[geo_reject_reason(err)] += 1;
      }
      report.jsonl.push_back(label_jsonl_line(
          entry.src.image_id, entry.tgt.image_id, cand.p_src, cand.p_tgt, err,
          kept, kept ? "" : geo_reject_reason(err)));
    }
    report.ok = true;
  } catch (const std::exception& e) {
    report.ok = false;
    report.skip_reason = e.what();
  }
  return report;
}

/// Worker cap: GEOCORR_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
inline int pipeline_worker_count(size_t jobs) {
  if (jobs == 0) return 0;
  long n = 0;
  if (const char* env = std::getenv("GEOCORR_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end && *end == '\0' && parsed > 0) n = parsed;
  }
  if (n <= 0) n = static_cast<long>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  return static_cast<int>(
      std::min<long>(n, static_cast<long>(jobs)));
}

/// Run refine -> canonicalize -> rasterize -> fuse -> match -> filter for
/// every manifest pair and write labels.jsonl plus stats.json under the
/// output root. Pairs are processed by a worker pool; output order follows
/// the manifest regardless of worker count. A failing pair is skipped with
/// its reason recorded.
inline PipelineReport run_pipeline(const PipelineConfig& cfg,
                                   const std::vector<PairEntry>& manifest) {
  validate_pipeline_config(cfg);
  std::filesystem::create_directories(cfg.output_root);

  PipelineReport report;
  report.pairs.resize(manifest.size());
  std::vector<DenseFeatureMap> fused_src(manifest.size()),
      fused_tgt(manifest.size());

  const int workers = pipeline_worker_count(manifest.size());
  std::atomic<size_t> next{0};
  const auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= manifest.size()) return;
      report.pairs[i] = process_pair(
          manifest[i], cfg, static_cast<std::uint64_t>(i),
          cfg.save_fused_maps ? &fused_src[i] : nullptr,
          cfg.save_fused_maps ? &fused_tgt[i] : nullptr);
    }
  };
  if (workers > 1) {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  } else if (workers == 1) {
    worker();
  }

  // single writer, manifest order
  const auto labels_path =
      (std::filesystem::path(cfg.output_root) / "labels.jsonl").string();
  std::ofstream labels(labels_path);
  require(static_cast<bool>(labels),
          "run_pipeline: cannot open '" + labels_path + "' for writing");
  for (size_t i = 0; i < manifest.size(); ++i) {
    const PairReport& pair = report.pairs[i];
    if (pair.ok) {
      report.processed += 1;
      report.total_kept += pair.labels_kept;
      for (const auto& line : pair.jsonl) labels << line << '\n';
      if (cfg.save_fused_maps) {
        const auto dir = std::filesystem::path(cfg.output_root) / "fused";
        std::filesystem::create_directories(dir);
        save_feature_map(fused_src[i],
                         (dir / (pair.pair_id + "_src.gcfm")).string());
        save_feature_map(fused_tgt[i],
                         (dir / (pair.pair_id + "_tgt.gcfm")).string());
      }
      if (cfg.save_refined_poses) {
        const auto dir = std::filesystem::path(cfg.output_root) / "poses";
        std::filesystem::create_directories(dir);
        save_pose(pair.src_pose,
                  (dir / (pair.pair_id + "_src.json")).string());
        save_pose(pair.tgt_pose,
                  (dir / (pair.pair_id + "_tgt.json")).string());
      }
    } else {
      report.failed += 1;
    }
  }
  labels.close();

  const auto stats_path =
      (std::filesystem::path(cfg.output_root) / "stats.json").string();
  std::ofstream stats(stats_path);
  require(static_cast<bool>(stats),
          "run_pipeline: cannot open '" + stats_path + "' for writing");
  stats << report_to_json(report).dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------------------
// Adapter corpus from pipeline outputs
// ---------------------------------------------------------------------------

/// Convert kept labels plus the fused maps into the adapter's training
/// corpus. Label pixels are cell centers, so the pixel -> cell mapping is
/// exact. Pairs without kept labels are omitted.
inline std::vector<AdapterPair> build_adapter_corpus(
    const PipelineReport& report, const std::vector<DenseFeatureMap>& src_maps,
    const std::vector<DenseFeatureMap>& tgt_maps) {
  require(report.pairs.size() == src_maps.size() &&
              report.pairs.size() == tgt_maps.size(),
          "build_adapter_corpus: one fused map pair per manifest pair");
  std::vector<AdapterPair> corpus;
  for (size_t i = 0; i < report.pairs.size(); ++i) {
    const PairReport& pair = report.pairs[i];
    if (!pair.ok || pair.labels_kept == 0) continue;
    const DenseFeatureMap& src = src_maps[i];
    const DenseFeatureMap& tgt = tgt_maps[i];
    AdapterPair out;
    out.src_h = src.grid_h;
    out.src_w = src.grid_w;
    out.tgt_h = tgt.grid_h;
    out.tgt_w = tgt.grid_w;
    out.src_map = src.values;
    out.tgt_map = tgt.values;
    for (const auto& line : pair.jsonl) {
      const auto row = nlohmann::json::parse(line);
      if (!row.at("kept").get<bool>()) continue;
      const double sx = row.at("p_src").at(0).get<double>();
      const double sy = row.at("p_src").at(1).get<double>();
      const double tx = row.at("p_tgt").at(0).get<double>();
      const double ty = row.at("p_tgt").at(1).get<double>();
      const int sr = src.patch_row_of(sy), sc = src.patch_col_of(sx);
      const int tr = tgt.patch_row_of(ty), tc = tgt.patch_col_of(tx);
      require(sr >= 0 && sr < src.grid_h && sc >= 0 && sc < src.grid_w &&
                  tr >= 0 && tr < tgt.grid_h && tc >= 0 && tc < tgt.grid_w,
              "build_adapter_corpus: label outside the fused grid");
      out.src_cells.push_back({sr, sc});
      out.tgt_cells.push_back({tr, tc});
    }
    if (!out.src_cells.empty()) corpus.push_back(std::move(out));
  }
  return corpus;
}

/// Rebuild the adapter corpus from a finished run's outputs: the labels file
/// plus the saved fused maps. Kept labels are grouped per manifest pair via
/// their image ids; pairs without kept labels or without saved maps are
/// omitted. Corpus order follows the manifest.
inline std::vector<AdapterPair> load_adapter_corpus(
    const std::string& labels_path, const std::vector<PairEntry>& manifest,
    const std::string& fused_dir) {
  std::ifstream in(labels_path);
  require(static_cast<bool>(in),
          "load_adapter_corpus: cannot open '" + labels_path + "'");
  std::map<std::pair<std::string, std::string>,
           std::vector<std::array<double, 4>>>
      kept_by_images;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
      if (!row.at("kept").get<bool>()) continue;
      kept_by_images[{row.at("src_img").get<std::string>(),
                      row.at("tgt_img").get<std::string>()}]
          .push_back({row.at("p_src").at(0).get<double>(),
                      row.at("p_src").at(1).get<double>(),
                      row.at("p_tgt").at(0).get<double>(),
                      row.at("p_tgt").at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(labels_path + " line " + std::to_string(lineno) + ": " +
                  e.what());
    }
  }

  std::vector<AdapterPair> corpus;
  for (const auto& entry : manifest) {
    const auto it =
        kept_by_images.find({entry.src.image_id, entry.tgt.image_id});
    if (it == kept_by_images.end()) continue;
    const auto src_path =
        std::filesystem::path(fused_dir) / (entry.pair_id + "_src.gcfm");
    const auto tgt_path =
        std::filesystem::path(fused_dir) / (entry.pair_id + "_tgt.gcfm");
    if (!std::filesystem::exists(src_path) ||
        !std::filesystem::exists(tgt_path))
      continue;
    const DenseFeatureMap src = load_feature_map(src_path.string());
    const DenseFeatureMap tgt = load_feature_map(tgt_path.string());
    AdapterPair out;
    out.src_h = src.grid_h;
    out.src_w = src.grid_w;
    out.tgt_h = tgt.grid_h;
    out.tgt_w = tgt.grid_w;
    out.src_map = src.values;
    out.tgt_map = tgt.values;
    for (const auto& [sx, sy, tx, ty] : it->second) {
      const int sr = src.patch_row_of(sy), sc = src.patch_col_of(sx);
      const int tr = tgt.patch_row_of(ty), tc = tgt.patch_col_of(tx);
      require(sr >= 0 && sr < src.grid_h && sc >= 0 && sc < src.grid_w &&
                  tr >= 0 && tr < tgt.grid_h && tc >= 0 && tc < tgt.grid_w,
              "load_adapter_corpus: label outside the fused grid for pair '" +
                  entry.pair_id + "'");
      out.src_cells.push_back({sr, sc});
      out.tgt_cells.push_back({tr, tc});
    }
    corpus.push_back(std::move(out));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Evaluation output files
// ---------------------------------------------------------------------------

struct PckRow {
  double alpha = 0.0;
  double value = 0.0;
};

inline std::vector<PckRow> eval_pck_sweep(
    const std::vector<std::vector<Vec2>>& predictions,
    const std::vector<KeypointAnnotation>& annos,
    const std::vector<double>& alphas = {0.01, 0.05, 0.1}) {
  std::vector<PckRow> rows;
  for (double alpha : alphas)
    rows.push_back({alpha, pck_mean_over_images(predictions, annos, alpha)});
  return rows;
}

inline void write_pck_csv(const std::string& path,
                          const std::vector<PckRow>& rows) {
  std::ofstream out(path);
  require(static_cast<bool>(out),
          "write_pck_csv: cannot open '" + path + "' for writing");
  out << "alpha,pck\n";
  out.precision(17);
  for (const auto& row : rows) out << row.alpha << ',' << row.value << '\n';
}

inline void write_filter_validation_csv(const std::string& path,
                                        const FilterValidationResult& result) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "write_filter_validation_csv: cannot open '" +
                                      path + "' for writing");
  out << "fpr,mean_kept_per_pair,total,kept,wrong_kept\n";
  out.precision(17);
  out << result.fpr << ',' << result.mean_kept_per_pair << ',' << result.total
      << ',' << result.kept << ',' << result.wrong_kept << '\n';
}

/// Predictions JSON: [{"image_id": ..., "points": [[x, y], ...]}, ...],
/// aligned with the annotation list by position and checked by id.
inline std::vector<std::vector<Vec2>> predictions_from_json_text(
    const std::string& text, const std::vector<KeypointAnnotation>& annos) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("predictions json: ") + e.what());
  }
  require(doc.is_array(), "predictions json: expected a top-level array");
  require(doc.size() == annos.size(),
          "predictions json: entry count must match the annotations");
  std::vector<std::vector<Vec2>> preds;
  for (size_t i = 0; i < doc.size(); ++i) {
    const auto& row = doc[i];
    try {
      require(row.at("image_id").get<std::string>() == annos[i].image_id,
              "predictions json: image_id mismatch at entry " +
                  std::to_string(i));
      std::vector<Vec2> points;
      for (const auto& pt : row.at("points"))
        points.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
      preds.push_back(std::move(points));
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("predictions json: ") + e.what());
    }
  }
  return preds;
}

/// Validation-pair JSON for the filter metrics: [{"predictions": [[x,y]..],
/// "gts": [[x,y]..], "kept": [0/1..], "bbox_h": .., "bbox_w": ..}, ...]
inline std::vector<ValidationPair> validation_pairs_from_json_text(
    const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("validation json: ") + e.what());
  }
  require(doc.is_array(), "validation json: expected a top-level array");
  std::vector<ValidationPair> pairs;
  for (const auto& row : doc) {
    ValidationPair pair;
    try {
      for (const auto& pt : row.at("predictions"))
        pair.predictions.emplace_back(pt.at(0).get<double>(),
                                      pt.at(1).get<double>());
      for (const auto& pt : row.at("gts"))
        pair.gts.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
      for (const auto& v : row.at("kept"))
        pair.kept.push_back(v.get<int>() ? 1 : 0);
      pair.bbox_h = row.at("bbox_h").get<double>();
      pair.bbox_w = row.at("bbox_w").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("validation json: ") + e.what());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic corpus on disk
// ---------------------------------------------------------------------------

struct SynthCorpusParams {
  PairParams pair;
  int pairs = 10;
  double mismatch_fraction = 0.0;
  // synthetic stand-ins for the two image feature maps: the vertex
  // descriptors rasterized at these resolutions plus seeded Gaussian noise
  int sd_grid = 0;    // 0: image_size / 2
  int dino_grid = 0;  // 0: image_size / 4
  double feature_noise = 0.05;
};

namespace detail {

inline DenseFeatureMap synth_image_features(const SynthScene& scene, int grid,
                                            double noise_sigma, Rng& rng) {
  auto raster = rasterize_vertex_descriptors(scene.mesh, scene.camera,
                                             scene.gt_pose, scene.gt_mask,
                                             grid, grid);
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for (int i = 0; i < raster.map.cell_count(); ++i) {
      if (raster.map.flagged(i)) continue;
      for (int c = 0; c < raster.map.channels; ++c)
        raster.map.values(i, c) += gauss(rng);
    }
  }
  return raster.map;
}

}  // namespace detail

/// Write one synthetic scene's input files (mesh, descriptors, camera, pose,
/// mask, and the two noisy feature maps) under `dir` with the given stem.
/// Returns manifest-ready relative paths.
inline ImageInputs write_synth_scene(const SynthScene& scene,
                                     const std::string& dir,
                                     const std::string& stem, int sd_grid,
                                     int dino_grid, double noise, Rng& rng) {
  ImageInputs inputs;
  std::filesystem::create_directories(dir);
  const auto path = [&](const std::string& suffix) {
    return (std::filesystem::path(dir) / (stem + suffix)).string();
  };
  inputs.image_id = stem;
  save_mesh_ply(scene.mesh, path("_mesh.ply"));
  inputs.mesh = stem + "_mesh.ply";
  save_descriptors_file(scene.mesh.descriptors, path("_descriptors.gcdf"));
  inputs.descriptors = stem + "_descriptors.gcdf";
  save_camera(scene.camera, path("_camera.json"));
  inputs.camera = stem + "_camera.json";
  save_mask(scene.gt_mask, path("_mask.pgm"));
  inputs.mask = stem + "_mask.pgm";
  save_pose(scene.gt_pose, path("_pose.json"));
  inputs.pose = stem + "_pose.json";
  save_feature_map(detail::synth_image_features(scene, sd_grid, noise, rng),
                   path("_sd.gcfm"));
  inputs.sd = stem + "_sd.gcfm";
  save_feature_map(detail::synth_image_features(scene, dino_grid, noise, rng),
                   path("_dino.gcfm"));
  inputs.dino = stem + "_dino.gcfm";
  return inputs;
}

/// Generate a ready-to-run corpus: per pair, every input file the pipeline
/// manifest needs, plus manifest.json at the corpus root. Returns the
/// manifest entries (paths relative to `dir`).
inline std::vector<PairEntry> write_synth_corpus(const SynthCorpusParams& params,
                                                 std::uint64_t root_seed,
                                                 const std::string& dir) {
  require(params.pairs >= 0, "write_synth_corpus: negative pair count");
  const int sd_grid =
      params.sd_grid > 0 ? params.sd_grid : params.pair.image_size / 2;
  const int dino_grid =
      params.dino_grid > 0 ? params.dino_grid : params.pair.image_size / 4;
  require(sd_grid > 0 && params.pair.image_size % sd_grid == 0,
          "write_synth_corpus: sd grid must tile the image");
  require(dino_grid > 0 && params.pair.image_size % dino_grid == 0,
          "write_synth_corpus: dino grid must tile the image");
  std::filesystem::create_directories(dir);

  std::vector<PairEntry> manifest;
  for (int p = 0; p < params.pairs; ++p) {
    const SynthPair pair = make_pair(params.pair, params.mismatch_fraction,
                                     root_seed, static_cast<std::uint64_t>(p));
    auto rng = make_rng(root_seed, "synth_features",
                        static_cast<std::uint64_t>(p));
    PairEntry entry;
    entry.pair_id = "pair_" + std::to_string(p);
    entry.src = write_synth_scene(pair.src, dir, entry.pair_id + "_src",
                                  sd_grid, dino_grid, params.feature_noise, rng);
    entry.tgt = write_synth_scene(pair.tgt, dir, entry.pair_id + "_tgt",
                                  sd_grid, dino_grid, params.feature_noise, rng);
    manifest.push_back(std::move(entry));
  }

  nlohmann::json doc = nlohmann::json::array();
  for (const auto& entry : manifest) {
    nlohmann::json row;
    row["pair_id"] = entry.pair_id;
    const std::array<std::pair<const char*, const ImageInputs*>, 2> sides = {
        {{"src", &entry.src}, {"tgt", &entry.tgt}}};
    for (const auto& [key, img] : sides) {
      nlohmann::json sub;
      sub["image_id"] = img->image_id;
      sub["mesh"] = img->mesh;
      sub["descriptors"] = img->descriptors;
      sub["camera"] = img->camera;
      sub["mask"] = img->mask;
      sub["sd"] = img->sd;
      sub["dino"] = img->dino;
      sub["pose"] = img->pose;
      row[key] = std::move(sub);
    }
    doc.push_back(std::move(row));
  }
  std::ofstream out((std::filesystem::path(dir) / "manifest.json").string());
  require(static_cast<bool>(out), "write_synth_corpus: cannot write manifest");
  out << doc.dump(2) << '\n';
  return manifest;
}

}  // namespace geocorr

// Command-line front end: synthetic data generation, the label-generation
// pipeline, adapter training, and evaluation as subcommands. This binary is
// the only place user-facing I/O and process exit codes live.

#include <CLI11.hpp>

#include "geocorr/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace geocorr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;      // errors, or every pair failed
constexpr int kExitEmptyInput = 2;   // empty manifest: nothing to do

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --- synth ------------------------------------------------------------------

struct SynthOpts {
  std::string kind = "icosphere";
  int n = 2;
  std::string out_dir;
  int image_size = 120;
  double focal = 110.0;
  double distance = 4.0;
  std::uint64_t seed = 0;
  double noise = 0.05;
  // corpus mode
  int pairs = 0;
  double mismatch = 0.0;
  int candidates = 50;
};

std::string mesh_kind_string(const std::string& kind, int n) {
  if (kind == "icosphere" || kind == "strip")
    return kind + "(" + std::to_string(n) + ")";
  return kind;
}

int run_synth(const SynthOpts& opt) {
  if (opt.pairs > 0) {
    SynthCorpusParams params;
    params.pair.icosphere_subdivisions = opt.n;
    params.pair.image_size = opt.image_size;
    params.pair.focal = opt.focal;
    params.pair.camera_distance = opt.distance;
    params.pair.candidate_count = opt.candidates;
    params.pairs = opt.pairs;
    params.mismatch_fraction = opt.mismatch;
    params.feature_noise = opt.noise;
    const auto manifest = write_synth_corpus(params, opt.seed, opt.out_dir);
    std::cout << "wrote " << manifest.size() << " pairs and manifest.json to "
              << opt.out_dir << "\n";
    return kExitOk;
  }

  SynthScene scene;
  scene.mesh = make_mesh(mesh_kind_string(opt.kind, opt.n), opt.seed);
  scene.camera.fx = scene.camera.fy = opt.focal;
  scene.camera.cx = scene.camera.cy = (opt.image_size - 1) * 0.5;
  scene.camera.width = scene.camera.height = opt.image_size;
  scene.camera.rotation = Mat3::Identity();
  scene.camera.translation = Vec3(0, 0, opt.distance);
  scene.gt_mask = rasterize_hard(scene.mesh, scene.camera, scene.gt_pose);
  scene.seed = opt.seed;

  auto rng = make_rng(opt.seed, "synth_features");
  const int sd_grid = opt.image_size / 2;
  const int dino_grid = opt.image_size / 4;
  require(sd_grid > 0 && opt.image_size % sd_grid == 0 && dino_grid > 0 &&
              opt.image_size % dino_grid == 0,
          "synth: image size must be a positive multiple of 4");
  const ImageInputs files = write_synth_scene(scene, opt.out_dir, "scene",
                                              sd_grid, dino_grid, opt.noise,
                                              rng);
  std::cout << "wrote " << files.mesh << ", " << files.descriptors << ", "
            << files.camera << ", " << files.pose << ", " << files.mask
            << ", " << files.sd << ", " << files.dino << " to " << opt.out_dir
            << "\n";
  return kExitOk;
}

// --- refine-pose --------------------------------------------------------------

struct RefinePoseOpts {
  std::string mesh, camera, mask, init, config, out, trace;
};

int run_refine_pose(const RefinePoseOpts& opt) {
  const RefineConfig rc =
      opt.config.empty() ? RefineConfig{} : load_pipeline_config(opt.config).refine;
  const TriangleMesh mesh = load_mesh(opt.mesh);
  const CameraModel cam = load_camera(opt.camera);
  const MaskImage mask = load_mask(opt.mask);
  const PoseParams init = opt.init.empty() ? PoseParams{} : load_pose(opt.init);

  const RefineResult result = refine_pose(mesh, cam, mask, init, rc);

  nlohmann::json j;
  j["log_scale"] = result.pose.log_scale;
  j["translation"] = {result.pose.translation.x(), result.pose.translation.y(),
                      result.pose.translation.z()};
  j["steps_dt"] = rc.steps_dt;
  j["steps_iou"] = rc.steps_iou;
  j["final_loss_dt"] = nullptr;
  j["final_loss_iou"] = nullptr;
  for (const auto& step : result.trace) {
    if (step.phase == "dt") j["final_loss_dt"] = step.loss;
    if (step.phase == "iou") j["final_loss_iou"] = step.loss;
  }
  std::ofstream out(opt.out);
  require(static_cast<bool>(out), "cannot open '" + opt.out + "' for writing");
  out << j.dump(2) << "\n";

  if (!opt.trace.empty()) {
    std::ofstream tr(opt.trace);
    require(static_cast<bool>(tr),
            "cannot open '" + opt.trace + "' for writing");
    tr << "step,phase,loss,log_scale,tx,ty,tz\n";
    tr.precision(17);
    for (const auto& step : result.trace)
      tr << step.step << ',' << step.phase << ',' << step.loss << ','
         << step.pose.log_scale << ',' << step.pose.translation.x() << ','
         << step.pose.translation.y() << ',' << step.pose.translation.z()
         << "\n";
  }
  std::cout << "refined pose: log_scale=" << result.pose.log_scale
            << " translation=(" << result.pose.translation.transpose()
            << ") -> " << opt.out << "\n";
  return kExitOk;
}

// --- canonicalize ---------------------------------------------------------------

struct CanonicalizeOpts {
  std::string mesh, camera, pose, out, report;
  std::string estimator = "oracle";
  double oracle_offset = 0.0;
  double oracle_noise = 0.0;
  std::uint64_t seed = 0;
};

OrientationEstimator estimator_from_answers_file(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  require(doc.is_array(), path + ": expected an array of per-view estimates");
  std::vector<std::optional<double>> answers;
  for (const auto& v : doc) {
    if (v.is_null())
      answers.push_back(std::nullopt);
    else
      answers.push_back(v.get<double>());
  }
  return [answers](const ViewRender& view) -> std::optional<double> {
    if (view.index < 0 || view.index >= static_cast<int>(answers.size()))
      return std::nullopt;
    return answers[static_cast<size_t>(view.index)];
  };
}

int run_canonicalize(const CanonicalizeOpts& opt) {
  TriangleMesh mesh = load_mesh(opt.mesh);
  const CameraModel cam = load_camera(opt.camera);
  const PoseParams pose = opt.pose.empty() ? PoseParams{} : load_pose(opt.pose);
  const OrientationEstimator est =
      opt.estimator == "oracle"
          ? make_oracle_estimator(opt.oracle_offset, opt.oracle_noise, opt.seed)
          : estimator_from_answers_file(opt.estimator);

  const CanonicalizeReport report = canonicalize_yaw(mesh, cam, est, pose);
  save_mesh_ply(mesh, opt.out);

  if (!opt.report.empty()) {
    nlohmann::json j;
    j["correction_deg"] = report.correction_deg;
    j["votes"] = report.votes;
    j["failures"] = report.failures;
    j["estimates"] = nlohmann::json::array();
    for (double e : report.estimates) {
      if (std::isfinite(e))
        j["estimates"].push_back(e);
      else
        j["estimates"].push_back(nullptr);
    }
    std::ofstream out(opt.report);
    require(static_cast<bool>(out),
            "cannot open '" + opt.report + "' for writing");
    out << j.dump(2) << "\n";
  }
  std::cout << "yaw correction: " << report.correction_deg << " deg ("
            << report.failures << " failed views) -> " << opt.out << "\n";
  return kExitOk;
}

// --- shared pipeline plumbing ------------------------------------------------

struct PipelineOpts {
  std::string config, manifest, input_root, output_root;
};

PipelineConfig load_config_with_overrides(const PipelineOpts& opt) {
  PipelineConfig cfg = load_pipeline_config(opt.config);
  if (!opt.input_root.empty()) cfg.input_root = opt.input_root;
  if (!opt.output_root.empty()) cfg.output_root = opt.output_root;
  validate_pipeline_config(cfg);
  return cfg;
}

void print_pipeline_report(const PipelineReport& report,
                           const std::string& output_root) {
  for (const auto& pair : report.pairs) {
    if (!pair.ok) {
      std::cout << pair.pair_id << ": skipped (" << pair.skip_reason << ")\n";
      continue;
    }
    std::cout << pair.pair_id << ": " << pair.cyclic.in << " candidates -> "
              << pair.cyclic.kept << " cyclic -> " << pair.lift.kept
              << " lifted -> " << pair.labels_kept << " kept\n";
  }
  std::cout << "pairs processed: " << report.processed
            << ", skipped: " << report.failed
            << ", labels kept: " << report.total_kept << "\n";
  std::cout << "outputs: " << (fs::path(output_root) / "labels.jsonl").string()
            << ", " << (fs::path(output_root) / "stats.json").string() << "\n";
}

int pipeline_exit_code(const std::vector<PairEntry>& manifest,
                       const PipelineReport& report) {
  if (manifest.empty()) return kExitEmptyInput;
  if (report.all_failed()) return kExitFailure;
  return kExitOk;
}

int run_generate_labels(const PipelineOpts& opt) {
  const PipelineConfig cfg = load_config_with_overrides(opt);
  const auto manifest = load_manifest(opt.manifest);
  const PipelineReport report = run_pipeline(cfg, manifest);
  print_pipeline_report(report, cfg.output_root);
  if (manifest.empty()) std::cout << "manifest is empty: nothing to do\n";
  return pipeline_exit_code(manifest, report);
}

// --- train-adapter -------------------------------------------------------------

struct TrainAdapterOpts {
  PipelineOpts pipeline;
  std::string labels, fused, out, trace;
};

int train_adapter_from_outputs(const PipelineConfig& cfg,
                               const std::vector<PairEntry>& manifest,
                               const std::string& labels_path,
                               const std::string& fused_dir,
                               const std::string& out_path,
                               const std::string& trace_path) {
  require(cfg.adapter.iterations > 0,
          "adapter.iterations must be positive to train");
  const auto corpus = load_adapter_corpus(labels_path, manifest, fused_dir);
  if (corpus.empty()) {
    std::cout << "no pairs with kept labels and saved feature maps; "
                 "nothing to train on\n";
    return kExitFailure;
  }
  long labels = 0;
  for (const auto& pair : corpus) labels += static_cast<long>(pair.src_cells.size());

  const int in_dim = static_cast<int>(corpus.front().src_map.cols());
  const int out_dim = cfg.adapter_out_dim > 0 ? cfg.adapter_out_dim : in_dim;
  AdapterNet net = make_adapter(in_dim, out_dim, cfg.adapter_hidden, cfg.seed);
  const auto records = train_adapter(net, corpus, cfg.adapter);
  save_adapter(out_path, net);
  save_trace_csv(trace_path, records);

  std::cout << "trained adapter (" << in_dim << " -> " << cfg.adapter_hidden
            << " -> " << out_dim << ", " << param_count(net) << " parameters) on "
            << corpus.size() << " pairs / " << labels << " labels for "
            << records.size() << " iterations\n";
  if (!records.empty())
    std::cout << "loss: sparse " << records.front().loss_sparse << " -> "
              << records.back().loss_sparse << ", dense "
              << records.front().loss_dense << " -> "
              << records.back().loss_dense << "\n";
  std::cout << "outputs: " << out_path << ", " << trace_path << "\n";
  return kExitOk;
}

int run_train_adapter(const TrainAdapterOpts& opt) {
  const PipelineConfig cfg = load_config_with_overrides(opt.pipeline);
  const auto manifest = load_manifest(opt.pipeline.manifest);
  const auto fallback = [&](const std::string& value, const char* name) {
    return value.empty() ? (fs::path(cfg.output_root) / name).string() : value;
  };
  return train_adapter_from_outputs(
      cfg, manifest, fallback(opt.labels, "labels.jsonl"),
      fallback(opt.fused, "fused"), fallback(opt.out, "adapter.gcad"),
      fallback(opt.trace, "adapter_trace.csv"));
}

// --- eval ---------------------------------------------------------------------

struct EvalOpts {
  std::string annotations, predictions, validation;
  std::string out_dir = ".";
  std::vector<double> alphas = {0.01, 0.05, 0.1};
  double validation_alpha = 0.1;
  bool pooled = false;
};

int run_eval_cmd(const EvalOpts& opt) {
  const auto annos = annotations_from_json_text(read_text_file(opt.annotations));
  const auto preds =
      predictions_from_json_text(read_text_file(opt.predictions), annos);
  fs::create_directories(opt.out_dir);

  const auto rows = eval_pck_sweep(preds, annos, opt.alphas);
  const std::string pck_path = (fs::path(opt.out_dir) / "pck.csv").string();
  write_pck_csv(pck_path, rows);
  std::cout << "keypoint accuracy over " << annos.size() << " images:\n";
  for (const auto& row : rows)
    std::cout << "  pck@" << row.alpha << " = " << row.value << "\n";

  if (opt.pooled) {
    std::vector<PckRow> pooled;
    for (double alpha : opt.alphas)
      pooled.push_back({alpha, pck_pooled_over_keypoints(preds, annos, alpha)});
    const std::string pooled_path =
        (fs::path(opt.out_dir) / "pck_pooled.csv").string();
    write_pck_csv(pooled_path, pooled);
    for (const auto& row : pooled)
      std::cout << "  pooled pck@" << row.alpha << " = " << row.value << "\n";
  }

  if (!opt.validation.empty()) {
    const auto pairs =
        validation_pairs_from_json_text(read_text_file(opt.validation));
    const auto fv = filter_validation(pairs, opt.validation_alpha);
    const std::string fv_path = (fs::path(opt.out_dir) / "filter.csv").string();
    write_filter_validation_csv(fv_path, fv);
    std::cout << "filter validation over " << pairs.size()
              << " pairs: fpr = " << fv.fpr
              << ", kept/pair = " << fv.mean_kept_per_pair << " (" << fv.kept
              << "/" << fv.total << " kept, " << fv.wrong_kept
              << " wrong kept)\n";
  }
  std::cout << "outputs in " << opt.out_dir << "\n";
  return kExitOk;
}

// --- run ------------------------------------------------------------------------

int run_full(const PipelineOpts& opt) {
  const PipelineConfig cfg = load_config_with_overrides(opt);
  const auto manifest = load_manifest(opt.manifest);
  const PipelineReport report = run_pipeline(cfg, manifest);
  print_pipeline_report(report, cfg.output_root);
  const int code = pipeline_exit_code(manifest, report);
  if (code != kExitOk) {
    if (manifest.empty()) std::cout << "manifest is empty: nothing to do\n";
    return code;
  }
  if (cfg.adapter.iterations <= 0) {
    std::cout << "adapter training disabled (adapter.iterations = 0)\n";
    return kExitOk;
  }
  if (report.total_kept == 0) {
    std::cout << "no labels survived filtering; skipping adapter training\n";
    return kExitFailure;
  }
  const fs::path out_root(cfg.output_root);
  return train_adapter_from_outputs(
      cfg, manifest, (out_root / "labels.jsonl").string(),
      (out_root / "fused").string(), (out_root / "adapter.gcad").string(),
      (out_root / "adapter_trace.csv").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "geocorr: geometrically verified semantic-correspondence pseudo-labels\n"
      "(pose refinement, yaw canonicalization, feature fusion, cyclic and\n"
      "geodesic filtering, adapter training, evaluation)"};
  app.require_subcommand(0, 1);

  std::string write_config_path;
  app.add_option("--write-config", write_config_path,
                 "write the default configuration template to this path and "
                 "exit");

  SynthOpts synth_opt;
  auto* synth = app.add_subcommand(
      "synth", "generate synthetic scenes or a paired corpus with a manifest");
  synth->add_option("--kind", synth_opt.kind,
                    "mesh kind: tetra, cube, strip, icosphere")
      ->capture_default_str();
  synth->add_option("--n", synth_opt.n,
                    "mesh parameter (icosphere subdivisions / strip faces)")
      ->capture_default_str();
  synth->add_option("--out", synth_opt.out_dir, "output directory")->required();
  synth->add_option("--image-size", synth_opt.image_size,
                    "square frame size in pixels (multiple of 4)")
      ->capture_default_str();
  synth->add_option("--focal", synth_opt.focal, "focal length in pixels")
      ->capture_default_str();
  synth->add_option("--distance", synth_opt.distance, "camera distance")
      ->capture_default_str();
  synth->add_option("--seed", synth_opt.seed, "root random seed")
      ->capture_default_str();
  synth->add_option("--noise", synth_opt.noise,
                    "feature-map noise sigma (foreground cells)")
      ->capture_default_str();
  synth->add_option(
      "--pairs", synth_opt.pairs,
      "write this many icosphere pairs plus manifest.json (corpus mode)");
  synth->add_option("--mismatch", synth_opt.mismatch,
                    "corpus mode: fraction of planted mirror mismatches")
      ->capture_default_str();
  synth->add_option("--candidates", synth_opt.candidates,
                    "corpus mode: planted candidates per pair")
      ->capture_default_str();

  RefinePoseOpts refine_opt;
  auto* refine = app.add_subcommand(
      "refine-pose", "align a mesh to an observed mask by scale/translation");
  refine->add_option("--mesh", refine_opt.mesh, "mesh file (OBJ or PLY)")
      ->required();
  refine->add_option("--camera", refine_opt.camera, "camera JSON")->required();
  refine->add_option("--mask", refine_opt.mask, "observed mask (PGM or PNG)")
      ->required();
  refine->add_option("--init", refine_opt.init,
                     "initial pose JSON (default: identity)");
  refine->add_option("--config", refine_opt.config,
                     "pipeline TOML supplying the refinement settings");
  refine->add_option("--out", refine_opt.out, "output pose JSON")->required();
  refine->add_option("--trace", refine_opt.trace, "per-step loss CSV");

  CanonicalizeOpts canon_opt;
  auto* canon = app.add_subcommand(
      "canonicalize", "resolve the 90-degree yaw ambiguity by probe-view vote");
  canon->add_option("--mesh", canon_opt.mesh, "mesh file (OBJ or PLY)")
      ->required();
  canon->add_option("--camera", canon_opt.camera, "camera JSON")->required();
  canon->add_option("--pose", canon_opt.pose, "pose JSON (default: identity)");
  canon->add_option("--estimator", canon_opt.estimator,
                    "'oracle' or a JSON file of per-view yaw estimates "
                    "(numbers or null)")
      ->capture_default_str();
  canon->add_option("--oracle-offset", canon_opt.oracle_offset,
                    "oracle estimator: planted yaw offset in degrees")
      ->capture_default_str();
  canon->add_option("--oracle-noise", canon_opt.oracle_noise,
                    "oracle estimator: estimate noise sigma in degrees")
      ->capture_default_str();
  canon->add_option("--seed", canon_opt.seed, "oracle estimator noise seed")
      ->capture_default_str();
  canon->add_option("--out", canon_opt.out, "canonicalized mesh PLY")
      ->required();
  canon->add_option("--report", canon_opt.report, "vote report JSON");

  PipelineOpts labels_opt;
  auto* labels = app.add_subcommand(
      "generate-labels",
      "run the label pipeline over a pair manifest (refine, canonicalize, "
      "fuse, match, filter)");
  labels->add_option("--config", labels_opt.config, "pipeline TOML")->required();
  labels->add_option("--manifest", labels_opt.manifest, "pair manifest JSON")
      ->required();
  labels->add_option("--input-root", labels_opt.input_root,
                     "override the config's input root");
  labels->add_option("--output-root", labels_opt.output_root,
                     "override the config's output root");

  TrainAdapterOpts train_opt;
  auto* train = app.add_subcommand(
      "train-adapter", "train the feature adapter on kept pipeline labels");
  train->add_option("--config", train_opt.pipeline.config, "pipeline TOML")
      ->required();
  train->add_option("--manifest", train_opt.pipeline.manifest,
                    "pair manifest JSON")
      ->required();
  train->add_option("--input-root", train_opt.pipeline.input_root,
                    "override the config's input root");
  train->add_option("--output-root", train_opt.pipeline.output_root,
                    "override the config's output root");
  train->add_option("--labels", train_opt.labels,
                    "labels JSONL (default: <output-root>/labels.jsonl)");
  train->add_option("--fused", train_opt.fused,
                    "fused-map directory (default: <output-root>/fused)");
  train->add_option("--out", train_opt.out,
                    "adapter checkpoint (default: <output-root>/adapter.gcad)");
  train->add_option(
      "--trace", train_opt.trace,
      "training trace CSV (default: <output-root>/adapter_trace.csv)");

  EvalOpts eval_opt;
  auto* eval = app.add_subcommand(
      "eval", "score predictions against annotations and write metric CSVs");
  eval->add_option("--annotations", eval_opt.annotations,
                   "keypoint annotations JSON")
      ->required();
  eval->add_option("--predictions", eval_opt.predictions,
                   "predicted keypoints JSON")
      ->required();
  eval->add_option("--out-dir", eval_opt.out_dir, "metrics output directory")
      ->capture_default_str();
  eval->add_option("--alphas", eval_opt.alphas,
                   "accuracy thresholds as fractions of the bbox side")
      ->expected(-1);
  eval->add_flag("--pooled", eval_opt.pooled,
                 "also report keypoint-pooled accuracy");
  eval->add_option("--validation", eval_opt.validation,
                   "filter-validation pairs JSON (writes filter.csv)");
  eval->add_option("--validation-alpha", eval_opt.validation_alpha,
                   "correctness radius for filter validation")
      ->capture_default_str();

  PipelineOpts run_opt;
  auto* run = app.add_subcommand(
      "run", "full pipeline: generate labels, then train the adapter");
  run->add_option("--config", run_opt.config, "pipeline TOML")->required();
  run->add_option("--manifest", run_opt.manifest, "pair manifest JSON")
      ->required();
  run->add_option("--input-root", run_opt.input_root,
                  "override the config's input root");
  run->add_option("--output-root", run_opt.output_root,
                  "override the config's output root");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!write_config_path.empty()) {
      std::ofstream out(write_config_path);
      require(static_cast<bool>(out),
              "cannot open '" + write_config_path + "' for writing");
      out << default_pipeline_toml();
      std::cout << "wrote default configuration to " << write_config_path
                << "\n";
      return kExitOk;
    }
    if (*synth) return run_synth(synth_opt);
    if (*refine) return run_refine_pose(refine_opt);
    if (*canon) return run_canonicalize(canon_opt);
    if (*labels) return run_generate_labels(labels_opt);
    if (*train) return run_train_adapter(train_opt);
    if (*eval) return run_eval_cmd(eval_opt);
    if (*run) return run_full(run_opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  std::cout << app.help();
  return kExitOk;
}

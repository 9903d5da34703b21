#include <catch2/catch_amalgamated.hpp>

#include "geocorr/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace geocorr;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path("pipeline_tmp") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthCorpusParams small_corpus_params() {
  SynthCorpusParams params;
  params.pair.icosphere_subdivisions = 2;
  params.pair.image_size = 60;
  params.pair.focal = 55.0;
  params.pair.candidate_count = 10;
  params.pairs = 3;
  return params;
}

PipelineConfig small_config(const std::string& input_root,
                            const std::string& output_root) {
  PipelineConfig cfg;
  cfg.grid = 15;
  cfg.refine.steps_dt = 3;
  cfg.refine.steps_iou = 2;
  cfg.adapter.iterations = 0;
  cfg.seed = 4242;
  cfg.input_root = input_root;
  cfg.output_root = output_root;
  return cfg;
}

}  // namespace

TEST_CASE("config parser handles sections, comments, and typed values") {
  const std::string text = R"(
# leading comment
top = 3
name = "hello # not a comment"
flag = true

[alpha]
x = 0.25   # trailing comment
y = -2
off = false
)";
  const TomlTable t = parse_toml_lite(text);
  REQUIRE(t.get_int("top") == 3);
  REQUIRE(t.get_string("name") == "hello # not a comment");
  REQUIRE(t.get_bool("flag"));
  REQUIRE(t.get_double("alpha.x") == Catch::Approx(0.25));
  REQUIRE(t.get_int("alpha.y") == -2);
  REQUIRE_FALSE(t.get_bool("alpha.off"));

  // fallbacks apply only to missing keys
  REQUIRE(t.get_int("absent", 7) == 7);
  REQUIRE(t.get_double("alpha.x", 9.0) == Catch::Approx(0.25));
  REQUIRE(t.get_string("missing", std::string("d")) == "d");
  REQUIRE(t.get_bool("nope", true));

  REQUIRE_THROWS_AS(t.raw("absent"), Error);
  REQUIRE_THROWS_AS(t.get_string("top"), Error);       // unquoted
  REQUIRE_THROWS_AS(t.get_double("name"), Error);      // not numeric
  REQUIRE_THROWS_AS(t.get_int("alpha.x"), Error);      // fractional
  REQUIRE_THROWS_AS(t.get_bool("top"), Error);         // not a boolean

  REQUIRE_THROWS_AS(parse_toml_lite("key_without_value\n"), Error);
  REQUIRE_THROWS_AS(parse_toml_lite("a = 1\na = 2\n"), Error);
  REQUIRE_THROWS_AS(parse_toml_lite("[]\n"), Error);
  REQUIRE_THROWS_AS(parse_toml_lite("= 3\n"), Error);
  REQUIRE_THROWS_AS(parse_toml_lite("a =\n"), Error);
}

TEST_CASE("default config template parses to the reference settings") {
  const PipelineConfig cfg = pipeline_config_from_toml(default_pipeline_toml());
  REQUIRE(cfg.seed == 0);
  REQUIRE(cfg.grid == 60);
  REQUIRE(cfg.tau_cc == Catch::Approx(0.05));
  REQUIRE(cfg.tau_geo == Catch::Approx(0.05));
  REQUIRE(cfg.weights.alpha == Catch::Approx(0.5));
  REQUIRE(cfg.weights.beta == Catch::Approx(1.0 / 3.0));
  REQUIRE(cfg.weights.gamma == Catch::Approx(1.0 / 6.0));
  REQUIRE(cfg.refine.lr_scale == Catch::Approx(0.05));
  REQUIRE(cfg.refine.lr_trans == Catch::Approx(0.02));
  REQUIRE(cfg.refine.steps_dt == 100);
  REQUIRE(cfg.refine.steps_iou == 50);
  REQUIRE(cfg.refine.lambda == Catch::Approx(4.0));
  REQUIRE(cfg.refine.dilation_radius == 4);
  REQUIRE(cfg.refine.kappa == Catch::Approx(2.0));
  REQUIRE(cfg.canonicalize.enabled);
  REQUIRE(cfg.adapter.iterations == 2000);
  REQUIRE(cfg.adapter.lr == Catch::Approx(5e-3));
  REQUIRE(cfg.adapter.weight_decay == Catch::Approx(1e-3));
  REQUIRE(cfg.adapter.labels_per_pair_per_iter == 50);
  REQUIRE(cfg.adapter.tau_c == Catch::Approx(0.07));
  REQUIRE(cfg.adapter.dense.window == 15);
  REQUIRE(cfg.adapter.dense.temp == Catch::Approx(0.04));
  REQUIRE(cfg.adapter.dense.sigma_eps == Catch::Approx(0.5));
  REQUIRE(cfg.adapter.seed == cfg.seed);
  REQUIRE(cfg.output_root == "out");

  // the seed key is mandatory: a template with the line removed must fail
  std::string no_seed;
  for (const auto& line : split_lines(default_pipeline_toml()))
    if (line.rfind("seed", 0) != 0) no_seed += line + "\n";
  REQUIRE_THROWS_WITH(pipeline_config_from_toml(no_seed),
                      Catch::Matchers::ContainsSubstring("seed"));
  REQUIRE_THROWS_AS(pipeline_config_from_toml("seed = -1\n"), Error);
}

TEST_CASE("pipeline config validation rejects out-of-range settings") {
  PipelineConfig cfg;
  cfg.seed = 1;
  REQUIRE_NOTHROW(validate_pipeline_config(cfg));

  auto broken = cfg;
  broken.tau_cc = 0.0;
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.tau_geo = 1.5;
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.weights.alpha = 0.9;  // no longer sums to 1
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.grid = 0;
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.refine.lambda = 0.5;
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.canonicalize.oracle_noise_deg = -1.0;
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
  broken = cfg;
  broken.output_root.clear();
  REQUIRE_THROWS_AS(validate_pipeline_config(broken), Error);
}

TEST_CASE("pair manifest round-trips through json") {
  const std::string text = R"([
    {"pair_id": "p0",
     "src": {"image_id": "a", "mesh": "a.ply", "descriptors": "a.desc",
             "camera": "a_cam.json", "mask": "a.pgm",
             "sd": "a_sd.gcfm", "dino": "a_dino.gcfm", "pose": "a_pose.json"},
     "tgt": {"image_id": "b", "mesh": "b.ply", "descriptors": "b.desc",
             "camera": "b_cam.json", "mask": "b.pgm",
             "sd": "b_sd.gcfm", "dino": "b_dino.gcfm"}}
  ])";
  const auto pairs = manifest_from_json_text(text);
  REQUIRE(pairs.size() == 1);
  REQUIRE(pairs[0].pair_id == "p0");
  REQUIRE(pairs[0].src.image_id == "a");
  REQUIRE(pairs[0].src.pose == "a_pose.json");
  REQUIRE(pairs[0].tgt.image_id == "b");
  REQUIRE(pairs[0].tgt.pose.empty());  // pose entry is optional
  REQUIRE(pairs[0].tgt.dino == "b_dino.gcfm");

  REQUIRE_THROWS_AS(manifest_from_json_text("{}"), Error);
  REQUIRE_THROWS_AS(manifest_from_json_text("not json"), Error);
  REQUIRE_THROWS_AS(
      manifest_from_json_text(R"([{"pair_id": "x", "src": {}}])"), Error);
  const std::string no_mask = R"([
    {"pair_id": "p0",
     "src": {"image_id": "a", "mesh": "a.ply", "descriptors": "a.desc",
             "camera": "a_cam.json",
             "sd": "a_sd.gcfm", "dino": "a_dino.gcfm"},
     "tgt": {"image_id": "b", "mesh": "b.ply", "descriptors": "b.desc",
             "camera": "b_cam.json", "mask": "b.pgm",
             "sd": "b_sd.gcfm", "dino": "b_dino.gcfm"}}
  ])";
  REQUIRE_THROWS_WITH(manifest_from_json_text(no_mask),
                      Catch::Matchers::ContainsSubstring("mask"));
}

TEST_CASE("pipeline run produces conserved, reproducible label files") {
  const fs::path corpus_dir = fresh_dir("corpus");
  const auto written =
      write_synth_corpus(small_corpus_params(), 4242, corpus_dir.string());
  REQUIRE(written.size() == 3);
  REQUIRE(fs::exists(corpus_dir / "manifest.json"));
  const auto manifest = load_manifest((corpus_dir / "manifest.json").string());
  REQUIRE(manifest.size() == 3);
  REQUIRE(manifest[0].pair_id == written[0].pair_id);
  REQUIRE(manifest[0].src.mesh == written[0].src.mesh);

  const fs::path out1 = fs::path("pipeline_tmp") / "out1";
  fs::remove_all(out1);
  const PipelineConfig cfg = small_config(corpus_dir.string(), out1.string());
  const PipelineReport report = run_pipeline(cfg, manifest);

  REQUIRE(report.processed == 3);
  REQUIRE(report.failed == 0);
  REQUIRE_FALSE(report.all_failed());
  REQUIRE(report.total_kept >= 1);

  long jsonl_lines = 0;
  for (const auto& pair : report.pairs) {
    REQUIRE(pair.ok);
    REQUIRE(pair.cyclic.in > 0);
    REQUIRE(pair.cyclic.conserved());
    REQUIRE(pair.lift.conserved());
    REQUIRE(pair.geodesic.conserved());
    // every candidate that survived the cyclic stage gets a label line
    REQUIRE(static_cast<long>(pair.jsonl.size()) == pair.lift.in);
    REQUIRE(pair.lift.kept == pair.geodesic.in);
    REQUIRE(pair.labels_kept == pair.geodesic.kept);
    jsonl_lines += static_cast<long>(pair.jsonl.size());
  }

  // labels.jsonl: one parseable object per line; kept lines carry a
  // verified error at or below the threshold, rejected lines a reason
  const std::string labels_text =
      read_file((out1 / "labels.jsonl").string());
  const auto lines = split_lines(labels_text);
  REQUIRE(static_cast<long>(lines.size()) == jsonl_lines);
  long kept_lines = 0;
  for (const auto& line : lines) {
    const auto row = nlohmann::json::parse(line);
    if (row.at("kept").get<bool>()) {
      ++kept_lines;
      REQUIRE_FALSE(row.at("geo_error").is_null());
      REQUIRE(row.at("geo_error").get<double>() <= cfg.tau_geo);
    } else {
      REQUIRE_FALSE(row.at("reason").get<std::string>().empty());
    }
  }
  REQUIRE(kept_lines == report.total_kept);

  // stats.json mirrors the in-memory report
  const auto stats = nlohmann::json::parse(read_file((out1 / "stats.json").string()));
  REQUIRE(stats.at("processed").get<long>() == 3);
  REQUIRE(stats.at("failed").get<long>() == 0);
  REQUIRE(stats.at("total_kept").get<long>() == report.total_kept);
  REQUIRE(stats.at("pairs").size() == 3);

  // sidecar outputs for downstream stages
  REQUIRE(fs::exists(out1 / "fused" / "pair_0_src.gcfm"));
  REQUIRE(fs::exists(out1 / "fused" / "pair_2_tgt.gcfm"));
  REQUIRE(fs::exists(out1 / "poses" / "pair_1_src.json"));

  // byte-identical rerun
  const fs::path out2 = fs::path("pipeline_tmp") / "out2";
  fs::remove_all(out2);
  PipelineConfig cfg2 = cfg;
  cfg2.output_root = out2.string();
  run_pipeline(cfg2, manifest);
  REQUIRE(read_file((out2 / "labels.jsonl").string()) == labels_text);
  REQUIRE(read_file((out2 / "stats.json").string()) ==
          read_file((out1 / "stats.json").string()));

  // worker count must not affect the output bytes
  for (const char* threads : {"1", "4"}) {
    const fs::path out_t = fs::path("pipeline_tmp") / (std::string("out_t") + threads);
    fs::remove_all(out_t);
    REQUIRE(setenv("GEOCORR_THREADS", threads, 1) == 0);
    PipelineConfig cfg_t = cfg;
    cfg_t.output_root = out_t.string();
    run_pipeline(cfg_t, manifest);
    REQUIRE(unsetenv("GEOCORR_THREADS") == 0);
    REQUIRE(read_file((out_t / "labels.jsonl").string()) == labels_text);
    REQUIRE(read_file((out_t / "stats.json").string()) ==
            read_file((out1 / "stats.json").string()));
  }
}

TEST_CASE("pipeline skips broken pairs and flags empty or all-failed runs") {
  const fs::path corpus_dir = fs::path("pipeline_tmp") / "corpus";
  REQUIRE(fs::exists(corpus_dir / "manifest.json"));  // built by the e2e case
  auto manifest = load_manifest((corpus_dir / "manifest.json").string());
  manifest.resize(2);
  manifest[1].src.mesh = "does_not_exist.ply";

  const fs::path out = fresh_dir("out_skip");
  const PipelineConfig cfg = small_config(corpus_dir.string(), out.string());
  const PipelineReport report = run_pipeline(cfg, manifest);
  REQUIRE(report.processed == 1);
  REQUIRE(report.failed == 1);
  REQUIRE_FALSE(report.all_failed());
  REQUIRE(report.pairs[0].ok);
  REQUIRE_FALSE(report.pairs[1].ok);
  REQUIRE_FALSE(report.pairs[1].skip_reason.empty());
  const auto stats = nlohmann::json::parse(read_file((out / "stats.json").string()));
  REQUIRE(stats.at("pairs")[1].at("ok").get<bool>() == false);
  REQUIRE_FALSE(stats.at("pairs")[1].at("skip_reason").get<std::string>().empty());

  // all pairs broken
  auto all_bad = manifest;
  all_bad[0].tgt.camera = "missing_camera.json";
  all_bad[1].src.mesh = "missing_mesh.ply";
  const fs::path out_bad = fresh_dir("out_bad");
  PipelineConfig cfg_bad = cfg;
  cfg_bad.output_root = out_bad.string();
  const PipelineReport bad = run_pipeline(cfg_bad, all_bad);
  REQUIRE(bad.processed == 0);
  REQUIRE(bad.failed == 2);
  REQUIRE(bad.all_failed());

  // empty manifest still writes (empty) outputs but is not a failure state
  const fs::path out_empty = fresh_dir("out_empty");
  PipelineConfig cfg_empty = cfg;
  cfg_empty.output_root = out_empty.string();
  const PipelineReport empty = run_pipeline(cfg_empty, {});
  REQUIRE(empty.processed == 0);
  REQUIRE(empty.failed == 0);
  REQUIRE_FALSE(empty.all_failed());
  REQUIRE(read_file((out_empty / "labels.jsonl").string()).empty());
}

TEST_CASE("kept labels convert into an adapter training corpus") {
  const fs::path corpus_dir = fs::path("pipeline_tmp") / "corpus";
  REQUIRE(fs::exists(corpus_dir / "manifest.json"));
  const auto manifest = load_manifest((corpus_dir / "manifest.json").string());
  const PipelineConfig cfg =
      small_config(corpus_dir.string(), (fs::path("pipeline_tmp") / "out_corpus").string());

  DenseFeatureMap fused_src, fused_tgt;
  const PairReport pair =
      process_pair(manifest[0], cfg, 0, &fused_src, &fused_tgt);
  REQUIRE(pair.ok);
  REQUIRE(pair.labels_kept >= 2);

  PipelineReport report;
  report.pairs = {pair};
  const auto corpus =
      build_adapter_corpus(report, {fused_src}, {fused_tgt});
  REQUIRE(corpus.size() == 1);
  const AdapterPair& ap = corpus[0];
  REQUIRE(ap.src_h == cfg.grid);
  REQUIRE(ap.tgt_w == cfg.grid);
  REQUIRE(static_cast<long>(ap.src_cells.size()) == pair.labels_kept);
  REQUIRE(ap.src_cells.size() == ap.tgt_cells.size());
  REQUIRE(ap.src_map.rows() == cfg.grid * cfg.grid);
  REQUIRE(ap.src_map.cols() == fused_src.channels);
  for (const auto& cell : ap.src_cells) {
    REQUIRE(cell[0] >= 0);
    REQUIRE(cell[0] < ap.src_h);
    REQUIRE(cell[1] >= 0);
    REQUIRE(cell[1] < ap.src_w);
  }

  // the first kept label's pixel maps back to its recorded source cell
  for (const auto& line : pair.jsonl) {
    const auto row = nlohmann::json::parse(line);
    if (!row.at("kept").get<bool>()) continue;
    const double sx = row.at("p_src").at(0).get<double>();
    const double sy = row.at("p_src").at(1).get<double>();
    REQUIRE(ap.src_cells[0][0] == fused_src.patch_row_of(sy));
    REQUIRE(ap.src_cells[0][1] == fused_src.patch_col_of(sx));
    break;
  }

  // mismatched map counts are rejected
  REQUIRE_THROWS_AS(build_adapter_corpus(report, {}, {fused_tgt}), Error);

  // the corpus plugs straight into the trainer
  AdapterNet net = make_adapter(static_cast<int>(fused_src.channels), 8, 16, 3);
  TrainConfig tc;
  tc.iterations = 3;
  tc.labels_per_pair_per_iter = 5;
  tc.dense.window = 5;
  tc.dense.sigma_eps = 0.0;
  tc.seed = 7;
  const auto trace = train_adapter(net, corpus, tc);
  REQUIRE(trace.size() == 3);
  for (const auto& rec : trace) {
    REQUIRE(std::isfinite(rec.loss_sparse));
    REQUIRE(std::isfinite(rec.loss_dense));
  }
}

TEST_CASE("evaluation helpers write csv summaries and parse prediction files") {
  const fs::path dir = fresh_dir("eval_out");

  std::vector<KeypointAnnotation> annos(2);
  annos[0] = {"img0", {Vec2(10, 10), Vec2(40, 20)}, {1, 1}, 50, 40};
  annos[1] = {"img1", {Vec2(5, 5), Vec2(9, 9), Vec2(30, 30)}, {1, 0, 1}, 60, 60};
  const std::vector<std::vector<Vec2>> perfect = {
      {Vec2(10, 10), Vec2(40, 20)}, {Vec2(5, 5), Vec2(30, 30)}};

  const auto rows = eval_pck_sweep(perfect, annos);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) REQUIRE(row.value == Catch::Approx(1.0));
  REQUIRE(rows[0].alpha == Catch::Approx(0.01));
  REQUIRE(rows[2].alpha == Catch::Approx(0.1));

  const std::string pck_path = (dir / "pck.csv").string();
  write_pck_csv(pck_path, rows);
  const auto pck_lines = split_lines(read_file(pck_path));
  REQUIRE(pck_lines.size() == 4);
  REQUIRE(pck_lines[0] == "alpha,pck");
  for (size_t i = 1; i < pck_lines.size(); ++i) {
    const auto comma = pck_lines[i].find(',');
    REQUIRE(comma != std::string::npos);
    REQUIRE(std::stod(pck_lines[i].substr(comma + 1)) == Catch::Approx(1.0));
  }

  FilterValidationResult fv;
  fv.fpr = 0.125;
  fv.mean_kept_per_pair = 3.5;
  fv.total = 80;
  fv.kept = 28;
  fv.wrong_kept = 10;
  const std::string fv_path = (dir / "filter.csv").string();
  write_filter_validation_csv(fv_path, fv);
  const auto fv_lines = split_lines(read_file(fv_path));
  REQUIRE(fv_lines.size() == 2);
  REQUIRE(fv_lines[0] == "fpr,mean_kept_per_pair,total,kept,wrong_kept");
  REQUIRE(fv_lines[1] == "0.125,3.5,80,28,10");

  const std::string preds_json = R"([
    {"image_id": "img0", "points": [[10, 10], [40, 20]]},
    {"image_id": "img1", "points": [[5, 5], [30, 30]]}
  ])";
  const auto preds = predictions_from_json_text(preds_json, annos);
  REQUIRE(preds.size() == 2);
  REQUIRE(preds[0].size() == 2);
  REQUIRE(preds[1][1].x() == Catch::Approx(30.0));
  REQUIRE(pck_mean_over_images(preds, annos, 0.01) == Catch::Approx(1.0));

  const std::string wrong_id = R"([
    {"image_id": "other", "points": [[10, 10], [40, 20]]},
    {"image_id": "img1", "points": [[5, 5], [30, 30]]}
  ])";
  REQUIRE_THROWS_AS(predictions_from_json_text(wrong_id, annos), Error);
  REQUIRE_THROWS_AS(predictions_from_json_text("[]", annos), Error);

  const std::string vp_json = R"([
    {"predictions": [[1, 2], [3, 4]], "gts": [[1, 2], [9, 9]],
     "kept": [1, 0], "bbox_h": 12, "bbox_w": 10}
  ])";
  const auto vps = validation_pairs_from_json_text(vp_json);
  REQUIRE(vps.size() == 1);
  REQUIRE(vps[0].predictions.size() == 2);
  REQUIRE(vps[0].kept[0] == 1);
  REQUIRE(vps[0].kept[1] == 0);
  REQUIRE(vps[0].bbox_h == Catch::Approx(12.0));
  const auto fv2 = filter_validation(vps, 0.1);
  REQUIRE(fv2.total == 2);
  REQUIRE(fv2.kept == 1);
  REQUIRE_THROWS_AS(validation_pairs_from_json_text(R"([{"gts": []}])"), Error);
}

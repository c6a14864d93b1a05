#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dr/harness.hpp"
#include "dr/serialize.hpp"

#ifndef DR_SOURCE_DIR
#define DR_SOURCE_DIR "."
#endif

using namespace dr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("dr_harness_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

RunConfig parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.ini");
}

/// micro blob experiment: fast enough to execute end to end in a test
std::string micro_config(const std::string& out_dir) {
  return "[run]\n"
         "id = micro\n"
         "out_dir = " + out_dir + "\n"
         "seeds = 1, 2\n"
         "strategies = naive, simple_replay, distilled_replay, cumulative\n"
         "sequential = true\n"
         "[scenario]\n"
         "kind = split\n"
         "dataset = blobs\n"
         "seed = 71\n"
         "classes_per_exp = 2\n"
         "val_fraction = 0\n"
         "blob_classes = 4\n"
         "blob_per_class = 40\n"
         "blob_test_per_class = 16\n"
         "blob_dim = 2\n"
         "blob_spread = 0.33\n"
         "[model]\n"
         "kind = tiny_mlp\n"
         "hidden = 8\n"
         "[train]\n"
         "lr = 0.5\n"
         "batch_size = 8\n"
         "per_class = 1\n"
         "[distill]\n"
         "S = 2\n"
         "R = 3\n"
         "eta = 0.5\n"
         "alpha = 0.05\n"
         "J = 1\n"
         "n = 16\n";
}

}  // namespace

TEST_CASE("config parsing: sections, comments, lists, line numbers") {
  RunConfig cfg = parse_text(
      "# leading comment\n"
      "[run]\n"
      "id = demo-1   ; trailing comment\n"
      "seeds = 3, 5, 8\n"
      "strategies = naive, distilled_replay\n"
      "sequential = false\n"
      "\n"
      "[scenario]\n"
      "kind = permuted\n"
      "dataset = mnist\n"
      "T = 4\n"
      "seed = 123\n"
      "downscale = 2\n"
      "subsample_per_class = 77\n"
      "val_fraction = 0.1\n"
      "[model]\n"
      "kind = mlp\n"
      "hidden = 300, 100\n"
      "[train]\n"
      "lr = 0.25\n"
      "batch_size = 32\n"
      "per_class = 2\n"
      "[distill]\n"
      "S = 6\n"
      "R = 11\n"
      "eta = 0.25\n"
      "alpha = 0.02\n"
      "J = 3\n"
      "n = 48\n"
      "loss_mode = last_step_only\n"
      "lr_mode = learned\n"
      "seed = 9\n"
      "[timing]\n"
      "s_grid = 1, 2\n"
      "r_grid = 4\n"
      "fixed_r = 7\n"
      "fixed_s = 3\n"
      "repeats = 2\n");

  CHECK(cfg.id == "demo-1");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5, 8});
  REQUIRE(cfg.strategies.size() == 2);
  CHECK(cfg.strategies[1] == Strategy::distilled_replay);
  CHECK_FALSE(cfg.sequential);
  CHECK(cfg.scenario.kind == "permuted");
  CHECK(cfg.scenario.T == 4);
  CHECK(cfg.scenario.subsample_per_class == 77);
  CHECK(cfg.hidden == std::vector<std::size_t>{300, 100});
  CHECK(cfg.train.lr == 0.25);
  CHECK(cfg.train.per_class == 2);
  CHECK(cfg.train.distill.inner_steps == 6);
  CHECK(cfg.train.distill.outer_steps == 11);
  CHECK(cfg.train.distill.loss_mode == LossMode::last_step_only);
  CHECK(cfg.train.distill.lr_mode == LrMode::learned);
  CHECK(cfg.timing.fixed_r == 7);
  CHECK(validate_config(cfg).empty());

  SUBCASE("errors carry the source line") {
    auto fails_with = [](const std::string& text, const std::string& what) {
      try {
        parse_text(text);
        FAIL_CHECK("expected FormatError for: " << text);
      } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find(what) != std::string::npos);
      }
    };
    fails_with("[run]\nbogus_key = 1\n", "test.ini:2");
    fails_with("[nope]\n", "unknown section");
    fails_with("[run]\nseeds 1 2\n", "key = value");
    fails_with("id = x\n", "outside any section");
    fails_with("[train]\nlr = fast\n", "expected number");
    fails_with("[run]\nseeds = 1, two\n", "unsigned integer");
    fails_with("[run]\nstrategies = naive, ewc\n", "unknown strategy");
    fails_with("[distill]\nloss_mode = avg\n", "loss_mode");
  }
}

TEST_CASE("validation rejects contract violations") {
  auto problems_of = [](const std::string& text) {
    return validate_config(parse_text(text));
  };

  CHECK(problems_of(micro_config("/tmp/unused")).empty());

  SUBCASE("eta must equal the training lr when distilling") {
    std::string text = micro_config("/tmp/unused");
    text.replace(text.find("eta = 0.5"), 9, "eta = 0.4");
    auto bad = problems_of(text);
    REQUIRE(bad.size() == 1);
    CHECK(bad[0].find("eta must equal train.lr") != std::string::npos);

    // without distilled_replay in the list the constraint does not bind
    text.replace(text.find(", distilled_replay"), 18, "");
    CHECK(problems_of(text).empty());
  }

  SUBCASE("class grouping must divide the class count") {
    std::string text = micro_config("/tmp/unused");
    text.replace(text.find("classes_per_exp = 2"), 19, "classes_per_exp = 3");
    auto bad = problems_of(text);
    REQUIRE(bad.size() == 1);
    CHECK(bad[0].find("divide") != std::string::npos);
  }

  SUBCASE("several problems are all reported") {
    auto bad = problems_of(
        "[run]\nseeds =\n[scenario]\nkind = circular\nval_fraction = 1.5\n");
    CHECK(bad.size() >= 3);
    CHECK_THROWS_AS(require_valid(parse_text("[scenario]\nkind = x\n")),
                    ContractError);
  }

  SUBCASE("lenet5 shape constraints") {
    auto bad = problems_of(
        "[scenario]\ndataset = blobs\n[model]\nkind = lenet5\n");
    CHECK(!bad.empty());
  }
}

TEST_CASE("render_config round-trips") {
  RunConfig cfg = parse_text(micro_config("/tmp/out"));
  cfg.scenario.val_fraction = 0.05;
  cfg.train.distill.loss_mode = LossMode::last_step_only;
  cfg.hidden = {8, 4};
  cfg.seeds = {9};

  RunConfig back = parse_text(render_config(cfg));
  CHECK(render_config(back) == render_config(cfg));
  CHECK(back.scenario.val_fraction == cfg.scenario.val_fraction);
  CHECK(back.train.distill.loss_mode == cfg.train.distill.loss_mode);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.train.lr == cfg.train.lr);
}

TEST_CASE("run ids: explicit, else reproducible hash of the bytes") {
  RunConfig cfg = parse_text(micro_config("/tmp/out"));
  CHECK(resolve_run_id(cfg, "whatever") == "micro");
  cfg.id.clear();
  std::string a = resolve_run_id(cfg, "text-a");
  CHECK(a == resolve_run_id(cfg, "text-a"));
  CHECK(a != resolve_run_id(cfg, "text-b"));
  CHECK(a.substr(0, 4) == "run-");
  CHECK(a.size() == 12);
}

TEST_CASE("bundled presets parse and validate") {
  const fs::path presets = fs::path(DR_SOURCE_DIR) / "presets";
  for (const char* name :
       {"toy-blobs.ini", "split-mnist-desk.ini", "permuted-mnist-desk.ini"}) {
    RunConfig cfg = parse_config_file((presets / name).string());
    INFO(name);
    CHECK(validate_config(cfg).empty());
  }
  RunConfig toy = parse_config_file((presets / "toy-blobs.ini").string());
  CHECK(toy.scenario.blob_dim == 2);
  CHECK(toy.train.lr == toy.train.distill.inner_lr);
  CHECK(toy.seeds.size() == 5);

  RunConfig desk =
      parse_config_file((presets / "split-mnist-desk.ini").string());
  CHECK(desk.scenario.downscale == 2);
  CHECK(desk.scenario.subsample_per_class <= 1000);
  CHECK(desk.train.distill.inner_steps == 10);
  CHECK(desk.train.distill.outer_steps == 40);
}

TEST_CASE("csv formatting is exact") {
  std::vector<ResultRow> rows;
  rows.push_back({"demo", Strategy::naive, 7, 2, 1, 0.5});
  rows.push_back({"demo", Strategy::distilled_replay, 7, 2, 2, 0.9296875});
  CHECK(format_csv(rows) ==
        "run_id,strategy,seed,trained_through_experience,"
        "evaluated_experience,accuracy\n"
        "demo,naive,7,2,1,0.5\n"
        "demo,distilled_replay,7,2,2,0.9296875\n");
}

TEST_CASE("build_scenario: blobs split stream") {
  RunConfig cfg = parse_text(micro_config("/tmp/unused"));
  BuiltScenario built = build_scenario(cfg);
  CHECK(built.stream.T() == 2);
  CHECK(built.stream.kind == StreamKind::class_incremental);
  CHECK(built.stream.experiences[0].classes_present ==
        std::vector<int>{0, 1});
  CHECK(built.stream.experiences[1].classes_present ==
        std::vector<int>{2, 3});
  CHECK(built.model.kind == ModelKind::tiny_mlp);
  CHECK(built.model.input_shape == Shape{2});
  CHECK(built.model.num_classes == 4);
  CHECK_FALSE(built.image_shape.has_value());
  // val_fraction = 0 leaves the training set untouched
  CHECK(built.stream.experiences[0].train.size() == 80);
}

TEST_CASE("build_scenario: synthesized digits are cached and reloaded") {
  TempDir data("data");
  setenv("DR_DATA_DIR", data.path.c_str(), 1);

  RunConfig cfg;
  cfg.scenario.kind = "split";
  cfg.scenario.dataset = "mnist";
  cfg.scenario.seed = 5;
  cfg.scenario.classes_per_exp = 2;
  cfg.scenario.downscale = 2;
  cfg.scenario.subsample_per_class = 30;
  cfg.scenario.val_fraction = 0.05;
  cfg.model = "tiny_mlp";

  BuiltScenario built = build_scenario(cfg);
  CHECK(fs::exists(data.path / "synth-train-images-idx3-ubyte.gz"));
  CHECK(fs::exists(data.path / "synth-t10k-labels-idx1-ubyte.gz"));
  CHECK(built.stream.T() == 5);
  REQUIRE(built.image_shape.has_value());
  CHECK(*built.image_shape == Shape{14, 14});
  CHECK(built.model.input_shape == Shape{196});
  // 10 classes x 30 kept per class, minus the 5% validation split
  std::size_t train_total = 0;
  for (const auto& exp : built.stream.experiences)
    train_total += exp.train.size();
  CHECK(train_total == 285);

  // second resolution hits the cache and yields identical data
  BuiltScenario again = build_scenario(cfg);
  const auto& a = built.stream.experiences[0].train.images;
  const auto& b = again.stream.experiences[0].train.images;
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);

  unsetenv("DR_DATA_DIR");
}

TEST_CASE("exec_run writes the full artifact set, byte-stable") {
  TempDir out_a("run_a"), out_b("run_b");
  const std::string text = micro_config(out_a.path.string());
  RunConfig cfg = parse_text(text);

  RunArtifacts art = exec_run(cfg, text, {});
  CHECK(art.run_id == "micro");
  const fs::path dir(art.dir);
  CHECK(fs::exists(dir / "results.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "timings.json"));
  CHECK(slurp((dir / "config.ini").string()) == text);

  // 4 strategies x 2 seeds x 3 matrix cells (T = 2)
  CHECK(art.rows.size() == 24);
  CHECK(slurp((dir / "results.csv").string()) == format_csv(art.rows));

  auto summary =
      nlohmann::json::parse(slurp((dir / "summary.json").string()));
  CHECK(summary["run_id"] == "micro");
  CHECK(summary["stream"]["kind"] == "class-incremental");
  CHECK(summary["stream"]["T"] == 2);
  CHECK(summary["runs"].size() == 8);
  CHECK(summary["mean_final_average_accuracy"].size() == 4);

  // replay strategies store one buffer each (T - 1 = 1 memory per run)
  for (std::uint64_t seed : {1, 2}) {
    for (const char* st : {"simple_replay", "distilled_replay"}) {
      const fs::path mem_path =
          dir / "buffers" /
          (std::string(st) + "_seed" + std::to_string(seed) + "_exp1.drmem");
      REQUIRE(fs::exists(mem_path));
      LoadedMemory mem = load_memory(mem_path.string());
      CHECK(mem.memory.source_experience == 1);
      CHECK(mem.memory.size() == 2);
      CHECK_FALSE(mem.image_shape.has_value());
    }
    // simple replay stores the raw draw; header says R = 0
    LoadedMemory sr = load_memory(
        (dir / "buffers" /
         ("simple_replay_seed" + std::to_string(seed) + "_exp1.drmem"))
            .string());
    CHECK(sr.config.outer_steps == 0);
    CHECK(sr.memory.meta_loss_history.empty());
    LoadedMemory dr_mem = load_memory(
        (dir / "buffers" /
         ("distilled_replay_seed" + std::to_string(seed) + "_exp1.drmem"))
            .string());
    CHECK(dr_mem.config.outer_steps == 3);
    CHECK(dr_mem.memory.meta_loss_history.size() == 3);
  }

  // identical config, fresh out_dir: byte-identical results.csv
  std::string text_b = micro_config(out_b.path.string());
  RunArtifacts art_b = exec_run(parse_text(text_b), text_b, {});
  CHECK(slurp((fs::path(art_b.dir) / "results.csv").string()) ==
        slurp((dir / "results.csv").string()));
}

TEST_CASE("exec_ablation pairs the two distillation arms") {
  TempDir out("ablation");
  std::string text = micro_config(out.path.string());
  text.replace(text.find("seeds = 1, 2"), 12, "seeds = 1");
  RunConfig cfg = parse_text(text);

  AblationArtifacts art = exec_ablation(cfg, text, {});
  CHECK(art.sum_fixed.run_id == "micro-sum_fixed");
  CHECK(art.last_learned.run_id == "micro-last_learned");
  // arms run distilled_replay only: one run, T(T+1)/2 rows
  CHECK(art.sum_fixed.rows.size() == 3);
  CHECK(art.last_learned.rows.size() == 3);

  const fs::path dir(art.dir);
  auto paired = slurp((dir / "paired.csv").string());
  CHECK(paired.find("seed,t,sum_fixed,last_learned\n") == 0);
  CHECK(std::count(paired.begin(), paired.end(), '\n') == 3);  // header + T

  auto abl = nlohmann::json::parse(slurp((dir / "ablation.json").string()));
  CHECK(abl["arms"]["sum_fixed"] == "micro-sum_fixed");
  CHECK(abl["mean_final_average_accuracy"].size() == 2);

  // each arm's config copy reflects the arm, not the base config
  RunConfig arm_a = parse_config_file(
      (fs::path(art.sum_fixed.dir) / "config.ini").string());
  RunConfig arm_b = parse_config_file(
      (fs::path(art.last_learned.dir) / "config.ini").string());
  CHECK(arm_a.train.distill.loss_mode == LossMode::sum_all_steps);
  CHECK(arm_a.train.distill.lr_mode == LrMode::fixed);
  CHECK(arm_b.train.distill.loss_mode == LossMode::last_step_only);
  CHECK(arm_b.train.distill.lr_mode == LrMode::learned);
  CHECK(arm_a.train.distill.inner_steps == arm_b.train.distill.inner_steps);
  CHECK(arm_a.train.distill.outer_steps == arm_b.train.distill.outer_steps);
  CHECK(arm_a.seeds == arm_b.seeds);
  CHECK(arm_a.strategies ==
        std::vector<Strategy>{Strategy::distilled_replay});
}

TEST_CASE("timing grid reports every requested point") {
  std::string text = micro_config("/tmp/unused");
  RunConfig cfg = parse_text(text);
  cfg.timing.s_grid = {1, 2};
  cfg.timing.r_grid = {2};
  cfg.timing.fixed_r = 2;
  cfg.timing.fixed_s = 1;
  cfg.timing.repeats = 2;

  auto rows = run_timing_grid(cfg, {});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].axis == "S");
  CHECK(rows[0].value == 1);
  CHECK(rows[1].value == 2);
  CHECK(rows[2].axis == "R");
  CHECK(rows[2].value == 2);
  for (const auto& r : rows) {
    CHECK(r.mean_seconds > 0.0);
    CHECK(r.std_seconds >= 0.0);
  }
}

TEST_CASE("buffer export to pgm") {
  TempDir tmp("export");

  DistilledMemory<double> mem;
  mem.samples = Tensor<double>({3, 4}, {0.0, 0.5, 1.0, 0.25,  //
                                        1.0, 0.0, 0.0, 1.0,   //
                                        0.5, 0.5, 0.5, 0.5});
  mem.labels = Tensor<double>({3, 2}, {1, 0, 0, 1, 1, 0});
  mem.label_ids = {0, 1, 0};
  mem.source_experience = 3;
  const std::string mem_path = tmp.file("m.drmem");

  SUBCASE("named by experience, class and per-class index") {
    save_memory(mem_path, mem, {}, Shape{2, 2});
    auto paths = export_memory_pgms(mem_path, tmp.file("pgms"));
    REQUIRE(paths.size() == 3);
    CHECK(fs::path(paths[0]).filename() == "exp3_class0_0.pgm");
    CHECK(fs::path(paths[1]).filename() == "exp3_class1_0.pgm");
    CHECK(fs::path(paths[2]).filename() == "exp3_class0_1.pgm");
    std::string bytes = slurp(paths[0]);
    CHECK(bytes == std::string("P5\n2 2\n255\n") + '\x00' + '\x80' + '\xff' +
                       '\x40');
  }

  SUBCASE("square payload works without a stored shape") {
    save_memory(mem_path, mem, {}, std::nullopt);
    auto paths = export_memory_pgms(mem_path, tmp.file("pgms2"));
    CHECK(paths.size() == 3);
    CHECK(slurp(paths[1]).substr(0, 8) == "P5\n2 2\n2");
  }

  SUBCASE("non-square payload without a shape is rejected") {
    DistilledMemory<double> odd;
    odd.samples = Tensor<double>({1, 3}, {0.1, 0.2, 0.3});
    odd.labels = Tensor<double>({1, 2}, {1, 0});
    odd.label_ids = {0};
    save_memory(mem_path, odd, {}, std::nullopt);
    CHECK_THROWS_AS(export_memory_pgms(mem_path, tmp.file("pgms3")),
                    ContractError);
  }
}

TEST_CASE("cmd_validate reports problems without executing") {
  TempDir tmp("validate");
  const std::string good = tmp.file("good.ini");
  std::ofstream(good) << micro_config("/tmp/unused");
  std::vector<std::string> lines;
  CHECK(cmd_validate(good, [&](const std::string& l) {
          lines.push_back(l);
        }).empty());
  REQUIRE(lines.size() == 1);
  CHECK(lines[0].find("ok") != std::string::npos);

  const std::string bad = tmp.file("bad.ini");
  std::ofstream(bad) << "[scenario]\nkind = sideways\n";
  CHECK_FALSE(cmd_validate(bad, {}).empty());

  CHECK_THROWS_AS(cmd_validate(tmp.file("absent.ini"), {}), IoError);
}

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>

#include "nftl/config.hpp"
#include "nftl/error.hpp"
#include "nftl/model.hpp"
#include "nftl/rng.hpp"

using namespace nftl;

namespace {

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("built-in profiles pass validation in both task modes") {
  for (TaskMode mode : {TaskMode::classification, TaskMode::generation}) {
    CHECK_NOTHROW(validate_config(desk_profile(mode)));
    CHECK_NOTHROW(validate_config(paper_profile(mode)));
  }
  const ExperimentConfig desk = desk_profile(TaskMode::classification);
  const ExperimentConfig paper = paper_profile(TaskMode::classification);
  CHECK(paper.sophon.iters > desk.sophon.iters);
  CHECK(paper.sophon.k_rounds > desk.sophon.k_rounds);
  CHECK(paper.sophon.ft_lr_grid.size() > desk.sophon.ft_lr_grid.size());
}

TEST_CASE("minimal document inherits profile defaults") {
  const ExperimentConfig cfg =
      parse_config_json(R"({"task_mode":"classification","seeds":[7,9]})", "inline");
  ExperimentConfig expect = desk_profile(TaskMode::classification);
  expect.seeds = {7, 9};
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 9});
  CHECK(canonical_config_json(cfg) == canonical_config_json(expect));
}

TEST_CASE("task_mode and seeds are mandatory") {
  CHECK_THROWS_AS(parse_config_json(R"({"seeds":[1]})", "inline"), Error);
  CHECK_THROWS_AS(parse_config_json(R"({"task_mode":"classification"})", "inline"), Error);
  CHECK_THROWS_AS(parse_config_json(R"({"task_mode":"classification","seeds":[]})", "inline"),
                  Error);
  CHECK_THROWS_AS(parse_config_json(R"({"task_mode":"classification","seeds":[1,1]})", "inline"),
                  Error);
}

TEST_CASE("unknown keys are rejected with their full path") {
  std::string msg = error_text([] {
    parse_config_json(R"({"task_mode":"classification","seeds":[1],"bogus":1})", "inline");
  });
  CHECK(msg.find("bogus") != std::string::npos);

  msg = error_text([] {
    parse_config_json(
        R"({"task_mode":"classification","seeds":[1],"data":{"classez":4}})", "inline");
  });
  CHECK(msg.find("data.classez") != std::string::npos);

  msg = error_text([] {
    parse_config_json(
        R"({"task_mode":"classification","seeds":[1],"attack":{"optimizer":{"gamma":0.5}}})",
        "inline");
  });
  CHECK(msg.find("attack.optimizer.gamma") != std::string::npos);
}

TEST_CASE("malformed json reports the parse position") {
  const std::string msg =
      error_text([] { parse_config_json("{\"task_mode\": }", "broken.json"); });
  CHECK(msg.find("broken.json") != std::string::npos);
  CHECK(msg.find("parse") != std::string::npos);
}

TEST_CASE("mode-specific sections are fenced") {
  // diffusion settings have no meaning for classification
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"classification","seeds":[1],"diffusion":{"timesteps":10}})",
                      "inline"),
                  Error);
  // class count has no meaning for generation
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"generation","seeds":[1],"data":{"classes":4}})", "inline"),
                  Error);
  // generation inputs are square images flattened row-major
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"generation","seeds":[1],"data":{"input_dim":48}})",
                      "inline"),
                  Error);
  CHECK_NOTHROW(parse_config_json(
      R"({"task_mode":"generation","seeds":[1],"data":{"input_dim":49}})", "inline"));
}

TEST_CASE("loss choices must match the task mode") {
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"classification","seeds":[1],"sophon":{"loss_alpha":"dos"}})",
                      "inline"),
                  Error);
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"generation","seeds":[1],"sophon":{"loss_alpha":"ice"}})",
                      "inline"),
                  Error);
  CHECK_NOTHROW(parse_config_json(
      R"({"task_mode":"classification","seeds":[1],"sophon":{"loss_alpha":"klu"}})", "inline"));
}

TEST_CASE("custom round weights must match the horizon") {
  const char* good =
      R"({"task_mode":"classification","seeds":[1],
          "sophon":{"k_rounds":3,"gamma_mode":"custom","gamma_weights":[0.0,1.0,2.0]}})";
  CHECK_NOTHROW(parse_config_json(good, "inline"));
  const char* short_weights =
      R"({"task_mode":"classification","seeds":[1],
          "sophon":{"k_rounds":3,"gamma_mode":"custom","gamma_weights":[1.0,2.0]}})";
  CHECK_THROWS_AS(parse_config_json(short_weights, "inline"), Error);
  const char* stray_weights =
      R"({"task_mode":"classification","seeds":[1],
          "sophon":{"gamma_weights":[1.0,2.0]}})";
  CHECK_THROWS_AS(parse_config_json(stray_weights, "inline"), Error);
}

TEST_CASE("optimizer subsections honour defaults and validation") {
  const ExperimentConfig cfg = parse_config_json(
      R"({"task_mode":"classification","seeds":[1],
          "attack":{"optimizer":{"kind":"adam","lr":0.01}}})",
      "inline");
  CHECK(cfg.attack.optimizer.kind == OptKind::adam);
  CHECK(cfg.attack.optimizer.lr == doctest::Approx(0.01f));
  CHECK(cfg.attack.optimizer.beta1 == doctest::Approx(0.9f));

  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"classification","seeds":[1],
                          "attack":{"optimizer":{"kind":"adam","lr":-0.5}}})",
                      "inline"),
                  Error);
  CHECK_THROWS_AS(parse_config_json(
                      R"({"task_mode":"classification","seeds":[1],
                          "attack":{"strategies":["direct+nothing"]}})",
                      "inline"),
                  Error);
}

TEST_CASE("canonical form is stable and round-trips") {
  for (TaskMode mode : {TaskMode::classification, TaskMode::generation}) {
    const ExperimentConfig cfg = desk_profile(mode);
    const std::string dump = canonical_config_json(cfg);
    CHECK(dump == canonical_config_json(cfg));
    const ExperimentConfig back = parse_config_json(dump, "roundtrip");
    CHECK(canonical_config_json(back) == dump);
    CHECK(config_hash_hex(back) == config_hash_hex(cfg));
  }
}

TEST_CASE("run hash is 16 hex digits and tracks every field") {
  const ExperimentConfig base = desk_profile(TaskMode::classification);
  const std::string h = config_hash_hex(base);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);

  ExperimentConfig tweaked = base;
  tweaked.sophon.alpha = 2e-3f;
  CHECK(config_hash_hex(tweaked) != h);
  tweaked = base;
  tweaked.seeds = {1, 2, 3, 4, 6};
  CHECK(config_hash_hex(tweaked) != h);
}

TEST_CASE("model architecture follows the data shape") {
  Rng rng(11);
  const ExperimentConfig cls = desk_profile(TaskMode::classification);
  Model mc = make_model(config_arch(cls), rng);
  CHECK(mc.input_dim() == cls.data.input_dim);
  CHECK(mc.output_dim() == cls.data.classes);

  const ExperimentConfig gen = desk_profile(TaskMode::generation);
  Model mg = make_model(config_arch(gen), rng);
  CHECK(mg.input_dim() == gen.data.input_dim + 1);  // appended time feature
  CHECK(mg.output_dim() == gen.data.input_dim);
}

TEST_CASE("configs load from disk and missing files are reported") {
  const std::string path = "test_config_tmp.json";
  {
    std::ofstream out(path, std::ios::binary);
    out << R"({"task_mode":"classification","seeds":[3],"out_dir":"elsewhere"})";
  }
  const ExperimentConfig cfg = load_config(path);
  CHECK(cfg.out_dir == "elsewhere");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3});
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_config("no_such_config_file.json"), Error);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "crossmap.h"
#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cm_capi_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  cm_string_free(s);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kWorldSpec = R"({
  "seed": 9, "num_nodes": 10, "d_sem": 10, "d_vis": 8, "avg_degree": 3.0,
  "room_labels": ["kitchen", "bedroom", "bathroom", "hallway"],
  "landmark_labels": ["sofa", "table", "sink", "bed", "plant", "lamp"]
})";

constexpr const char* kEpisodeOptions =
    R"({"seed": 4, "count": 6, "min_path_nodes": 3, "max_path_nodes": 5})";

}  // namespace

TEST_CASE("version and error surface") {
  CHECK(std::string(cm_version()) == "0.1.0");
  CHECK(cm_world_generate(nullptr, nullptr) == CM_ERR_VALIDATION);
  CHECK(std::string(cm_last_error()).find("null") != std::string::npos);
}

TEST_CASE("sha256 of the empty string") {
  char* hex = nullptr;
  REQUIRE(cm_sha256("", 0, &hex) == CM_OK);
  CHECK(take(hex) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("world lifecycle through handles") {
  TempDir tmp;
  cm_world* world = nullptr;
  REQUIRE(cm_world_generate(kWorldSpec, &world) == CM_OK);
  CHECK(cm_world_validate(world) == CM_OK);

  char* info = nullptr;
  REQUIRE(cm_world_info(world, &info) == CM_OK);
  Json parsed = Json::parse(take(info));
  CHECK(parsed.at("num_nodes") == 10);
  CHECK(parsed.at("d_sem") == 10);

  const std::string path = tmp.file("w.json");
  REQUIRE(cm_world_save(world, path.c_str()) == CM_OK);
  cm_world* loaded = nullptr;
  REQUIRE(cm_world_load(path.c_str(), &loaded) == CM_OK);
  const std::string again = tmp.file("w2.json");
  REQUIRE(cm_world_save(loaded, again.c_str()) == CM_OK);
  CHECK(slurp(path) == slurp(again));

  // Determinism across fresh generations.
  cm_world* twin = nullptr;
  REQUIRE(cm_world_generate(kWorldSpec, &twin) == CM_OK);
  const std::string twin_path = tmp.file("w3.json");
  REQUIRE(cm_world_save(twin, twin_path.c_str()) == CM_OK);
  CHECK(slurp(path) == slurp(twin_path));

  cm_world_free(world);
  cm_world_free(loaded);
  cm_world_free(twin);

  CHECK(cm_world_load(tmp.file("absent.json").c_str(), &loaded) == CM_ERR_RUNTIME);
}

TEST_CASE("episode lifecycle, r2r loader and validation") {
  TempDir tmp;
  cm_world* world = nullptr;
  REQUIRE(cm_world_generate(kWorldSpec, &world) == CM_OK);

  cm_episodes* episodes = nullptr;
  REQUIRE(cm_episodes_generate(world, kEpisodeOptions, &episodes) == CM_OK);
  CHECK(cm_episodes_count(episodes) == 6);
  CHECK(cm_episodes_validate(episodes, world) == CM_OK);

  const std::string path = tmp.file("eps.jsonl");
  REQUIRE(cm_episodes_save(episodes, path.c_str()) == CM_OK);
  cm_episodes* loaded = nullptr;
  REQUIRE(cm_episodes_load(path.c_str(), &loaded) == CM_OK);
  CHECK(cm_episodes_count(loaded) == 6);

  const std::string r2r = tmp.file("r2r.json");
  {
    std::ofstream out(r2r);
    out << R"([{"path_id": 5, "scan": "s1", "heading": 0.5,
                "instructions": ["go", "walk"], "path": ["a", "b"]}])";
  }
  cm_episodes* r2r_eps = nullptr;
  REQUIRE(cm_episodes_load_r2r(r2r.c_str(), &r2r_eps) == CM_OK);
  CHECK(cm_episodes_count(r2r_eps) == 2);
  // These episodes belong to another graph: validation must reject them.
  CHECK(cm_episodes_validate(r2r_eps, world) == CM_ERR_VALIDATION);

  cm_episodes_free(episodes);
  cm_episodes_free(loaded);
  cm_episodes_free(r2r_eps);
  cm_world_free(world);
}

TEST_CASE("training, evaluation, speaking and rendering through the C surface") {
  TempDir tmp;
  cm_world* world = nullptr;
  REQUIRE(cm_world_generate(kWorldSpec, &world) == CM_OK);
  cm_episodes* episodes = nullptr;
  REQUIRE(cm_episodes_generate(world, kEpisodeOptions, &episodes) == CM_OK);
  const std::string world_path = tmp.file("w.json");
  const std::string eps_path = tmp.file("eps.jsonl");
  REQUIRE(cm_world_save(world, world_path.c_str()) == CM_OK);
  REQUIRE(cm_episodes_save(episodes, eps_path.c_str()) == CM_OK);

  nlohmann::ordered_json plan;
  plan["phase"] = "pretrain";
  plan["epochs"] = 2;
  plan["seed"] = 3;
  plan["config"] = {{"hidden", 24}, {"heads", 4},   {"ff_size", 32},  {"d_sem", 10},
                    {"d_vis", 8},   {"lr", 2e-3},   {"beta1", 0.9},   {"beta2", 0.999},
                    {"env_dropout", 0.2}};
  plan["world"] = world_path;
  plan["datasets"] = {{"train", eps_path}};

  char* summary_text = nullptr;
  REQUIRE(cm_train_run(plan.dump().c_str(), nullptr, tmp.file("run").c_str(), &summary_text) ==
          CM_OK);
  Json summary = Json::parse(take(summary_text));
  const std::string ckpt = summary.at("checkpoint").get<std::string>();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(summary.at("curve").get<std::string>()));

  cm_model* model = nullptr;
  REQUIRE(cm_model_load(ckpt.c_str(), &model) == CM_OK);
  char* config_text = nullptr;
  REQUIRE(cm_model_config(model, &config_text) == CM_OK);
  CHECK(Json::parse(take(config_text)).at("hidden") == 24);

  char* report_text = nullptr;
  REQUIRE(cm_evaluate(model, world, episodes, R"({"policy": "oracle"})", &report_text) == CM_OK);
  Json report = Json::parse(take(report_text));
  CHECK(report.at("sr") == 1.0);
  CHECK(report.at("ne") == 0.0);

  REQUIRE(cm_evaluate(model, world, episodes, R"({"policy": "nope"})", &report_text) ==
          CM_ERR_VALIDATION);

  char* jsonl = nullptr;
  REQUIRE(cm_speak(model, world, episodes, R"({"metric": "bleu4"})", &jsonl) == CM_OK);
  const std::string speak_text = take(jsonl);
  CHECK(std::count(speak_text.begin(), speak_text.end(), '\n') == 6);

  char* svg = nullptr;
  REQUIRE(cm_render_episode_svg(world, episodes, 0, "[]", &svg) == CM_OK);
  const std::string svg_text = take(svg);
  size_t nodes = 0, at = 0;
  while ((at = svg_text.find("class=\"node\"", at)) != std::string::npos) {
    ++nodes;
    ++at;
  }
  CHECK(nodes == 10);
  CHECK(cm_render_episode_svg(world, episodes, 99, "[]", &svg) == CM_ERR_VALIDATION);

  cm_model_free(model);
  cm_episodes_free(episodes);
  cm_world_free(world);
}

TEST_CASE("plan validation surfaces through status codes") {
  char* out = nullptr;
  CHECK(cm_train_run(R"({"epochs": 1})", nullptr, "/tmp", &out) == CM_ERR_VALIDATION);
  CHECK(std::string(cm_last_error()).find("phase") != std::string::npos);
}

TEST_CASE("gradcheck scope dispatch") {
  char* report_text = nullptr;
  REQUIRE(cm_gradcheck("ops", &report_text) == CM_OK);
  Json report = Json::parse(take(report_text));
  CHECK(report.at("pass") == true);
  CHECK(cm_gradcheck("bogus", &report_text) == CM_ERR_VALIDATION);
}

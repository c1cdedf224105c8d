// Command-line front end. Talks to the library exclusively through the C API
// in crossmap.h; exit codes are 0 (ok), 2 (validation) and 3 (runtime).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossmap.h"
#include "json.hpp"

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  cm_string_free(s);
  return out;
}

[[noreturn]] void fail(cm_status status, const std::string& context) {
  std::cerr << "error: " << context;
  const char* detail = cm_last_error();
  if (detail && detail[0] != '\0') std::cerr << ": " << detail;
  std::cerr << "\n";
  std::exit(status == CM_OK ? 3 : static_cast<int>(status));
}

void check(cm_status status, const std::string& context) {
  if (status != CM_OK) fail(status, context);
}

std::string file_digest(const std::string& path) {
  char* hex = nullptr;
  check(cm_file_sha256(path.c_str(), &hex), "digest of " + path);
  return take_string(hex);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(CM_ERR_VALIDATION, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(CM_ERR_RUNTIME, "cannot write " + path);
  out << text;
}

// Every command emits one of these: command, option hash, input and output
// digests, wall clock. Written next to the primary output, or to stdout for
// commands that only report.
class Manifest {
 public:
  Manifest(std::string command, Json options)
      : command_(std::move(command)), options_(std::move(options)), started_(Clock::now()) {
    const std::string canonical = options_.dump();
    char* hex = nullptr;
    check(cm_sha256(canonical.c_str(), canonical.size(), &hex), "hashing options");
    config_hash_ = take_string(hex);
  }

  void input(const std::string& path) { inputs_.push_back({path, file_digest(path)}); }
  void output(const std::string& path) { outputs_.push_back({path, file_digest(path)}); }

  Json to_json() const {
    Json j;
    j["format_version"] = 1;
    j["tool_version"] = cm_version();
    j["command"] = command_;
    j["options"] = options_;
    j["config_hash"] = config_hash_;
    Json ins = Json::array();
    for (const auto& [path, digest] : inputs_) ins.push_back({{"path", path}, {"sha256", digest}});
    j["inputs"] = ins;
    Json outs = Json::array();
    for (const auto& [path, digest] : outputs_)
      outs.push_back({{"path", path}, {"sha256", digest}});
    j["outputs"] = outs;
    j["wall_clock_ms"] =
        std::chrono::duration<double, std::milli>(Clock::now() - started_).count();
    return j;
  }

  void write(const std::string& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

 private:
  std::string command_;
  Json options_;
  std::string config_hash_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  Clock::time_point started_;
};

struct WorldHandle {
  cm_world* ptr = nullptr;
  ~WorldHandle() { cm_world_free(ptr); }
};
struct EpisodesHandle {
  cm_episodes* ptr = nullptr;
  ~EpisodesHandle() { cm_episodes_free(ptr); }
};
struct ModelHandle {
  cm_model* ptr = nullptr;
  ~ModelHandle() { cm_model_free(ptr); }
};

int run_train_phase(const std::string& phase, const std::string& plan_path,
                    const std::string& model_in, std::string out_dir) {
  Json plan = Json::parse(read_text_file(plan_path));
  plan["phase"] = phase;
  if (out_dir.empty()) out_dir = "runs/" + phase;

  Manifest manifest(phase, Json{{"plan", plan_path}, {"model_in", model_in}, {"out", out_dir}});
  manifest.input(plan_path);
  if (!model_in.empty()) manifest.input(model_in);

  char* summary_text = nullptr;
  check(cm_train_run(plan.dump().c_str(), model_in.empty() ? nullptr : model_in.c_str(),
                     out_dir.c_str(), &summary_text),
        phase);
  Json summary = Json::parse(take_string(summary_text));
  manifest.output(summary.at("checkpoint").get<std::string>());
  if (summary.contains("curve") && !summary.at("curve").get<std::string>().empty())
    manifest.output(summary.at("curve").get<std::string>());
  manifest.write((std::filesystem::path(out_dir) / (phase + "-manifest.json")).string());
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-guided navigation on graphs: worlds, training, evaluation"};
  app.set_config("--flags-file", "", "Read options from a config file; explicit flags win");
  app.require_subcommand(1);

  // gen-world
  auto* gen_world = app.add_subcommand("gen-world", "Generate a synthetic world");
  uint64_t gw_seed = 0;
  int gw_nodes = 30, gw_d_sem = 40, gw_d_vis = 128;
  double gw_degree = 3.0;
  std::string gw_out = "world.json";
  gen_world->add_option("--seed", gw_seed, "Generation seed")->required();
  gen_world->add_option("--nodes", gw_nodes, "Number of nodes");
  gen_world->add_option("--d-sem", gw_d_sem, "Semantic feature width");
  gen_world->add_option("--d-vis", gw_d_vis, "Visual feature width");
  gen_world->add_option("--avg-degree", gw_degree, "Target average node degree");
  gen_world->add_option("--out", gw_out, "Output world file");

  // gen-episodes
  auto* gen_episodes = app.add_subcommand("gen-episodes", "Generate episodes for a world");
  uint64_t ge_seed = 0;
  int ge_count = 16, ge_min = 3, ge_max = 6;
  bool ge_unlabeled = false;
  std::string ge_world, ge_out = "episodes.jsonl";
  gen_episodes->add_option("--world", ge_world, "World file")->required();
  gen_episodes->add_option("--seed", ge_seed, "Generation seed")->required();
  gen_episodes->add_option("--count", ge_count, "Number of episodes");
  gen_episodes->add_option("--min-len", ge_min, "Minimum path length in nodes");
  gen_episodes->add_option("--max-len", ge_max, "Maximum path length in nodes");
  gen_episodes->add_flag("--unlabeled", ge_unlabeled, "Omit instructions (path pool)");
  gen_episodes->add_option("--out", ge_out, "Output episode file (JSON lines)");

  // validate
  auto* validate = app.add_subcommand("validate", "Check world and episode invariants");
  std::string va_world, va_episodes;
  validate->add_option("--world", va_world, "World file")->required();
  validate->add_option("--episodes", va_episodes, "Episode file to validate against the world");

  // training phases
  std::string tr_plan, tr_model, tr_out;
  auto add_train = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--plan", tr_plan, "Plan file (JSON)")->required();
    cmd->add_option("--model", tr_model, "Checkpoint to continue from");
    cmd->add_option("--out", tr_out, "Output directory (default runs/<phase>)");
    return cmd;
  };
  auto* pretrain = add_train("pretrain", "Joint path-masking + speaker pretraining");
  auto* train = add_train("train", "Sampled-exploration fine-tuning");
  auto* dbt = add_train("dbt", "Double back-translation rounds");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Roll out a model and score it");
  std::string ev_model, ev_world, ev_episodes, ev_out = "report.json", ev_mode = "greedy",
              ev_policy = "model", ev_svg_dir;
  uint64_t ev_seed = 0;
  evaluate->add_option("--model", ev_model, "Model checkpoint")->required();
  evaluate->add_option("--world", ev_world, "World file")->required();
  evaluate->add_option("--episodes", ev_episodes, "Episode file")->required();
  evaluate->add_option("--out", ev_out, "Metrics report output");
  evaluate->add_option("--mode", ev_mode, "greedy | sample");
  evaluate->add_option("--policy", ev_policy, "model | oracle | always_stop");
  evaluate->add_option("--seed", ev_seed, "Seed for sampled rollouts");
  evaluate->add_option("--render-svg", ev_svg_dir, "Directory for per-episode SVG renders");

  // speak
  auto* speak = app.add_subcommand("speak", "Generate instructions for episodes");
  std::string sp_model, sp_world, sp_episodes, sp_out = "speak.jsonl", sp_metric;
  speak->add_option("--model", sp_model, "Model checkpoint")->required();
  speak->add_option("--world", sp_world, "World file")->required();
  speak->add_option("--episodes", sp_episodes, "Episode file")->required();
  speak->add_option("--out", sp_out, "Output JSON lines");
  speak->add_option("--metric", sp_metric, "bleu4 | rouge_l | cider (default from config)");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string gc_scope = "all";
  gradcheck->add_option("--scope", gc_scope, "ops | model | all");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_world->parsed()) {
      Json spec{{"seed", gw_seed}, {"num_nodes", gw_nodes}, {"d_sem", gw_d_sem},
                {"d_vis", gw_d_vis}, {"avg_degree", gw_degree}};
      Manifest manifest("gen-world", Json{{"spec", spec}, {"out", gw_out}});
      WorldHandle world;
      check(cm_world_generate(spec.dump().c_str(), &world.ptr), "gen-world");
      check(cm_world_save(world.ptr, gw_out.c_str()), "saving " + gw_out);
      manifest.output(gw_out);
      manifest.write(gw_out + ".manifest.json");
      char* info = nullptr;
      check(cm_world_info(world.ptr, &info), "world info");
      std::cout << take_string(info) << "\n";
      return 0;
    }

    if (gen_episodes->parsed()) {
      Json options{{"seed", ge_seed}, {"count", ge_count}, {"min_path_nodes", ge_min},
                   {"max_path_nodes", ge_max}, {"with_instructions", !ge_unlabeled}};
      Manifest manifest("gen-episodes",
                        Json{{"world", ge_world}, {"options", options}, {"out", ge_out}});
      manifest.input(ge_world);
      WorldHandle world;
      check(cm_world_load(ge_world.c_str(), &world.ptr), "loading " + ge_world);
      EpisodesHandle episodes;
      check(cm_episodes_generate(world.ptr, options.dump().c_str(), &episodes.ptr),
            "gen-episodes");
      check(cm_episodes_save(episodes.ptr, ge_out.c_str()), "saving " + ge_out);
      manifest.output(ge_out);
      manifest.write(ge_out + ".manifest.json");
      std::cout << Json{{"episodes", cm_episodes_count(episodes.ptr)}, {"out", ge_out}}.dump()
                << "\n";
      return 0;
    }

    if (validate->parsed()) {
      Manifest manifest("validate", Json{{"world", va_world}, {"episodes", va_episodes}});
      manifest.input(va_world);
      WorldHandle world;
      check(cm_world_load(va_world.c_str(), &world.ptr), "loading " + va_world);
      check(cm_world_validate(world.ptr), "world invariants");
      if (!va_episodes.empty()) {
        manifest.input(va_episodes);
        EpisodesHandle episodes;
        check(cm_episodes_load(va_episodes.c_str(), &episodes.ptr), "loading " + va_episodes);
        check(cm_episodes_validate(episodes.ptr, world.ptr), "episode invariants");
      }
      Json out;
      out["ok"] = true;
      out["manifest"] = manifest.to_json();
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (pretrain->parsed()) return run_train_phase("pretrain", tr_plan, tr_model, tr_out);
    if (train->parsed()) return run_train_phase("finetune", tr_plan, tr_model, tr_out);
    if (dbt->parsed()) return run_train_phase("dbt", tr_plan, tr_model, tr_out);

    if (evaluate->parsed()) {
      Json options{{"mode", ev_mode}, {"policy", ev_policy}, {"seed", ev_seed}};
      Manifest manifest("evaluate", Json{{"model", ev_model}, {"world", ev_world},
                                         {"episodes", ev_episodes}, {"options", options},
                                         {"out", ev_out}});
      manifest.input(ev_model);
      manifest.input(ev_world);
      manifest.input(ev_episodes);
      ModelHandle model;
      check(cm_model_load(ev_model.c_str(), &model.ptr), "loading " + ev_model);
      WorldHandle world;
      check(cm_world_load(ev_world.c_str(), &world.ptr), "loading " + ev_world);
      EpisodesHandle episodes;
      check(cm_episodes_load(ev_episodes.c_str(), &episodes.ptr), "loading " + ev_episodes);
      check(cm_episodes_validate(episodes.ptr, world.ptr), "episode/world consistency");

      char* report_text = nullptr;
      check(cm_evaluate(model.ptr, world.ptr, episodes.ptr, options.dump().c_str(), &report_text),
            "evaluate");
      const std::string report = take_string(report_text);
      write_text_file(ev_out, report + "\n");
      manifest.output(ev_out);

      if (!ev_svg_dir.empty()) {
        std::filesystem::create_directories(ev_svg_dir);
        Json parsed = Json::parse(report);
        int index = 0;
        for (const auto& row : parsed.at("episodes")) {
          char* svg = nullptr;
          check(cm_render_episode_svg(world.ptr, episodes.ptr, index,
                                      row.at("path").dump().c_str(), &svg),
                "render svg");
          const std::string svg_path =
              (std::filesystem::path(ev_svg_dir) / (row.at("id").get<std::string>() + ".svg"))
                  .string();
          write_text_file(svg_path, take_string(svg));
          manifest.output(svg_path);
          ++index;
        }
      }
      manifest.write(ev_out + ".manifest.json");
      Json parsed = Json::parse(report);
      std::cout << Json{{"sr", parsed.at("sr")}, {"ne", parsed.at("ne")},
                        {"spl", parsed.at("spl")}, {"osr", parsed.at("osr")},
                        {"out", ev_out}}.dump()
                << "\n";
      return 0;
    }

    if (speak->parsed()) {
      Json options = Json::object();
      if (!sp_metric.empty()) options["metric"] = sp_metric;
      Manifest manifest("speak", Json{{"model", sp_model}, {"world", sp_world},
                                      {"episodes", sp_episodes}, {"options", options},
                                      {"out", sp_out}});
      manifest.input(sp_model);
      manifest.input(sp_world);
      manifest.input(sp_episodes);
      ModelHandle model;
      check(cm_model_load(sp_model.c_str(), &model.ptr), "loading " + sp_model);
      WorldHandle world;
      check(cm_world_load(sp_world.c_str(), &world.ptr), "loading " + sp_world);
      EpisodesHandle episodes;
      check(cm_episodes_load(sp_episodes.c_str(), &episodes.ptr), "loading " + sp_episodes);
      check(cm_episodes_validate(episodes.ptr, world.ptr), "episode/world consistency");
      char* jsonl = nullptr;
      check(cm_speak(model.ptr, world.ptr, episodes.ptr, options.dump().c_str(), &jsonl),
            "speak");
      write_text_file(sp_out, take_string(jsonl));
      manifest.output(sp_out);
      manifest.write(sp_out + ".manifest.json");
      std::cout << Json{{"out", sp_out}}.dump() << "\n";
      return 0;
    }

    if (gradcheck->parsed()) {
      Manifest manifest("gradcheck", Json{{"scope", gc_scope}});
      char* report = nullptr;
      const cm_status status = cm_gradcheck(gc_scope.c_str(), &report);
      Json out;
      out["report"] = report ? Json::parse(take_string(report)) : Json();
      out["manifest"] = manifest.to_json();
      std::cout << out.dump(2) << "\n";
      if (status != CM_OK) {
        std::cerr << "error: gradcheck: " << cm_last_error() << "\n";
        return static_cast<int>(status);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

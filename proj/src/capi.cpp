#include "crossmap.h"

#include <cstring>
#include <stdexcept>
#include <string>

#include "crossmap/gradcheck.hpp"
#include "crossmap/metrics.hpp"
#include "crossmap/model.hpp"
#include "crossmap/render.hpp"
#include "crossmap/speaker.hpp"
#include "crossmap/trainer.hpp"
#include "crossmap/util.hpp"
#include "crossmap/world.hpp"

using namespace crossmap;

struct cm_world {
  World world;
};

struct cm_episodes {
  std::vector<Episode> episodes;
};

struct cm_model {
  Model model;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& message) { g_last_error = message; }

char* alloc_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

// Maps exceptions onto the status codes: contract/validation problems are
// CM_ERR_VALIDATION, everything else CM_ERR_RUNTIME.
template <typename Fn>
cm_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return CM_OK;
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return CM_ERR_VALIDATION;
  } catch (const std::logic_error& e) {
    set_error(e.what());
    return CM_ERR_VALIDATION;
  } catch (const Json::exception& e) {
    set_error(e.what());
    return CM_ERR_VALIDATION;
  } catch (const std::exception& e) {
    set_error(e.what());
    return CM_ERR_RUNTIME;
  } catch (...) {
    set_error("unknown error");
    return CM_ERR_RUNTIME;
  }
}

cm_status require(bool condition, const char* message) {
  if (condition) return CM_OK;
  set_error(message);
  return CM_ERR_VALIDATION;
}

}  // namespace

extern "C" {

const char* cm_version(void) { return "0.1.0"; }

const char* cm_last_error(void) { return g_last_error.c_str(); }

void cm_string_free(char* s) { delete[] s; }

/* --- worlds ------------------------------------------------------------- */

cm_status cm_world_generate(const char* spec_json, cm_world** out) {
  if (cm_status s = require(spec_json && out, "cm_world_generate: null argument")) return s;
  return guarded([&]() {
    Json j = Json::parse(spec_json);
    if (!j.contains("seed")) throw std::invalid_argument("world spec: missing key 'seed'");
    WorldSpec spec;
    if (j.contains("num_nodes")) spec.num_nodes = j.at("num_nodes").get<int>();
    if (j.contains("d_sem")) spec.d_sem = j.at("d_sem").get<int>();
    if (j.contains("d_vis")) spec.d_vis = j.at("d_vis").get<int>();
    if (j.contains("avg_degree")) spec.avg_degree = j.at("avg_degree").get<double>();
    if (j.contains("room_labels"))
      spec.room_labels = j.at("room_labels").get<std::vector<std::string>>();
    if (j.contains("landmark_labels"))
      spec.landmark_labels = j.at("landmark_labels").get<std::vector<std::string>>();
    *out = new cm_world{generate_world(j.at("seed").get<uint64_t>(), spec)};
  });
}

cm_status cm_world_load(const char* path, cm_world** out) {
  if (cm_status s = require(path && out, "cm_world_load: null argument")) return s;
  return guarded([&]() { *out = new cm_world{load_world(path)}; });
}

cm_status cm_world_save(const cm_world* world, const char* path) {
  if (cm_status s = require(world && path, "cm_world_save: null argument")) return s;
  return guarded([&]() { save_world(world->world, path); });
}

cm_status cm_world_validate(const cm_world* world) {
  if (cm_status s = require(world != nullptr, "cm_world_validate: null argument")) return s;
  return guarded([&]() { world->world.graph.validate(); });
}

cm_status cm_world_info(const cm_world* world, char** info_json) {
  if (cm_status s = require(world && info_json, "cm_world_info: null argument")) return s;
  return guarded([&]() {
    OrderedJson j;
    j["id"] = world->world.id;
    j["seed"] = world->world.seed;
    j["num_nodes"] = world->world.graph.num_nodes();
    j["num_edges"] = world->world.graph.num_edges();
    j["d_sem"] = world->world.spec.d_sem;
    j["d_vis"] = world->world.spec.d_vis;
    *info_json = alloc_string(j.dump());
  });
}

void cm_world_free(cm_world* world) { delete world; }

/* --- episodes ------------------------------------------------------------ */

cm_status cm_episodes_generate(const cm_world* world, const char* options_json,
                               cm_episodes** out) {
  if (cm_status s = require(world && options_json && out, "cm_episodes_generate: null argument"))
    return s;
  return guarded([&]() {
    Json j = Json::parse(options_json);
    if (!j.contains("seed")) throw std::invalid_argument("episode options: missing key 'seed'");
    EpisodeGenOptions opt;
    if (j.contains("count")) opt.count = j.at("count").get<int>();
    if (j.contains("min_path_nodes")) opt.min_path_nodes = j.at("min_path_nodes").get<int>();
    if (j.contains("max_path_nodes")) opt.max_path_nodes = j.at("max_path_nodes").get<int>();
    if (j.contains("with_instructions"))
      opt.with_instructions = j.at("with_instructions").get<bool>();
    *out = new cm_episodes{generate_episodes(j.at("seed").get<uint64_t>(), world->world, opt)};
  });
}

cm_status cm_episodes_load(const char* path, cm_episodes** out) {
  if (cm_status s = require(path && out, "cm_episodes_load: null argument")) return s;
  return guarded([&]() { *out = new cm_episodes{load_episodes(path)}; });
}

cm_status cm_episodes_load_r2r(const char* path, cm_episodes** out) {
  if (cm_status s = require(path && out, "cm_episodes_load_r2r: null argument")) return s;
  return guarded([&]() { *out = new cm_episodes{load_r2r_json(path)}; });
}

cm_status cm_episodes_save(const cm_episodes* episodes, const char* path) {
  if (cm_status s = require(episodes && path, "cm_episodes_save: null argument")) return s;
  return guarded([&]() { save_episodes(episodes->episodes, path); });
}

cm_status cm_episodes_validate(const cm_episodes* episodes, const cm_world* world) {
  if (cm_status s = require(episodes && world, "cm_episodes_validate: null argument")) return s;
  return guarded([&]() {
    for (const Episode& ep : episodes->episodes) {
      if (ep.graph_id != world->world.id)
        throw std::invalid_argument("episode " + ep.id + ": graph id " + ep.graph_id +
                                    " does not match world " + world->world.id);
      validate_episode(world->world.graph, ep);
    }
  });
}

int cm_episodes_count(const cm_episodes* episodes) {
  return episodes ? static_cast<int>(episodes->episodes.size()) : -1;
}

void cm_episodes_free(cm_episodes* episodes) { delete episodes; }

/* --- training -------------------------------------------------------------- */

cm_status cm_train_run(const char* plan_json, const char* model_in, const char* out_dir,
                       char** summary_json) {
  if (cm_status s = require(plan_json && out_dir && summary_json, "cm_train_run: null argument"))
    return s;
  return guarded([&]() {
    TrainPlan plan = TrainPlan::from_json(Json::parse(plan_json));
    PlanRunResult result = run_plan(plan, model_in ? model_in : "", out_dir);
    *summary_json = alloc_string(result.summary.dump());
  });
}

cm_status cm_model_load(const char* path, cm_model** out) {
  if (cm_status s = require(path && out, "cm_model_load: null argument")) return s;
  return guarded([&]() { *out = new cm_model{Model::load(path)}; });
}

cm_status cm_model_config(const cm_model* model, char** config_json) {
  if (cm_status s = require(model && config_json, "cm_model_config: null argument")) return s;
  return guarded([&]() { *config_json = alloc_string(model->model.config().to_json().dump()); });
}

void cm_model_free(cm_model* model) { delete model; }

/* --- evaluation and speaking -------------------------------------------------- */

cm_status cm_evaluate(const cm_model* model, const cm_world* world, const cm_episodes* episodes,
                      const char* options_json, char** report_json) {
  if (cm_status s =
          require(model && world && episodes && report_json, "cm_evaluate: null argument"))
    return s;
  return guarded([&]() {
    RolloutMode mode = RolloutMode::kGreedy;
    EvalPolicy policy = EvalPolicy::kModel;
    uint64_t seed = 0;
    if (options_json && options_json[0] != '\0') {
      Json j = Json::parse(options_json);
      const std::string mode_name = j.value("mode", "greedy");
      if (mode_name == "greedy")
        mode = RolloutMode::kGreedy;
      else if (mode_name == "sample")
        mode = RolloutMode::kSample;
      else
        throw std::invalid_argument("evaluate: unknown mode '" + mode_name + "'");
      const std::string policy_name = j.value("policy", "model");
      if (policy_name == "model")
        policy = EvalPolicy::kModel;
      else if (policy_name == "oracle")
        policy = EvalPolicy::kOracle;
      else if (policy_name == "always_stop")
        policy = EvalPolicy::kAlwaysStop;
      else
        throw std::invalid_argument("evaluate: unknown policy '" + policy_name + "'");
      seed = j.value("seed", 0);
    }
    EpisodeSet set{episodes->episodes, "val_seen"};
    MetricsReport report = evaluate(model->model, world->world, set, mode, policy, seed);
    *report_json = alloc_string(report.to_json());
  });
}

cm_status cm_speak(const cm_model* model, const cm_world* world, const cm_episodes* episodes,
                   const char* options_json, char** jsonl) {
  if (cm_status s = require(model && world && episodes && jsonl, "cm_speak: null argument"))
    return s;
  return guarded([&]() {
    std::string metric = model->model.config().score_metric;
    if (options_json && options_json[0] != '\0') {
      Json j = Json::parse(options_json);
      metric = j.value("metric", metric);
    }
    std::unique_ptr<CiderScorer> corpus;
    if (metric == "cider") {
      std::vector<std::vector<std::string>> docs;
      for (const Episode& ep : episodes->episodes)
        if (!ep.instruction.empty()) docs.push_back({ep.instruction});
      if (!docs.empty()) corpus = std::make_unique<CiderScorer>(docs);
    }
    std::string out;
    for (const Episode& ep : episodes->episodes) {
      Rng unused(0);
      TrajectoryRecord traj = rollout(model->model, world->world, ep,
                                      RolloutMode::kTeacherForced, unused, RunCtx::eval());
      GeneratedInstruction gen = generate_instruction(model->model, traj.latent_actions);
      OrderedJson row;
      row["episode_id"] = ep.id;
      row["reference"] = ep.instruction;
      row["text"] = gen.text;
      if (ep.instruction.empty())
        row["score"] = nullptr;
      else
        row["score"] = score_generated(gen.text, {ep.instruction}, metric, corpus.get());
      row["metric"] = metric;
      out += row.dump();
      out += '\n';
    }
    *jsonl = alloc_string(out);
  });
}

cm_status cm_render_episode_svg(const cm_world* world, const cm_episodes* episodes, int index,
                                const char* generated_path_json, char** svg) {
  if (cm_status s = require(world && episodes && svg, "cm_render_episode_svg: null argument"))
    return s;
  return guarded([&]() {
    if (index < 0 || index >= static_cast<int>(episodes->episodes.size()))
      throw std::invalid_argument("cm_render_episode_svg: index out of range");
    std::vector<std::string> generated;
    if (generated_path_json && generated_path_json[0] != '\0')
      generated = Json::parse(generated_path_json).get<std::vector<std::string>>();
    *svg = alloc_string(render_episode_svg(world->world,
                                           episodes->episodes[static_cast<size_t>(index)],
                                           generated));
  });
}

/* --- verification ---------------------------------------------------------------- */

cm_status cm_gradcheck(const char* scope, char** report_json) {
  if (cm_status s = require(scope && report_json, "cm_gradcheck: null argument")) return s;
  GradCheckReport report;
  cm_status status = guarded([&]() { report = gradcheck(scope); });
  if (status != CM_OK) return status;
  *report_json = alloc_string(report.to_json().dump());
  if (!report.all_pass()) {
    set_error("gradcheck: finite-difference violations detected");
    return CM_ERR_RUNTIME;
  }
  return CM_OK;
}

cm_status cm_file_sha256(const char* path, char** hex) {
  if (cm_status s = require(path && hex, "cm_file_sha256: null argument")) return s;
  return guarded([&]() { *hex = alloc_string(sha256_file_hex(path)); });
}

cm_status cm_sha256(const char* bytes, size_t len, char** hex) {
  if (cm_status s = require((bytes || len == 0) && hex, "cm_sha256: null argument")) return s;
  return guarded([&]() { *hex = alloc_string(sha256_hex(std::string_view(bytes, len))); });
}

}  // extern "C"

/* C interface to the crossmap library: instruction-guided navigation on
 * graphs with a transformer path generator, a speaker and double
 * back-translation training.
 *
 * Conventions:
 *   - Every function returns cm_status; CM_OK is 0. On failure, details are
 *     available from cm_last_error() (thread-local).
 *   - Objects are opaque handles created by cm_*_generate / cm_*_load and
 *     released with the matching cm_*_free.
 *   - Strings returned through char** are heap-allocated; release them with
 *     cm_string_free.
 *   - *_json parameters are UTF-8 JSON documents; see the project README for
 *     the accepted keys of each options object.
 */
#ifndef CROSSMAP_H
#define CROSSMAP_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cm_status {
  CM_OK = 0,
  CM_ERR_VALIDATION = 2, /* bad arguments, malformed files, contract violations */
  CM_ERR_RUNTIME = 3     /* anything else that went wrong while running */
} cm_status;

const char* cm_version(void);
/* Message of the most recent failure on this thread; empty when none. */
const char* cm_last_error(void);
void cm_string_free(char* s);

typedef struct cm_world cm_world;
typedef struct cm_episodes cm_episodes;
typedef struct cm_model cm_model;

/* --- worlds ---------------------------------------------------------------
 * spec_json keys: seed (required), num_nodes, d_sem, d_vis, avg_degree,
 * room_labels, landmark_labels. */
cm_status cm_world_generate(const char* spec_json, cm_world** out);
cm_status cm_world_load(const char* path, cm_world** out);
cm_status cm_world_save(const cm_world* world, const char* path);
cm_status cm_world_validate(const cm_world* world);
/* {id, seed, num_nodes, num_edges, d_sem, d_vis} */
cm_status cm_world_info(const cm_world* world, char** info_json);
void cm_world_free(cm_world* world);

/* --- episodes ---------------------------------------------------------------
 * options_json keys: seed (required), count, min_path_nodes, max_path_nodes,
 * with_instructions. */
cm_status cm_episodes_generate(const cm_world* world, const char* options_json,
                               cm_episodes** out);
cm_status cm_episodes_load(const char* path, cm_episodes** out);
/* R2R-style JSON array; one episode per instruction string. */
cm_status cm_episodes_load_r2r(const char* path, cm_episodes** out);
cm_status cm_episodes_save(const cm_episodes* episodes, const char* path);
cm_status cm_episodes_validate(const cm_episodes* episodes, const cm_world* world);
int cm_episodes_count(const cm_episodes* episodes);
void cm_episodes_free(cm_episodes* episodes);

/* --- training ----------------------------------------------------------------
 * plan_json: {phase, epochs, seed, config{...}, world, datasets{train,
 * val_seen, val_unseen, unlabeled}, eval_every, dbt_rounds, start_epoch}.
 * model_in may be NULL to train from scratch (the vocabulary is built from
 * the training instructions). Writes the phase checkpoint and per-epoch CSV
 * (or per-round JSONL for dbt) under out_dir; *summary_json reports paths and
 * final statistics. */
cm_status cm_train_run(const char* plan_json, const char* model_in, const char* out_dir,
                       char** summary_json);

cm_status cm_model_load(const char* path, cm_model** out);
cm_status cm_model_config(const cm_model* model, char** config_json);
void cm_model_free(cm_model* model);

/* --- evaluation and speaking ----------------------------------------------------
 * evaluate options_json: {mode: "greedy"|"sample", policy: "model"|"oracle"|
 * "always_stop", seed}. Returns the navigation metrics report (SR, NE, SPL,
 * OSR plus a per-episode breakdown).
 * speak options_json: {metric: "cider"|"bleu4"|"rouge_l"}. Returns JSON lines
 * {episode_id, reference, text, score, metric}. */
cm_status cm_evaluate(const cm_model* model, const cm_world* world, const cm_episodes* episodes,
                      const char* options_json, char** report_json);
cm_status cm_speak(const cm_model* model, const cm_world* world, const cm_episodes* episodes,
                   const char* options_json, char** jsonl);

/* SVG of one episode (by index) with the generated node path overlaid;
 * generated_path_json is a JSON array of node ids (may be empty "[]"). */
cm_status cm_render_episode_svg(const cm_world* world, const cm_episodes* episodes, int index,
                                const char* generated_path_json, char** svg);

/* --- verification -----------------------------------------------------------------
 * scope: "ops", "model" or "all". Returns CM_OK only when every finite-
 * difference check passes; the report is written either way. */
cm_status cm_gradcheck(const char* scope, char** report_json);

/* Hex SHA-256 of a file or of a byte buffer, for manifests. */
cm_status cm_file_sha256(const char* path, char** hex);
cm_status cm_sha256(const char* bytes, size_t len, char** hex);

#ifdef __cplusplus
}
#endif

#endif /* CROSSMAP_H */

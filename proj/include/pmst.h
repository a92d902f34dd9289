/* pmst — parameter-efficient multilingual speech translation, C API.
 *
 * All functions return PMST_OK (0) on success; on failure they return an
 * error code and pmst_last_error() describes the problem (thread-local).
 * Objects are opaque handles released with the matching *_free call.
 */
#ifndef PMST_H
#define PMST_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  PMST_OK = 0,
  PMST_ERR_INVALID = 1, /* bad arguments, unknown keys, malformed configs */
  PMST_ERR_IO = 2,      /* missing or unwritable files */
  PMST_ERR_RUNTIME = 3, /* everything else (training/decoding failures) */
} pmst_status;

const char* pmst_version(void);
const char* pmst_last_error(void);

/* ---- run configuration ------------------------------------------------ */

typedef struct pmst_config pmst_config;

pmst_status pmst_config_create(pmst_config** out);
pmst_status pmst_config_load(const char* path, pmst_config** out);
pmst_status pmst_config_set(pmst_config* cfg, const char* key, const char* value);
/* writes the value into buf (NUL-terminated); fails if cap is too small */
pmst_status pmst_config_get(const pmst_config* cfg, const char* key, char* buf, size_t cap);
/* canonical dump of the whole document; *needed receives the full size */
pmst_status pmst_config_dump(const pmst_config* cfg, char* buf, size_t cap, size_t* needed);
pmst_status pmst_config_hash(const pmst_config* cfg, uint64_t* out);
void pmst_config_free(pmst_config* cfg);

/* ---- corpora ------------------------------------------------------------ */

typedef struct pmst_corpus pmst_corpus;

pmst_status pmst_corpus_load(const char* path, pmst_corpus** out);
pmst_status pmst_corpus_save(const pmst_corpus* corpus, const char* path);
size_t pmst_corpus_size(const pmst_corpus* corpus);
/* removes train samples whose utterance id appears in any held corpus */
pmst_status pmst_corpus_filter_contamination(const pmst_corpus* train,
                                             const pmst_corpus* const* held, size_t n_held,
                                             pmst_corpus** out, size_t* removed);
void pmst_corpus_free(pmst_corpus* corpus);

/* generates the configured corpora into out_dir (one file per pair/split) */
pmst_status pmst_gen_data(const pmst_config* cfg, const char* out_dir, uint64_t seed);

/* ---- models ------------------------------------------------------------- */

typedef struct pmst_model pmst_model;

pmst_status pmst_model_load(const char* path, pmst_model** out);
pmst_status pmst_model_save(const pmst_model* model, const char* path);
pmst_status pmst_model_total_params(const pmst_model* model, int64_t* out);
/* keeps only the given languages' embedding rows (comma-separated list) */
pmst_status pmst_model_filter_vocab(const pmst_model* model, const char* languages_csv,
                                    pmst_model** out);
void pmst_model_free(pmst_model* model);

/* ---- training ------------------------------------------------------------ */

/* full-plan text-to-text pretraining; writes the backbone checkpoint */
pmst_status pmst_pretrain_mt(const pmst_config* cfg, const char* data_dir, uint64_t seed,
                             const char* out_ckpt);
/* ST training under the configured freeze plan; writes best.ckpt, avg.ckpt,
 * metrics.log and manifest.txt into out_dir */
pmst_status pmst_train(const pmst_config* cfg, const char* data_dir, const char* init_ckpt,
                       uint64_t seed, const char* out_dir);
/* incremental adaptation of base_ckpt to a new pair ("st:d-x") with one of:
 * adapters64_all | adapters256_all | adapters256_bottom | conv_adapters256_bottom */
pmst_status pmst_adapt(const pmst_config* cfg, const char* data_dir, const char* base_ckpt,
                       const char* pair, const char* strategy, uint64_t seed,
                       const char* out_dir);
/* elementwise mean of the named checkpoints */
pmst_status pmst_average(const char* const* ckpts, size_t n, const char* out_ckpt);

/* ---- decoding and evaluation ---------------------------------------------- */

typedef struct {
  int32_t beam;
  int32_t max_len;
  int32_t enc_adapters; /* 0 disables encoder adapters */
  int32_t dec_adapters; /* 0 disables decoder adapters */
  const char* tgt_lang; /* NULL: each sample's own target language */
  int32_t threads;
} pmst_decode_opts;

void pmst_decode_opts_init(pmst_decode_opts* opts);

/* ensemble decode of a corpus file; writes line records
 * (utterance_id \t token ids \t score \t flags) */
pmst_status pmst_decode(const char* const* ckpts, size_t n_ckpts, const char* corpus_path,
                        const pmst_decode_opts* opts, const char* out_path);
/* speech -> pivot -> final cascade (adapters disabled during the MT stage) */
pmst_status pmst_cascade(const char* st_ckpt, const char* mt_ckpt, const char* corpus_path,
                         const char* pivot_lang, const char* final_lang,
                         const pmst_decode_opts* opts, const char* out_path);
/* decode + per-pair BLEU / language-id report (plain table + records file) */
pmst_status pmst_evaluate(const char* const* ckpts, size_t n_ckpts, const char* corpus_path,
                          const pmst_decode_opts* opts, const char* report_path);

/* single-utterance decoding against loaded models */
pmst_status pmst_decode_text(pmst_model* const* models, size_t n_models, const char* src_lang,
                             const char* tgt_lang, const int32_t* tokens, size_t n_tokens,
                             const pmst_decode_opts* opts, int32_t* out_tokens, size_t cap,
                             size_t* out_len, double* out_score);
pmst_status pmst_decode_speech(pmst_model* const* models, size_t n_models,
                               const char* src_lang, const char* tgt_lang,
                               const double* features, size_t frames, size_t feature_dim,
                               const pmst_decode_opts* opts, int32_t* out_tokens, size_t cap,
                               size_t* out_len, double* out_score);

/* corpus BLEU of a decode-records file against a corpus's targets */
pmst_status pmst_bleu_records(const char* records_path, const char* corpus_path,
                              double* out_bleu);

/* ---- ablation ------------------------------------------------------------- */

/* each grid axis is "config.key=v1|v2|v3"; writes table.txt and records.log */
pmst_status pmst_ablate(const pmst_config* cfg, const char* data_dir,
                        const char* const* grid_axes, size_t n_axes, const uint64_t* seeds,
                        size_t n_seeds, const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PMST_H */

/* Exercises the shared-library C API end to end on a micro configuration:
 * config handling, data generation, a short pretraining run, decoding,
 * evaluation, averaging, vocabulary filtering and the error paths. */
#include <assert.h>
#include <inttypes.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "pmst.h"

static int failures = 0;

#define CHECK(cond)                                                       \
  do {                                                                    \
    if (!(cond)) {                                                        \
      fprintf(stderr, "CHECK failed at %s:%d: %s (last error: %s)\n",     \
              __FILE__, __LINE__, #cond, pmst_last_error());              \
      ++failures;                                                         \
    }                                                                     \
  } while (0)

static pmst_config* micro_config(void) {
  pmst_config* cfg = NULL;
  CHECK(pmst_config_create(&cfg) == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.languages", "a,x") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.tokens_per_lang", "8") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.feature_dim", "4") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.ratio", "2") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.len_min", "2") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.len_max", "4") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.speech_pairs", "st:a-x:6") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.mt_train_size", "8") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.valid_size", "3") == PMST_OK);
  CHECK(pmst_config_set(cfg, "corpus.test_size", "3") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.enc_layers", "1") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.dec_layers", "1") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.d_model", "8") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.ffn_dim", "16") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.heads", "2") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.conv_channels", "4") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.adapter_dim", "4") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.dropout", "0") == PMST_OK);
  CHECK(pmst_config_set(cfg, "model.attention_dropout", "0") == PMST_OK);
  CHECK(pmst_config_set(cfg, "pretrain.max_updates", "3") == PMST_OK);
  CHECK(pmst_config_set(cfg, "pretrain.validate_every", "2") == PMST_OK);
  CHECK(pmst_config_set(cfg, "pretrain.batch_cap", "30") == PMST_OK);
  CHECK(pmst_config_set(cfg, "train.decode_max_len", "8") == PMST_OK);
  return cfg;
}

int main(void) {
  CHECK(strcmp(pmst_version(), "0.1.0") == 0);

  /* config basics */
  pmst_config* cfg = micro_config();
  char buf[64];
  CHECK(pmst_config_get(cfg, "model.d_model", buf, sizeof buf) == PMST_OK);
  CHECK(strcmp(buf, "8") == 0);
  CHECK(pmst_config_set(cfg, "definitely.not.a.key", "1") == PMST_ERR_INVALID);
  CHECK(strlen(pmst_last_error()) > 0);
  CHECK(pmst_config_get(cfg, "model.d_model", buf, 1) == PMST_ERR_INVALID);
  size_t needed = 0;
  CHECK(pmst_config_dump(cfg, NULL, 0, &needed) == PMST_OK);
  CHECK(needed > 100);
  char* dump = (char*)malloc(needed);
  CHECK(pmst_config_dump(cfg, dump, needed, NULL) == PMST_OK);
  CHECK(strstr(dump, "model.d_model = 8") != NULL);
  free(dump);
  uint64_t h1 = 0, h2 = 0;
  CHECK(pmst_config_hash(cfg, &h1) == PMST_OK);
  CHECK(pmst_config_set(cfg, "train.patience", "7") == PMST_OK);
  CHECK(pmst_config_hash(cfg, &h2) == PMST_OK);
  CHECK(h1 != h2);
  CHECK(pmst_config_set(cfg, "train.patience", "5") == PMST_OK);

  /* data generation + corpus handles */
  CHECK(pmst_gen_data(cfg, "capi_tmp/data", 11) == PMST_OK);
  pmst_corpus* train = NULL;
  CHECK(pmst_corpus_load("capi_tmp/data/st-a-x.train.corpus", &train) == PMST_OK);
  CHECK(pmst_corpus_size(train) == 6);
  pmst_corpus* missing = NULL;
  CHECK(pmst_corpus_load("capi_tmp/nope.corpus", &missing) == PMST_ERR_IO);

  pmst_corpus* valid = NULL;
  CHECK(pmst_corpus_load("capi_tmp/data/st-a-x.valid.corpus", &valid) == PMST_OK);
  const pmst_corpus* held[1] = {valid};
  pmst_corpus* clean = NULL;
  size_t removed = 123;
  CHECK(pmst_corpus_filter_contamination(train, held, 1, &clean, &removed) == PMST_OK);
  CHECK(removed == 0);
  CHECK(pmst_corpus_size(clean) == 6);
  CHECK(pmst_corpus_save(clean, "capi_tmp/clean.corpus") == PMST_OK);

  /* short pretraining run + model handles */
  CHECK(pmst_pretrain_mt(cfg, "capi_tmp/data", 3, "capi_tmp/mt.ckpt") == PMST_OK);
  pmst_model* model = NULL;
  CHECK(pmst_model_load("capi_tmp/mt.ckpt", &model) == PMST_OK);
  int64_t total = 0;
  CHECK(pmst_model_total_params(model, &total) == PMST_OK);
  CHECK(total > 1000);

  /* decoding a corpus file; ensemble of the same checkpoint twice */
  pmst_decode_opts opts;
  pmst_decode_opts_init(&opts);
  opts.beam = 2;
  opts.max_len = 8;
  const char* single[1] = {"capi_tmp/mt.ckpt"};
  const char* duo[2] = {"capi_tmp/mt.ckpt", "capi_tmp/mt.ckpt"};
  CHECK(pmst_decode(single, 1, "capi_tmp/data/mt-a-x.valid.corpus", &opts,
                    "capi_tmp/hyp1.txt") == PMST_OK);
  CHECK(pmst_decode(duo, 2, "capi_tmp/data/mt-a-x.valid.corpus", &opts,
                    "capi_tmp/hyp2.txt") == PMST_OK);
  /* identical members decode identically */
  {
    FILE* f1 = fopen("capi_tmp/hyp1.txt", "rb");
    FILE* f2 = fopen("capi_tmp/hyp2.txt", "rb");
    CHECK(f1 && f2);
    char b1[4096], b2[4096];
    size_t n1 = fread(b1, 1, sizeof b1, f1);
    size_t n2 = fread(b2, 1, sizeof b2, f2);
    CHECK(n1 == n2);
    CHECK(n1 > 0);
    CHECK(memcmp(b1, b2, n1) == 0);
    fclose(f1);
    fclose(f2);
  }

  double score = -1.0;
  CHECK(pmst_bleu_records("capi_tmp/hyp1.txt", "capi_tmp/data/mt-a-x.valid.corpus",
                          &score) == PMST_OK);
  CHECK(score >= 0.0 && score <= 100.0);

  CHECK(pmst_evaluate(single, 1, "capi_tmp/data/st-a-x.test.corpus", &opts,
                      "capi_tmp/report.txt") == PMST_OK);

  /* averaging a checkpoint with itself reproduces it bit for bit */
  const char* same[2] = {"capi_tmp/mt.ckpt", "capi_tmp/mt.ckpt"};
  CHECK(pmst_average(same, 2, "capi_tmp/avg.ckpt") == PMST_OK);
  CHECK(pmst_decode(single, 1, "capi_tmp/data/st-a-x.valid.corpus", &opts,
                    "capi_tmp/hyp_orig.txt") == PMST_OK);
  const char* averaged[1] = {"capi_tmp/avg.ckpt"};
  CHECK(pmst_decode(averaged, 1, "capi_tmp/data/st-a-x.valid.corpus", &opts,
                    "capi_tmp/hyp_avg.txt") == PMST_OK);
  {
    FILE* f1 = fopen("capi_tmp/hyp_orig.txt", "rb");
    FILE* f2 = fopen("capi_tmp/hyp_avg.txt", "rb");
    CHECK(f1 && f2);
    char b1[4096], b2[4096];
    size_t n1 = fread(b1, 1, sizeof b1, f1);
    size_t n2 = fread(b2, 1, sizeof b2, f2);
    CHECK(n1 == n2 && memcmp(b1, b2, n1) == 0);
    fclose(f1);
    fclose(f2);
  }

  /* vocabulary filtering keeps the model loadable and decodable */
  pmst_model* filtered = NULL;
  CHECK(pmst_model_filter_vocab(model, "a,x", &filtered) == PMST_OK);
  int64_t filtered_total = 0;
  CHECK(pmst_model_total_params(filtered, &filtered_total) == PMST_OK);
  CHECK(filtered_total == total); /* both languages kept: nothing dropped */
  CHECK(pmst_model_save(filtered, "capi_tmp/filtered.ckpt") == PMST_OK);
  CHECK(pmst_model_filter_vocab(model, "zz", &filtered) == PMST_ERR_INVALID);

  /* in-memory decode */
  int32_t tokens[4];
  pmst_model* loaded = NULL;
  CHECK(pmst_model_load("capi_tmp/mt.ckpt", &loaded) == PMST_OK);
  pmst_model* members[1];
  members[0] = loaded;
  int32_t out_tokens[32];
  size_t out_len = 0;
  double out_score = 0.0;
  /* first content token of language a in the base id space: 4 specials + 2 tags */
  tokens[0] = 6;
  tokens[1] = 7;
  CHECK(pmst_decode_text(members, 1, "a", "x", tokens, 2, &opts, out_tokens, 32, &out_len,
                         &out_score) == PMST_OK);
  CHECK(out_len <= 32);
  CHECK(pmst_decode_text(members, 1, "qq", "x", tokens, 2, &opts, out_tokens, 32, &out_len,
                         &out_score) == PMST_ERR_INVALID);

  double feats[8 * 4];
  for (int i = 0; i < 8 * 4; ++i) feats[i] = 0.1 * (double)i;
  CHECK(pmst_decode_speech(members, 1, "a", "x", feats, 8, 4, &opts, out_tokens, 32,
                           &out_len, &out_score) == PMST_OK);

  /* cascade over a speech corpus */
  CHECK(pmst_cascade("capi_tmp/mt.ckpt", "capi_tmp/mt.ckpt",
                     "capi_tmp/data/st-a-x.valid.corpus", "x", "a", &opts,
                     "capi_tmp/cascade.txt") == PMST_OK);

  /* null-argument hygiene */
  CHECK(pmst_config_create(NULL) == PMST_ERR_INVALID);
  CHECK(pmst_decode(NULL, 0, "x", &opts, "y") == PMST_ERR_INVALID);
  CHECK(pmst_model_load("capi_tmp/not_a_model.ckpt", &loaded) == PMST_ERR_IO);

  pmst_model_free(model);
  pmst_model_free(filtered);
  pmst_model_free(loaded);
  pmst_corpus_free(train);
  pmst_corpus_free(valid);
  pmst_corpus_free(clean);
  pmst_corpus_free(missing);
  pmst_config_free(cfg);

  if (failures) {
    fprintf(stderr, "%d C API checks failed\n", failures);
    return 1;
  }
  printf("all C API checks passed\n");
  return 0;
}

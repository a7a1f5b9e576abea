#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xtod/dialog.hpp"
#include "xtod/errors.hpp"
#include "xtod/instances.hpp"
#include "xtod/tokenizer.hpp"

namespace xtod::encoder {

using Eigen::MatrixXd;

struct ModelConfig {
  int vocab_size = 512;
  int d_model = 32;
  int d_ff = 64;
  int max_len = 256;

  bool operator==(const ModelConfig&) const = default;
};

struct DstHead {
  MatrixXd w;  // d_model x n_values
  MatrixXd b;  // n_values x 1
};

// One attention block plus objective heads; all tensors are doubles so that
// checkpoints are bit-exact and finite-difference checks are tight.
struct ModelParams {
  ModelConfig config;
  MatrixXd tok_emb;  // vocab x d
  MatrixXd pos_emb;  // max_len x d
  MatrixXd seg_emb;  // 2 x d
  MatrixXd wq, wk, wv, wo;          // d x d
  MatrixXd ln1_g, ln1_b, ln2_g, ln2_b;  // d x 1
  MatrixXd w_ff1;  // d x h
  MatrixXd w_ff2;  // h x d
  MatrixXd w_mlm;  // d x vocab
  MatrixXd b_mlm;  // vocab x 1
  MatrixXd w_rs;   // 2d x 1, over [pooled context; pooled response]
  MatrixXd b_rs;   // 1 x 1
  std::map<dialog::SlotKey, DstHead> dst_heads;

  // Embeddings and projections ~ N(0, 0.02^2); layer norms identity; RS and
  // DST heads zero (uniform initial predictions).
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed,
                          const dialog::Ontology* ontology = nullptr);
  static ModelParams zeros_like(const ModelParams& other);
  void add_dst_heads(const dialog::Ontology& ontology);

  // All tensors in a fixed, documented order (checkpoint layout, Adam update
  // order, and gradient-check coordinate space all use it).
  std::vector<std::pair<std::string, MatrixXd*>> tensors();
  std::vector<std::pair<std::string, const MatrixXd*>> tensors() const;
  std::size_t coefficient_count() const;
};

// Final hidden states for one token sequence, with everything the backward
// pass needs. Rows at PAD positions are computed but excluded from attention
// keys, pooling, and losses.
struct EncodeCache {
  std::vector<int> ids, types;
  std::vector<char> is_pad;
  std::vector<int> real;  // non-pad positions in order
  MatrixXd x0, q, k, v, attn, ctx, attn_out, r1, h1, xhat1, f1, gelu_f1, f2, r2, xhat2, h;
  Eigen::VectorXd inv_std1, inv_std2;
};

EncodeCache encode_forward(const ModelParams& params, const std::vector<int>& ids,
                           const std::vector<int>& type_ids);

// Backpropagates d_loss/d_h into grads (accumulating) and the embeddings.
void encode_backward(const ModelParams& params, const EncodeCache& cache, const MatrixXd& dh,
                     ModelParams& grads);

struct MlmResult {
  std::vector<int> positions;  // masked positions, ascending
  MatrixXd dist;               // n_masked x vocab, rows sum to 1
  double loss = 0.0;           // mean NLL of the original ids
};
MlmResult forward_mlm(const ModelParams& params, const instances::TrainingInstance& inst);

struct RsResult {
  double prob_true = 0.0;
  double loss = 0.0;  // binary cross-entropy against rs_label
};
RsResult forward_rs(const ModelParams& params, const instances::TrainingInstance& inst);

// One normalized distribution per ontology key over its value list.
std::map<dialog::SlotKey, Eigen::VectorXd> forward_dst(const ModelParams& params,
                                                       const tokenizer::TokenSequence& tokens,
                                                       const dialog::Ontology& ontology);

// Argmax per key (ties break on the lower value index).
dialog::DialogState predict_state(const ModelParams& params,
                                  const tokenizer::TokenSequence& tokens,
                                  const dialog::Ontology& ontology);

// A DST training example: encoded dialog history plus the gold cumulative
// state (missing keys mean "none").
struct DstExample {
  tokenizer::TokenSequence tokens;
  dialog::DialogState gold;
};

double dst_loss(const ModelParams& params, const DstExample& ex,
                const dialog::Ontology& ontology);

enum class Objective { mlm, rs, dst };

// Mean loss over a batch; accumulates mean gradients into grads when given.
double lm_batch_loss(const ModelParams& params,
                     const std::vector<const instances::TrainingInstance*>& batch,
                     Objective objective, ModelParams* grads = nullptr);
double dst_batch_loss(const ModelParams& params, const std::vector<const DstExample*>& batch,
                      const dialog::Ontology& ontology, ModelParams* grads = nullptr);

// Max relative error between analytic and central finite-difference
// gradients over >= n_coords sampled coordinates. epsilon in [1e-6, 1e-3].
// The denominator is max(|analytic| + |numeric|, 1e-3).
double max_rel_grad_error(const ModelParams& params,
                          const std::function<double(const ModelParams&)>& loss,
                          const ModelParams& analytic, double epsilon, int n_coords,
                          std::uint64_t seed);
double grad_check(const ModelParams& params, const instances::TrainingInstance& inst,
                  Objective objective, double epsilon, int n_coords = 120,
                  std::uint64_t seed = 17);
double grad_check_dst(const ModelParams& params, const DstExample& ex,
                      const dialog::Ontology& ontology, double epsilon, int n_coords = 120,
                      std::uint64_t seed = 17);

// Hyperparameters; defaults follow the experimental setup this toolkit
// mirrors (batch sizes 16 MLM/TLM, 32 RS, 6 DST, 24 RR; patience 3 for
// MLM/TLM and 10 otherwise; 30 specialization epochs, 300 zero-shot / 15
// few-shot downstream epochs; specialization learning-rate grid 1e-4..1e-6
// and fixed 5e-5 downstream; Adam).
struct TrainConfig {
  std::vector<double> lr_grid{1e-4, 1e-5, 1e-6};
  double downstream_lr = 5e-5;
  int batch_mlm = 16;
  int batch_rs = 32;
  int batch_dst = 6;
  int batch_rr = 24;
  int patience_mlm = 3;
  int patience_rs = 10;
  int patience_downstream = 10;
  int max_epochs_specialization = 30;
  int max_epochs_zero_shot = 300;
  int max_epochs_few_shot = 15;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// One sequential-training stage. Exactly one of lm_train / dst_train is
// used, per objective. dev_score is evaluated after every epoch; higher is
// better; the stage stops once it fails to improve for `patience` epochs
// and the best-scoring parameters are kept.
struct TrainStage {
  std::string name;
  Objective objective = Objective::mlm;
  std::vector<instances::TrainingInstance> lm_train;
  std::vector<DstExample> dst_train;
  const dialog::Ontology* ontology = nullptr;  // dst only
  std::function<double(const ModelParams&)> dev_score;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int patience = 3;
  int max_epochs = 30;
};

struct StageRecord {
  std::string name;
  int epochs_run = 0;
  int best_epoch = 0;
  double best_score = 0.0;
  std::vector<double> dev_curve;
  std::vector<double> train_loss_curve;
};

struct Checkpoint {
  ModelParams params;
  std::vector<StageRecord> history;
  std::string provenance;  // free-form JSON: data digests, schedule, seeds
};

// Runs the stages in order, deterministic given cfg.seed (fixed shuffle
// order, single-threaded updates). Throws on an empty stage or when the
// loss stops being finite.
Checkpoint train(ModelParams params, const std::vector<TrainStage>& schedule,
                 const TrainConfig& cfg);

// Convenience dev scorers (negated mean loss, so higher is better).
std::function<double(const ModelParams&)> dev_loss_scorer(
    Objective objective, std::vector<instances::TrainingInstance> dev);
std::function<double(const ModelParams&)> dev_dst_scorer(std::vector<DstExample> dev,
                                                         const dialog::Ontology& ontology);

// Versioned binary container: shapes header + row-major little-endian f64
// payload + provenance block. save -> load is bit-exact.
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint_file(const std::string& path);
std::string checkpoint_bytes(const Checkpoint& ckpt);

// Scores (context, candidate) pairs with the RS head and returns candidate
// indices in descending probability order; ties keep the lower index first.
struct CandidateRanking {
  std::vector<std::size_t> order;
  std::vector<double> probs;  // aligned with the input candidates
};
CandidateRanking score_candidates(const ModelParams& params, const tokenizer::Vocab& vocab,
                                  const std::string& context,
                                  const std::vector<std::string>& candidates,
                                  std::size_t per_side_max = 128);

}  // namespace xtod::encoder

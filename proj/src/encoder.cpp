#include "xtod/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "xtod/rng.hpp"

namespace xtod::encoder {

using tokenizer::kNumSpecials;
using tokenizer::kPad;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

}  // namespace

void TrainConfig::validate() const {
  if (lr_grid.empty() || downstream_lr <= 0.0) throw ValidationError("learning rates must be positive");
  for (double lr : lr_grid) {
    if (lr <= 0.0) throw ValidationError("learning rates must be positive");
  }
  if (batch_mlm < 1 || batch_rs < 1 || batch_dst < 1 || batch_rr < 1) {
    throw ValidationError("batch sizes must be positive");
  }
  if (patience_mlm > max_epochs_specialization || patience_rs > max_epochs_specialization ||
      patience_downstream > max_epochs_zero_shot) {
    throw ValidationError("patience must not exceed the epoch budget");
  }
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed,
                              const dialog::Ontology* ontology) {
  if (cfg.vocab_size < kNumSpecials + 1 || cfg.d_model < 1 || cfg.d_ff < 1 || cfg.max_len < 2) {
    throw ValidationError("bad model config");
  }
  ModelParams p;
  p.config = cfg;
  rng::Rng rng(rng::derive(seed, "model_init"));
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = 0.02 * rng.normal();
    }
    return m;
  };
  const int d = cfg.d_model;
  p.tok_emb = randn(cfg.vocab_size, d);
  p.pos_emb = randn(cfg.max_len, d);
  p.seg_emb = randn(2, d);
  p.wq = randn(d, d);
  p.wk = randn(d, d);
  p.wv = randn(d, d);
  p.wo = randn(d, d);
  p.ln1_g = MatrixXd::Ones(d, 1);
  p.ln1_b = MatrixXd::Zero(d, 1);
  p.ln2_g = MatrixXd::Ones(d, 1);
  p.ln2_b = MatrixXd::Zero(d, 1);
  p.w_ff1 = randn(d, cfg.d_ff);
  p.w_ff2 = randn(cfg.d_ff, d);
  p.w_mlm = randn(d, cfg.vocab_size);
  p.b_mlm = MatrixXd::Zero(cfg.vocab_size, 1);
  p.w_rs = MatrixXd::Zero(2 * d, 1);
  p.b_rs = MatrixXd::Zero(1, 1);
  if (ontology != nullptr) p.add_dst_heads(*ontology);
  return p;
}

void ModelParams::add_dst_heads(const dialog::Ontology& ontology) {
  for (const auto& [key, values] : ontology.values) {
    DstHead head;
    head.w = MatrixXd::Zero(config.d_model, static_cast<Eigen::Index>(values.size()));
    head.b = MatrixXd::Zero(static_cast<Eigen::Index>(values.size()), 1);
    dst_heads[key] = std::move(head);
  }
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams z = other;
  for (auto& [name, t] : z.tensors()) t->setZero();
  return z;
}

std::vector<std::pair<std::string, MatrixXd*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, MatrixXd*>> out = {
      {"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}, {"seg_emb", &seg_emb},
      {"wq", &wq},           {"wk", &wk},           {"wv", &wv},
      {"wo", &wo},           {"ln1_g", &ln1_g},     {"ln1_b", &ln1_b},
      {"ln2_g", &ln2_g},     {"ln2_b", &ln2_b},     {"w_ff1", &w_ff1},
      {"w_ff2", &w_ff2},     {"w_mlm", &w_mlm},     {"b_mlm", &b_mlm},
      {"w_rs", &w_rs},       {"b_rs", &b_rs},
  };
  for (auto& [key, head] : dst_heads) {
    const std::string base = "dst:" + key.first + "-" + key.second;
    out.emplace_back(base + ":w", &head.w);
    out.emplace_back(base + ":b", &head.b);
  }
  return out;
}

std::vector<std::pair<std::string, const MatrixXd*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const MatrixXd*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(name, t);
  return out;
}

std::size_t ModelParams::coefficient_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

namespace {

void layer_norm_rows(const MatrixXd& x, const MatrixXd& gamma, const MatrixXd& beta,
                     MatrixXd& xhat, Eigen::VectorXd& inv_std, MatrixXd& y) {
  constexpr double eps = 1e-5;
  const Eigen::Index t = x.rows(), d = x.cols();
  xhat.resize(t, d);
  y.resize(t, d);
  inv_std.resize(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(i) = inv;
    for (Eigen::Index j = 0; j < d; ++j) {
      xhat(i, j) = (x(i, j) - mean) * inv;
      y(i, j) = gamma(j, 0) * xhat(i, j) + beta(j, 0);
    }
  }
}

void layer_norm_backward_rows(const MatrixXd& dy, const MatrixXd& xhat,
                              const Eigen::VectorXd& inv_std, const MatrixXd& gamma,
                              MatrixXd& dgamma, MatrixXd& dbeta, MatrixXd& dx) {
  const Eigen::Index t = dy.rows(), d = dy.cols();
  dx.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    double mean_t = 0.0, mean_tx = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double g = dy(i, j) * gamma(j, 0);
      mean_t += g;
      mean_tx += g * xhat(i, j);
      dgamma(j, 0) += dy(i, j) * xhat(i, j);
      dbeta(j, 0) += dy(i, j);
    }
    mean_t /= static_cast<double>(d);
    mean_tx /= static_cast<double>(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double g = dy(i, j) * gamma(j, 0);
      dx(i, j) = (g - mean_t - xhat(i, j) * mean_tx) * inv_std(i);
    }
  }
}

}  // namespace

EncodeCache encode_forward(const ModelParams& params, const std::vector<int>& ids,
                           const std::vector<int>& type_ids) {
  const auto t = static_cast<Eigen::Index>(ids.size());
  const int d = params.config.d_model;
  if (ids.size() != type_ids.size() || ids.empty()) {
    throw ValidationError("encoder: ids/type_ids size mismatch or empty input");
  }
  if (t > params.config.max_len) {
    throw ValidationError("encoder: sequence longer than max_len");
  }
  EncodeCache c;
  c.ids = ids;
  c.types = type_ids;
  c.is_pad.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= params.config.vocab_size) {
      throw ValidationError("encoder: token id out of range");
    }
    if (type_ids[i] < 0 || type_ids[i] > 1) {
      throw ValidationError("encoder: type id out of range");
    }
    c.is_pad[i] = ids[i] == kPad;
    if (!c.is_pad[i]) c.real.push_back(static_cast<int>(i));
  }

  // Row-by-row arithmetic throughout so that a row's result never depends on
  // how many padding rows the batch added (loss must be pad-invariant bit
  // for bit).
  c.x0.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    c.x0.row(i) = params.tok_emb.row(ids[i]) + params.pos_emb.row(i) +
                  params.seg_emb.row(type_ids[i]);
  }
  c.q.resize(t, d);
  c.k.resize(t, d);
  c.v.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    c.q.row(i) = c.x0.row(i) * params.wq;
    c.k.row(i) = c.x0.row(i) * params.wk;
    c.v.row(i) = c.x0.row(i) * params.wv;
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.attn = MatrixXd::Zero(t, t);
  c.ctx.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    // Scores over non-pad keys only; softmax restricted to that set.
    double max_s = -std::numeric_limits<double>::infinity();
    for (int j : c.real) max_s = std::max(max_s, c.q.row(i).dot(c.k.row(j)) * scale);
    double z = 0.0;
    for (int j : c.real) {
      const double e = std::exp(c.q.row(i).dot(c.k.row(j)) * scale - max_s);
      c.attn(i, j) = e;
      z += e;
    }
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
    for (int j : c.real) {
      c.attn(i, j) /= z;
      acc += c.attn(i, j) * c.v.row(j);
    }
    c.ctx.row(i) = acc;
  }

  c.attn_out.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) c.attn_out.row(i) = c.ctx.row(i) * params.wo;
  c.r1 = c.x0 + c.attn_out;
  layer_norm_rows(c.r1, params.ln1_g, params.ln1_b, c.xhat1, c.inv_std1, c.h1);

  c.f1.resize(t, params.config.d_ff);
  c.gelu_f1.resize(t, params.config.d_ff);
  for (Eigen::Index i = 0; i < t; ++i) {
    c.f1.row(i) = c.h1.row(i) * params.w_ff1;
    for (Eigen::Index j = 0; j < c.f1.cols(); ++j) c.gelu_f1(i, j) = gelu(c.f1(i, j));
  }
  c.f2.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) c.f2.row(i) = c.gelu_f1.row(i) * params.w_ff2;
  c.r2 = c.h1 + c.f2;
  layer_norm_rows(c.r2, params.ln2_g, params.ln2_b, c.xhat2, c.inv_std2, c.h);
  return c;
}

void encode_backward(const ModelParams& params, const EncodeCache& c, const MatrixXd& dh,
                     ModelParams& grads) {
  const Eigen::Index t = c.x0.rows();
  const int d = params.config.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  MatrixXd dr2;
  layer_norm_backward_rows(dh, c.xhat2, c.inv_std2, params.ln2_g, grads.ln2_g, grads.ln2_b, dr2);

  MatrixXd dh1 = dr2;  // residual branch
  grads.w_ff2.noalias() += c.gelu_f1.transpose() * dr2;
  MatrixXd dgelu = dr2 * params.w_ff2.transpose();
  MatrixXd df1(t, params.config.d_ff);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < df1.cols(); ++j) {
      df1(i, j) = dgelu(i, j) * gelu_grad(c.f1(i, j));
    }
  }
  grads.w_ff1.noalias() += c.h1.transpose() * df1;
  dh1.noalias() += df1 * params.w_ff1.transpose();

  MatrixXd dr1;
  layer_norm_backward_rows(dh1, c.xhat1, c.inv_std1, params.ln1_g, grads.ln1_g, grads.ln1_b, dr1);

  MatrixXd dx0 = dr1;  // residual branch
  grads.wo.noalias() += c.ctx.transpose() * dr1;
  MatrixXd dctx = dr1 * params.wo.transpose();

  MatrixXd dattn = MatrixXd::Zero(t, t);
  MatrixXd dv = MatrixXd::Zero(t, d);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (int j : c.real) {
      dattn(i, j) = dctx.row(i).dot(c.v.row(j));
      dv.row(j) += c.attn(i, j) * dctx.row(i);
    }
  }
  // Softmax backward per row over the non-pad key set.
  MatrixXd dscores = MatrixXd::Zero(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    double dot = 0.0;
    for (int j : c.real) dot += c.attn(i, j) * dattn(i, j);
    for (int j : c.real) dscores(i, j) = c.attn(i, j) * (dattn(i, j) - dot);
  }
  MatrixXd dq = dscores * c.k * scale;
  MatrixXd dk = dscores.transpose() * c.q * scale;

  grads.wq.noalias() += c.x0.transpose() * dq;
  grads.wk.noalias() += c.x0.transpose() * dk;
  grads.wv.noalias() += c.x0.transpose() * dv;
  dx0.noalias() += dq * params.wq.transpose();
  dx0.noalias() += dk * params.wk.transpose();
  dx0.noalias() += dv * params.wv.transpose();

  for (Eigen::Index i = 0; i < t; ++i) {
    grads.tok_emb.row(c.ids[i]) += dx0.row(i);
    grads.pos_emb.row(i) += dx0.row(i);
    grads.seg_emb.row(c.types[i]) += dx0.row(i);
  }
}

namespace {

void check_lm_instance(const ModelParams& params, const instances::TrainingInstance& inst,
                       bool want_rs) {
  const bool is_rs = inst.kind == instances::InstanceKind::rs;
  if (is_rs != want_rs) {
    throw ValidationError(want_rs ? "forward_rs requires an rs instance"
                                  : "forward_mlm requires an mlm/tlm instance");
  }
  if (inst.tokens.ids.size() != inst.tokens.type_ids.size()) {
    throw ValidationError("instance ids/type_ids length mismatch");
  }
  for (int id : inst.tokens.ids) {
    if (id < 0 || id >= params.config.vocab_size) {
      throw ValidationError("instance id out of vocab range");
    }
  }
  if (!want_rs && inst.mlm_labels.empty()) {
    throw ValidationError("mlm/tlm instance has no labels");
  }
}

struct Pooled {
  Eigen::RowVectorXd ctx, resp;
  std::vector<int> ctx_rows, resp_rows;
};

// Mean over non-pad positions per segment (type 0 = context, 1 = response).
Pooled pool_segments(const EncodeCache& c) {
  const Eigen::Index d = c.h.cols();
  Pooled p;
  p.ctx = Eigen::RowVectorXd::Zero(d);
  p.resp = Eigen::RowVectorXd::Zero(d);
  for (int i : c.real) {
    if (c.types[i] == 0) {
      p.ctx += c.h.row(i);
      p.ctx_rows.push_back(i);
    } else {
      p.resp += c.h.row(i);
      p.resp_rows.push_back(i);
    }
  }
  if (!p.ctx_rows.empty()) p.ctx /= static_cast<double>(p.ctx_rows.size());
  if (!p.resp_rows.empty()) p.resp /= static_cast<double>(p.resp_rows.size());
  return p;
}

double stable_bce(double z, bool label) {
  // -log sigmoid(z) for true, -log(1 - sigmoid(z)) for false.
  const double y = label ? 1.0 : 0.0;
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

MlmResult forward_mlm(const ModelParams& params, const instances::TrainingInstance& inst) {
  check_lm_instance(params, inst, /*want_rs=*/false);
  const EncodeCache c = encode_forward(params, inst.tokens.ids, inst.tokens.type_ids);
  MlmResult res;
  res.dist.resize(static_cast<Eigen::Index>(inst.mlm_labels.size()), params.config.vocab_size);
  double total = 0.0;
  Eigen::Index row = 0;
  for (const auto& [pos, orig] : inst.mlm_labels) {
    if (pos < 0 || pos >= static_cast<int>(inst.tokens.ids.size())) {
      throw ValidationError("mlm label position out of range");
    }
    Eigen::VectorXd logits =
        (c.h.row(pos) * params.w_mlm).transpose() + params.b_mlm.col(0);
    const double lse = log_sum_exp(logits);
    total += lse - logits(orig);
    for (Eigen::Index j = 0; j < logits.size(); ++j) {
      res.dist(row, j) = std::exp(logits(j) - lse);
    }
    res.positions.push_back(pos);
    ++row;
  }
  res.loss = total / static_cast<double>(inst.mlm_labels.size());
  return res;
}

RsResult forward_rs(const ModelParams& params, const instances::TrainingInstance& inst) {
  check_lm_instance(params, inst, /*want_rs=*/true);
  const EncodeCache c = encode_forward(params, inst.tokens.ids, inst.tokens.type_ids);
  const Pooled p = pool_segments(c);
  const int d = params.config.d_model;
  double z = params.b_rs(0, 0);
  for (int j = 0; j < d; ++j) z += p.ctx(j) * params.w_rs(j, 0);
  for (int j = 0; j < d; ++j) z += p.resp(j) * params.w_rs(d + j, 0);
  RsResult res;
  res.prob_true = 1.0 / (1.0 + std::exp(-z));
  res.loss = stable_bce(z, inst.rs_label);
  return res;
}

std::map<dialog::SlotKey, Eigen::VectorXd> forward_dst(const ModelParams& params,
                                                       const tokenizer::TokenSequence& tokens,
                                                       const dialog::Ontology& ontology) {
  const EncodeCache c = encode_forward(params, tokens.ids, tokens.type_ids);
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(params.config.d_model);
  for (int i : c.real) pooled += c.h.row(i);
  if (!c.real.empty()) pooled /= static_cast<double>(c.real.size());

  std::map<dialog::SlotKey, Eigen::VectorXd> out;
  for (const auto& [key, values] : ontology.values) {
    const auto it = params.dst_heads.find(key);
    if (it == params.dst_heads.end()) {
      throw ValidationError("no DST head for ontology key " + key.first + "-" + key.second,
                            key.first + "-" + key.second, "head_per_key");
    }
    if (it->second.w.cols() != static_cast<Eigen::Index>(values.size())) {
      throw ValidationError("DST head shape does not match value list for " + key.first + "-" +
                            key.second);
    }
    Eigen::VectorXd logits = (pooled * it->second.w).transpose() + it->second.b.col(0);
    const double lse = log_sum_exp(logits);
    Eigen::VectorXd dist(logits.size());
    for (Eigen::Index j = 0; j < logits.size(); ++j) dist(j) = std::exp(logits(j) - lse);
    out[key] = std::move(dist);
  }
  return out;
}

dialog::DialogState predict_state(const ModelParams& params,
                                  const tokenizer::TokenSequence& tokens,
                                  const dialog::Ontology& ontology) {
  dialog::DialogState st;
  const auto dists = forward_dst(params, tokens, ontology);
  for (const auto& [key, dist] : dists) {
    Eigen::Index best = 0;
    dist.maxCoeff(&best);
    st.values[key] = ontology.values.at(key)[static_cast<std::size_t>(best)];
  }
  return st;
}

namespace {

int gold_value_index(const dialog::Ontology& ontology, const dialog::SlotKey& key,
                     const dialog::DialogState& gold) {
  const auto& values = ontology.values.at(key);
  const std::string& v = gold.value_or_none(key.first, key.second);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == v) return static_cast<int>(i);
  }
  // Unlisted gold value: fall back to "none" (kept out of the hot path by
  // construction of the ontology).
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == dialog::kNone) return static_cast<int>(i);
  }
  throw ValidationError("ontology for " + key.first + "-" + key.second + " lacks 'none'");
}

// Shared loss-with-optional-gradient path for a single example.
double lm_example_loss(const ModelParams& params, const instances::TrainingInstance& inst,
                       Objective objective, double weight, ModelParams* grads) {
  const bool is_rs = objective == Objective::rs;
  check_lm_instance(params, inst, is_rs);
  const EncodeCache c = encode_forward(params, inst.tokens.ids, inst.tokens.type_ids);
  const Eigen::Index t = c.x0.rows();
  const int d = params.config.d_model;
  double loss = 0.0;
  MatrixXd dh = MatrixXd::Zero(t, d);

  if (!is_rs) {
    const auto n_masked = static_cast<double>(inst.mlm_labels.size());
    for (const auto& [pos, orig] : inst.mlm_labels) {
      Eigen::VectorXd logits = (c.h.row(pos) * params.w_mlm).transpose() + params.b_mlm.col(0);
      const double lse = log_sum_exp(logits);
      loss += (lse - logits(orig)) / n_masked;
      if (grads != nullptr) {
        Eigen::VectorXd dlogits(logits.size());
        for (Eigen::Index j = 0; j < logits.size(); ++j) {
          dlogits(j) = std::exp(logits(j) - lse);
        }
        dlogits(orig) -= 1.0;
        dlogits *= weight / n_masked;
        grads->b_mlm.col(0) += dlogits;
        grads->w_mlm.noalias() += c.h.row(pos).transpose() * dlogits.transpose();
        dh.row(pos) += (params.w_mlm * dlogits).transpose();
      }
    }
  } else {
    const Pooled p = pool_segments(c);
    double z = params.b_rs(0, 0);
    for (int j = 0; j < d; ++j) z += p.ctx(j) * params.w_rs(j, 0);
    for (int j = 0; j < d; ++j) z += p.resp(j) * params.w_rs(d + j, 0);
    loss = stable_bce(z, inst.rs_label);
    if (grads != nullptr) {
      const double prob = 1.0 / (1.0 + std::exp(-z));
      const double dz = (prob - (inst.rs_label ? 1.0 : 0.0)) * weight;
      grads->b_rs(0, 0) += dz;
      for (int j = 0; j < d; ++j) grads->w_rs(j, 0) += dz * p.ctx(j);
      for (int j = 0; j < d; ++j) grads->w_rs(d + j, 0) += dz * p.resp(j);
      if (!p.ctx_rows.empty()) {
        const double s = dz / static_cast<double>(p.ctx_rows.size());
        for (int i : p.ctx_rows) {
          for (int j = 0; j < d; ++j) dh(i, j) += s * params.w_rs(j, 0);
        }
      }
      if (!p.resp_rows.empty()) {
        const double s = dz / static_cast<double>(p.resp_rows.size());
        for (int i : p.resp_rows) {
          for (int j = 0; j < d; ++j) dh(i, j) += s * params.w_rs(d + j, 0);
        }
      }
    }
  }

  // dh already carries `weight` through dlogits / dz.
  if (grads != nullptr) encode_backward(params, c, dh, *grads);
  return loss;
}

double dst_example_loss(const ModelParams& params, const DstExample& ex,
                        const dialog::Ontology& ontology, double weight, ModelParams* grads) {
  const EncodeCache c = encode_forward(params, ex.tokens.ids, ex.tokens.type_ids);
  const int d = params.config.d_model;
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(d);
  for (int i : c.real) pooled += c.h.row(i);
  const double n_real = static_cast<double>(c.real.size());
  if (!c.real.empty()) pooled /= n_real;

  const auto n_keys = static_cast<double>(ontology.values.size());
  double loss = 0.0;
  Eigen::RowVectorXd dpooled = Eigen::RowVectorXd::Zero(d);
  for (const auto& [key, values] : ontology.values) {
    const auto it = params.dst_heads.find(key);
    if (it == params.dst_heads.end()) {
      throw ValidationError("no DST head for ontology key " + key.first + "-" + key.second);
    }
    Eigen::VectorXd logits = (pooled * it->second.w).transpose() + it->second.b.col(0);
    const double lse = log_sum_exp(logits);
    const int gold = gold_value_index(ontology, key, ex.gold);
    loss += (lse - logits(gold)) / n_keys;
    if (grads != nullptr) {
      Eigen::VectorXd dlogits(logits.size());
      for (Eigen::Index j = 0; j < logits.size(); ++j) dlogits(j) = std::exp(logits(j) - lse);
      dlogits(gold) -= 1.0;
      dlogits *= weight / n_keys;
      auto& ghead = grads->dst_heads.at(key);
      ghead.b.col(0) += dlogits;
      ghead.w.noalias() += pooled.transpose() * dlogits.transpose();
      dpooled += (it->second.w * dlogits).transpose();
    }
  }
  if (grads != nullptr && !c.real.empty()) {
    MatrixXd dh = MatrixXd::Zero(c.x0.rows(), d);
    for (int i : c.real) dh.row(i) = dpooled / n_real;
    encode_backward(params, c, dh, *grads);
  }
  return loss;
}

}  // namespace

double dst_loss(const ModelParams& params, const DstExample& ex,
                const dialog::Ontology& ontology) {
  return dst_example_loss(params, ex, ontology, 1.0, nullptr);
}

double lm_batch_loss(const ModelParams& params,
                     const std::vector<const instances::TrainingInstance*>& batch,
                     Objective objective, ModelParams* grads) {
  if (batch.empty()) throw ValidationError("empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto* inst : batch) {
    loss += lm_example_loss(params, *inst, objective, w, grads) * w;
  }
  return loss;
}

double dst_batch_loss(const ModelParams& params, const std::vector<const DstExample*>& batch,
                      const dialog::Ontology& ontology, ModelParams* grads) {
  if (batch.empty()) throw ValidationError("empty batch");
  const double w = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto* ex : batch) {
    loss += dst_example_loss(params, *ex, ontology, w, grads) * w;
  }
  return loss;
}

double max_rel_grad_error(const ModelParams& params,
                          const std::function<double(const ModelParams&)>& loss,
                          const ModelParams& analytic, double epsilon, int n_coords,
                          std::uint64_t seed) {
  if (epsilon < 1e-6 || epsilon > 1e-3) {
    throw ValidationError("grad check epsilon must lie in [1e-6, 1e-3]");
  }
  ModelParams work = params;
  auto tensors = work.tensors();
  auto grad_tensors = analytic.tensors();
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (const auto& [name, t] : tensors) {
    sizes.push_back(static_cast<std::size_t>(t->size()));
    total += sizes.back();
  }
  rng::Rng rng(rng::derive(seed, "grad_check"));
  double worst = 0.0;
  for (int s = 0; s < n_coords; ++s) {
    std::size_t flat = rng.below(total);
    std::size_t ti = 0;
    while (flat >= sizes[ti]) {
      flat -= sizes[ti];
      ++ti;
    }
    double* coeff = tensors[ti].second->data() + flat;
    const double saved = *coeff;
    *coeff = saved + epsilon;
    const double up = loss(work);
    *coeff = saved - epsilon;
    const double down = loss(work);
    *coeff = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = grad_tensors[ti].second->data()[flat];
    const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-3);
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

double grad_check(const ModelParams& params, const instances::TrainingInstance& inst,
                  Objective objective, double epsilon, int n_coords, std::uint64_t seed) {
  ModelParams grads = ModelParams::zeros_like(params);
  lm_example_loss(params, inst, objective, 1.0, &grads);
  return max_rel_grad_error(
      params,
      [&](const ModelParams& p) { return lm_example_loss(p, inst, objective, 1.0, nullptr); },
      grads, epsilon, n_coords, seed);
}

double grad_check_dst(const ModelParams& params, const DstExample& ex,
                      const dialog::Ontology& ontology, double epsilon, int n_coords,
                      std::uint64_t seed) {
  ModelParams grads = ModelParams::zeros_like(params);
  dst_example_loss(params, ex, ontology, 1.0, &grads);
  return max_rel_grad_error(
      params, [&](const ModelParams& p) { return dst_example_loss(p, ex, ontology, 1.0, nullptr); },
      grads, epsilon, n_coords, seed);
}

namespace {

struct Adam {
  ModelParams m, v;
  long step = 0;

  explicit Adam(const ModelParams& like)
      : m(ModelParams::zeros_like(like)), v(ModelParams::zeros_like(like)) {}

  void update(ModelParams& params, const ModelParams& grads, const TrainConfig& cfg, double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    auto ps = params.tensors();
    auto gs = grads.tensors();
    auto ms = m.tensors();
    auto vs = v.tensors();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      double* p = ps[i].second->data();
      const double* g = gs[i].second->data();
      double* mm = ms[i].second->data();
      double* vv = vs[i].second->data();
      const auto n = static_cast<std::size_t>(ps[i].second->size());
      for (std::size_t k = 0; k < n; ++k) {
        mm[k] = cfg.adam_beta1 * mm[k] + (1.0 - cfg.adam_beta1) * g[k];
        vv[k] = cfg.adam_beta2 * vv[k] + (1.0 - cfg.adam_beta2) * g[k] * g[k];
        p[k] -= lr * (mm[k] / bc1) / (std::sqrt(vv[k] / bc2) + cfg.adam_eps);
      }
    }
  }
};

}  // namespace

Checkpoint train(ModelParams params, const std::vector<TrainStage>& schedule,
                 const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint ckpt;
  for (std::size_t si = 0; si < schedule.size(); ++si) {
    const TrainStage& stage = schedule[si];
    const bool is_dst = stage.objective == Objective::dst;
    const std::size_t n_train = is_dst ? stage.dst_train.size() : stage.lm_train.size();
    if (n_train == 0) {
      throw ValidationError("training stage '" + stage.name + "' has an empty stream");
    }
    if (is_dst && stage.ontology == nullptr) {
      throw ValidationError("DST stage '" + stage.name + "' needs an ontology");
    }
    if (!stage.dev_score) {
      throw ValidationError("training stage '" + stage.name + "' has no dev scorer");
    }

    Adam adam(params);
    StageRecord record;
    record.name = stage.name;
    ModelParams best = params;
    double best_score = -std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= stage.max_epochs; ++epoch) {
      rng::Rng shuffle_rng(rng::derive(cfg.seed, "epoch_shuffle", stage.name, epoch));
      shuffle_rng.shuffle(order);
      double epoch_loss = 0.0;
      std::size_t n_batches = 0;
      for (std::size_t start = 0; start < n_train; start += stage.batch_size) {
        const std::size_t end = std::min(n_train, start + stage.batch_size);
        ModelParams grads = ModelParams::zeros_like(params);
        double loss;
        if (is_dst) {
          std::vector<const DstExample*> batch;
          for (std::size_t i = start; i < end; ++i) batch.push_back(&stage.dst_train[order[i]]);
          loss = dst_batch_loss(params, batch, *stage.ontology, &grads);
        } else {
          std::vector<const instances::TrainingInstance*> batch;
          for (std::size_t i = start; i < end; ++i) batch.push_back(&stage.lm_train[order[i]]);
          loss = lm_batch_loss(params, batch, stage.objective, &grads);
        }
        if (!std::isfinite(loss)) {
          throw ValidationError("training diverged (non-finite loss) in stage '" + stage.name +
                                "' epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(n_batches));
        }
        adam.update(params, grads, cfg, stage.learning_rate);
        epoch_loss += loss;
        ++n_batches;
      }
      record.train_loss_curve.push_back(epoch_loss / static_cast<double>(n_batches));

      const double score = stage.dev_score(params);
      record.dev_curve.push_back(score);
      record.epochs_run = epoch;
      if (score > best_score) {
        best_score = score;
        best = params;
        record.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
        if (since_best >= stage.patience) break;
      }
    }
    record.best_score = best_score;
    params = best;  // next stage continues from the best parameters
    ckpt.history.push_back(std::move(record));
  }
  ckpt.params = std::move(params);
  return ckpt;
}

std::function<double(const ModelParams&)> dev_loss_scorer(
    Objective objective, std::vector<instances::TrainingInstance> dev) {
  auto holder = std::make_shared<std::vector<instances::TrainingInstance>>(std::move(dev));
  return [holder, objective](const ModelParams& p) {
    std::vector<const instances::TrainingInstance*> batch;
    batch.reserve(holder->size());
    for (const auto& inst : *holder) batch.push_back(&inst);
    return -lm_batch_loss(p, batch, objective, nullptr);
  };
}

std::function<double(const ModelParams&)> dev_dst_scorer(std::vector<DstExample> dev,
                                                         const dialog::Ontology& ontology) {
  auto holder = std::make_shared<std::vector<DstExample>>(std::move(dev));
  const dialog::Ontology* ont = &ontology;
  return [holder, ont](const ModelParams& p) {
    std::vector<const DstExample*> batch;
    batch.reserve(holder->size());
    for (const auto& ex : *holder) batch.push_back(&ex);
    return -dst_batch_loss(p, batch, *ont, nullptr);
  };
}

namespace {

constexpr char kMagic[9] = "XTODCKPT";
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(d));
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ParseError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw ParseError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  const ModelConfig& cfg = ckpt.params.config;
  put_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(cfg.d_model));
  put_u32(out, static_cast<std::uint32_t>(cfg.d_ff));
  put_u32(out, static_cast<std::uint32_t>(cfg.max_len));

  const auto tensors = ckpt.params.tensors();
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_string(out, name);
    put_u64(out, static_cast<std::uint64_t>(t->rows()));
    put_u64(out, static_cast<std::uint64_t>(t->cols()));
    for (Eigen::Index i = 0; i < t->rows(); ++i) {
      for (Eigen::Index j = 0; j < t->cols(); ++j) put_f64(out, (*t)(i, j));
    }
  }

  put_u64(out, ckpt.history.size());
  for (const auto& rec : ckpt.history) {
    put_string(out, rec.name);
    put_u32(out, static_cast<std::uint32_t>(rec.epochs_run));
    put_u32(out, static_cast<std::uint32_t>(rec.best_epoch));
    put_f64(out, rec.best_score);
    put_u64(out, rec.dev_curve.size());
    for (double v : rec.dev_curve) put_f64(out, v);
    put_u64(out, rec.train_loss_curve.size());
    for (double v : rec.train_loss_curve) put_f64(out, v);
  }
  put_string(out, ckpt.provenance);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("not a checkpoint file");
  if (get_u32(in) != kVersion) throw ParseError("unsupported checkpoint version");

  Checkpoint ckpt;
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(get_u32(in));
  cfg.d_model = static_cast<int>(get_u32(in));
  cfg.d_ff = static_cast<int>(get_u32(in));
  cfg.max_len = static_cast<int>(get_u32(in));
  ckpt.params.config = cfg;

  const std::uint64_t n_tensors = get_u64(in);
  for (std::uint64_t k = 0; k < n_tensors; ++k) {
    const std::string name = get_string(in);
    const auto rows = static_cast<Eigen::Index>(get_u64(in));
    const auto cols = static_cast<Eigen::Index>(get_u64(in));
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get_f64(in);
    }
    if (name.rfind("dst:", 0) == 0) {
      const auto colon = name.rfind(':');
      const std::string keyname = name.substr(4, colon - 4);
      const dialog::SlotKey key = dialog::split_slot_name(keyname);
      if (name.substr(colon + 1) == "w") {
        ckpt.params.dst_heads[key].w = std::move(m);
      } else {
        ckpt.params.dst_heads[key].b = std::move(m);
      }
      continue;
    }
    bool placed = false;
    for (auto& [tname, t] : ckpt.params.tensors()) {
      if (tname == name) {
        *t = std::move(m);
        placed = true;
        break;
      }
    }
    if (!placed) throw ParseError("unknown tensor '" + name + "' in checkpoint");
  }

  const std::uint64_t n_records = get_u64(in);
  for (std::uint64_t k = 0; k < n_records; ++k) {
    StageRecord rec;
    rec.name = get_string(in);
    rec.epochs_run = static_cast<int>(get_u32(in));
    rec.best_epoch = static_cast<int>(get_u32(in));
    rec.best_score = get_f64(in);
    const std::uint64_t nd = get_u64(in);
    for (std::uint64_t i = 0; i < nd; ++i) rec.dev_curve.push_back(get_f64(in));
    const std::uint64_t nt = get_u64(in);
    for (std::uint64_t i = 0; i < nt; ++i) rec.train_loss_curve.push_back(get_f64(in));
    ckpt.history.push_back(std::move(rec));
  }
  ckpt.provenance = get_string(in);
  return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint " + path);
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(out, ckpt);
  return out.str();
}

CandidateRanking score_candidates(const ModelParams& params, const tokenizer::Vocab& vocab,
                                  const std::string& context,
                                  const std::vector<std::string>& candidates,
                                  std::size_t per_side_max) {
  CandidateRanking r;
  r.probs.reserve(candidates.size());
  for (const auto& cand : candidates) {
    instances::TrainingInstance inst;
    inst.kind = instances::InstanceKind::rs;
    inst.tokens = tokenizer::encode_pair(context, cand, vocab, per_side_max);
    r.probs.push_back(forward_rs(params, inst).prob_true);
  }
  r.order.resize(candidates.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    return r.probs[a] > r.probs[b];  // stable: equal probs keep index order
  });
  return r;
}

}  // namespace xtod::encoder

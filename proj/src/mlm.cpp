#include "vocmix/mlm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"
#include "vocmix/rng.hpp"

namespace vocmix {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_prime(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Row-wise layer normalization with learned gain/bias.
MatrixXd layernorm_rows(const MatrixXd& x, const VectorXd& g, const VectorXd& b, VectorXd& mean,
                        VectorXd& inv_std) {
  const Index rows = x.rows();
  const Index d = x.cols();
  mean.resize(rows);
  inv_std.resize(rows);
  MatrixXd out(rows, d);
  for (Index t = 0; t < rows; ++t) {
    const double mu = x.row(t).mean();
    const double var = (x.row(t).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    mean(t) = mu;
    inv_std(t) = is;
    const Eigen::ArrayXd xhat = (x.row(t).transpose().array() - mu) * is;
    out.row(t) = (xhat * g.array() + b.array()).matrix().transpose();
  }
  return out;
}

MatrixXd layernorm_backward_rows(const MatrixXd& x, const VectorXd& g, const VectorXd& mean,
                                 const VectorXd& inv_std, const MatrixXd& dy, VectorXd& dg,
                                 VectorXd& db) {
  const Index rows = x.rows();
  const Index d = x.cols();
  MatrixXd dx(rows, d);
  for (Index t = 0; t < rows; ++t) {
    const Eigen::ArrayXd xhat = (x.row(t).transpose().array() - mean(t)) * inv_std(t);
    const Eigen::ArrayXd dyr = dy.row(t).transpose().array();
    dg.array() += dyr * xhat;
    db.array() += dyr;
    const Eigen::ArrayXd dxhat = dyr * g.array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(t) = (inv_std(t) * (dxhat - m1 - xhat * m2)).matrix().transpose();
  }
  return dx;
}

MatrixXd softmax_rows(const MatrixXd& scores) {
  MatrixXd out(scores.rows(), scores.cols());
  for (Index t = 0; t < scores.rows(); ++t) {
    const double mx = scores.row(t).maxCoeff();
    const Eigen::RowVectorXd e = (scores.row(t).array() - mx).exp().matrix();
    out.row(t) = e / e.sum();
  }
  return out;
}

struct TensorRef {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  Index size() const { return rows * cols; }
};

std::vector<TensorRef> collect(MlmParams& p) {
  std::vector<TensorRef> refs;
  p.for_each_tensor([&](const std::string& name, double* data, Index rows, Index cols) {
    refs.push_back({name, data, rows, cols});
  });
  return refs;
}

}  // namespace

void MlmArch::validate() const {
  if (width <= 0 || blocks <= 0 || heads <= 0 || ff_mult <= 0 || max_seq <= 0) {
    throw ValidationError("architecture dimensions must be positive");
  }
  if (width % heads != 0) {
    throw ValidationError("width must be divisible by heads");
  }
}

void MlmConfig::validate() const {
  if (mask_probability < 0.0 || mask_probability > 1.0) {
    throw ValidationError("mask_probability must lie in [0, 1]");
  }
  const double split_sum = mask_split[0] + mask_split[1] + mask_split[2];
  if (std::abs(split_sum - 1.0) > 1e-12 || mask_split[0] < 0 || mask_split[1] < 0 ||
      mask_split[2] < 0) {
    throw ValidationError("mask_split must be non-negative and sum to 1");
  }
  if (!(peak_lr > 0.0)) throw ValidationError("peak_lr must be positive");
  if (warmup_steps <= 0) throw ValidationError("warmup_steps must be positive");
  if (max_epochs <= 0) throw ValidationError("max_epochs must be positive");
  if (a < 0.0) throw ValidationError("multiplier a must be non-negative");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
}

Vocabulary ensure_mlm_specials(const Vocabulary& vocab) {
  std::vector<std::string> entries = vocab.entries();
  if (!vocab.contains(kMaskPiece)) entries.emplace_back(kMaskPiece);
  if (!vocab.contains(kPadPiece)) entries.emplace_back(kPadPiece);
  if (entries.size() == vocab.size()) return vocab;
  Vocabulary out(std::move(entries), vocab.unk(), vocab.continuation_prefix());
  out.set_metadata(vocab.metadata());
  return out;
}

MlmParams MlmParams::zeros_like(const MlmParams& shape) {
  MlmParams out;
  out.embeddings = MatrixXd::Zero(shape.embeddings.rows(), shape.embeddings.cols());
  out.positional = MatrixXd::Zero(shape.positional.rows(), shape.positional.cols());
  out.blocks.resize(shape.blocks.size());
  for (size_t i = 0; i < shape.blocks.size(); ++i) {
    const BlockParams& b = shape.blocks[i];
    BlockParams& z = out.blocks[i];
    z.wq = MatrixXd::Zero(b.wq.rows(), b.wq.cols());
    z.wk = MatrixXd::Zero(b.wk.rows(), b.wk.cols());
    z.wv = MatrixXd::Zero(b.wv.rows(), b.wv.cols());
    z.wo = MatrixXd::Zero(b.wo.rows(), b.wo.cols());
    z.bq = VectorXd::Zero(b.bq.size());
    z.bk = VectorXd::Zero(b.bk.size());
    z.bv = VectorXd::Zero(b.bv.size());
    z.bo = VectorXd::Zero(b.bo.size());
    z.ln1_g = VectorXd::Zero(b.ln1_g.size());
    z.ln1_b = VectorXd::Zero(b.ln1_b.size());
    z.ln2_g = VectorXd::Zero(b.ln2_g.size());
    z.ln2_b = VectorXd::Zero(b.ln2_b.size());
    z.w1 = MatrixXd::Zero(b.w1.rows(), b.w1.cols());
    z.b1 = VectorXd::Zero(b.b1.size());
    z.w2 = MatrixXd::Zero(b.w2.rows(), b.w2.cols());
    z.b2 = VectorXd::Zero(b.b2.size());
  }
  out.ln_f_g = VectorXd::Zero(shape.ln_f_g.size());
  out.ln_f_b = VectorXd::Zero(shape.ln_f_b.size());
  out.output_bias = VectorXd::Zero(shape.output_bias.size());
  return out;
}

namespace {

template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& f) {
  f("embeddings", p.embeddings.data(), p.embeddings.rows(), p.embeddings.cols());
  f("positional", p.positional.data(), p.positional.rows(), p.positional.cols());
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string base = "block" + std::to_string(i) + ".";
    f(base + "wq", b.wq.data(), b.wq.rows(), b.wq.cols());
    f(base + "bq", b.bq.data(), b.bq.size(), Index{1});
    f(base + "wk", b.wk.data(), b.wk.rows(), b.wk.cols());
    f(base + "bk", b.bk.data(), b.bk.size(), Index{1});
    f(base + "wv", b.wv.data(), b.wv.rows(), b.wv.cols());
    f(base + "bv", b.bv.data(), b.bv.size(), Index{1});
    f(base + "wo", b.wo.data(), b.wo.rows(), b.wo.cols());
    f(base + "bo", b.bo.data(), b.bo.size(), Index{1});
    f(base + "ln1_g", b.ln1_g.data(), b.ln1_g.size(), Index{1});
    f(base + "ln1_b", b.ln1_b.data(), b.ln1_b.size(), Index{1});
    f(base + "w1", b.w1.data(), b.w1.rows(), b.w1.cols());
    f(base + "b1", b.b1.data(), b.b1.size(), Index{1});
    f(base + "w2", b.w2.data(), b.w2.rows(), b.w2.cols());
    f(base + "b2", b.b2.data(), b.b2.size(), Index{1});
    f(base + "ln2_g", b.ln2_g.data(), b.ln2_g.size(), Index{1});
    f(base + "ln2_b", b.ln2_b.data(), b.ln2_b.size(), Index{1});
  }
  f("ln_f_g", p.ln_f_g.data(), p.ln_f_g.size(), Index{1});
  f("ln_f_b", p.ln_f_b.data(), p.ln_f_b.size(), Index{1});
  f("output_bias", p.output_bias.data(), p.output_bias.size(), Index{1});
}

}  // namespace

void MlmParams::for_each_tensor(
    const std::function<void(const std::string&, double*, Index, Index)>& f) {
  visit_tensors(*this, f);
}

void MlmParams::for_each_tensor(
    const std::function<void(const std::string&, const double*, Index, Index)>& f) const {
  visit_tensors(*this, [&](const std::string& name, const double* data, Index rows, Index cols) {
    f(name, data, rows, cols);
  });
}

MlmState MlmState::fresh(const Vocabulary& vocab, const MlmArch& arch, uint64_t seed,
                         double init_scale) {
  arch.validate();
  if (!vocab.contains(kMaskPiece) || !vocab.contains(kPadPiece)) {
    throw ValidationError("vocabulary lacks [MASK]/[PAD]; call ensure_mlm_specials first");
  }
  const auto v = static_cast<Index>(vocab.size());
  const Index d = arch.width;
  const Index ff = static_cast<Index>(arch.ff_mult) * d;

  MlmState state;
  state.arch = arch;
  state.vocab_digest = vocab.digest();
  state.new_row_start = v;

  Rng rng(derive_seed(seed, "mlm-init"));
  auto fill = [&](MatrixXd& m, Index rows, Index cols) {
    m.resize(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) {
        m(i, j) = rng.normal() * init_scale;
      }
    }
  };
  fill(state.params.embeddings, v, d);
  fill(state.params.positional, arch.max_seq, d);
  state.params.blocks.resize(static_cast<size_t>(arch.blocks));
  for (auto& b : state.params.blocks) {
    fill(b.wq, d, d);
    fill(b.wk, d, d);
    fill(b.wv, d, d);
    fill(b.wo, d, d);
    b.bq = VectorXd::Zero(d);
    b.bk = VectorXd::Zero(d);
    b.bv = VectorXd::Zero(d);
    b.bo = VectorXd::Zero(d);
    b.ln1_g = VectorXd::Ones(d);
    b.ln1_b = VectorXd::Zero(d);
    fill(b.w1, d, ff);
    b.b1 = VectorXd::Zero(ff);
    fill(b.w2, ff, d);
    b.b2 = VectorXd::Zero(d);
    b.ln2_g = VectorXd::Ones(d);
    b.ln2_b = VectorXd::Zero(d);
  }
  state.params.ln_f_g = VectorXd::Ones(d);
  state.params.ln_f_b = VectorXd::Zero(d);
  state.params.output_bias = VectorXd::Zero(v);
  return state;
}

MlmState init_extended(const MlmState& base, const Vocabulary& base_vocab,
                       const AugmentationPlan& plan, InitPolicy policy, double noise_scale,
                       uint64_t seed) {
  if (base_vocab.digest() != base.vocab_digest ||
      static_cast<Index>(base_vocab.size()) != base.vocab_size()) {
    throw ValidationError("state/vocabulary mismatch in init_extended");
  }
  const Index old_rows = base.params.embeddings.rows();
  const Index d = base.params.embeddings.cols();
  const auto added = static_cast<Index>(plan.selected.size());

  MlmState out = base;
  out.params.embeddings.conservativeResize(old_rows + added, d);
  out.params.output_bias.conservativeResize(old_rows + added);
  out.params.output_bias.tail(added).setZero();

  const VectorXd mean_row = base.params.embeddings.colwise().mean().transpose();
  Rng rng(derive_seed(seed, "init-extended"));
  for (Index r = 0; r < added; ++r) {
    for (Index j = 0; j < d; ++j) {
      const double noise = rng.normal() * noise_scale;
      out.params.embeddings(old_rows + r, j) =
          (policy == InitPolicy::kMeanPlusNoise) ? mean_row(j) + noise : noise;
    }
  }
  if (base.new_row_start == old_rows) {
    out.new_row_start = old_rows;  // first extension
  } else {
    out.new_row_start = base.new_row_start;  // keep the original boundary
  }
  const Vocabulary extended = apply_augmentation(base_vocab, plan);
  if (static_cast<Index>(extended.size()) != old_rows + added) {
    throw ValidationError("plan/vocabulary size mismatch: some plan piece already present");
  }
  out.vocab_digest = extended.digest();
  return out;
}

MaskedBatch mask_batch(const std::vector<std::vector<int>>& token_ids, const MlmConfig& config,
                       uint64_t step_seed, int vocab_size, int mask_id) {
  config.validate();
  if (token_ids.empty()) {
    throw ValidationError("mask_batch requires a non-empty batch");
  }
  if (mask_id < 0 || mask_id >= vocab_size) {
    throw ValidationError("mask id out of range");
  }
  Rng rng(step_seed);
  MaskedBatch out;
  out.inputs.reserve(token_ids.size());
  out.labels.reserve(token_ids.size());
  const double p_mask = config.mask_split[0];
  const double p_random = config.mask_split[1];
  for (const auto& seq : token_ids) {
    std::vector<int> inputs = seq;
    std::vector<int> labels(seq.size(), kIgnoreLabel);
    for (size_t t = 0; t < seq.size(); ++t) {
      if (rng.uniform01() >= config.mask_probability) continue;
      labels[t] = seq[t];
      const double roll = rng.uniform01();
      if (roll < p_mask) {
        inputs[t] = mask_id;
      } else if (roll < p_mask + p_random) {
        inputs[t] = static_cast<int>(rng.bounded(static_cast<uint64_t>(vocab_size)));
      }  // else keep the original id
    }
    out.inputs.push_back(std::move(inputs));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

MatrixXd encoder_forward(const MlmState& state, std::span<const int> ids, SeqCache* cache) {
  const auto t_len = static_cast<Index>(ids.size());
  if (t_len == 0) throw ValidationError("encoder_forward requires a non-empty sequence");
  if (t_len > state.arch.max_seq) {
    throw ValidationError("sequence exceeds the architecture cap of " +
                          std::to_string(state.arch.max_seq) + " pieces");
  }
  const Index d = state.arch.width;
  const Index heads = state.arch.heads;
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  SeqCache local;
  SeqCache& c = cache != nullptr ? *cache : local;
  c.ids.assign(ids.begin(), ids.end());
  c.blocks.clear();
  c.blocks.resize(state.params.blocks.size());

  c.x0.resize(t_len, d);
  for (Index t = 0; t < t_len; ++t) {
    const int id = ids[static_cast<size_t>(t)];
    if (id < 0 || id >= state.vocab_size()) {
      throw ValidationError("piece id out of range: " + std::to_string(id));
    }
    c.x0.row(t) = state.params.embeddings.row(id) + state.params.positional.row(t);
  }

  MatrixXd x = c.x0;
  for (size_t bi = 0; bi < state.params.blocks.size(); ++bi) {
    const BlockParams& b = state.params.blocks[bi];
    BlockCache& bc = c.blocks[bi];
    bc.x_in = x;
    bc.n1 = layernorm_rows(x, b.ln1_g, b.ln1_b, bc.mean1, bc.inv_std1);
    bc.q = (bc.n1 * b.wq).rowwise() + b.bq.transpose();
    bc.k = (bc.n1 * b.wk).rowwise() + b.bk.transpose();
    bc.v = (bc.n1 * b.wv).rowwise() + b.bv.transpose();
    bc.heads_out.resize(t_len, d);
    bc.attn.resize(static_cast<size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      const auto qh = bc.q.middleCols(h * dh, dh);
      const auto kh = bc.k.middleCols(h * dh, dh);
      const auto vh = bc.v.middleCols(h * dh, dh);
      const MatrixXd scores = qh * kh.transpose() * scale;
      bc.attn[static_cast<size_t>(h)] = softmax_rows(scores);
      bc.heads_out.middleCols(h * dh, dh) = bc.attn[static_cast<size_t>(h)] * vh;
    }
    x = bc.x_in + ((bc.heads_out * b.wo).rowwise() + b.bo.transpose());
    bc.x_mid = x;
    bc.n2 = layernorm_rows(x, b.ln2_g, b.ln2_b, bc.mean2, bc.inv_std2);
    bc.h_pre = (bc.n2 * b.w1).rowwise() + b.b1.transpose();
    bc.h_act = bc.h_pre.unaryExpr([](double v) { return gelu(v); });
    x = bc.x_mid + ((bc.h_act * b.w2).rowwise() + b.b2.transpose());
  }
  c.x_pre_final = x;
  c.hidden = layernorm_rows(x, state.params.ln_f_g, state.params.ln_f_b, c.mean_f, c.inv_std_f);
  return c.hidden;
}

void encoder_backward(const MlmState& state, const SeqCache& cache, const MatrixXd& d_hidden,
                      MlmParams& grads) {
  const auto t_len = static_cast<Index>(cache.ids.size());
  const Index d = state.arch.width;
  const Index heads = state.arch.heads;
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd dx = layernorm_backward_rows(cache.x_pre_final, state.params.ln_f_g, cache.mean_f,
                                        cache.inv_std_f, d_hidden, grads.ln_f_g, grads.ln_f_b);

  for (size_t bi = state.params.blocks.size(); bi-- > 0;) {
    const BlockParams& b = state.params.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];
    BlockParams& gb = grads.blocks[bi];

    // MLP branch: x = x_mid + gelu(n2 w1 + b1) w2 + b2
    const MatrixXd& d_mlp_out = dx;
    gb.w2 += bc.h_act.transpose() * d_mlp_out;
    gb.b2 += d_mlp_out.colwise().sum().transpose();
    MatrixXd d_h_act = d_mlp_out * b.w2.transpose();
    MatrixXd d_h_pre =
        d_h_act.cwiseProduct(bc.h_pre.unaryExpr([](double v) { return gelu_prime(v); }));
    gb.w1 += bc.n2.transpose() * d_h_pre;
    gb.b1 += d_h_pre.colwise().sum().transpose();
    const MatrixXd d_n2 = d_h_pre * b.w1.transpose();
    MatrixXd d_x_mid = dx + layernorm_backward_rows(bc.x_mid, b.ln2_g, bc.mean2, bc.inv_std2,
                                                    d_n2, gb.ln2_g, gb.ln2_b);

    // Attention branch: x_mid = x_in + (heads_out wo + bo)
    const MatrixXd& d_attn_proj = d_x_mid;
    gb.wo += bc.heads_out.transpose() * d_attn_proj;
    gb.bo += d_attn_proj.colwise().sum().transpose();
    const MatrixXd d_heads_out = d_attn_proj * b.wo.transpose();

    MatrixXd dq = MatrixXd::Zero(t_len, d);
    MatrixXd dk = MatrixXd::Zero(t_len, d);
    MatrixXd dv = MatrixXd::Zero(t_len, d);
    for (Index h = 0; h < heads; ++h) {
      const auto qh = bc.q.middleCols(h * dh, dh);
      const auto kh = bc.k.middleCols(h * dh, dh);
      const auto vh = bc.v.middleCols(h * dh, dh);
      const MatrixXd& a = bc.attn[static_cast<size_t>(h)];
      const auto d_oh = d_heads_out.middleCols(h * dh, dh);
      const MatrixXd d_a = d_oh * vh.transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * d_oh;
      // softmax backward per row
      MatrixXd d_scores(t_len, t_len);
      for (Index t = 0; t < t_len; ++t) {
        const double dot = d_a.row(t).dot(a.row(t));
        d_scores.row(t) = (a.row(t).array() * (d_a.row(t).array() - dot)).matrix();
      }
      dq.middleCols(h * dh, dh) = d_scores * kh * scale;
      dk.middleCols(h * dh, dh) = d_scores.transpose() * qh * scale;
    }

    gb.wq += bc.n1.transpose() * dq;
    gb.bq += dq.colwise().sum().transpose();
    gb.wk += bc.n1.transpose() * dk;
    gb.bk += dk.colwise().sum().transpose();
    gb.wv += bc.n1.transpose() * dv;
    gb.bv += dv.colwise().sum().transpose();
    const MatrixXd d_n1 = dq * b.wq.transpose() + dk * b.wk.transpose() + dv * b.wv.transpose();
    dx = d_x_mid + layernorm_backward_rows(bc.x_in, b.ln1_g, bc.mean1, bc.inv_std1, d_n1,
                                           gb.ln1_g, gb.ln1_b);
  }

  for (Index t = 0; t < t_len; ++t) {
    grads.embeddings.row(cache.ids[static_cast<size_t>(t)]) += dx.row(t);
    grads.positional.row(t) += dx.row(t);
  }
}

std::optional<LossResult> mlm_loss(const MlmState& state, const MaskedBatch& batch) {
  if (batch.inputs.size() != batch.labels.size()) {
    throw ValidationError("masked batch inputs/labels shape mismatch");
  }
  uint64_t total_labeled = 0;
  for (size_t s = 0; s < batch.inputs.size(); ++s) {
    if (batch.inputs[s].size() != batch.labels[s].size()) {
      throw ValidationError("masked batch inputs/labels shape mismatch");
    }
    for (const int label : batch.labels[s]) {
      if (label != kIgnoreLabel) ++total_labeled;
    }
  }
  if (total_labeled == 0) return std::nullopt;

  LossResult result;
  result.labeled_positions = total_labeled;
  result.grads = MlmParams::zeros_like(state.params);
  const double inv_n = 1.0 / static_cast<double>(total_labeled);
  double loss_sum = 0.0;

  for (size_t s = 0; s < batch.inputs.size(); ++s) {
    const auto& input_ids = batch.inputs[s];
    const auto& labels = batch.labels[s];
    SeqCache cache;
    const MatrixXd hidden = encoder_forward(state, input_ids, &cache);
    const auto t_len = static_cast<Index>(input_ids.size());

    // Tied projection: logits = hidden E^T + output_bias
    MatrixXd d_logits = MatrixXd::Zero(t_len, state.vocab_size());
    bool any = false;
    for (Index t = 0; t < t_len; ++t) {
      const int label = labels[static_cast<size_t>(t)];
      if (label == kIgnoreLabel) continue;
      if (label < 0 || label >= state.vocab_size()) {
        throw ValidationError("label id out of range");
      }
      any = true;
      VectorXd logits = state.params.embeddings * hidden.row(t).transpose() +
                        state.params.output_bias;
      const double mx = logits.maxCoeff();
      const double lse = mx + std::log((logits.array() - mx).exp().sum());
      loss_sum += (lse - logits(label)) * inv_n;
      VectorXd softmax = (logits.array() - lse).exp().matrix();
      softmax(label) -= 1.0;
      d_logits.row(t) = softmax.transpose() * inv_n;
    }
    if (!any) continue;

    const MatrixXd d_hidden = d_logits * state.params.embeddings;
    result.grads.embeddings += d_logits.transpose() * hidden;
    result.grads.output_bias += d_logits.colwise().sum().transpose();
    encoder_backward(state, cache, d_hidden, result.grads);
  }
  result.loss = loss_sum;
  return result;
}

double lr_at(int64_t step, const MlmConfig& config) {
  if (step < 1) throw ValidationError("lr_at requires step >= 1");
  const double ratio =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(config.warmup_steps));
  return config.peak_lr * ratio;
}

void sgd_update(MlmState& state, const MlmParams& grads, double lr, double a) {
  MlmParams& p = state.params;
  const Index rows = p.embeddings.rows();
  const Index split = std::min(state.new_row_start, rows);
  p.embeddings.topRows(split) -= lr * grads.embeddings.topRows(split);
  if (rows > split) {
    p.embeddings.bottomRows(rows - split) -= (a * lr) * grads.embeddings.bottomRows(rows - split);
  }
  p.positional -= lr * grads.positional;
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    BlockParams& pb = p.blocks[i];
    const BlockParams& gb = grads.blocks[i];
    pb.wq -= lr * gb.wq;
    pb.bq -= lr * gb.bq;
    pb.wk -= lr * gb.wk;
    pb.bk -= lr * gb.bk;
    pb.wv -= lr * gb.wv;
    pb.bv -= lr * gb.bv;
    pb.wo -= lr * gb.wo;
    pb.bo -= lr * gb.bo;
    pb.ln1_g -= lr * gb.ln1_g;
    pb.ln1_b -= lr * gb.ln1_b;
    pb.w1 -= lr * gb.w1;
    pb.b1 -= lr * gb.b1;
    pb.w2 -= lr * gb.w2;
    pb.b2 -= lr * gb.b2;
    pb.ln2_g -= lr * gb.ln2_g;
    pb.ln2_b -= lr * gb.ln2_b;
  }
  p.ln_f_g -= lr * grads.ln_f_g;
  p.ln_f_b -= lr * grads.ln_f_b;
  p.output_bias -= lr * grads.output_bias;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& [step, lr] : lr_trace) {
    trace.push_back({step, lr});
  }
  return nlohmann::json{{"schema", "vocmix.train-report/1"},
                        {"train_loss", train_loss},
                        {"valid_loss", valid_loss},
                        {"selected_epoch", selected_epoch},
                        {"lr_trace", std::move(trace)}};
}

std::vector<std::vector<int>> encode_corpus(const Vocabulary& vocab, const Corpus& corpus,
                                            int max_seq) {
  std::vector<std::vector<int>> sequences;
  sequences.reserve(corpus.sentences.size());
  for (const auto& sentence : corpus.sentences) {
    std::vector<int> ids;
    for (const auto& word : basic_tokenize(sentence).tokens) {
      for (const auto& piece : tokenize_word(vocab, word).pieces) {
        const auto id = vocab.id_of(piece);
        ids.push_back(static_cast<int>(*id));
        if (static_cast<int>(ids.size()) >= max_seq) break;
      }
      if (static_cast<int>(ids.size()) >= max_seq) break;
    }
    if (!ids.empty()) sequences.push_back(std::move(ids));
  }
  return sequences;
}

namespace {

std::string batch_digest(const MaskedBatch& batch) {
  std::string bytes;
  for (const auto& seq : batch.inputs) {
    for (const int id : seq) {
      bytes.append(reinterpret_cast<const char*>(&id), sizeof(id));
    }
    bytes.push_back('\n');
  }
  return sha256_hex(bytes);
}

struct AdamSlots {
  MlmParams m;
  MlmParams v;
  int64_t t = 0;
};

void adam_step(MlmState& state, MlmParams& grads, AdamSlots& slots, double lr, double a,
               const MlmConfig& config) {
  ++slots.t;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(slots.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(slots.t));
  auto state_refs = collect(state.params);
  auto grad_refs = collect(grads);
  auto m_refs = collect(slots.m);
  auto v_refs = collect(slots.v);
  for (size_t i = 0; i < state_refs.size(); ++i) {
    TensorRef& p = state_refs[i];
    TensorRef& g = grad_refs[i];
    TensorRef& m = m_refs[i];
    TensorRef& v = v_refs[i];
    const bool is_emb = p.name == "embeddings" && state.new_row_start < p.rows;
    for (Index idx = 0; idx < p.size(); ++idx) {
      m.data[idx] = b1 * m.data[idx] + (1.0 - b1) * g.data[idx];
      v.data[idx] = b2 * v.data[idx] + (1.0 - b2) * g.data[idx] * g.data[idx];
      const double mhat = m.data[idx] / bias1;
      const double vhat = v.data[idx] / bias2;
      double rate = lr;
      if (is_emb) {
        const Index row = idx % p.rows;  // column-major
        if (row >= state.new_row_start) rate = a * lr;
      }
      p.data[idx] -= rate * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

double evaluate_loss(const MlmState& state, const std::vector<std::vector<int>>& sequences,
                     const MlmConfig& config, int vocab_size, int mask_id, uint64_t mask_seed) {
  double loss_sum = 0.0;
  uint64_t labeled = 0;
  const size_t batch = static_cast<size_t>(config.batch_size);
  size_t batch_index = 0;
  for (size_t start = 0; start < sequences.size(); start += batch, ++batch_index) {
    const size_t end = std::min(sequences.size(), start + batch);
    std::vector<std::vector<int>> ids(sequences.begin() + static_cast<ptrdiff_t>(start),
                                      sequences.begin() + static_cast<ptrdiff_t>(end));
    const MaskedBatch masked =
        mask_batch(ids, config, derive_seed(mask_seed, "valid-batch", batch_index), vocab_size,
                   mask_id);
    const auto result = mlm_loss(state, masked);
    if (!result.has_value()) continue;
    loss_sum += result->loss * static_cast<double>(result->labeled_positions);
    labeled += result->labeled_positions;
  }
  if (labeled == 0) {
    throw ValidationError("validation produced no labeled positions; corpus too small");
  }
  return loss_sum / static_cast<double>(labeled);
}

}  // namespace

std::pair<MlmState, TrainReport> train(const MlmState& initial, const Corpus& train_corpus,
                                       const Corpus& valid_corpus, const Vocabulary& vocab,
                                       const MlmConfig& config) {
  config.validate();
  if (train_corpus.sentences.empty() || valid_corpus.sentences.empty()) {
    throw ValidationError("training and validation corpora must be non-empty");
  }
  if (vocab.digest() != initial.vocab_digest ||
      static_cast<Index>(vocab.size()) != initial.vocab_size()) {
    throw ValidationError("state/vocabulary mismatch in train");
  }
  const auto mask_id_opt = vocab.id_of(kMaskPiece);
  if (!mask_id_opt.has_value()) {
    throw ValidationError("vocabulary lacks [MASK]; call ensure_mlm_specials first");
  }
  const int mask_id = static_cast<int>(*mask_id_opt);
  const int vocab_size = static_cast<int>(vocab.size());

  const auto train_seqs = encode_corpus(vocab, train_corpus, initial.arch.max_seq);
  const auto valid_seqs = encode_corpus(vocab, valid_corpus, initial.arch.max_seq);
  if (train_seqs.empty() || valid_seqs.empty()) {
    throw ValidationError("no usable sequences after encoding");
  }

  MlmState state = initial;
  TrainReport report;
  AdamSlots adam;
  if (config.optimizer == MlmConfig::Optimizer::kAdaptive) {
    adam.m = MlmParams::zeros_like(state.params);
    adam.v = MlmParams::zeros_like(state.params);
  }

  MlmState best_state = state;
  double best_valid = std::numeric_limits<double>::infinity();
  int64_t step = 0;
  uint64_t batch_counter = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<size_t> order(train_seqs.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, "epoch-order", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.bounded(i));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss_sum = 0.0;
    uint64_t epoch_labeled = 0;
    const size_t batch = static_cast<size_t>(config.batch_size);
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t end = std::min(order.size(), start + batch);
      std::vector<std::vector<int>> ids;
      ids.reserve(end - start);
      for (size_t i = start; i < end; ++i) ids.push_back(train_seqs[order[i]]);
      const MaskedBatch masked = mask_batch(
          ids, config, derive_seed(config.seed, "mask", batch_counter++), vocab_size, mask_id);
      auto result = mlm_loss(state, masked);
      if (!result.has_value()) continue;
      if (!std::isfinite(result->loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step + 1) + ", lr " +
                            std::to_string(lr_at(step + 1, config)) + ", batch sha256:" +
                            batch_digest(masked));
      }
      ++step;
      const double lr = lr_at(step, config);
      if (config.optimizer == MlmConfig::Optimizer::kSgd) {
        sgd_update(state, result->grads, lr, config.a);
      } else {
        adam_step(state, result->grads, adam, lr, config.a, config);
      }
      report.lr_trace.emplace_back(step, lr);
      epoch_loss_sum += result->loss * static_cast<double>(result->labeled_positions);
      epoch_labeled += result->labeled_positions;
    }
    if (epoch_labeled == 0) {
      throw ValidationError("epoch " + std::to_string(epoch) +
                            " produced no labeled positions; raise mask_probability");
    }
    report.train_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_labeled));

    const double valid = evaluate_loss(state, valid_seqs, config, vocab_size, mask_id,
                                       derive_seed(config.seed, "valid-mask"));
    report.valid_loss.push_back(valid);
    if (valid < best_valid) {
      best_valid = valid;
      best_state = state;
      report.selected_epoch = epoch;
    }
  }
  return {std::move(best_state), std::move(report)};
}

namespace {

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double d) {
  put_u64_le(out, std::bit_cast<uint64_t>(d));
}

constexpr char kCheckpointMagic[8] = {'V', 'M', 'I', 'X', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const MlmState& state, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  state.params.for_each_tensor(
      [&](const std::string& name, const double*, Index rows, Index cols) {
        tensors.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
      });
  const nlohmann::json header{{"version", 1},
                              {"arch",
                               {{"width", state.arch.width},
                                {"blocks", state.arch.blocks},
                                {"heads", state.arch.heads},
                                {"ff_mult", state.arch.ff_mult},
                                {"max_seq", state.arch.max_seq}}},
                              {"vocab_digest", state.vocab_digest},
                              {"new_row_start", state.new_row_start},
                              {"layout", "col-major"},
                              {"dtype", "f64le"},
                              {"tensors", std::move(tensors)}};
  const std::string header_str = header.dump();

  std::string blob;
  blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64_le(blob, header_str.size());
  blob += header_str;
  state.params.for_each_tensor([&](const std::string&, const double* data, Index rows,
                                   Index cols) {
    for (Index i = 0; i < rows * cols; ++i) put_f64_le(blob, data[i]);
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write checkpoint: " + path.string());
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw IoError("write failure on checkpoint: " + path.string());
  }
}

MlmState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read checkpoint: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string blob = buffer.str();
  if (blob.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ParseError("not a checkpoint file: " + path.string());
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const uint64_t header_len = get_u64_le(bytes + sizeof(kCheckpointMagic));
  const size_t header_off = sizeof(kCheckpointMagic) + 8;
  if (header_off + header_len > blob.size()) {
    throw ParseError("truncated checkpoint header: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(header_off, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid checkpoint header: " + std::string(e.what()));
  }

  MlmState state;
  state.arch.width = header.at("arch").at("width").get<int>();
  state.arch.blocks = header.at("arch").at("blocks").get<int>();
  state.arch.heads = header.at("arch").at("heads").get<int>();
  state.arch.ff_mult = header.at("arch").at("ff_mult").get<int>();
  state.arch.max_seq = header.at("arch").at("max_seq").get<int>();
  state.arch.validate();
  state.vocab_digest = header.at("vocab_digest").get<std::string>();
  state.new_row_start = header.at("new_row_start").get<Index>();

  // Allocate tensors from the header directory, then check against the
  // canonical visit order.
  const auto& tensor_list = header.at("tensors");
  const Index d = state.arch.width;
  const Index ff = static_cast<Index>(state.arch.ff_mult) * d;
  Index vocab_rows = 0;
  for (const auto& t : tensor_list) {
    if (t.at("name") == "embeddings") vocab_rows = t.at("rows").get<Index>();
  }
  if (vocab_rows <= 0) {
    throw ParseError("checkpoint lacks the embeddings tensor");
  }
  state.params.embeddings.resize(vocab_rows, d);
  state.params.positional.resize(state.arch.max_seq, d);
  state.params.blocks.resize(static_cast<size_t>(state.arch.blocks));
  for (auto& b : state.params.blocks) {
    b.wq.resize(d, d);
    b.wk.resize(d, d);
    b.wv.resize(d, d);
    b.wo.resize(d, d);
    b.bq.resize(d);
    b.bk.resize(d);
    b.bv.resize(d);
    b.bo.resize(d);
    b.ln1_g.resize(d);
    b.ln1_b.resize(d);
    b.ln2_g.resize(d);
    b.ln2_b.resize(d);
    b.w1.resize(d, ff);
    b.b1.resize(ff);
    b.w2.resize(ff, d);
    b.b2.resize(d);
  }
  state.params.ln_f_g.resize(d);
  state.params.ln_f_b.resize(d);
  state.params.output_bias.resize(vocab_rows);

  size_t cursor = header_off + header_len;
  size_t tensor_index = 0;
  state.params.for_each_tensor([&](const std::string& name, double* data, Index rows,
                                   Index cols) {
    if (tensor_index >= tensor_list.size()) {
      throw ParseError("checkpoint tensor directory too short");
    }
    const auto& entry = tensor_list[tensor_index++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Index>() != rows || entry.at("cols").get<Index>() != cols) {
      throw ParseError("checkpoint tensor mismatch at \"" + name + "\"");
    }
    const size_t need = static_cast<size_t>(rows * cols) * 8;
    if (cursor + need > blob.size()) {
      throw ParseError("truncated checkpoint data at \"" + name + "\"");
    }
    for (Index i = 0; i < rows * cols; ++i) {
      data[i] = std::bit_cast<double>(
          get_u64_le(reinterpret_cast<const unsigned char*>(blob.data()) + cursor + 8 * i));
    }
    cursor += need;
  });
  if (tensor_index != tensor_list.size() || cursor != blob.size()) {
    throw ParseError("checkpoint size mismatch: " + path.string());
  }
  return state;
}

}  // namespace vocmix

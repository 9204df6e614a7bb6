#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amricl/graph.hpp"

namespace amricl {

// ---------------------------------------------------------------------------
// Vocabulary

/// Token ids over node concepts and role labels. Id 0 is PAD, id 1 is UNK;
/// remaining ids are assigned by descending frequency, then lexicographic.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> id_to_token{"<pad>", "<unk>"};
  std::map<std::string, int> token_to_id;

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  std::size_t size() const { return id_to_token.size(); }
};

inline Vocabulary build_vocab(std::span<const LinearizedGraph> corpus, int min_count = 1) {
  if (corpus.empty()) throw error("build_vocab: empty corpus");
  if (min_count < 1) throw error("build_vocab: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& lin : corpus)
    for (const auto& tok : lin.tokens) ++counts[tok];
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& [tok, c] : counts)
    if (c >= static_cast<std::size_t>(min_count)) order.emplace_back(c, tok);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  Vocabulary vocab;
  for (const auto& [c, tok] : order) {
    vocab.token_to_id[tok] = static_cast<int>(vocab.id_to_token.size());
    vocab.id_to_token.push_back(tok);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Encoder parameters

/// Token embeddings plus a stack of residual message-passing rounds over the
/// linearization adjacency:
///   h^t_i = h^{t-1}_i + tanh(W_t * mean_{j ~ i} h^{t-1}_j + b_t)
struct EncoderParams {
  int dim = 0;
  int rounds = 0;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd embeddings;              // vocab x dim
  std::vector<Eigen::MatrixXd> adapter_w;  // rounds of dim x dim
  std::vector<Eigen::VectorXd> adapter_b;  // rounds of dim

  bool finite() const {
    if (!embeddings.allFinite()) return false;
    for (const auto& w : adapter_w)
      if (!w.allFinite()) return false;
    for (const auto& b : adapter_b)
      if (!b.allFinite()) return false;
    return true;
  }
};

inline EncoderParams init_encoder_params(std::size_t vocab_size, int dim, int rounds,
                                         double dropout_rate, std::uint64_t seed) {
  if (dim <= 0) throw error("init_encoder_params: dim must be positive");
  if (rounds < 0) throw error("init_encoder_params: rounds must be >= 0");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw error("init_encoder_params: dropout_rate must be in [0,1)");
  EncoderParams p;
  p.dim = dim;
  p.rounds = rounds;
  p.dropout_rate = dropout_rate;
  p.seed = seed;
  detail::Rng rng(seed);
  p.embeddings.resize(static_cast<Eigen::Index>(vocab_size), dim);
  for (Eigen::Index i = 0; i < p.embeddings.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j) p.embeddings(i, j) = 0.1 * rng.gaussian();
  double w_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int t = 0; t < rounds; ++t) {
    Eigen::MatrixXd w(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j < dim; ++j) w(i, j) = w_scale * rng.gaussian();
    p.adapter_w.push_back(std::move(w));
    p.adapter_b.push_back(Eigen::VectorXd::Zero(dim));
  }
  return p;
}

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams g = p;
  g.embeddings.setZero();
  for (auto& w : g.adapter_w) w.setZero();
  for (auto& b : g.adapter_b) b.setZero();
  return g;
}

/// Node-token representations, one row per linearization token.
struct NodeEmbeddings {
  Eigen::MatrixXd vectors;                // tokens x dim
  std::vector<std::string> token_origin;  // source var per row, "" for roles
};

struct GraphEmbedding {
  Eigen::VectorXd vector;
  double norm() const { return vector.norm(); }
};

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline std::vector<std::vector<int>> neighbor_lists(const LinearizedGraph& lin) {
  std::vector<std::vector<int>> out(lin.size());
  for (std::size_t i = 0; i < lin.size(); ++i) out[i] = lin.neighbors(i);
  return out;
}

// keep/scale multiplier for inverted dropout; deterministic in (seed, salt, i, j)
inline double dropout_scale(std::uint64_t seed, std::uint64_t salt, std::size_t i,
                            std::size_t j, double rate) {
  std::uint64_t bits = mix64(mix64(mix64(seed, salt), i), j);
  return uniform01(bits) >= rate ? 1.0 / (1.0 - rate) : 0.0;
}

struct ForwardTrace {
  std::vector<int> ids;
  Eigen::MatrixXd mask;              // empty unless dropout is live
  std::vector<Eigen::MatrixXd> H;    // rounds+1 states
  std::vector<Eigen::MatrixXd> A;    // tanh activations per round
  std::vector<Eigen::MatrixXd> M;    // neighbor means per round
  std::vector<std::vector<int>> nbrs;
};

inline ForwardTrace encoder_forward(const EncoderParams& params, const LinearizedGraph& lin,
                                    const Vocabulary& vocab, bool train_mode,
                                    std::uint64_t mask_salt) {
  if (params.embeddings.rows() != static_cast<Eigen::Index>(vocab.size()))
    throw error("encode_nodes: embedding rows do not match vocabulary size");
  if (!params.finite()) throw error("encode_nodes: non-finite parameter");
  if (lin.size() == 0) throw error("encode_nodes: empty linearization");

  ForwardTrace tr;
  tr.nbrs = neighbor_lists(lin);
  const auto n = static_cast<Eigen::Index>(lin.size());
  const int d = params.dim;
  tr.ids.reserve(lin.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    int id = vocab.id(lin.tokens[static_cast<std::size_t>(i)]);
    tr.ids.push_back(id);
    x.row(i) = params.embeddings.row(id);
  }
  bool live_dropout = train_mode && params.dropout_rate > 0.0;
  if (live_dropout) {
    tr.mask.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        tr.mask(i, j) = dropout_scale(params.seed, mask_salt, static_cast<std::size_t>(i),
                                      static_cast<std::size_t>(j), params.dropout_rate);
    x.array() *= tr.mask.array();
  }
  tr.H.push_back(std::move(x));
  for (int t = 0; t < params.rounds; ++t) {
    const Eigen::MatrixXd& prev = tr.H.back();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = tr.nbrs[static_cast<std::size_t>(i)];
      if (nb.empty()) continue;
      for (int j : nb) m.row(i) += prev.row(j);
      m.row(i) /= static_cast<double>(nb.size());
    }
    Eigen::MatrixXd z = m * params.adapter_w[static_cast<std::size_t>(t)].transpose();
    z.rowwise() += params.adapter_b[static_cast<std::size_t>(t)].transpose();
    Eigen::MatrixXd a = z.array().tanh();
    tr.M.push_back(std::move(m));
    tr.H.push_back(prev + a);
    tr.A.push_back(std::move(a));
  }
  return tr;
}

// Accumulates parameter gradients given dLoss/dH_final.
inline void encoder_backward(const EncoderParams& params, const ForwardTrace& tr,
                             Eigen::MatrixXd grad_h, EncoderParams& grads) {
  const auto n = grad_h.rows();
  for (int t = params.rounds - 1; t >= 0; --t) {
    const Eigen::MatrixXd& a = tr.A[static_cast<std::size_t>(t)];
    Eigen::MatrixXd dz = grad_h.array() * (1.0 - a.array().square());
    grads.adapter_w[static_cast<std::size_t>(t)] +=
        dz.transpose() * tr.M[static_cast<std::size_t>(t)];
    grads.adapter_b[static_cast<std::size_t>(t)] += dz.colwise().sum().transpose();
    Eigen::MatrixXd dm = dz * params.adapter_w[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = tr.nbrs[static_cast<std::size_t>(i)];
      if (nb.empty()) continue;
      double inv = 1.0 / static_cast<double>(nb.size());
      for (int j : nb) grad_h.row(j) += inv * dm.row(i);
    }
  }
  if (tr.mask.size() > 0) grad_h.array() *= tr.mask.array();
  for (Eigen::Index i = 0; i < n; ++i)
    grads.embeddings.row(tr.ids[static_cast<std::size_t>(i)]) += grad_h.row(i);
}

}  // namespace detail

/// Runs the message-passing encoder over one linearization. With train_mode,
/// dropout masks come from the params seed stream salted by `mask_salt`, so
/// results are a pure function of (params, input, salt).
inline NodeEmbeddings encode_nodes(const EncoderParams& params, const LinearizedGraph& lin,
                                   const Vocabulary& vocab, bool train_mode = false,
                                   std::uint64_t mask_salt = 0) {
  auto tr = detail::encoder_forward(params, lin, vocab, train_mode, mask_salt);
  NodeEmbeddings out;
  out.vectors = tr.H.back();
  out.token_origin = lin.origin_var;
  return out;
}

// ---------------------------------------------------------------------------
// Pooling plans

/// Weighted row-combination recipe. Each block yields one dim-d vector; the
/// pooled output concatenates the blocks. An empty block is a zero vector.
struct PoolingPlan {
  std::vector<std::vector<std::pair<int, double>>> blocks;
};

inline Eigen::VectorXd apply_plan(const PoolingPlan& plan, const Eigen::MatrixXd& h) {
  const auto d = h.cols();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(plan.blocks.size()) * d);
  for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
    for (const auto& [row, w] : plan.blocks[b])
      out.segment(static_cast<Eigen::Index>(b) * d, d) += w * h.row(row).transpose();
  }
  return out;
}

inline void backprop_plan(const PoolingPlan& plan, const Eigen::VectorXd& grad_out,
                          Eigen::MatrixXd& grad_h) {
  const auto d = grad_h.cols();
  for (std::size_t b = 0; b < plan.blocks.size(); ++b)
    for (const auto& [row, w] : plan.blocks[b])
      grad_h.row(row) += w * grad_out.segment(static_cast<Eigen::Index>(b) * d, d).transpose();
}

enum class CtPooling { all_nodes_mean, sap_mean };

/// Uniform mean over every token row (the base model's pooling).
inline PoolingPlan all_nodes_mean_plan(std::size_t token_count) {
  PoolingPlan plan;
  plan.blocks.emplace_back();
  double w = 1.0 / static_cast<double>(token_count);
  for (std::size_t i = 0; i < token_count; ++i)
    plan.blocks[0].emplace_back(static_cast<int>(i), w);
  return plan;
}

/// Mean over distinct vars of node-token rows; re-entrant visits average
/// within their var first. Role rows are excluded.
inline PoolingPlan sap_mean_plan(const std::vector<std::string>& origin_vars) {
  std::vector<std::string> var_order;
  std::map<std::string, std::vector<int>> rows;
  for (std::size_t i = 0; i < origin_vars.size(); ++i) {
    if (origin_vars[i].empty()) continue;
    auto [it, fresh] = rows.try_emplace(origin_vars[i]);
    if (fresh) var_order.push_back(origin_vars[i]);
    it->second.push_back(static_cast<int>(i));
  }
  if (var_order.empty()) throw error("sap_mean_plan: no node tokens");
  PoolingPlan plan;
  plan.blocks.emplace_back();
  double per_var = 1.0 / static_cast<double>(var_order.size());
  for (const auto& v : var_order) {
    const auto& r = rows[v];
    for (int row : r) plan.blocks[0].emplace_back(row, per_var / static_cast<double>(r.size()));
  }
  return plan;
}

inline PoolingPlan ct_pooling_plan(CtPooling pooling, const LinearizedGraph& lin) {
  return pooling == CtPooling::all_nodes_mean ? all_nodes_mean_plan(lin.size())
                                              : sap_mean_plan(lin.origin_var);
}

// ---------------------------------------------------------------------------
// Contrastive Tension loss

enum class PairLabel { positive, negative };

struct CtBatch {
  std::vector<LinearizedGraph> anchors;
  std::vector<LinearizedGraph> partners;
  std::vector<PairLabel> labels;

  std::size_t size() const { return anchors.size(); }
};

namespace detail {

inline double softplus(double x) {  // log(1 + e^x), overflow-safe
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

/// Pairwise contrastive loss on the similarity score:
///   positive: -log s(h_a . h_b)
///   negative: -log s(1 - h_a . h_b)
/// with s the logistic function. `canonical_bce` switches the negative
/// branch to the textbook form -log(1 - s(h_a . h_b)).
inline double ct_loss(const GraphEmbedding& anchor, const GraphEmbedding& partner,
                      PairLabel label, bool canonical_bce = false) {
  if (anchor.vector.size() != partner.vector.size())
    throw error("ct_loss: dimension mismatch");
  double dot = anchor.vector.dot(partner.vector);
  if (label == PairLabel::positive) return detail::softplus(-dot);
  if (canonical_bce) return detail::softplus(dot);
  return detail::softplus(-(1.0 - dot));
}

namespace detail {

inline double ct_loss_ddot(double dot, PairLabel label, bool canonical_bce) {
  if (label == PairLabel::positive) return logistic(dot) - 1.0;
  if (canonical_bce) return logistic(dot);
  return 1.0 - logistic(1.0 - dot);
}

}  // namespace detail

struct CtLossOptions {
  CtPooling pooling = CtPooling::all_nodes_mean;
  bool train_mode = false;
  std::uint64_t dropout_salt = 0;  // base salt; pairs and sides are salted further
  bool canonical_bce = false;
};

struct CtBatchResult {
  double loss = 0.0;
  EncoderParams grads;
};

namespace detail {

struct PairSideTrace {
  ForwardTrace forward;
  PoolingPlan plan;
  Eigen::VectorXd pooled;
};

inline PairSideTrace encode_side(const EncoderParams& params, const Vocabulary& vocab,
                                 const LinearizedGraph& lin, const CtLossOptions& opts,
                                 std::size_t pair, int side) {
  PairSideTrace out;
  out.forward = encoder_forward(params, lin, vocab, opts.train_mode,
                                mix64(opts.dropout_salt, pair * 2 + static_cast<std::size_t>(side)));
  out.plan = ct_pooling_plan(opts.pooling, lin);
  out.pooled = apply_plan(out.plan, out.forward.H.back());
  return out;
}

}  // namespace detail

/// Mean batch loss plus exact analytic gradients, anchor and partner encoded
/// by the same parameters.
inline CtBatchResult ct_batch_loss_and_grad(const EncoderParams& params, const CtBatch& batch,
                                            const Vocabulary& vocab,
                                            const CtLossOptions& opts = {}) {
  if (batch.size() == 0) throw error("ct_batch_loss_and_grad: empty batch");
  if (batch.partners.size() != batch.size() || batch.labels.size() != batch.size())
    throw error("ct_batch_loss_and_grad: ragged batch");
  CtBatchResult result;
  result.grads = zeros_like(params);
  double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto a = detail::encode_side(params, vocab, batch.anchors[k], opts, k, 0);
    auto b = detail::encode_side(params, vocab, batch.partners[k], opts, k, 1);
    double dot = a.pooled.dot(b.pooled);
    if (batch.labels[k] == PairLabel::positive)
      result.loss += detail::softplus(-dot) * inv_n;
    else if (opts.canonical_bce)
      result.loss += detail::softplus(dot) * inv_n;
    else
      result.loss += detail::softplus(-(1.0 - dot)) * inv_n;
    double coef = detail::ct_loss_ddot(dot, batch.labels[k], opts.canonical_bce) * inv_n;

    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(a.forward.H.back().rows(), params.dim);
    backprop_plan(a.plan, coef * b.pooled, ga);
    detail::encoder_backward(params, a.forward, std::move(ga), result.grads);

    Eigen::MatrixXd gb = Eigen::MatrixXd::Zero(b.forward.H.back().rows(), params.dim);
    backprop_plan(b.plan, coef * a.pooled, gb);
    detail::encoder_backward(params, b.forward, std::move(gb), result.grads);
  }
  return result;
}

/// Loss only, same contract as ct_batch_loss_and_grad.
inline double ct_batch_loss(const EncoderParams& params, const CtBatch& batch,
                            const Vocabulary& vocab, const CtLossOptions& opts = {}) {
  if (batch.size() == 0) throw error("ct_batch_loss: empty batch");
  double loss = 0.0;
  double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto a = detail::encode_side(params, vocab, batch.anchors[k], opts, k, 0);
    auto b = detail::encode_side(params, vocab, batch.partners[k], opts, k, 1);
    double dot = a.pooled.dot(b.pooled);
    if (batch.labels[k] == PairLabel::positive)
      loss += detail::softplus(-dot) * inv_n;
    else if (opts.canonical_bce)
      loss += detail::softplus(dot) * inv_n;
    else
      loss += detail::softplus(-(1.0 - dot)) * inv_n;
  }
  return loss;
}

struct TwinCtBatchResult {
  double loss = 0.0;
  EncoderParams anchor_grads;
  EncoderParams partner_grads;
};

/// Twin-encoder variant: anchors and partners run through two independently
/// updated parameter sets (identically initialized by the caller).
inline TwinCtBatchResult ct_batch_loss_and_grad_twin(const EncoderParams& anchor_params,
                                                     const EncoderParams& partner_params,
                                                     const CtBatch& batch,
                                                     const Vocabulary& vocab,
                                                     const CtLossOptions& opts = {}) {
  if (batch.size() == 0) throw error("ct_batch_loss_and_grad_twin: empty batch");
  TwinCtBatchResult result;
  result.anchor_grads = zeros_like(anchor_params);
  result.partner_grads = zeros_like(partner_params);
  double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto a = detail::encode_side(anchor_params, vocab, batch.anchors[k], opts, k, 0);
    auto b = detail::encode_side(partner_params, vocab, batch.partners[k], opts, k, 1);
    double dot = a.pooled.dot(b.pooled);
    if (batch.labels[k] == PairLabel::positive)
      result.loss += detail::softplus(-dot) * inv_n;
    else if (opts.canonical_bce)
      result.loss += detail::softplus(dot) * inv_n;
    else
      result.loss += detail::softplus(-(1.0 - dot)) * inv_n;
    double coef = detail::ct_loss_ddot(dot, batch.labels[k], opts.canonical_bce) * inv_n;

    Eigen::MatrixXd ga = Eigen::MatrixXd::Zero(a.forward.H.back().rows(), anchor_params.dim);
    backprop_plan(a.plan, coef * b.pooled, ga);
    detail::encoder_backward(anchor_params, a.forward, std::move(ga), result.anchor_grads);

    Eigen::MatrixXd gb = Eigen::MatrixXd::Zero(b.forward.H.back().rows(), partner_params.dim);
    backprop_plan(b.plan, coef * a.pooled, gb);
    detail::encoder_backward(partner_params, b.forward, std::move(gb), result.partner_grads);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batch sampling

/// Draws `positive_count` anchor graphs, pairing each with itself once and
/// with uniformly sampled distinct graphs for the remaining slots.
inline CtBatch sample_ct_batch(const std::vector<LinearizedGraph>& corpus,
                               std::size_t batch_size, std::size_t positive_count,
                               std::uint64_t rng_seed) {
  if (corpus.size() <= batch_size)
    throw error("sample_ct_batch: corpus must be larger than the batch size");
  if (positive_count > batch_size || positive_count == 0)
    throw error("sample_ct_batch: positive_count must be in [1, batch_size]");
  detail::Rng rng(rng_seed);

  std::vector<std::size_t> anchors;
  std::set<std::size_t> chosen;
  while (anchors.size() < positive_count) {
    std::size_t pick = rng.bounded(corpus.size());
    if (chosen.insert(pick).second) anchors.push_back(pick);
  }

  CtBatch batch;
  std::size_t negatives = batch_size - positive_count;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    batch.anchors.push_back(corpus[anchors[a]]);
    batch.partners.push_back(corpus[anchors[a]]);
    batch.labels.push_back(PairLabel::positive);
    std::size_t share = negatives / positive_count + (a < negatives % positive_count ? 1 : 0);
    for (std::size_t s = 0; s < share; ++s) {
      std::size_t other;
      do {
        other = rng.bounded(corpus.size());
      } while (other == anchors[a]);
      batch.anchors.push_back(corpus[anchors[a]]);
      batch.partners.push_back(corpus[other]);
      batch.labels.push_back(PairLabel::negative);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Linearization cap

/// Truncates whole (role, node) token pairs from the end until the sequence
/// fits. The leading node token always survives.
inline LinearizedGraph truncate_linearization(const LinearizedGraph& lin,
                                              std::size_t max_tokens) {
  if (lin.size() <= max_tokens || max_tokens == 0) return lin;
  std::size_t keep = lin.size();
  while (keep > max_tokens && keep >= 3) keep -= 2;
  LinearizedGraph out;
  out.tokens.assign(lin.tokens.begin(), lin.tokens.begin() + static_cast<long>(keep));
  out.token_kind.assign(lin.token_kind.begin(), lin.token_kind.begin() + static_cast<long>(keep));
  out.origin_var.assign(lin.origin_var.begin(), lin.origin_var.begin() + static_cast<long>(keep));
  out.origin_edge.assign(lin.origin_edge.begin(), lin.origin_edge.begin() + static_cast<long>(keep));
  out.adjacency.assign(keep * keep, 0);
  for (std::size_t i = 0; i < keep; ++i)
    for (std::size_t j = 0; j < keep; ++j)
      out.adjacency[i * keep + j] = lin.adjacency[i * lin.size() + j];
  return out;
}

// ---------------------------------------------------------------------------
// CT training

struct divergence_error : error {
  std::size_t step;
  explicit divergence_error(std::size_t at)
      : error("train_ct: non-finite loss at step " + std::to_string(at)), step(at) {}
};

struct CtTrainConfig {
  int epochs = 1;
  double lr = 1e-5;
  double dropout = 0.1;
  int dim = 128;   // graph adapter width
  int rounds = 2;  // message-passing rounds
  std::size_t batch_size = 16;
  std::size_t positive_count = 4;
  int min_count = 1;
  std::size_t max_tokens = 256;
  std::uint64_t seed = 0;
  CtPooling pooling = CtPooling::sap_mean;
  bool twin_encoder = false;
  bool canonical_bce = false;
};

struct CtTrainResult {
  EncoderParams params;  // twin mode: the anchor-side encoder
  Vocabulary vocab;
  std::vector<double> loss_trace;  // one entry per optimizer step
};

namespace detail {

inline void sgd_step(EncoderParams& params, const EncoderParams& grads, double lr) {
  params.embeddings -= lr * grads.embeddings;
  for (std::size_t t = 0; t < params.adapter_w.size(); ++t) {
    params.adapter_w[t] -= lr * grads.adapter_w[t];
    params.adapter_b[t] -= lr * grads.adapter_b[t];
  }
}

}  // namespace detail

/// Self-supervised contrastive training: plain SGD over sampled batches,
/// one corpus pass per epoch. Deterministic in (corpus, config).
inline CtTrainResult train_ct(const std::vector<LinearizedGraph>& raw_corpus,
                              const CtTrainConfig& cfg) {
  if (raw_corpus.empty()) throw error("train_ct: empty corpus");
  std::vector<LinearizedGraph> corpus;
  corpus.reserve(raw_corpus.size());
  for (const auto& lin : raw_corpus) corpus.push_back(truncate_linearization(lin, cfg.max_tokens));

  CtTrainResult result;
  result.vocab = build_vocab(corpus, cfg.min_count);
  result.params = init_encoder_params(result.vocab.size(), cfg.dim, cfg.rounds, cfg.dropout,
                                      cfg.seed);
  std::optional<EncoderParams> partner;
  if (cfg.twin_encoder) partner = result.params;  // identically initialized

  std::size_t steps_per_epoch =
      (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      CtBatch batch = sample_ct_batch(corpus, cfg.batch_size, cfg.positive_count,
                                      detail::mix64(cfg.seed, 0x5eed + step));
      CtLossOptions opts;
      opts.pooling = cfg.pooling;
      opts.train_mode = cfg.dropout > 0.0;
      opts.dropout_salt = detail::mix64(cfg.seed, step);
      opts.canonical_bce = cfg.canonical_bce;
      double loss;
      if (cfg.twin_encoder) {
        auto r = ct_batch_loss_and_grad_twin(result.params, *partner, batch, result.vocab, opts);
        loss = r.loss;
        if (!std::isfinite(loss)) throw divergence_error(step);
        detail::sgd_step(result.params, r.anchor_grads, cfg.lr);
        detail::sgd_step(*partner, r.partner_grads, cfg.lr);
      } else {
        auto r = ct_batch_loss_and_grad(result.params, batch, result.vocab, opts);
        loss = r.loss;
        if (!std::isfinite(loss)) throw divergence_error(step);
        detail::sgd_step(result.params, r.grads, cfg.lr);
      }
      result.loss_trace.push_back(loss);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Structural (training-free) encoder

namespace detail {

inline void add_hashed(Eigen::VectorXd& v, const std::string& feature, std::uint64_t seed) {
  std::uint64_t h = mix64(fnv1a64(feature), seed);
  auto idx = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(v.size()));
  v[idx] += (h >> 63) ? 1.0 : -1.0;
}

inline std::string length_bucket(std::size_t distinct_vars) {
  if (distinct_vars <= 5) return std::to_string(distinct_vars);
  if (distinct_vars <= 7) return "6-7";
  return "8+";
}

// The two node tokens flanking a role token, lower index first.
inline std::pair<int, int> role_endpoints(const LinearizedGraph& lin, std::size_t role_row) {
  int lo = -1, hi = -1;
  for (std::size_t j = 0; j < lin.size(); ++j) {
    if (!lin.adjacent(role_row, j)) continue;
    if (lo < 0)
      lo = static_cast<int>(j);
    else
      hi = static_cast<int>(j);
  }
  return {lo, hi};
}

}  // namespace detail

/// Training-free feature-hashed graph signature: node concept unigrams, role
/// unigrams, (concept, role, concept) triples along the adjacency, and a
/// path-length bucket. L2-normalized; deterministic in (input, dim, seed).
inline GraphEmbedding structural_encode(const LinearizedGraph& lin, int dim,
                                        std::uint64_t seed) {
  if (dim < 16) throw error("structural_encode: dim must be >= 16");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  std::set<std::string> vars;
  for (std::size_t i = 0; i < lin.size(); ++i) {
    if (lin.token_kind[i] == TokenKind::node) {
      detail::add_hashed(v, "u|" + lin.tokens[i], seed);
      vars.insert(lin.origin_var[i]);
    } else {
      detail::add_hashed(v, "r|" + lin.tokens[i], seed);
      auto [lo, hi] = detail::role_endpoints(lin, i);
      if (lo >= 0 && hi >= 0)
        detail::add_hashed(v, "t|" + lin.tokens[static_cast<std::size_t>(lo)] + "|" +
                                  lin.tokens[i] + "|" + lin.tokens[static_cast<std::size_t>(hi)],
                           seed);
    }
  }
  detail::add_hashed(v, "len|" + detail::length_bucket(vars.size()), seed);
  double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return {v};
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning head

/// One training record for the relation classifier: the encoder input, the
/// pooling recipe that produces its graph representation, and an optional
/// externally computed sentence vector.
struct ClassifierInstance {
  LinearizedGraph lin;
  PoolingPlan plan;
  Eigen::VectorXd sentence;  // size 0 when absent
  std::string label;
};

struct ClassifierParams {
  std::vector<std::string> label_set;
  Eigen::MatrixXd w1;  // hidden x input
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // labels x hidden
  Eigen::VectorXd b2;
};

struct ClassifierConfig {
  bool freeze_encoder = true;
  int epochs = 200;
  double lr = 0.1;
  int hidden = 32;
  std::uint64_t seed = 0;
};

namespace detail {

struct ClassifierForward {
  Eigen::VectorXd input;
  Eigen::VectorXd hidden;  // tanh activations
  Eigen::VectorXd probs;
};

inline ClassifierForward classifier_forward(const ClassifierParams& head,
                                            const Eigen::VectorXd& input) {
  ClassifierForward f;
  f.input = input;
  f.hidden = (head.w1 * input + head.b1).array().tanh();
  Eigen::VectorXd logits = head.w2 * f.hidden + head.b2;
  double m = logits.maxCoeff();
  Eigen::VectorXd ex = (logits.array() - m).exp();
  f.probs = ex / ex.sum();
  return f;
}

}  // namespace detail

inline int label_index(const std::vector<std::string>& label_set, const std::string& label) {
  for (std::size_t i = 0; i < label_set.size(); ++i)
    if (label_set[i] == label) return static_cast<int>(i);
  return -1;
}

/// Predicted label for one relation representation.
inline std::string classify(const ClassifierParams& head, const Eigen::VectorXd& rel) {
  auto f = detail::classifier_forward(head, rel);
  Eigen::Index best;
  f.probs.maxCoeff(&best);
  return head.label_set[static_cast<std::size_t>(best)];
}

struct ClassifierTrainResult {
  ClassifierParams head;
  EncoderParams encoder;
  std::vector<double> loss_trace;  // mean cross-entropy per epoch
};

namespace detail {

inline Eigen::VectorXd relation_input(const EncoderParams& params, const Vocabulary& vocab,
                                      const ClassifierInstance& inst, ForwardTrace* trace_out) {
  ForwardTrace tr = encoder_forward(params, inst.lin, vocab, false, 0);
  Eigen::VectorXd graph_part = apply_plan(inst.plan, tr.H.back());
  if (trace_out) *trace_out = std::move(tr);
  if (inst.sentence.size() == 0) return graph_part;
  Eigen::VectorXd out(graph_part.size() + inst.sentence.size());
  out << graph_part, inst.sentence;
  return out;
}

}  // namespace detail

/// Mean cross-entropy of the head over the dataset with fixed parameters.
inline double classifier_loss(const std::vector<ClassifierInstance>& data,
                              const ClassifierParams& head, const EncoderParams& params,
                              const Vocabulary& vocab) {
  double loss = 0.0;
  for (const auto& inst : data) {
    auto f = detail::classifier_forward(head, detail::relation_input(params, vocab, inst, nullptr));
    int y = label_index(head.label_set, inst.label);
    if (y < 0) throw error("classifier_loss: label '" + inst.label + "' not in label set");
    loss -= std::log(std::max(f.probs[y], 1e-300));
  }
  return loss / static_cast<double>(data.size());
}

/// Feedforward fine-tuning head (one tanh hidden layer, softmax over the
/// label set) trained with full-batch gradient descent; gradients flow into
/// the encoder unless frozen.
inline ClassifierTrainResult train_relation_classifier(
    const std::vector<ClassifierInstance>& data, const std::vector<std::string>& label_set,
    const EncoderParams& encoder_params, const Vocabulary& vocab, const ClassifierConfig& cfg) {
  if (data.empty()) throw error("train_relation_classifier: no trainable examples");
  for (const auto& inst : data)
    if (label_index(label_set, inst.label) < 0)
      throw error("train_relation_classifier: label '" + inst.label + "' not in label set");

  ClassifierTrainResult result;
  result.encoder = encoder_params;

  Eigen::Index input_dim =
      detail::relation_input(result.encoder, vocab, data.front(), nullptr).size();
  detail::Rng rng(cfg.seed);
  result.head.label_set = label_set;
  result.head.w1.resize(cfg.hidden, input_dim);
  for (Eigen::Index i = 0; i < result.head.w1.size(); ++i)
    result.head.w1.data()[i] = rng.gaussian() / std::sqrt(static_cast<double>(input_dim));
  result.head.b1 = Eigen::VectorXd::Zero(cfg.hidden);
  result.head.w2.resize(static_cast<Eigen::Index>(label_set.size()), cfg.hidden);
  for (Eigen::Index i = 0; i < result.head.w2.size(); ++i)
    result.head.w2.data()[i] = rng.gaussian() / std::sqrt(static_cast<double>(cfg.hidden));
  result.head.b2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(label_set.size()));

  double inv_n = 1.0 / static_cast<double>(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ClassifierParams head_grads = result.head;
    head_grads.w1.setZero();
    head_grads.b1.setZero();
    head_grads.w2.setZero();
    head_grads.b2.setZero();
    EncoderParams enc_grads = zeros_like(result.encoder);
    double loss = 0.0;

    for (const auto& inst : data) {
      detail::ForwardTrace tr;
      Eigen::VectorXd input = detail::relation_input(result.encoder, vocab, inst, &tr);
      auto f = detail::classifier_forward(result.head, input);
      int y = label_index(label_set, inst.label);
      loss -= std::log(std::max(f.probs[y], 1e-300)) * inv_n;

      Eigen::VectorXd dlogits = f.probs;
      dlogits[y] -= 1.0;
      dlogits *= inv_n;
      head_grads.w2 += dlogits * f.hidden.transpose();
      head_grads.b2 += dlogits;
      Eigen::VectorXd dhidden =
          (result.head.w2.transpose() * dlogits).array() * (1.0 - f.hidden.array().square());
      head_grads.w1 += dhidden * input.transpose();
      head_grads.b1 += dhidden;

      if (!cfg.freeze_encoder) {
        Eigen::VectorXd dinput = result.head.w1.transpose() * dhidden;
        Eigen::Index graph_dim = input.size() - inst.sentence.size();
        Eigen::MatrixXd gh =
            Eigen::MatrixXd::Zero(tr.H.back().rows(), result.encoder.dim);
        backprop_plan(inst.plan, dinput.head(graph_dim), gh);
        detail::encoder_backward(result.encoder, tr, std::move(gh), enc_grads);
      }
    }
    result.loss_trace.push_back(loss);

    result.head.w1 -= cfg.lr * head_grads.w1;
    result.head.b1 -= cfg.lr * head_grads.b1;
    result.head.w2 -= cfg.lr * head_grads.w2;
    result.head.b2 -= cfg.lr * head_grads.b2;
    if (!cfg.freeze_encoder) detail::sgd_step(result.encoder, enc_grads, cfg.lr);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint file ("AREP")

inline void save_checkpoint(const std::string& path, const EncoderParams& params,
                            const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("save_checkpoint: cannot open '" + path + "'");
  out.write("AREP", 4);
  detail::write_u16le(out, 1);
  detail::write_u32le(out, static_cast<std::uint32_t>(params.dim));
  detail::write_u32le(out, static_cast<std::uint32_t>(params.rounds));
  detail::write_u32le(out, static_cast<std::uint32_t>(vocab.size()));
  for (Eigen::Index i = 0; i < params.embeddings.rows(); ++i)
    for (Eigen::Index j = 0; j < params.embeddings.cols(); ++j)
      detail::write_f32le(out, static_cast<float>(params.embeddings(i, j)));
  for (int t = 0; t < params.rounds; ++t) {
    const auto& w = params.adapter_w[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        detail::write_f32le(out, static_cast<float>(w(i, j)));
    const auto& b = params.adapter_b[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < b.size(); ++i)
      detail::write_f32le(out, static_cast<float>(b[i]));
  }
  for (const auto& token : vocab.id_to_token) {
    detail::write_u32le(out, static_cast<std::uint32_t>(token.size()));
    out.write(token.data(), static_cast<std::streamsize>(token.size()));
  }
  if (!out) throw error("save_checkpoint: write failure on '" + path + "'");
}

struct Checkpoint {
  EncoderParams params;
  Vocabulary vocab;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("load_checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!detail::read_bytes(in, magic, 4) || std::string_view(magic, 4) != "AREP")
    throw error("load_checkpoint: bad magic");
  std::uint16_t version;
  if (!detail::read_u16le(in, version)) throw error("load_checkpoint: truncated payload");
  if (version != 1)
    throw error("load_checkpoint: version mismatch (got " + std::to_string(version) + ")");
  std::uint32_t dim, rounds, vocab_size;
  if (!detail::read_u32le(in, dim) || !detail::read_u32le(in, rounds) ||
      !detail::read_u32le(in, vocab_size))
    throw error("load_checkpoint: truncated payload");

  Checkpoint ck;
  ck.params.dim = static_cast<int>(dim);
  ck.params.rounds = static_cast<int>(rounds);
  ck.params.embeddings.resize(vocab_size, dim);
  float f;
  for (Eigen::Index i = 0; i < ck.params.embeddings.rows(); ++i)
    for (Eigen::Index j = 0; j < ck.params.embeddings.cols(); ++j) {
      if (!detail::read_f32le(in, f)) throw error("load_checkpoint: truncated payload");
      ck.params.embeddings(i, j) = f;
    }
  for (std::uint32_t t = 0; t < rounds; ++t) {
    Eigen::MatrixXd w(dim, dim);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (!detail::read_f32le(in, f)) throw error("load_checkpoint: truncated payload");
        w(i, j) = f;
      }
    Eigen::VectorXd b(dim);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      if (!detail::read_f32le(in, f)) throw error("load_checkpoint: truncated payload");
      b[i] = f;
    }
    ck.params.adapter_w.push_back(std::move(w));
    ck.params.adapter_b.push_back(std::move(b));
  }
  ck.vocab.id_to_token.clear();
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    std::uint32_t len;
    if (!detail::read_u32le(in, len)) throw error("load_checkpoint: truncated payload");
    std::string token(len, '\0');
    if (!detail::read_bytes(in, token.data(), len))
      throw error("load_checkpoint: truncated payload");
    ck.vocab.id_to_token.push_back(token);
    if (i >= 2) ck.vocab.token_to_id[token] = static_cast<int>(i);
  }
  return ck;
}

}  // namespace amricl

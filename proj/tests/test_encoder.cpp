#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "amricl/encoder.hpp"
#include "amricl/penman.hpp"
#include "support/generators.hpp"

using namespace amricl;
using testsupport::Rng;

namespace {

LinearizedGraph lin_of(const std::string& penman) {
  return linearize(testsupport::parse_or_die(penman));
}

std::vector<LinearizedGraph> random_lin_corpus(Rng& rng, int count, int max_nodes) {
  std::vector<LinearizedGraph> out;
  for (int i = 0; i < count; ++i) out.push_back(linearize(testsupport::random_graph(rng, max_nodes)));
  return out;
}

// Central finite differences over every parameter entry.
template <typename LossFn>
double max_grad_rel_error(EncoderParams params, const EncoderParams& analytic, LossFn loss,
                          double eps = 1e-4) {
  double worst = 0.0;
  auto probe = [&](double& slot, double grad) {
    double keep = slot;
    slot = keep + eps;
    double up = loss(params);
    slot = keep - eps;
    double down = loss(params);
    slot = keep;
    double fd = (up - down) / (2.0 * eps);
    double rel = std::abs(grad - fd) / std::max({std::abs(grad), std::abs(fd), 1e-3});
    worst = std::max(worst, rel);
  };
  for (Eigen::Index i = 0; i < params.embeddings.size(); ++i)
    probe(params.embeddings.data()[i], analytic.embeddings.data()[i]);
  for (std::size_t t = 0; t < params.adapter_w.size(); ++t) {
    for (Eigen::Index i = 0; i < params.adapter_w[t].size(); ++i)
      probe(params.adapter_w[t].data()[i], analytic.adapter_w[t].data()[i]);
    for (Eigen::Index i = 0; i < params.adapter_b[t].size(); ++i)
      probe(params.adapter_b[t].data()[i], analytic.adapter_b[t].data()[i]);
  }
  return worst;
}

}  // namespace

TEST_CASE("vocab holds specials plus thresholded tokens", "[encoder]") {
  std::vector<LinearizedGraph> corpus{lin_of("(j / joy)"), lin_of("(j / joy)")};
  auto vocab = build_vocab(corpus, 1);
  CHECK(vocab.size() == 3);
  CHECK(vocab.id("joy") == 2);
  CHECK(vocab.id("missing") == Vocabulary::kUnk);

  auto strict = build_vocab(corpus, 3);
  CHECK(strict.size() == 2);
  CHECK(strict.id("joy") == Vocabulary::kUnk);
}

TEST_CASE("vocab ids are deterministic: frequency then lexicographic", "[encoder]") {
  std::vector<LinearizedGraph> corpus{lin_of("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))"),
                                      lin_of("(j / joy)")};
  auto a = build_vocab(corpus, 1);
  auto b = build_vocab(corpus, 1);
  CHECK(a.id_to_token == b.id_to_token);
  CHECK(a.id("joy") == 2);  // joy appears twice, everything else once
  CHECK(a.id(":ARG0") < a.id(":ARG1"));
}

TEST_CASE("zero rounds return the raw embedding rows", "[encoder]") {
  auto lin = lin_of("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))");
  auto vocab = build_vocab(std::vector<LinearizedGraph>{lin}, 1);
  auto params = init_encoder_params(vocab.size(), 8, 0, 0.0, 3);
  auto h = encode_nodes(params, lin, vocab);
  REQUIRE(h.vectors.rows() == static_cast<Eigen::Index>(lin.size()));
  for (std::size_t i = 0; i < lin.size(); ++i)
    CHECK(h.vectors.row(static_cast<Eigen::Index>(i)) ==
          params.embeddings.row(vocab.id(lin.tokens[i])));
  CHECK(h.token_origin == lin.origin_var);
}

TEST_CASE("an isolated token accumulates tanh of the biases", "[encoder]") {
  auto lin = lin_of("(j / joy)");
  auto vocab = build_vocab(std::vector<LinearizedGraph>{lin}, 1);
  auto params = init_encoder_params(vocab.size(), 4, 3, 0.0, 9);
  for (auto& b : params.adapter_b) b.setConstant(0.7);
  auto h = encode_nodes(params, lin, vocab);
  Eigen::VectorXd expected = params.embeddings.row(vocab.id("joy")).transpose();
  for (int t = 0; t < 3; ++t) expected.array() += std::tanh(0.7);
  CHECK((h.vectors.row(0).transpose() - expected).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("row count always equals token count", "[encoder][property]") {
  Rng rng(77);
  auto corpus = random_lin_corpus(rng, 30, 20);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 2, 0.0, 1);
  for (const auto& lin : corpus) {
    auto h = encode_nodes(params, lin, vocab);
    CHECK(h.vectors.rows() == static_cast<Eigen::Index>(lin.size()));
    CHECK(h.vectors.allFinite());
  }
}

TEST_CASE("permuting disconnected components permutes rows identically", "[encoder]") {
  auto a = lin_of("(s / source :ARG0 (j / joy))");
  auto b = lin_of("(w / want-01 :ARG1 (g / go-02))");
  auto stitch = [](const LinearizedGraph& x, const LinearizedGraph& y) {
    LinearizedGraph out;
    out.tokens = x.tokens;
    out.tokens.insert(out.tokens.end(), y.tokens.begin(), y.tokens.end());
    out.token_kind = x.token_kind;
    out.token_kind.insert(out.token_kind.end(), y.token_kind.begin(), y.token_kind.end());
    out.origin_var = x.origin_var;
    out.origin_var.insert(out.origin_var.end(), y.origin_var.begin(), y.origin_var.end());
    out.origin_edge = x.origin_edge;
    out.origin_edge.insert(out.origin_edge.end(), y.origin_edge.begin(), y.origin_edge.end());
    std::size_t n = out.tokens.size(), nx = x.tokens.size();
    out.adjacency.assign(n * n, 0);
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t j = 0; j < nx; ++j) out.adjacency[i * n + j] = x.adjacency[i * nx + j];
    std::size_t ny = y.tokens.size();
    for (std::size_t i = 0; i < ny; ++i)
      for (std::size_t j = 0; j < ny; ++j)
        out.adjacency[(nx + i) * n + (nx + j)] = y.adjacency[i * ny + j];
    return out;
  };
  auto ab = stitch(a, b);
  auto ba = stitch(b, a);
  std::vector<LinearizedGraph> corpus{ab};
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 2, 0.0, 42);
  auto h_ab = encode_nodes(params, ab, vocab);
  auto h_ba = encode_nodes(params, ba, vocab);
  auto na = static_cast<Eigen::Index>(a.size());
  auto nb = static_cast<Eigen::Index>(b.size());
  CHECK((h_ab.vectors.topRows(na) - h_ba.vectors.bottomRows(na)).norm() < 1e-12);
  CHECK((h_ab.vectors.bottomRows(nb) - h_ba.vectors.topRows(nb)).norm() < 1e-12);
}

TEST_CASE("structural encoding is unit-norm and self-similar", "[encoder]") {
  auto lin = lin_of("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))");
  auto a = structural_encode(lin, 256, 0);
  auto b = structural_encode(lin, 256, 0);
  CHECK(a.norm() == Catch::Approx(1.0).margin(1e-6));
  CHECK(a.vector.dot(b.vector) == Catch::Approx(1.0).margin(1e-9));
  CHECK_THROWS_AS(structural_encode(lin, 8, 0), error);
}

TEST_CASE("disjoint token sets land nearly orthogonal", "[encoder][property]") {
  Rng rng(2024);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    auto g1 = testsupport::random_graph(rng, 10, "a");
    auto g2 = testsupport::random_graph(rng, 10, "b");
    // force disjoint token sets by suffixing every concept on one side
    for (auto& n : g2.nodes) n.concept_label += "-zz";
    AmrGraph g2r;
    std::set<std::string> roles1;
    for (auto& e : g1.edges) roles1.insert(e.role);
    bool disjoint_roles = true;
    for (auto& e : g2.edges)
      if (roles1.count(e.role)) disjoint_roles = false;
    if (disjoint_roles && !g1.edges.empty()) continue;  // keep role overlap realistic
    auto v1 = structural_encode(linearize(g1), 256, 7);
    for (auto& e : g2.edges) e.role += "-zz";  // now fully disjoint
    auto v2 = structural_encode(linearize(g2), 256, 7);
    // same length bucket may collide; that is one feature among many
    if (v1.norm() == 0.0 || v2.norm() == 0.0) continue;
    CHECK(std::abs(v1.vector.dot(v2.vector)) < 0.3);
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("structural encoding ignores edge order permutations", "[encoder]") {
  auto g = testsupport::parse_or_die("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))");
  AmrGraph swapped = g;
  std::swap(swapped.edges[0], swapped.edges[1]);
  auto v1 = structural_encode(linearize(g), 128, 5);
  auto v2 = structural_encode(linearize(swapped), 128, 5);
  CHECK((v1.vector - v2.vector).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("contrastive loss hits the closed-form unit values", "[encoder]") {
  GraphEmbedding zero{Eigen::VectorXd::Zero(4)};
  GraphEmbedding e1{Eigen::VectorXd::Unit(4, 0)};
  CHECK(ct_loss(zero, zero, PairLabel::positive) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ct_loss(e1, e1, PairLabel::negative) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(ct_loss(zero, zero, PairLabel::negative) ==
        Catch::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  GraphEmbedding bad{Eigen::VectorXd::Zero(3)};
  CHECK_THROWS_AS(ct_loss(zero, bad, PairLabel::positive), error);
}

TEST_CASE("positive-pair loss falls as the dot product grows", "[encoder][property]") {
  Rng rng(88);
  for (int i = 0; i < 50; ++i) {
    double lo = 4.0 * rng.uniform() - 2.0;
    double hi = lo + 0.1 + rng.uniform();
    GraphEmbedding a{Eigen::VectorXd::Unit(2, 0)};
    GraphEmbedding b_lo{lo * Eigen::VectorXd::Unit(2, 0)};
    GraphEmbedding b_hi{hi * Eigen::VectorXd::Unit(2, 0)};
    CHECK(ct_loss(a, b_hi, PairLabel::positive) < ct_loss(a, b_lo, PairLabel::positive));
    CHECK(ct_loss(a, b_lo, PairLabel::positive) >= 0.0);
    CHECK(ct_loss(a, b_lo, PairLabel::negative) >= 0.0);
  }
}

TEST_CASE("default batches carry four positives and twelve negatives", "[encoder]") {
  Rng rng(6);
  auto corpus = random_lin_corpus(rng, 20, 8);
  auto batch = sample_ct_batch(corpus, 16, 4, 123);
  REQUIRE(batch.size() == 16);
  int pos = 0, neg = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch.labels[k] == PairLabel::positive) {
      ++pos;
      CHECK(batch.partners[k].tokens == batch.anchors[k].tokens);
    } else {
      ++neg;
    }
  }
  CHECK(pos == 4);
  CHECK(neg == 12);
}

TEST_CASE("negatives never pair a graph with itself", "[encoder][property]") {
  Rng rng(61);
  auto corpus = random_lin_corpus(rng, 40, 6);
  int draws = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto batch = sample_ct_batch(corpus, 16, 4, seed);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      if (batch.labels[k] != PairLabel::negative) continue;
      ++draws;
      CHECK(batch.anchors[k].tokens != batch.partners[k].tokens);
    }
  }
  CHECK(draws == 200 * 12);
  CHECK_THROWS_AS(sample_ct_batch(corpus, corpus.size(), 4, 0), error);
}

TEST_CASE("batch sampling is reproducible and seed-sensitive", "[encoder]") {
  Rng rng(62);
  auto corpus = random_lin_corpus(rng, 25, 6);
  auto a = sample_ct_batch(corpus, 16, 4, 99);
  auto b = sample_ct_batch(corpus, 16, 4, 99);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a.anchors[k].tokens == b.anchors[k].tokens);
    CHECK(a.partners[k].tokens == b.partners[k].tokens);
  }
}

TEST_CASE("zeroed parameters give the closed-form batch loss", "[encoder]") {
  Rng rng(63);
  auto corpus = random_lin_corpus(rng, 20, 6);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 2, 0.0, 0);
  params.embeddings.setZero();
  for (auto& w : params.adapter_w) w.setZero();
  for (auto& b : params.adapter_b) b.setZero();
  auto batch = sample_ct_batch(corpus, 16, 4, 5);
  auto r = ct_batch_loss_and_grad(params, batch, vocab);
  double expected = (4.0 * std::log(2.0) + 12.0 * std::log(1.0 + std::exp(-1.0))) / 16.0;
  CHECK(r.loss == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("duplicating every batch element leaves the mean loss unchanged", "[encoder]") {
  Rng rng(64);
  auto corpus = random_lin_corpus(rng, 12, 6);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 1, 0.0, 4);
  auto batch = sample_ct_batch(corpus, 8, 2, 17);
  CtBatch doubled = batch;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    doubled.anchors.push_back(batch.anchors[k]);
    doubled.partners.push_back(batch.partners[k]);
    doubled.labels.push_back(batch.labels[k]);
  }
  CHECK(ct_batch_loss(params, batch, vocab) ==
        Catch::Approx(ct_batch_loss(params, doubled, vocab)).epsilon(1e-12));
}

TEST_CASE("analytic CT gradients match finite differences", "[encoder][gradcheck]") {
  Rng rng(65);
  auto corpus = random_lin_corpus(rng, 12, 6);
  auto vocab = build_vocab(corpus, 1);

  for (auto pooling : {CtPooling::all_nodes_mean, CtPooling::sap_mean}) {
    auto params = init_encoder_params(vocab.size(), 8, 2, 0.0, 21);
    CtBatch batch = sample_ct_batch(corpus, 5, 2, 31);
    CtLossOptions opts;
    opts.pooling = pooling;
    auto analytic = ct_batch_loss_and_grad(params, batch, vocab, opts);
    double err = max_grad_rel_error(params, analytic.grads, [&](const EncoderParams& p) {
      return ct_batch_loss(p, batch, vocab, opts);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("CT gradients stay exact under live dropout masks", "[encoder][gradcheck]") {
  Rng rng(66);
  auto corpus = random_lin_corpus(rng, 12, 6);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 1, 0.3, 22);
  CtBatch batch = sample_ct_batch(corpus, 4, 2, 32);
  CtLossOptions opts;
  opts.train_mode = true;
  opts.dropout_salt = 77;
  auto analytic = ct_batch_loss_and_grad(params, batch, vocab, opts);
  double err = max_grad_rel_error(params, analytic.grads, [&](const EncoderParams& p) {
    return ct_batch_loss(p, batch, vocab, opts);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("twin-encoder gradients split by side and match finite differences", "[encoder][gradcheck]") {
  Rng rng(67);
  auto corpus = random_lin_corpus(rng, 10, 5);
  auto vocab = build_vocab(corpus, 1);
  auto pa = init_encoder_params(vocab.size(), 6, 1, 0.0, 23);
  auto pb = pa;
  CtBatch batch = sample_ct_batch(corpus, 4, 2, 33);
  auto analytic = ct_batch_loss_and_grad_twin(pa, pb, batch, vocab);
  double err_a = max_grad_rel_error(pa, analytic.anchor_grads, [&](const EncoderParams& p) {
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      auto a = encode_nodes(p, batch.anchors[k], vocab);
      auto b = encode_nodes(pb, batch.partners[k], vocab);
      auto plan_a = ct_pooling_plan(CtPooling::all_nodes_mean, batch.anchors[k]);
      auto plan_b = ct_pooling_plan(CtPooling::all_nodes_mean, batch.partners[k]);
      loss += ct_loss({apply_plan(plan_a, a.vectors)}, {apply_plan(plan_b, b.vectors)},
                      batch.labels[k]) /
              static_cast<double>(batch.size());
    }
    return loss;
  });
  CHECK(err_a < 1e-4);
}

TEST_CASE("training lowers the mean batch loss on a synthetic corpus", "[encoder][slow]") {
  Rng rng(68);
  auto corpus = random_lin_corpus(rng, 200, 10);
  CtTrainConfig cfg;
  cfg.dim = 32;
  cfg.rounds = 1;
  cfg.lr = 1e-2;  // scaled for the tiny model
  cfg.dropout = 0.1;
  cfg.seed = 12;
  cfg.pooling = CtPooling::all_nodes_mean;
  auto result = train_ct(corpus, cfg);
  REQUIRE(result.loss_trace.size() == 13);  // ceil(200/16)

  // mean batch loss over fixed evaluation batches, initial vs trained params
  auto init = init_encoder_params(result.vocab.size(), cfg.dim, cfg.rounds, cfg.dropout, cfg.seed);
  double before = 0.0, after = 0.0;
  for (int b = 0; b < 20; ++b) {
    auto batch = sample_ct_batch(corpus, 16, 4, 900 + static_cast<std::uint64_t>(b));
    CtLossOptions opts;
    opts.pooling = cfg.pooling;
    before += ct_batch_loss(init, batch, result.vocab, opts) / 20.0;
    after += ct_batch_loss(result.params, batch, result.vocab, opts) / 20.0;
  }
  CHECK(after < before);
}

TEST_CASE("zero learning rate leaves parameters bit-identical", "[encoder]") {
  Rng rng(69);
  auto corpus = random_lin_corpus(rng, 40, 8);
  CtTrainConfig cfg;
  cfg.dim = 16;
  cfg.rounds = 1;
  cfg.lr = 0.0;
  cfg.seed = 3;
  auto result = train_ct(corpus, cfg);
  auto vocab = build_vocab(corpus, 1);  // truncation cap never binds here
  auto fresh = init_encoder_params(vocab.size(), 16, 1, cfg.dropout, 3);
  CHECK(result.params.embeddings == fresh.embeddings);
  for (std::size_t t = 0; t < fresh.adapter_w.size(); ++t) {
    CHECK(result.params.adapter_w[t] == fresh.adapter_w[t]);
    CHECK(result.params.adapter_b[t] == fresh.adapter_b[t]);
  }
}

TEST_CASE("same seed reproduces the loss trace exactly", "[encoder]") {
  Rng rng(70);
  auto corpus = random_lin_corpus(rng, 50, 8);
  CtTrainConfig cfg;
  cfg.dim = 16;
  cfg.rounds = 1;
  cfg.lr = 1e-3;
  cfg.seed = 1234;
  auto a = train_ct(corpus, cfg);
  auto b = train_ct(corpus, cfg);
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.params.embeddings == b.params.embeddings);
}

TEST_CASE("twin-encoder training runs and keeps both sides in sync at init", "[encoder]") {
  Rng rng(71);
  auto corpus = random_lin_corpus(rng, 40, 6);
  CtTrainConfig cfg;
  cfg.dim = 8;
  cfg.rounds = 1;
  cfg.lr = 1e-3;
  cfg.twin_encoder = true;
  auto result = train_ct(corpus, cfg);
  CHECK(result.loss_trace.size() == 3);
  CHECK(result.params.finite());
}

TEST_CASE("truncation drops whole role-node pairs from the end", "[encoder]") {
  auto lin = lin_of("(s / source :ARG0 (j / joy) :ARG1 (e / eat-01))");
  auto cut = truncate_linearization(lin, 4);
  CHECK(cut.tokens == std::vector<std::string>{"source", ":ARG0", "joy"});
  CHECK(cut.adjacency.size() == 9);
  CHECK(cut.adjacent(0, 1));
  CHECK(cut.adjacent(1, 2));
  auto same = truncate_linearization(lin, 5);
  CHECK(same.tokens == lin.tokens);
}

TEST_CASE("classifier separates a linearly separable synthetic set", "[encoder][slow]") {
  // two relation motifs that differ in concepts; frozen encoder
  std::vector<LinearizedGraph> lins;
  std::vector<std::string> labels;
  Rng rng(72);
  for (int i = 0; i < 30; ++i) {
    bool a = i % 2 == 0;
    std::string text = a ? "(c / cause-01 :ARG0 (x / joy) :ARG1 (y / eat-01))"
                         : "(h / hold-01 :ARG0 (x / bottle) :ARG1 (y / rum))";
    lins.push_back(lin_of(text));
    labels.push_back(a ? "Cause-Effect" : "Content-Container");
  }
  auto vocab = build_vocab(lins, 1);
  auto params = init_encoder_params(vocab.size(), 16, 1, 0.0, 5);
  std::vector<ClassifierInstance> data;
  for (std::size_t i = 0; i < lins.size(); ++i)
    data.push_back({lins[i], all_nodes_mean_plan(lins[i].size()), Eigen::VectorXd(), labels[i]});
  ClassifierConfig cfg;
  cfg.freeze_encoder = true;
  cfg.epochs = 200;
  cfg.lr = 0.5;
  cfg.hidden = 16;
  auto result = train_relation_classifier(data, {"Cause-Effect", "Content-Container", "NULL"},
                                          params, vocab, cfg);
  int correct = 0;
  for (const auto& inst : data) {
    auto input = detail::relation_input(result.encoder, vocab, inst, nullptr);
    if (classify(result.head, input) == inst.label) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(data.size()) >= 0.95);
  // freeze contract: encoder untouched
  CHECK(result.encoder.embeddings == params.embeddings);
}

TEST_CASE("classifier gradients match finite differences", "[encoder][gradcheck]") {
  Rng rng(73);
  auto corpus = random_lin_corpus(rng, 6, 5);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 1, 0.0, 6);
  std::vector<ClassifierInstance> data;
  std::vector<std::string> label_set{"A", "B", "NULL"};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Eigen::VectorXd sent(2);
    sent << rng.uniform(), rng.uniform();
    data.push_back({corpus[i], all_nodes_mean_plan(corpus[i].size()), sent,
                    label_set[i % 2]});
  }
  ClassifierConfig cfg;
  cfg.freeze_encoder = false;
  cfg.epochs = 1;
  cfg.lr = 0.0;  // keep params fixed so the single epoch reports init gradients
  cfg.hidden = 4;
  cfg.seed = 8;
  auto result = train_relation_classifier(data, label_set, params, vocab, cfg);

  // head finite differences
  auto head = result.head;
  double eps = 1e-5;
  auto loss_at = [&](const ClassifierParams& h, const EncoderParams& p) {
    return classifier_loss(data, h, p, vocab);
  };
  // recompute analytic gradients by comparing a tiny SGD step's direction
  // against central differences over one representative weight of each block
  ClassifierConfig step_cfg = cfg;
  step_cfg.lr = 1.0;
  auto stepped = train_relation_classifier(data, label_set, params, vocab, step_cfg);
  auto check_block = [&](double& slot, double analytic_grad) {
    double keep = slot;
    slot = keep + eps;
    double up = loss_at(head, params);
    slot = keep - eps;
    double down = loss_at(head, params);
    slot = keep;
    double fd = (up - down) / (2.0 * eps);
    CHECK(std::abs(analytic_grad - fd) / std::max({std::abs(fd), std::abs(analytic_grad), 1e-3}) <
          1e-4);
  };
  // analytic gradient = (init - stepped) at lr 1
  for (Eigen::Index i = 0; i < head.w1.size(); i += 7)
    check_block(head.w1.data()[i], head.w1.data()[i] - stepped.head.w1.data()[i]);
  for (Eigen::Index i = 0; i < head.w2.size(); i += 3)
    check_block(head.w2.data()[i], head.w2.data()[i] - stepped.head.w2.data()[i]);
  for (Eigen::Index i = 0; i < head.b2.size(); ++i)
    check_block(head.b2.data()[i], head.b2.data()[i] - stepped.head.b2.data()[i]);

  // encoder-side gradients via the same trick
  auto probe_encoder = [&](double& slot, double analytic_grad) {
    double keep = slot;
    slot = keep + eps;
    double up = loss_at(head, params);
    slot = keep - eps;
    double down = loss_at(head, params);
    slot = keep;
    double fd = (up - down) / (2.0 * eps);
    CHECK(std::abs(analytic_grad - fd) / std::max({std::abs(fd), std::abs(analytic_grad), 1e-3}) <
          1e-4);
  };
  for (Eigen::Index i = 0; i < params.embeddings.size(); i += 13)
    probe_encoder(params.embeddings.data()[i],
                  params.embeddings.data()[i] - stepped.encoder.embeddings.data()[i]);
  for (Eigen::Index i = 0; i < params.adapter_w[0].size(); i += 5)
    probe_encoder(params.adapter_w[0].data()[i],
                  params.adapter_w[0].data()[i] - stepped.encoder.adapter_w[0].data()[i]);
}

TEST_CASE("classifier rejects unknown labels and empty data", "[encoder]") {
  Rng rng(74);
  auto corpus = random_lin_corpus(rng, 3, 4);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 4, 0, 0.0, 7);
  std::vector<ClassifierInstance> data{
      {corpus[0], all_nodes_mean_plan(corpus[0].size()), Eigen::VectorXd(), "unknown"}};
  CHECK_THROWS_AS(train_relation_classifier(data, {"A", "B"}, params, vocab, {}), error);
  std::vector<ClassifierInstance> empty;
  CHECK_THROWS_AS(train_relation_classifier(empty, {"A"}, params, vocab, {}), error);
}

TEST_CASE("checkpoints round-trip parameters and vocabulary", "[encoder]") {
  Rng rng(75);
  auto corpus = random_lin_corpus(rng, 10, 6);
  auto vocab = build_vocab(corpus, 1);
  auto params = init_encoder_params(vocab.size(), 8, 2, 0.1, 9);
  std::string path = "/tmp/amricl_test_ckpt.arep";
  save_checkpoint(path, params, vocab);
  auto ck = load_checkpoint(path);
  CHECK(ck.params.dim == 8);
  CHECK(ck.params.rounds == 2);
  CHECK(ck.vocab.id_to_token == vocab.id_to_token);
  // float32 storage: equal after the same narrowing
  for (Eigen::Index i = 0; i < params.embeddings.size(); ++i)
    CHECK(ck.params.embeddings.data()[i] ==
          static_cast<double>(static_cast<float>(params.embeddings.data()[i])));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader distinguishes its error cases", "[encoder]") {
  std::string path = "/tmp/amricl_bad_ckpt.arep";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPEimmaterial";
  }
  CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("bad magic"));
  {
    std::ofstream out(path, std::ios::binary);
    out << "AREP";
    amricl::detail::write_u16le(out, 9);
  }
  CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("version mismatch"));
  {
    std::ofstream out(path, std::ios::binary);
    out << "AREP";
    amricl::detail::write_u16le(out, 1);
    amricl::detail::write_u32le(out, 4);
  }
  CHECK_THROWS_WITH(load_checkpoint(path), Catch::Matchers::ContainsSubstring("truncated"));
  std::filesystem::remove(path);
}

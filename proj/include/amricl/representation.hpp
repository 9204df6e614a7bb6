#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "amricl/encoder.hpp"
#include "amricl/graph.hpp"

namespace amricl {

enum class PathMode { path_only, graph_enhanced };
enum class PoolMode { mean, concatenation };

/// One cell of the pooling x path-modeling configuration matrix.
struct RepresentationConfig {
  PathMode path_mode = PathMode::graph_enhanced;
  PoolMode pooling = PoolMode::mean;
};

struct GraphReRepresentation {
  Eigen::VectorXd vector;  // dim d for mean pooling, 3d for concatenation
  RepresentationConfig config;
};

/// Externally produced marker-based sentence vector.
struct SentenceReRepresentation {
  Eigen::VectorXd vector;
  std::string source_id;
};

struct RelationRepresentation {
  Eigen::VectorXd vector;
  bool has_graph = false;
  bool has_sentence = false;
};

// ---------------------------------------------------------------------------
// Path pooling

/// Mean over the path's nodes; a var with several token rows (re-entrancy)
/// contributes the mean of its rows.
inline PoolingPlan mean_plan(const std::vector<std::string>& origin_vars,
                             const std::vector<std::string>& path_vars) {
  PoolingPlan plan;
  plan.blocks.emplace_back();
  double per_var = 1.0 / static_cast<double>(path_vars.size());
  for (const auto& var : path_vars) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < origin_vars.size(); ++i)
      if (origin_vars[i] == var) rows.push_back(static_cast<int>(i));
    if (rows.empty()) throw error("pool_mean: path var '" + var + "' has no token row");
    for (int r : rows)
      plan.blocks[0].emplace_back(r, per_var / static_cast<double>(rows.size()));
  }
  return plan;
}

/// Object block, subject block, then the mean of the intermediate nodes;
/// adjacent entities (no intermediates) get a zero third block.
inline PoolingPlan concat_plan(const std::vector<std::string>& origin_vars,
                               const std::vector<std::string>& path_vars) {
  if (path_vars.size() < 2)
    throw error("pool_concat: path must contain at least the entity pair");
  auto rows_of = [&](const std::string& var) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < origin_vars.size(); ++i)
      if (origin_vars[i] == var) rows.push_back(static_cast<int>(i));
    if (rows.empty()) throw error("pool_concat: path var '" + var + "' has no token row");
    return rows;
  };
  PoolingPlan plan;
  plan.blocks.resize(3);
  for (int r : rows_of(path_vars.front()))
    plan.blocks[0].emplace_back(r, 1.0 / static_cast<double>(rows_of(path_vars.front()).size()));
  for (int r : rows_of(path_vars.back()))
    plan.blocks[1].emplace_back(r, 1.0 / static_cast<double>(rows_of(path_vars.back()).size()));
  std::size_t intermediates = path_vars.size() - 2;
  for (std::size_t p = 1; p + 1 < path_vars.size(); ++p) {
    auto rows = rows_of(path_vars[p]);
    for (int r : rows)
      plan.blocks[2].emplace_back(
          r, 1.0 / (static_cast<double>(intermediates) * static_cast<double>(rows.size())));
  }
  return plan;
}

inline Eigen::VectorXd pool_mean(const NodeEmbeddings& h, const SapPath& path) {
  return apply_plan(mean_plan(h.token_origin, path.node_vars), h.vectors);
}

inline Eigen::VectorXd pool_concat(const NodeEmbeddings& h, const SapPath& path) {
  return apply_plan(concat_plan(h.token_origin, path.node_vars), h.vectors);
}

inline PoolingPlan representation_plan(const RepresentationConfig& cfg,
                                       const std::vector<std::string>& origin_vars,
                                       const std::vector<std::string>& path_vars) {
  return cfg.pooling == PoolMode::mean ? mean_plan(origin_vars, path_vars)
                                       : concat_plan(origin_vars, path_vars);
}

// ---------------------------------------------------------------------------
// Encoder backends

/// Trained message-passing encoder (checkpoint-backed).
struct TrainedBackend {
  const EncoderParams* params;
  const Vocabulary* vocab;
};

/// Feature-hashing fallback used when no checkpoint exists.
struct StructuralBackend {
  int dim = 256;
  std::uint64_t seed = 0;
};

using EncoderBackend = std::variant<TrainedBackend, StructuralBackend>;

namespace detail {

/// Path nodes plus their direct neighbors, with every edge touching the
/// path. The structural analog of context flowing into path nodes.
inline AmrGraph context_subgraph(const AmrGraph& g, const SapPath& path) {
  std::set<std::string> path_vars(path.node_vars.begin(), path.node_vars.end());
  std::set<std::string> keep = path_vars;
  std::vector<int> edges;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& edge = g.edges[e];
    if (!path_vars.count(edge.source) && !path_vars.count(edge.target)) continue;
    keep.insert(edge.source);
    keep.insert(edge.target);
    edges.push_back(static_cast<int>(e));
  }
  AmrGraph out;
  for (const auto& n : g.nodes)
    if (keep.count(n.var)) out.nodes.push_back(n);
  for (int e : edges) out.edges.push_back(g.edges[static_cast<std::size_t>(e)]);
  // same root rule as extract_subgraph
  AmrGraph probe = extract_subgraph(g, path);
  out.root = probe.root;
  return out;
}

inline LinearizedGraph singleton_linearization(const AmrGraph& g, const std::string& var) {
  AmrGraph one;
  one.nodes.push_back(*g.find_node(var));
  one.root = var;
  return linearize(one);
}

}  // namespace detail

/// Builds R_graph for one entity pair under the selected configuration.
///
/// path_only isolates the shortest AMR path: the path subgraph alone is
/// encoded and pooled. graph_enhanced encodes the whole graph so path-node
/// representations absorb neighborhood context, then pools only path rows.
inline GraphReRepresentation graph_representation(const AmrGraph& g, const std::string& obj_var,
                                                  const std::string& sub_var,
                                                  const RepresentationConfig& cfg,
                                                  const EncoderBackend& backend) {
  auto path = shortest_amr_path(g, obj_var, sub_var);
  if (!path) throw error("graph_representation: no path between entity nodes");

  GraphReRepresentation out;
  out.config = cfg;

  if (const auto* trained = std::get_if<TrainedBackend>(&backend)) {
    const AmrGraph* encode_target = &g;
    AmrGraph sub;
    if (cfg.path_mode == PathMode::path_only) {
      sub = extract_subgraph(g, *path);
      encode_target = &sub;
    }
    LinearizedGraph lin = linearize(*encode_target);
    NodeEmbeddings h = encode_nodes(*trained->params, lin, *trained->vocab);
    out.vector = apply_plan(representation_plan(cfg, h.token_origin, path->node_vars), h.vectors);
    return out;
  }

  const auto& structural = std::get<StructuralBackend>(backend);
  AmrGraph focus = cfg.path_mode == PathMode::path_only
                       ? extract_subgraph(g, *path)
                       : detail::context_subgraph(g, *path);
  GraphEmbedding whole = structural_encode(linearize(focus), structural.dim, structural.seed);
  if (cfg.pooling == PoolMode::mean) {
    out.vector = whole.vector;
    return out;
  }
  GraphEmbedding obj = structural_encode(detail::singleton_linearization(g, obj_var),
                                         structural.dim, structural.seed);
  GraphEmbedding sub = structural_encode(detail::singleton_linearization(g, sub_var),
                                         structural.dim, structural.seed);
  out.vector.resize(3 * structural.dim);
  out.vector << obj.vector, sub.vector, whole.vector;
  return out;
}

// ---------------------------------------------------------------------------
// Entity markers

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// Wraps the subject in [SUB_<TYPE>] ... [/SUB_<TYPE>] and the object in
/// [OBJ_<TYPE>] ... [/OBJ_<TYPE>], inserting right-to-left so offsets stay
/// valid. No [CLS]/[SEP] framing; that belongs to the external encoder.
inline std::string insert_entity_markers(const std::string& text, CharSpan subj_span,
                                         const std::string& subj_type, CharSpan obj_span,
                                         const std::string& obj_type) {
  auto check = [&](CharSpan s, const char* which) {
    if (s.begin > s.end || s.end > text.size())
      throw error(std::string("insert_entity_markers: ") + which + " span out of bounds");
  };
  check(subj_span, "subject");
  check(obj_span, "object");
  bool subj_first = subj_span.begin <= obj_span.begin;
  const CharSpan& lo = subj_first ? subj_span : obj_span;
  const CharSpan& hi = subj_first ? obj_span : subj_span;
  if (lo.end > hi.begin) throw error("insert_entity_markers: overlapping spans");

  auto to_upper = [](const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  };
  std::string su = to_upper(subj_type);
  std::string ou = to_upper(obj_type);

  std::string out = text;
  auto wrap = [&out](CharSpan s, const std::string& open, const std::string& close) {
    out.insert(s.end, " " + close);
    out.insert(s.begin, open + " ");
  };
  // later span first so earlier offsets stay valid
  if (subj_first) {
    wrap(obj_span, "[OBJ_" + ou + "]", "[/OBJ_" + ou + "]");
    wrap(subj_span, "[SUB_" + su + "]", "[/SUB_" + su + "]");
  } else {
    wrap(subj_span, "[SUB_" + su + "]", "[/SUB_" + su + "]");
    wrap(obj_span, "[OBJ_" + ou + "]", "[/OBJ_" + ou + "]");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relation representation

/// R_rel: graph part then sentence part, either optional but not both.
inline RelationRepresentation relation_representation(
    const std::optional<GraphReRepresentation>& graph_part,
    const std::optional<SentenceReRepresentation>& sent_part) {
  if (!graph_part && !sent_part)
    throw error("relation_representation: both parts absent");
  RelationRepresentation out;
  Eigen::Index dim = (graph_part ? graph_part->vector.size() : 0) +
                     (sent_part ? sent_part->vector.size() : 0);
  out.vector.resize(dim);
  Eigen::Index at = 0;
  if (graph_part) {
    out.vector.segment(0, graph_part->vector.size()) = graph_part->vector;
    at += graph_part->vector.size();
    out.has_graph = true;
  }
  if (sent_part) {
    out.vector.segment(at, sent_part->vector.size()) = sent_part->vector;
    out.has_sentence = true;
  }
  return out;
}

}  // namespace amricl

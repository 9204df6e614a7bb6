#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "amricl/detail/common.hpp"

namespace amricl {

struct AmrNode {
  std::string var;
  std::string concept_label;
  bool is_constant = false;

  bool operator==(const AmrNode&) const = default;
};

struct AmrEdge {
  std::string source;
  std::string role;  // as written, ":"-prefixed
  std::string target;
  bool inverse = false;  // role carries an "-of" suffix

  bool operator==(const AmrEdge&) const = default;
};

/// Rooted, directed, labeled semantic graph. Nodes and edges keep their
/// textual order so traversal and serialization are reproducible.
struct AmrGraph {
  std::vector<AmrNode> nodes;
  std::vector<AmrEdge> edges;
  std::string root;

  const AmrNode* find_node(const std::string& var) const {
    for (const auto& n : nodes)
      if (n.var == var) return &n;
    return nullptr;
  }

  int node_index(const std::string& var) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].var == var) return static_cast<int>(i);
    return -1;
  }

  bool has_node(const std::string& var) const { return find_node(var) != nullptr; }

  /// Set of role labels appearing on edges.
  std::set<std::string> role_types() const {
    std::set<std::string> out;
    for (const auto& e : edges) out.insert(e.role);
    return out;
  }

  /// Structural validity: non-empty rooted graph, unique vars, non-empty
  /// concepts, every edge endpoint present.
  bool valid(std::string* why = nullptr) const {
    auto fail = [&](const std::string& msg) {
      if (why) *why = msg;
      return false;
    };
    if (nodes.empty()) return fail("graph has no nodes");
    if (root.empty() || !has_node(root)) return fail("root missing from node set");
    std::set<std::string> seen;
    for (const auto& n : nodes) {
      if (n.var.empty()) return fail("node with empty var");
      if (n.concept_label.empty()) return fail("node '" + n.var + "' has empty concept");
      if (!seen.insert(n.var).second) return fail("duplicate var '" + n.var + "'");
    }
    for (const auto& e : edges) {
      if (e.role.empty() || e.role[0] != ':')
        return fail("edge role '" + e.role + "' not ':'-prefixed");
      if (!has_node(e.source) || !has_node(e.target))
        return fail("edge " + e.source + " " + e.role + " " + e.target +
                    " references a missing node");
    }
    return true;
  }
};

/// Undirected shortest path between an entity pair, ordered object-first.
struct SapPath {
  std::vector<std::string> node_vars;  // [obj, p_1, ..., p_n, sub]
  std::vector<int> edge_indices;       // into the parent graph's edge list

  std::size_t length() const { return edge_indices.size(); }
};

enum class TokenKind { node, role };

/// Depth-first token sequence with the token-level adjacency matrix.
/// Each labeled edge contributes a role token linked to its two endpoint
/// node tokens; re-entrant visits repeat the concept token.
struct LinearizedGraph {
  std::vector<std::string> tokens;
  std::vector<TokenKind> token_kind;
  std::vector<std::string> origin_var;  // node tokens: source var, else ""
  std::vector<int> origin_edge;         // role tokens: edge index, else -1
  std::vector<std::uint8_t> adjacency;  // dense |tokens|^2, symmetric, zero diagonal

  std::size_t size() const { return tokens.size(); }

  bool adjacent(std::size_t i, std::size_t j) const {
    return adjacency[i * size() + j] != 0;
  }

  std::vector<int> neighbors(std::size_t i) const {
    std::vector<int> out;
    for (std::size_t j = 0; j < size(); ++j)
      if (adjacent(i, j)) out.push_back(static_cast<int>(j));
    return out;
  }
};

namespace detail {

// Per-node incident edge lists in stored edge order. For edge i (s,r,t) the
// entry is (i, other endpoint, outgoing?).
struct IncidenceEntry {
  int edge;
  int other;
  bool outgoing;
};

inline std::vector<std::vector<IncidenceEntry>> incidence(const AmrGraph& g) {
  std::map<std::string, int> idx;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    idx[g.nodes[i].var] = static_cast<int>(i);
  std::vector<std::vector<IncidenceEntry>> inc(g.nodes.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    int s = idx.at(g.edges[e].source);
    int t = idx.at(g.edges[e].target);
    inc[static_cast<std::size_t>(s)].push_back({static_cast<int>(e), t, true});
    if (t != s)
      inc[static_cast<std::size_t>(t)].push_back({static_cast<int>(e), s, false});
  }
  return inc;
}

}  // namespace detail

/// Joins two sentence graphs under a fresh shared root so cross-sentence
/// entity pairs become path-connected.
inline AmrGraph merge_pair(const AmrGraph& g1, const AmrGraph& g2) {
  std::string why;
  if (!g1.valid(&why)) throw error("merge_pair: first graph invalid: " + why);
  if (!g2.valid(&why)) throw error("merge_pair: second graph invalid: " + why);
  std::set<std::string> vars;
  for (const auto& n : g1.nodes) vars.insert(n.var);
  for (const auto& n : g2.nodes)
    if (!vars.insert(n.var).second)
      throw error("merge_pair: variable collision on '" + n.var + "'");
  if (vars.count("_multi"))
    throw error("merge_pair: variable collision on '_multi'");

  AmrGraph out;
  out.root = "_multi";
  out.nodes.push_back({"_multi", "multi-sentence", false});
  out.nodes.insert(out.nodes.end(), g1.nodes.begin(), g1.nodes.end());
  out.nodes.insert(out.nodes.end(), g2.nodes.begin(), g2.nodes.end());
  out.edges.push_back({"_multi", ":snt1", g1.root, false});
  out.edges.push_back({"_multi", ":snt2", g2.root, false});
  out.edges.insert(out.edges.end(), g1.edges.begin(), g1.edges.end());
  out.edges.insert(out.edges.end(), g2.edges.begin(), g2.edges.end());
  return out;
}

/// Renames vars in `g` that collide with `taken`, appending "~2" until free.
inline AmrGraph resolve_collisions(const AmrGraph& g, const std::set<std::string>& taken) {
  std::set<std::string> used = taken;
  for (const auto& n : g.nodes) used.insert(n.var);
  std::map<std::string, std::string> rename;
  for (const auto& n : g.nodes) {
    if (!taken.count(n.var)) continue;
    std::string fresh = n.var;
    do {
      fresh += "~2";
    } while (used.count(fresh));
    used.insert(fresh);
    rename[n.var] = fresh;
  }
  if (rename.empty()) return g;
  AmrGraph out = g;
  auto apply = [&](std::string& v) {
    auto it = rename.find(v);
    if (it != rename.end()) v = it->second;
  };
  for (auto& n : out.nodes) apply(n.var);
  for (auto& e : out.edges) {
    apply(e.source);
    apply(e.target);
  }
  apply(out.root);
  return out;
}

/// Minimum-hop path between two entity nodes, edges treated as undirected.
/// BFS expands neighbors in stored edge order, so ties resolve
/// deterministically. Returns nullopt when the nodes are disconnected.
inline std::optional<SapPath> shortest_amr_path(const AmrGraph& g,
                                                const std::string& obj_var,
                                                const std::string& sub_var) {
  int start = g.node_index(obj_var);
  int goal = g.node_index(sub_var);
  if (start < 0) throw error("shortest_amr_path: node '" + obj_var + "' not in graph");
  if (goal < 0) throw error("shortest_amr_path: node '" + sub_var + "' not in graph");

  if (start == goal) {
    SapPath p;
    p.node_vars.push_back(obj_var);
    return p;
  }

  auto inc = detail::incidence(g);
  std::vector<int> parent(g.nodes.size(), -1);
  std::vector<int> parent_edge(g.nodes.size(), -1);
  std::vector<bool> seen(g.nodes.size(), false);
  std::deque<int> queue;
  seen[static_cast<std::size_t>(start)] = true;
  queue.push_back(start);
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    for (const auto& entry : inc[static_cast<std::size_t>(v)]) {
      if (seen[static_cast<std::size_t>(entry.other)]) continue;
      seen[static_cast<std::size_t>(entry.other)] = true;
      parent[static_cast<std::size_t>(entry.other)] = v;
      parent_edge[static_cast<std::size_t>(entry.other)] = entry.edge;
      if (entry.other == goal) {
        SapPath p;
        int cur = goal;
        while (cur != start) {
          p.node_vars.push_back(g.nodes[static_cast<std::size_t>(cur)].var);
          p.edge_indices.push_back(parent_edge[static_cast<std::size_t>(cur)]);
          cur = parent[static_cast<std::size_t>(cur)];
        }
        p.node_vars.push_back(obj_var);
        std::reverse(p.node_vars.begin(), p.node_vars.end());
        std::reverse(p.edge_indices.begin(), p.edge_indices.end());
        return p;
      }
      queue.push_back(entry.other);
    }
  }
  return std::nullopt;
}

/// Restricts `g` to exactly the path's nodes and edges. Original node and
/// edge order is kept, so a path covering the whole graph reproduces it
/// verbatim. The root is the path node nearest the original root
/// (undirected hops; ties go to the earlier path position).
inline AmrGraph extract_subgraph(const AmrGraph& g, const SapPath& path) {
  if (path.node_vars.empty()) throw error("extract_subgraph: empty path");
  std::set<std::string> keep_vars;
  for (const auto& v : path.node_vars) {
    if (!g.has_node(v)) throw error("extract_subgraph: path var '" + v + "' not in graph");
    keep_vars.insert(v);
  }
  std::set<int> keep_edges;
  for (int e : path.edge_indices) {
    if (e < 0 || static_cast<std::size_t>(e) >= g.edges.size())
      throw error("extract_subgraph: edge index out of range");
    keep_edges.insert(e);
  }

  AmrGraph out;
  for (const auto& n : g.nodes)
    if (keep_vars.count(n.var)) out.nodes.push_back(n);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    if (keep_edges.count(static_cast<int>(e))) out.edges.push_back(g.edges[e]);

  // BFS hop distances from the original root over the full graph.
  auto inc = detail::incidence(g);
  std::vector<int> dist(g.nodes.size(), -1);
  int r = g.node_index(g.root);
  if (r < 0) throw error("extract_subgraph: graph has no root");
  dist[static_cast<std::size_t>(r)] = 0;
  std::deque<int> queue{r};
  while (!queue.empty()) {
    int v = queue.front();
    queue.pop_front();
    for (const auto& entry : inc[static_cast<std::size_t>(v)]) {
      if (dist[static_cast<std::size_t>(entry.other)] >= 0) continue;
      dist[static_cast<std::size_t>(entry.other)] = dist[static_cast<std::size_t>(v)] + 1;
      queue.push_back(entry.other);
    }
  }
  int best = -1;
  std::string best_var;
  for (const auto& v : path.node_vars) {
    int d = dist[static_cast<std::size_t>(g.node_index(v))];
    if (d < 0) continue;
    if (best < 0 || d < best) {
      best = d;
      best_var = v;
    }
  }
  out.root = best >= 0 ? best_var : path.node_vars.front();
  return out;
}

/// Depth-first linearization from the root following stored edge order.
/// Emits a node token per visit and a role token before each descended
/// edge; re-entrant targets repeat their concept token without re-descent.
/// Nodes reachable only against edge direction are attached in a follow-up
/// sweep so any connected graph linearizes.
inline LinearizedGraph linearize(const AmrGraph& g) {
  std::string why;
  if (!g.valid(&why)) throw error("linearize: invalid graph: " + why);

  auto inc = detail::incidence(g);
  int root = g.node_index(g.root);

  LinearizedGraph lin;
  std::vector<std::pair<int, int>> links;
  std::vector<bool> node_visited(g.nodes.size(), false);
  std::vector<bool> edge_done(g.edges.size(), false);
  std::vector<int> last_token_of(g.nodes.size(), -1);

  auto emit_node = [&](int node) {
    lin.tokens.push_back(g.nodes[static_cast<std::size_t>(node)].concept_label);
    lin.token_kind.push_back(TokenKind::node);
    lin.origin_var.push_back(g.nodes[static_cast<std::size_t>(node)].var);
    lin.origin_edge.push_back(-1);
    last_token_of[static_cast<std::size_t>(node)] = static_cast<int>(lin.tokens.size()) - 1;
    return static_cast<int>(lin.tokens.size()) - 1;
  };
  auto emit_role = [&](int edge) {
    lin.tokens.push_back(g.edges[static_cast<std::size_t>(edge)].role);
    lin.token_kind.push_back(TokenKind::role);
    lin.origin_var.push_back("");
    lin.origin_edge.push_back(edge);
    return static_cast<int>(lin.tokens.size()) - 1;
  };

  // Directed descent; `here` is the token index of the current visit.
  auto dfs = [&](auto&& self, int node, int here) -> void {
    node_visited[static_cast<std::size_t>(node)] = true;
    for (const auto& entry : inc[static_cast<std::size_t>(node)]) {
      if (!entry.outgoing || edge_done[static_cast<std::size_t>(entry.edge)]) continue;
      edge_done[static_cast<std::size_t>(entry.edge)] = true;
      int role_tok = emit_role(entry.edge);
      links.emplace_back(here, role_tok);
      int child_tok = emit_node(entry.other);
      links.emplace_back(role_tok, child_tok);
      if (!node_visited[static_cast<std::size_t>(entry.other)])
        self(self, entry.other, child_tok);
    }
  };
  dfs(dfs, root, emit_node(root));

  // Attach anything the directed pass missed by walking untraversed edges
  // from their visited endpoint.
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      if (edge_done[e]) continue;
      int s = g.node_index(g.edges[e].source);
      int t = g.node_index(g.edges[e].target);
      bool sv = node_visited[static_cast<std::size_t>(s)];
      bool tv = node_visited[static_cast<std::size_t>(t)];
      if (!sv && !tv) continue;
      edge_done[e] = true;
      progress = true;
      int from = sv ? s : t;
      int to = sv ? t : s;
      int role_tok = emit_role(static_cast<int>(e));
      links.emplace_back(last_token_of[static_cast<std::size_t>(from)], role_tok);
      int to_tok = emit_node(to);
      links.emplace_back(role_tok, to_tok);
      if (!node_visited[static_cast<std::size_t>(to)]) dfs(dfs, to, to_tok);
    }
  }
  for (bool v : node_visited)
    if (!v) throw error("linearize: graph is disconnected");

  std::size_t n = lin.tokens.size();
  lin.adjacency.assign(n * n, 0);
  for (auto [a, b] : links) {
    lin.adjacency[static_cast<std::size_t>(a) * n + static_cast<std::size_t>(b)] = 1;
    lin.adjacency[static_cast<std::size_t>(b) * n + static_cast<std::size_t>(a)] = 1;
  }
  return lin;
}

/// Entity var lookup: explicit var if present, else first node whose concept
/// (sense suffix stripped) matches the mention case-insensitively.
inline std::optional<std::string> resolve_entity_var(const AmrGraph& g,
                                                     const std::optional<std::string>& explicit_var,
                                                     const std::string& mention) {
  if (explicit_var && !explicit_var->empty()) {
    if (g.has_node(*explicit_var)) return *explicit_var;
    return std::nullopt;
  }
  std::string want = detail::to_lower(detail::trim(mention));
  for (const auto& n : g.nodes) {
    std::string c = detail::to_lower(n.concept_label);
    if (c == want) return n.var;
    auto dash = c.rfind('-');
    if (dash != std::string::npos && dash + 1 < c.size()) {
      bool digits = true;
      for (std::size_t i = dash + 1; i < c.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(c[i]))) digits = false;
      if (digits && c.substr(0, dash) == want) return n.var;
    }
  }
  return std::nullopt;
}

}  // namespace amricl

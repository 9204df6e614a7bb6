#pragma once

#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "amricl/graph.hpp"

namespace amricl {

enum class Severity { error, warning };

struct ParseDiagnostic {
  int line = 1;    // 1-based
  int column = 1;  // 1-based
  std::string message;
  Severity severity = Severity::error;
};

/// One corpus block: `# ::key value` metadata lines plus the raw graph text.
struct PenmanDocument {
  std::map<std::string, std::string> metadata;
  std::string body;
};

struct ParseResult {
  std::optional<AmrGraph> graph;
  std::vector<ParseDiagnostic> diagnostics;

  bool ok() const { return graph.has_value(); }
};

namespace detail {

struct PenmanToken {
  enum Kind { lparen, rparen, slash, role, atom, string, end } kind;
  std::string text;
  int line;
  int column;
};

class PenmanLexer {
 public:
  explicit PenmanLexer(std::string_view text) : text_(text) {}

  PenmanToken next() {
    skip_ws();
    int line = line_, col = col_;
    if (pos_ >= text_.size()) return {PenmanToken::end, "", line, col};
    char c = text_[pos_];
    if (c == '(') return advance(), PenmanToken{PenmanToken::lparen, "(", line, col};
    if (c == ')') return advance(), PenmanToken{PenmanToken::rparen, ")", line, col};
    if (c == '/') return advance(), PenmanToken{PenmanToken::slash, "/", line, col};
    if (c == '"') {
      std::string out;
      out.push_back('"');
      advance();
      while (pos_ < text_.size() && text_[pos_] != '"') {
        if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) {
          out.push_back(text_[pos_]);
          advance();
        }
        out.push_back(text_[pos_]);
        advance();
      }
      if (pos_ < text_.size()) {
        out.push_back('"');
        advance();
      }
      return {PenmanToken::string, out, line, col};
    }
    std::string out;
    bool is_role = c == ':';
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')' && text_[pos_] != '/') {
      out.push_back(text_[pos_]);
      advance();
    }
    return {is_role ? PenmanToken::role : PenmanToken::atom, out, line, col};
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

inline bool numeric_literal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  bool digits = false;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, digits = true;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, digits = true;
  }
  if (digits && i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    bool exp = false;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, exp = true;
    if (!exp) return false;
  }
  return digits && i == s.size();
}

// Targets that are never variable references: quoted strings, numbers, and
// the bare polarity/politeness marks.
inline bool constant_literal(std::string_view s) {
  if (s.empty()) return false;
  if (s.front() == '"') return true;
  if (s == "-" || s == "+") return true;
  return numeric_literal(s);
}

inline bool role_is_inverse(std::string_view role) {
  return role.size() > 3 && role.substr(role.size() - 3) == "-of";
}

struct PenmanParser {
  PenmanLexer lexer;
  PenmanToken tok;
  AmrGraph graph;
  std::vector<ParseDiagnostic> diags;
  // (edge index, token) for bare targets resolved after the full pass
  std::vector<std::pair<std::size_t, PenmanToken>> pending_refs;
  int const_counter = 0;

  explicit PenmanParser(std::string_view text) : lexer(text) { tok = lexer.next(); }

  void bump() { tok = lexer.next(); }

  void fail(const PenmanToken& at, const std::string& msg) {
    diags.push_back({at.line, at.column, msg, Severity::error});
  }

  bool expect(PenmanToken::Kind kind, const std::string& what) {
    if (tok.kind == kind) return true;
    if (tok.kind == PenmanToken::end && (kind == PenmanToken::rparen || kind == PenmanToken::lparen))
      fail(tok, "unbalanced parentheses");
    else
      fail(tok, "expected " + what);
    return false;
  }

  // Parses `(var / concept :role target ...)`, returns the variable.
  std::optional<std::string> parse_node() {
    if (!expect(PenmanToken::lparen, "'('")) return std::nullopt;
    bump();
    if (tok.kind != PenmanToken::atom) {
      if (tok.kind == PenmanToken::end)
        fail(tok, "unbalanced parentheses");
      else
        fail(tok, "expected variable name");
      return std::nullopt;
    }
    PenmanToken var_tok = tok;
    std::string var = tok.text;
    bump();
    if (tok.kind != PenmanToken::slash) {
      fail(var_tok, "missing '/' concept on first mention of variable '" + var + "'");
      return std::nullopt;
    }
    bump();
    if (tok.kind != PenmanToken::atom && tok.kind != PenmanToken::string) {
      fail(tok, "expected concept after '/'");
      return std::nullopt;
    }
    std::string concept_text = tok.text;
    bump();

    if (graph.has_node(var)) {
      fail(var_tok, "duplicate concept assignment to variable '" + var + "'");
      return std::nullopt;
    }
    graph.nodes.push_back({var, concept_text, false});

    while (tok.kind == PenmanToken::role) {
      std::string role = tok.text;
      if (role.size() < 2) fail(tok, "empty role label");
      bump();
      std::size_t edge_idx = graph.edges.size();
      graph.edges.push_back({var, role, "", role_is_inverse(role)});
      if (tok.kind == PenmanToken::lparen) {
        auto child = parse_node();
        if (!child) return std::nullopt;
        graph.edges[edge_idx].target = *child;
      } else if (tok.kind == PenmanToken::atom || tok.kind == PenmanToken::string) {
        if (constant_literal(tok.text)) {
          std::string cvar = "_const" + std::to_string(const_counter++);
          graph.nodes.push_back({cvar, tok.text, true});
          graph.edges[edge_idx].target = cvar;
        } else {
          pending_refs.emplace_back(edge_idx, tok);
        }
        bump();
      } else {
        if (tok.kind == PenmanToken::end)
          fail(tok, "unbalanced parentheses");
        else
          fail(tok, "expected target after role '" + role + "'");
        return std::nullopt;
      }
    }
    if (!expect(PenmanToken::rparen, "')'")) return std::nullopt;
    bump();
    return var;
  }

  ParseResult run() {
    auto root = parse_node();
    if (root && tok.kind != PenmanToken::end) {
      if (tok.kind == PenmanToken::rparen)
        fail(tok, "unbalanced parentheses");
      else
        fail(tok, "trailing content after graph");
      root = std::nullopt;
    }
    if (root) {
      graph.root = *root;
      for (auto& [edge_idx, ref] : pending_refs) {
        if (!graph.has_node(ref.text)) {
          fail(ref, "dangling variable reference '" + ref.text + "'");
          root = std::nullopt;
          break;
        }
        graph.edges[edge_idx].target = ref.text;
      }
    }
    ParseResult out;
    out.diagnostics = std::move(diags);
    if (root) out.graph = std::move(graph);
    return out;
  }
};

}  // namespace detail

/// Parses one PENMAN s-expression into an AmrGraph. Constants become leaf
/// nodes in the `_const<N>` namespace; repeated variable references add
/// edges, not nodes. Errors are reported as diagnostics, never thrown.
inline ParseResult parse_penman(std::string_view text) {
  return detail::PenmanParser(text).run();
}

/// Canonical single-line PENMAN. Children follow stored edge order; each
/// node expands at its first reachable mention and later mentions become
/// bare references. Edges reachable only against their direction are
/// emitted with the role's "-of" form toggled.
inline std::string serialize_penman(const AmrGraph& g) {
  std::string why;
  if (!g.valid(&why)) throw error("serialize_penman: " + why);

  auto inc = detail::incidence(g);
  std::vector<bool> defined(g.nodes.size(), false);
  std::vector<bool> edge_done(g.edges.size(), false);
  std::ostringstream out;

  auto toggle_of = [](const std::string& role) {
    if (detail::role_is_inverse(role)) return role.substr(0, role.size() - 3);
    return role + "-of";
  };

  auto emit = [&](auto&& self, int node) -> void {
    const AmrNode& n = g.nodes[static_cast<std::size_t>(node)];
    defined[static_cast<std::size_t>(node)] = true;
    if (n.is_constant) {
      out << n.concept_label;
      return;
    }
    out << '(' << n.var << " / " << n.concept_label;
    for (const auto& entry : inc[static_cast<std::size_t>(node)]) {
      if (edge_done[static_cast<std::size_t>(entry.edge)]) continue;
      const AmrEdge& e = g.edges[static_cast<std::size_t>(entry.edge)];
      if (!entry.outgoing) {
        // Only pull an edge in backwards when its far side is unreachable
        // otherwise; handled in the cleanup pass below.
        continue;
      }
      edge_done[static_cast<std::size_t>(entry.edge)] = true;
      out << ' ' << e.role << ' ';
      int t = g.node_index(e.target);
      if (defined[static_cast<std::size_t>(t)] &&
          !g.nodes[static_cast<std::size_t>(t)].is_constant)
        out << e.target;
      else
        self(self, t);
    }
    out << ')';
  };

  emit(emit, g.node_index(g.root));
  std::string text = out.str();

  // Any edge still untraversed points into the emitted region from an
  // unreached node. Rebuild with inverse attachments by rewriting the graph
  // and recursing once; graphs from parse_penman never need this.
  bool all_done = true;
  for (bool d : edge_done) all_done = all_done && d;
  if (!all_done) {
    AmrGraph flipped = g;
    bool changed = false;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      if (edge_done[e]) continue;
      int s = g.node_index(g.edges[e].source);
      if (!defined[static_cast<std::size_t>(s)]) continue;  // unreachable source
      AmrEdge& fe = flipped.edges[e];
      std::swap(fe.source, fe.target);
      fe.role = toggle_of(fe.role);
      fe.inverse = detail::role_is_inverse(fe.role);
      changed = true;
    }
    if (!changed) throw error("serialize_penman: graph is disconnected");
    return serialize_penman(flipped);
  }
  for (bool d : defined)
    if (!d) throw error("serialize_penman: graph is disconnected");
  return text;
}

struct CorpusEntry {
  PenmanDocument document;
  AmrGraph graph;
  std::size_t line = 1;  // 1-based line of the block start
};

struct CorpusResult {
  std::vector<CorpusEntry> entries;
  std::vector<ParseDiagnostic> diagnostics;
};

/// Reads blank-line-separated PENMAN blocks with optional `# ::key value`
/// headers. Malformed blocks are skipped and reported; order is preserved.
inline CorpusResult parse_corpus(std::istream& in) {
  CorpusResult result;
  std::string line;
  std::size_t line_no = 0;

  struct Block {
    PenmanDocument doc;
    std::size_t start_line = 0;
    std::size_t body_line = 0;
  };
  std::optional<Block> block;

  auto flush = [&]() {
    if (!block) return;
    if (!block->doc.body.empty()) {
      ParseResult parsed = parse_penman(block->doc.body);
      if (parsed.ok()) {
        result.entries.push_back({std::move(block->doc), std::move(*parsed.graph),
                                  block->start_line});
      } else {
        for (auto d : parsed.diagnostics) {
          d.line += static_cast<int>(block->body_line) - 1;
          result.diagnostics.push_back(d);
        }
      }
    }
    block.reset();
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = detail::trim(line);
    if (trimmed.empty()) {
      flush();
      continue;
    }
    if (!block) block = Block{{}, line_no, 0};
    if (trimmed.rfind("# ::", 0) == 0) {
      std::string rest = trimmed.substr(4);
      auto space = rest.find_first_of(" \t");
      std::string key = space == std::string::npos ? rest : rest.substr(0, space);
      std::string value = space == std::string::npos ? "" : detail::trim(rest.substr(space + 1));
      if (!key.empty()) block->doc.metadata[key] = value;
      continue;
    }
    if (trimmed[0] == '#') continue;
    if (block->doc.body.empty()) block->body_line = line_no;
    if (!block->doc.body.empty()) block->doc.body.push_back('\n');
    block->doc.body += line;
  }
  if (in.bad()) throw error("parse_corpus: stream read failure");
  flush();
  return result;
}

}  // namespace amricl

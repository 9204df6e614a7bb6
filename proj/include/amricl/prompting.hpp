#pragma once

#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "amricl/detail/common.hpp"

namespace amricl {

// Default templates are part of the external interface: byte-stable across
// runs and pinned by a golden-file test.
inline constexpr const char* kDefaultTaskTemplate =
    "Given a context, determine the relation between the subject and the object "
    "from the candidate relations: {labels}. If the relation does not belong to "
    "any of these classes, output NULL.";
inline constexpr const char* kDefaultDemoTemplate =
    "Context: {context}\nSubject: {subject}\nObject: {object}\nRelation: {label}\n";
inline constexpr const char* kDefaultQueryTemplate =
    "Context: {context}\nSubject: {subject}\nObject: {object}\nRelation:";
inline constexpr const char* kPromptTemplateVersion = "v1";

struct PromptSpec {
  std::string task_description = kDefaultTaskTemplate;
  std::vector<std::string> label_set;
  std::string null_token = "NULL";
  std::string demo_template = kDefaultDemoTemplate;
  std::string query_template = kDefaultQueryTemplate;
};

struct Demonstration {
  std::string context;
  std::string subject;
  std::string object;
  std::string label;  // empty for the test input
};

namespace detail {

inline std::string render_template(const std::string& tmpl,
                                   const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        std::string name = tmpl.substr(i + 1, close - i - 1);
        auto it = values.find(name);
        if (it == values.end())
          throw error("prompt template placeholder '{" + name + "}' unresolved");
        out += it->second;
        i = close + 1;
        continue;
      }
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  return out;
}

}  // namespace detail

/// Assembles the three prompt components: instructions with the label set
/// and the NULL clause, the demonstrations in the given order, and the test
/// input ending with the `Relation:` cue. Byte-deterministic.
inline std::string build_prompt(const PromptSpec& spec, const std::vector<Demonstration>& demos,
                                const Demonstration& test) {
  std::string labels;
  for (std::size_t i = 0; i < spec.label_set.size(); ++i) {
    if (i) labels += ", ";
    labels += spec.label_set[i];
  }
  std::ostringstream out;
  out << detail::render_template(spec.task_description, {{"labels", labels}});
  out << "\n";
  for (const auto& demo : demos) {
    if (demo.label != spec.null_token &&
        std::find(spec.label_set.begin(), spec.label_set.end(), demo.label) ==
            spec.label_set.end())
      throw error("build_prompt: demonstration label '" + demo.label + "' not in label set");
    out << "\n";
    out << detail::render_template(spec.demo_template, {{"context", demo.context},
                                                        {"subject", demo.subject},
                                                        {"object", demo.object},
                                                        {"label", demo.label}});
  }
  out << "\n";
  out << detail::render_template(spec.query_template, {{"context", test.context},
                                                       {"subject", test.subject},
                                                       {"object", test.object},
                                                       {"label", ""}});
  return out.str();
}

struct NormalizedLabel {
  std::string label;
  bool unparseable = false;
};

/// Maps raw completion text onto the label set: trim, case-insensitive exact
/// match, then NULL and its common synonyms. Anything else normalizes to the
/// null token with the unparseable flag raised. Total function.
inline NormalizedLabel normalize_label(const std::string& raw, const PromptSpec& spec) {
  auto strip = [](const std::string& s) {
    const std::string junk = " \t\r\n.,;:!?'\"()";
    std::size_t b = s.find_first_not_of(junk);
    if (b == std::string::npos) return std::string();
    std::size_t e = s.find_last_not_of(junk);
    return s.substr(b, e - b + 1);
  };
  std::string cleaned = strip(raw);
  std::string folded = detail::to_lower(cleaned);
  for (const auto& label : spec.label_set)
    if (detail::to_lower(label) == folded) return {label, false};
  if (folded == detail::to_lower(spec.null_token)) return {spec.null_token, false};
  if (folded == "none" || folded == "no relation") return {spec.null_token, false};
  return {spec.null_token, true};
}

// ---------------------------------------------------------------------------
// LLM clients

struct DecodingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  int best_of = 1;
};

struct LlmRequest {
  std::string prompt;
  DecodingParams params;
};

struct LlmResponse {
  std::string text;
  double latency_ms = 0.0;
  std::string backend_id;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual LlmResponse send(const LlmRequest& request) = 0;
};

/// Content address of a prompt; two prompts differing in any byte get
/// different keys.
inline std::string prompt_key(const std::string& prompt) {
  return detail::hex64(detail::fnv1a64(prompt)) + "-" + std::to_string(prompt.size());
}

struct fixture_missing : error {
  std::string key;
  explicit fixture_missing(const std::string& k)
      : error("fixture missing for key '" + k + "'"), key(k) {}
};

/// Disk-backed fixture store (JSON lines: key, response, params, created_at).
/// Lookups are bit-deterministic; a miss is an error, never a live call.
class ReplayClient : public LlmClient {
 public:
  explicit ReplayClient(std::string path, bool must_exist = true) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) {
      if (must_exist) throw error("ReplayClient: cannot open fixture store '" + path_ + "'");
      return;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
      if (row.is_discarded() || !row.contains("key") || !row.contains("response"))
        throw error("ReplayClient: corrupt store line " + std::to_string(line_no) + " in '" +
                    path_ + "'");
      fixtures_[row["key"].get<std::string>()] = row["response"].get<std::string>();
    }
  }

  LlmResponse send(const LlmRequest& request) override {
    std::string key = prompt_key(request.prompt);
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) throw fixture_missing(key);
    return {it->second, 0.0, "replay"};
  }

  bool has(const std::string& key) const { return fixtures_.count(key) > 0; }
  std::size_t size() const { return fixtures_.size(); }

  std::optional<std::string> lookup(const std::string& key) const {
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) return std::nullopt;
    return it->second;
  }

  /// Appends one fixture to the store and the in-memory map.
  void record(const std::string& prompt, const std::string& response,
              const DecodingParams& params = {}) {
    std::scoped_lock lock(write_mutex_);
    std::string key = prompt_key(prompt);
    nlohmann::json row{{"key", key},
                       {"response", response},
                       {"params",
                        {{"temperature", params.temperature},
                         {"top_p", params.top_p},
                         {"frequency_penalty", params.frequency_penalty},
                         {"presence_penalty", params.presence_penalty},
                         {"best_of", params.best_of}}},
                       {"created_at", std::time(nullptr)}};
    std::ofstream out(path_, std::ios::app);
    if (!out) throw error("ReplayClient: cannot append to '" + path_ + "'");
    out << row.dump() << "\n";
    fixtures_[key] = response;
  }

 private:
  std::string path_;
  std::map<std::string, std::string> fixtures_;
  std::mutex write_mutex_;
};

/// Fixed-response client for tests.
class EchoClient : public LlmClient {
 public:
  explicit EchoClient(std::string response) : response_(std::move(response)) {}
  LlmResponse send(const LlmRequest&) override { return {response_, 0.0, "echo"}; }

 private:
  std::string response_;
};

}  // namespace amricl

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "amricl/detail/common.hpp"

namespace amricl {

struct VectorRecord {
  std::string id;
  std::vector<float> vector;
  std::string label;  // relation string, or the dataset's NULL token
};

enum class Metric { cosine, dot, euclidean };

inline Metric metric_from_name(const std::string& name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "dot") return Metric::dot;
  if (name == "euclidean") return Metric::euclidean;
  throw error("unknown metric '" + name + "'");
}

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::cosine: return "cosine";
    case Metric::dot: return "dot";
    default: return "euclidean";
  }
}

/// Exact flat index. Write-once: all records go in at build time and only
/// queries follow. Cosine pre-normalizes stored copies; callers' records
/// are never mutated.
struct VectorIndex {
  std::size_t dim = 0;
  Metric metric = Metric::cosine;
  std::vector<VectorRecord> records;             // as given
  std::vector<std::vector<float>> normalized;    // cosine only

  std::size_t size() const { return records.size(); }
};

struct IndexDiagnostic {
  std::string id;
  std::string message;
};

struct BuildResult {
  VectorIndex index;
  std::vector<IndexDiagnostic> rejected;
};

inline BuildResult build_index(const std::vector<VectorRecord>& records, Metric metric) {
  if (records.empty()) throw error("build_index: no records");
  BuildResult out;
  out.index.metric = metric;
  out.index.dim = records.front().vector.size();
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.vector.size() != out.index.dim)
      throw error("build_index: record '" + r.id + "' has dim " +
                  std::to_string(r.vector.size()) + ", expected " +
                  std::to_string(out.index.dim));
    if (!ids.insert(r.id).second) throw error("build_index: duplicate id '" + r.id + "'");
    if (metric == Metric::cosine) {
      double norm = 0.0;
      for (float v : r.vector) norm += static_cast<double>(v) * static_cast<double>(v);
      norm = std::sqrt(norm);
      if (norm == 0.0) {
        out.rejected.push_back({r.id, "zero vector under cosine metric"});
        continue;
      }
      std::vector<float> unit(r.vector.size());
      for (std::size_t i = 0; i < r.vector.size(); ++i)
        unit[i] = static_cast<float>(static_cast<double>(r.vector[i]) / norm);
      out.index.normalized.push_back(std::move(unit));
    }
    out.index.records.push_back(r);
  }
  if (out.index.records.empty()) throw error("build_index: every record was rejected");
  return out;
}

struct RetrievalResult {
  std::vector<std::string> ids;   // best first
  std::vector<double> scores;     // similarity (cosine/dot) or distance (euclidean)
};

namespace detail {

inline double dot_d(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double sqdist_d(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Exact top-k under the index metric. Ties break by insertion order; an
/// optional exclude set supports self-retrieval diagnostics. k past the
/// store size returns everything.
inline RetrievalResult knn(const VectorIndex& index, const std::vector<float>& query,
                           std::size_t k, const std::set<std::string>& exclude_ids = {}) {
  if (query.size() != index.dim) throw error("knn: query dim mismatch");
  if (k == 0) throw error("knn: k must be >= 1");

  std::vector<float> q = query;
  if (index.metric == Metric::cosine) {
    double norm = std::sqrt(detail::dot_d(q, q));
    if (norm > 0.0)
      for (auto& v : q) v = static_cast<float>(static_cast<double>(v) / norm);
  }

  // (score where larger is better, insertion position)
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude_ids.count(index.records[i].id)) continue;
    double better;
    switch (index.metric) {
      case Metric::cosine: better = detail::dot_d(q, index.normalized[i]); break;
      case Metric::dot: better = detail::dot_d(q, index.records[i].vector); break;
      default: better = -detail::sqdist_d(q, index.records[i].vector); break;
    }
    scored.emplace_back(better, i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (scored.size() > k) scored.resize(k);

  RetrievalResult out;
  for (const auto& [score, i] : scored) {
    out.ids.push_back(index.records[i].id);
    out.scores.push_back(index.metric == Metric::euclidean ? std::sqrt(-score) : score);
  }
  return out;
}

/// Round-robin label-balanced random selection: labels in lexicographic
/// order, uniform draws without replacement inside each label, exhausted
/// labels dropped from the rotation.
inline std::vector<std::string> stratified_random(const std::vector<VectorRecord>& records,
                                                  std::size_t k, std::uint64_t rng_seed) {
  if (records.empty()) throw error("stratified_random: empty store");
  if (k == 0) throw error("stratified_random: k must be >= 1");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].label].push_back(i);

  detail::Rng rng(rng_seed);
  for (auto& [label, members] : groups) {  // Fisher-Yates per group
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.bounded(i)]);
  }

  std::vector<std::string> out;
  std::map<std::string, std::size_t> cursor;
  while (out.size() < std::min(k, records.size())) {
    bool any = false;
    for (auto& [label, members] : groups) {
      auto& at = cursor[label];
      if (at >= members.size()) continue;
      out.push_back(records[members[at++]].id);
      any = true;
      if (out.size() >= std::min(k, records.size())) break;
    }
    if (!any) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vector file ("AREV")

inline void save_vectors(const std::string& path, const std::vector<VectorRecord>& records) {
  if (records.empty()) throw error("save_vectors: no records");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("save_vectors: cannot open '" + path + "'");
  out.write("AREV", 4);
  detail::write_u16le(out, 1);
  detail::write_u32le(out, static_cast<std::uint32_t>(records.size()));
  detail::write_u32le(out, static_cast<std::uint32_t>(records.front().vector.size()));
  for (const auto& r : records) {
    if (r.vector.size() != records.front().vector.size())
      throw error("save_vectors: record '" + r.id + "' has inconsistent dim");
    detail::write_u32le(out, static_cast<std::uint32_t>(r.id.size()));
    out.write(r.id.data(), static_cast<std::streamsize>(r.id.size()));
    detail::write_u32le(out, static_cast<std::uint32_t>(r.label.size()));
    out.write(r.label.data(), static_cast<std::streamsize>(r.label.size()));
    for (float v : r.vector) detail::write_f32le(out, v);
  }
  if (!out) throw error("save_vectors: write failure on '" + path + "'");
}

inline std::vector<VectorRecord> load_vectors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("load_vectors: cannot open '" + path + "'");
  char magic[4];
  if (!detail::read_bytes(in, magic, 4) || std::string_view(magic, 4) != "AREV")
    throw error("load_vectors: bad magic");
  std::uint16_t version;
  if (!detail::read_u16le(in, version)) throw error("load_vectors: truncated payload");
  if (version != 1)
    throw error("load_vectors: version mismatch (got " + std::to_string(version) + ")");
  std::uint32_t count, dim;
  if (!detail::read_u32le(in, count) || !detail::read_u32le(in, dim))
    throw error("load_vectors: truncated payload");
  std::vector<VectorRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    VectorRecord r;
    std::uint32_t len;
    if (!detail::read_u32le(in, len)) throw error("load_vectors: truncated payload");
    r.id.resize(len);
    if (!detail::read_bytes(in, r.id.data(), len)) throw error("load_vectors: truncated payload");
    if (!detail::read_u32le(in, len)) throw error("load_vectors: truncated payload");
    r.label.resize(len);
    if (!detail::read_bytes(in, r.label.data(), len))
      throw error("load_vectors: truncated payload");
    r.vector.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j)
      if (!detail::read_f32le(in, r.vector[j])) throw error("load_vectors: truncated payload");
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace amricl

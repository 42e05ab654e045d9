// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "raptor/tree.hpp"

namespace raptor {

constexpr int kIndexFormatVersion = 1;

namespace detail {

using nlohmann::json;

inline json vec_to_json(const Vec& v) { return json(v); }

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw IndexFormatError("matrix field is not an array");
  Eigen::MatrixXd m(j.size(), j.empty() ? 0 : j[0].size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != static_cast<size_t>(m.cols()))
      throw IndexFormatError("ragged matrix row");
    for (size_t k = 0; k < j[i].size(); ++k)
      m(static_cast<long>(i), static_cast<long>(k)) = j[i][k].get<double>();
  }
  return m;
}

inline json evec_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (long i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Eigen::VectorXd evec_from_json(const json& j) {
  if (!j.is_array()) throw IndexFormatError("vector field is not an array");
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v(static_cast<long>(i)) = j[i].get<double>();
  return v;
}

inline json reducer_to_json(const ReducerModel& r) {
  return {{"kind", r.kind == ReducerKind::reference_linear ? "reference_linear" : "imported"},
          {"n_neighbors", r.n_neighbors},
          {"target_dim", r.target_dim},
          {"train_high", r.train_high},
          {"train_low", r.train_low},
          {"linear_map", matrix_to_json(r.linear_map)},
          {"mean", evec_to_json(r.mean)}};
}

inline ReducerModel reducer_from_json(const json& j) {
  ReducerModel r;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "reference_linear")
    r.kind = ReducerKind::reference_linear;
  else if (kind == "imported")
    r.kind = ReducerKind::imported;
  else
    throw IndexFormatError("unknown reducer kind: " + kind);
  r.n_neighbors = j.at("n_neighbors").get<int>();
  r.target_dim = j.at("target_dim").get<int>();
  r.train_high = j.at("train_high").get<std::vector<Vec>>();
  r.train_low = j.at("train_low").get<std::vector<Vec>>();
  r.linear_map = matrix_from_json(j.at("linear_map"));
  r.mean = evec_from_json(j.at("mean"));
  return r;
}

inline json gmm_to_json(const GmmModel& m) {
  json s1 = json::array(), s2 = json::array(), means = json::array(), covs = json::array();
  for (const auto& v : m.suff_s1) s1.push_back(evec_to_json(v));
  for (const auto& mat : m.suff_s2) s2.push_back(matrix_to_json(mat));
  for (const auto& v : m.means) means.push_back(evec_to_json(v));
  for (const auto& mat : m.covs) covs.push_back(matrix_to_json(mat));
  return {{"K", m.K},          {"d", m.d},           {"weights", evec_to_json(m.weights)},
          {"means", means},    {"covs", covs},       {"suff_s0", evec_to_json(m.suff_s0)},
          {"suff_s1", s1},     {"suff_s2", s2},      {"n", m.n},
          {"reg_eps", m.reg_eps}};
}

inline GmmModel gmm_from_json(const json& j) {
  GmmModel m;
  m.K = j.at("K").get<int>();
  m.d = j.at("d").get<int>();
  m.weights = evec_from_json(j.at("weights"));
  m.suff_s0 = evec_from_json(j.at("suff_s0"));
  m.n = j.at("n").get<double>();
  m.reg_eps = j.at("reg_eps").get<double>();
  for (const auto& v : j.at("means")) m.means.push_back(evec_from_json(v));
  for (const auto& mat : j.at("covs")) m.covs.push_back(matrix_from_json(mat));
  for (const auto& v : j.at("suff_s1")) m.suff_s1.push_back(evec_from_json(v));
  for (const auto& mat : j.at("suff_s2")) m.suff_s2.push_back(matrix_from_json(mat));
  if (static_cast<int>(m.means.size()) != m.K || static_cast<int>(m.covs.size()) != m.K ||
      m.weights.size() != m.K || m.suff_s0.size() != m.K)
    throw IndexFormatError("mixture model component counts disagree");
  return m;
}

inline json local_to_json(const LayerLocal& l) {
  json j = {{"trivial", l.trivial},
            {"member_ids", l.member_ids},
            {"member_low", l.member_low},
            {"cluster_members", l.cluster_members},
            {"parent_ids", l.parent_ids}};
  if (l.reducer) j["reducer"] = reducer_to_json(*l.reducer);
  if (l.gmm) j["gmm"] = gmm_to_json(*l.gmm);
  return j;
}

inline LayerLocal local_from_json(const json& j) {
  LayerLocal l;
  l.trivial = j.at("trivial").get<bool>();
  l.member_ids = j.at("member_ids").get<std::vector<std::string>>();
  l.member_low = j.at("member_low").get<std::vector<Vec>>();
  l.cluster_members = j.at("cluster_members").get<std::vector<std::vector<int>>>();
  l.parent_ids = j.at("parent_ids").get<std::vector<std::string>>();
  if (j.contains("reducer")) l.reducer = reducer_from_json(j.at("reducer"));
  if (j.contains("gmm")) l.gmm = gmm_from_json(j.at("gmm"));
  return l;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IndexFormatError("missing index file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IndexFormatError("corrupt " + what + ": " + e.what());
  }
}

// RAII advisory lock file next to the index directory; refuses to stack.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& target) {
    path_ = target;
    path_ += ".lock";
    std::error_code ec;
    if (!target.parent_path().empty()) std::filesystem::create_directories(target.parent_path(), ec);
    if (std::filesystem::exists(path_))
      throw std::runtime_error("index directory is locked: " + path_.string());
    std::ofstream out(path_);
    if (!out) throw std::runtime_error("cannot create lock file: " + path_.string());
    out << "locked\n";
  }
  ~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace detail

/// Write the index to `dir` atomically: everything is staged in a sibling
/// temp directory which then replaces the target by rename. An existing
/// non-index directory with content is refused.
inline void save_index(const RaTree& tree, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;

  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " exists and is not a directory");
    bool empty = fs::is_empty(dir);
    if (!empty && !fs::exists(dir / "manifest.json"))
      throw std::runtime_error(dir.string() + " is non-empty and not an index directory");
  }
  detail::DirLock lock(dir);

  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  json manifest = {
      {"format_version", kIndexFormatVersion},
      {"embed_dim", tree.embed_dim},
      {"seed", tree.seed},
      {"clustering_mode", tree.clustering_mode == ClusteringMode::two_step ? "two_step" : "one_step"},
      {"chunking", {{"max_body_tokens", tree.chunking.max_body_tokens},
                    {"overlap_tokens", tree.chunking.overlap_tokens}}},
      {"embedder_name", tree.embedder_name},
      {"next_summary_ordinal", tree.next_summary_ordinal},
      {"layer_count", tree.layers.size()},
      {"node_count", tree.nodes.size()},
  };
  detail::write_file(tmp / "manifest.json", manifest.dump(2) + "\n");

  // nodes in layer order so the layer arrays rebuild from file order
  std::string nodes_out;
  for (const auto& layer : tree.layers) {
    for (const auto& id : layer) {
      const TreeNode& n = tree.nodes.at(id);
      json j = {{"id", n.id},           {"layer", n.layer},
                {"is_leaf", n.is_leaf}, {"text", n.text},
                {"token_count", n.token_count}, {"embedding", n.embedding},
                {"children", n.children}, {"parents", n.parents},
                {"doc_id", n.doc_id},   {"position", n.position}};
      nodes_out += j.dump();
      nodes_out += '\n';
    }
  }
  detail::write_file(tmp / "nodes.jsonl", nodes_out);

  json models = json::array();
  for (const auto& lm : tree.layer_models) {
    json j;
    if (lm.global_reducer) j["global_reducer"] = detail::reducer_to_json(*lm.global_reducer);
    if (lm.global_model) j["global_model"] = detail::gmm_to_json(*lm.global_model);
    json locals = json::array();
    for (const auto& l : lm.locals) locals.push_back(detail::local_to_json(l));
    j["locals"] = std::move(locals);
    models.push_back(std::move(j));
  }
  detail::write_file(tmp / "models.json", models.dump() + "\n");

  json prompts = json::array();
  for (const auto& t : prompt_catalog())
    prompts.push_back({{"id", static_cast<int>(t.id)}, {"system", t.system}, {"user", t.user}});
  detail::write_file(tmp / "prompts.json", prompts.dump(2) + "\n");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

inline RaTree load_index(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;

  json manifest = detail::parse_json(detail::read_file(dir / "manifest.json"), "manifest.json");
  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer())
    throw IndexFormatError("manifest.json lacks a format_version");
  int version = manifest["format_version"].get<int>();
  if (version != kIndexFormatVersion)
    throw IndexFormatError("unsupported index format version " + std::to_string(version) +
                           " (expected " + std::to_string(kIndexFormatVersion) + ")");

  RaTree tree;
  try {
    tree.embed_dim = manifest.at("embed_dim").get<int>();
    tree.seed = manifest.at("seed").get<std::uint64_t>();
    std::string mode = manifest.at("clustering_mode").get<std::string>();
    if (mode == "two_step")
      tree.clustering_mode = ClusteringMode::two_step;
    else if (mode == "one_step")
      tree.clustering_mode = ClusteringMode::one_step;
    else
      throw IndexFormatError("unknown clustering mode: " + mode);
    tree.chunking.max_body_tokens = manifest.at("chunking").at("max_body_tokens").get<int>();
    tree.chunking.overlap_tokens = manifest.at("chunking").at("overlap_tokens").get<int>();
    tree.embedder_name = manifest.at("embedder_name").get<std::string>();
    tree.next_summary_ordinal = manifest.at("next_summary_ordinal").get<int>();
  } catch (const json::exception& e) {
    throw IndexFormatError(std::string("corrupt manifest.json: ") + e.what());
  }

  size_t layer_count = manifest.value("layer_count", size_t{0});
  size_t node_count = manifest.value("node_count", size_t{0});
  tree.layers.resize(layer_count);

  std::istringstream nodes_in(detail::read_file(dir / "nodes.jsonl"));
  std::string line;
  size_t line_no = 0;
  while (std::getline(nodes_in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = detail::parse_json(line, "nodes.jsonl line " + std::to_string(line_no));
    TreeNode n;
    try {
      n.id = j.at("id").get<std::string>();
      n.layer = j.at("layer").get<int>();
      n.is_leaf = j.at("is_leaf").get<bool>();
      n.text = j.at("text").get<std::string>();
      n.token_count = j.at("token_count").get<int>();
      n.embedding = j.at("embedding").get<Vec>();
      n.children = j.at("children").get<std::vector<std::string>>();
      n.parents = j.at("parents").get<std::vector<std::string>>();
      n.doc_id = j.at("doc_id").get<std::string>();
      n.position = j.at("position").get<int>();
    } catch (const json::exception& e) {
      throw IndexFormatError("corrupt node record at line " + std::to_string(line_no) + ": " +
                             e.what());
    }
    if (n.layer < 0 || static_cast<size_t>(n.layer) >= tree.layers.size())
      throw IndexFormatError("node " + n.id + " references layer " + std::to_string(n.layer) +
                             " outside the manifest layer count");
    tree.layers[static_cast<size_t>(n.layer)].push_back(n.id);
    tree.nodes.emplace(n.id, std::move(n));
  }
  if (node_count != 0 && tree.nodes.size() != node_count)
    throw IndexFormatError("node count mismatch: manifest says " + std::to_string(node_count) +
                           ", nodes.jsonl has " + std::to_string(tree.nodes.size()));
  for (const auto& [id, node] : tree.nodes) {
    for (const auto& c : node.children)
      if (!tree.nodes.count(c))
        throw IndexFormatError("node " + id + " links missing child " + c);
    for (const auto& p : node.parents)
      if (!tree.nodes.count(p))
        throw IndexFormatError("node " + id + " links missing parent " + p);
  }

  json models = detail::parse_json(detail::read_file(dir / "models.json"), "models.json");
  if (!models.is_array()) throw IndexFormatError("models.json is not an array");
  try {
    for (const auto& j : models) {
      LayerModels lm;
      if (j.contains("global_reducer")) lm.global_reducer = detail::reducer_from_json(j["global_reducer"]);
      if (j.contains("global_model")) lm.global_model = detail::gmm_from_json(j["global_model"]);
      for (const auto& lj : j.at("locals")) lm.locals.push_back(detail::local_from_json(lj));
      tree.layer_models.push_back(std::move(lm));
    }
  } catch (const json::exception& e) {
    throw IndexFormatError(std::string("corrupt models.json: ") + e.what());
  }
  if (tree.layers.size() > 1 && tree.layer_models.size() != tree.layers.size() - 1)
    throw IndexFormatError("layer model count does not match layer count");
  return tree;
}

}  // namespace raptor

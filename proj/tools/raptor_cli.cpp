// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: build, add, remove, query, ask, stats, bench-split.
// All randomness flows from --seed; --mock-llm swaps in the deterministic
// offline embedder/summarizer.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "raptor/adrap.hpp"
#include "raptor/persist.hpp"
#include "raptor/postqfrap.hpp"
#include "raptor/remote.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string corpus_dir, index_dir, file, doc_id, query;
  bool mock_llm = false;
  std::uint64_t seed = 0;
  std::string clustering = "two_step";
  int embed_dim = 64;
  bool greedy = false;
  bool recluster_on_delete = false;
  int k = 10;
  long token_limit = 2000;
  int k0 = 20;
  int budget = 2000;
  bool expand = false;
  bool answer = false;
  std::string retriever = "naive";
  double fraction = 0.7;
  std::string config_file;
};

// precedence: flags > environment > config file > defaults
void apply_config_and_env(Options& opt, const CLI::App& cmd) {
  json cfg;
  if (!opt.config_file.empty()) {
    std::ifstream in(opt.config_file);
    if (!in) throw std::runtime_error("cannot read config file " + opt.config_file);
    in >> cfg;
  }
  auto overridden = [&](const std::string& flag) {
    auto* o = cmd.get_option_no_throw(flag);
    return o && o->count() > 0;
  };
  auto from_env = [](const char* name) -> const char* { return std::getenv(name); };

  if (!overridden("--seed")) {
    if (const char* v = from_env("RAPTOR_SEED"))
      opt.seed = std::strtoull(v, nullptr, 10);
    else if (cfg.contains("seed"))
      opt.seed = cfg["seed"].get<std::uint64_t>();
  }
  if (!overridden("--clustering")) {
    if (const char* v = from_env("RAPTOR_CLUSTERING"))
      opt.clustering = v;
    else if (cfg.contains("clustering"))
      opt.clustering = cfg["clustering"].get<std::string>();
  }
  if (!overridden("--embed-dim")) {
    if (const char* v = from_env("RAPTOR_EMBED_DIM"))
      opt.embed_dim = std::atoi(v);
    else if (cfg.contains("embed_dim"))
      opt.embed_dim = cfg["embed_dim"].get<int>();
  }
  if (!overridden("--mock-llm") && cfg.contains("mock_llm"))
    opt.mock_llm = cfg["mock_llm"].get<bool>();
  if (!overridden("--k") && cfg.contains("k")) opt.k = cfg["k"].get<int>();
  if (!overridden("--token-limit") && cfg.contains("token_limit"))
    opt.token_limit = cfg["token_limit"].get<long>();
  if (!overridden("--k0") && cfg.contains("k0")) opt.k0 = cfg["k0"].get<int>();
  if (!overridden("--budget") && cfg.contains("budget")) opt.budget = cfg["budget"].get<int>();
  if (!overridden("--fraction") && cfg.contains("fraction"))
    opt.fraction = cfg["fraction"].get<double>();
}

struct Backends {
  std::unique_ptr<raptor::Embedder> embedder;
  std::unique_ptr<raptor::Summarizer> summarizer;
};

Backends make_backends(const Options& opt, int embed_dim) {
  Backends b;
  if (opt.mock_llm) {
    b.embedder = std::make_unique<raptor::MockEmbedder>(embed_dim);
    b.summarizer = std::make_unique<raptor::MockSummarizer>();
  } else {
    raptor::RemoteConfig cfg = raptor::RemoteConfig::from_env();
    cfg.embed_dim = embed_dim;
    b.embedder = std::make_unique<raptor::RemoteEmbedder>(cfg);
    b.summarizer = std::make_unique<raptor::RemoteSummarizer>(cfg);
  }
  return b;
}

std::vector<raptor::Chunk> chunk_corpus(const std::string& corpus_dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(corpus_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no documents in " + corpus_dir);

  std::vector<raptor::Chunk> chunks;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    for (auto& c : raptor::chunk_text(f.filename().string(), ss.str()))
      chunks.push_back(std::move(c));
  }
  if (chunks.empty()) throw std::runtime_error("no text content in " + corpus_dir);
  return chunks;
}

void print_stats(const raptor::RaTree& tree) {
  raptor::TreeStats st = raptor::tree_stats(tree);
  std::cout << "layers:";
  for (size_t s : st.layer_sizes) std::cout << ' ' << s;
  std::cout << "\nleaves: " << st.leaf_count << "\ninternal nodes: " << st.internal_count
            << "\ncluster size: " << st.mean_cluster_size << " +- " << st.std_cluster_size
            << "\nparents per leaf: " << st.mean_parents_per_leaf << " +- "
            << st.std_parents_per_leaf << "\n";
}

void print_report(const raptor::UpdateReport& rep) {
  std::cout << "new nodes: " << rep.new_node_ids.size();
  for (const auto& id : rep.new_node_ids) std::cout << ' ' << id;
  std::cout << "\nresummarized: " << rep.resummarized_node_ids.size();
  for (const auto& id : rep.resummarized_node_ids) std::cout << ' ' << id;
  std::cout << "\nsummary calls: " << rep.summary_call_count
            << "\nsplit attempted: " << (rep.split_attempted ? "yes" : "no") << "\n";
  for (const auto& [layer, ids] : rep.changed_cluster_ids) {
    std::cout << "changed clusters (layer " << layer << "):";
    for (int c : ids) std::cout << ' ' << c;
    std::cout << "\n";
  }
}

int cmd_build(const Options& opt) {
  auto chunks = chunk_corpus(opt.corpus_dir);
  Backends b = make_backends(opt, opt.embed_dim);
  raptor::ClusteringMode mode = (opt.clustering == "one_step")
                                    ? raptor::ClusteringMode::one_step
                                    : raptor::ClusteringMode::two_step;
  raptor::RaTree tree =
      raptor::build_tree(chunks, *b.embedder, *b.summarizer, mode,
                         raptor::SummaryMode::generic, std::nullopt, opt.seed);
  tree.embedder_name = opt.mock_llm ? ("mock:" + std::to_string(opt.embed_dim))
                                    : raptor::RemoteConfig::from_env().embed_model;
  raptor::save_index(tree, opt.index_dir);
  print_stats(tree);
  return 0;
}

int cmd_add(const Options& opt) {
  raptor::RaTree tree = raptor::load_index(opt.index_dir);
  Backends b = make_backends(opt, tree.embed_dim);
  std::ifstream in(opt.file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + opt.file);
  std::ostringstream ss;
  ss << in.rdbuf();
  auto chunks = raptor::chunk_text(fs::path(opt.file).filename().string(), ss.str(),
                                   tree.chunking);
  raptor::AdaptiveConfig cfg;
  cfg.tau_n = std::max(100, static_cast<int>(std::sqrt(
                                static_cast<double>(tree.layers.empty() ? 0
                                                                        : tree.layers[0].size()))));
  auto mode = opt.greedy ? raptor::UpdateMode::greedy : raptor::UpdateMode::adaptive;
  for (const auto& c : chunks) {
    auto rep = raptor::add_document(tree, c, *b.embedder, *b.summarizer, cfg, mode);
    print_report(rep);
  }
  raptor::save_index(tree, opt.index_dir);
  return 0;
}

int cmd_remove(const Options& opt) {
  raptor::RaTree tree = raptor::load_index(opt.index_dir);
  Backends b = make_backends(opt, tree.embed_dim);
  std::vector<std::string> leaf_ids;
  for (const auto& id : tree.layers.at(0))
    if (tree.nodes.at(id).doc_id == opt.doc_id || id == opt.doc_id) leaf_ids.push_back(id);
  if (leaf_ids.empty()) throw std::runtime_error("unknown doc id: " + opt.doc_id);
  raptor::AdaptiveConfig cfg;
  for (const auto& id : leaf_ids) {
    auto rep = raptor::remove_document(tree, id, *b.embedder, *b.summarizer, cfg,
                                       opt.recluster_on_delete);
    print_report(rep);
  }
  raptor::save_index(tree, opt.index_dir);
  return 0;
}

int cmd_query(const Options& opt) {
  raptor::RaTree tree = raptor::load_index(opt.index_dir);
  Backends b = make_backends(opt, tree.embed_dim);
  auto hits = raptor::collapsed_query(tree, b.embedder->embed(opt.query), opt.k,
                                      opt.token_limit);
  for (const auto& h : hits)
    std::cout << h.similarity << "\t" << h.node_id << "\t" << h.text << "\n";
  return 0;
}

int cmd_ask(const Options& opt) {
  raptor::RaTree tree = raptor::load_index(opt.index_dir);
  Backends b = make_backends(opt, tree.embed_dim);
  std::unique_ptr<raptor::Retriever> retriever;
  if (opt.retriever == "collapsed")
    retriever = std::make_unique<raptor::CollapsedRetriever>(tree);
  else
    retriever = std::make_unique<raptor::LeafRetriever>(tree);

  raptor::PostQfrapConfig cfg;
  cfg.k0 = opt.k0;
  cfg.token_budget = opt.budget;
  cfg.expand_query = opt.expand;
  cfg.seed = opt.seed;
  auto res = raptor::run_postqfrap(*retriever, *b.embedder, *b.summarizer, opt.query, cfg);
  std::cout << "context:\n" << res.summary << "\n";

  if (opt.answer) {
    if (opt.mock_llm) throw std::runtime_error("--answer needs a chat backend (omit --mock-llm)");
    raptor::RemoteChatClient client(raptor::RemoteConfig::from_env());
    std::string ans = raptor::qa_answer(client, res.summary, opt.query);
    std::cout << "answer:\n" << ans << "\n"
              << "status: " << (raptor::is_unanswered(ans) ? "unanswered" : "answered") << "\n";
  }
  return 0;
}

int cmd_stats(const Options& opt) {
  print_stats(raptor::load_index(opt.index_dir));
  return 0;
}

int cmd_bench_split(const Options& opt) {
  auto chunks = chunk_corpus(opt.corpus_dir);
  Backends b = make_backends(opt, opt.embed_dim);
  raptor::AdaptiveConfig cfg;
  cfg.tau_n = 10;  // stream through the constant-time update path
  cfg.tau_c = 40;
  auto res = raptor::simulate_split_ingest(chunks, opt.fraction, cfg, opt.seed, *b.embedder,
                                           *b.summarizer);
  std::cout << "chunks: " << chunks.size() << " (initial fraction " << opt.fraction << ")\n"
            << "incremental summary calls: " << res.adrap_calls << " (" << res.adrap_seconds
            << " s)\n"
            << "full rebuild summary calls: " << res.full_rebuild_calls << " ("
            << res.rebuild_seconds << " s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical retrieval index"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_flag("--mock-llm", opt.mock_llm, "use the deterministic offline embedder/summarizer");
    cmd->add_option("--seed", opt.seed, "random seed");
    cmd->add_option("--config", opt.config_file, "JSON config file");
    return cmd;
  };

  CLI::App* build = add_common(app.add_subcommand("build", "build an index from a corpus dir"));
  build->add_option("corpus_dir", opt.corpus_dir)->required();
  build->add_option("index_dir", opt.index_dir)->required();
  build->add_option("--clustering", opt.clustering)
      ->check(CLI::IsMember({"two_step", "one_step"}));
  build->add_option("--embed-dim", opt.embed_dim);

  CLI::App* add = add_common(app.add_subcommand("add", "insert one document incrementally"));
  add->add_option("index_dir", opt.index_dir)->required();
  add->add_option("file", opt.file)->required();
  add->add_flag("--greedy", opt.greedy, "argmax assignment without model updates");

  CLI::App* rm = add_common(app.add_subcommand("remove", "remove a document or chunk id"));
  rm->add_option("index_dir", opt.index_dir)->required();
  rm->add_option("doc_id", opt.doc_id)->required();
  rm->add_flag("--recluster-on-delete", opt.recluster_on_delete);

  CLI::App* query = add_common(app.add_subcommand("query", "collapsed retrieval"));
  query->add_option("index_dir", opt.index_dir)->required();
  query->add_option("query", opt.query)->required();
  query->add_option("--k", opt.k);
  query->add_option("--token-limit", opt.token_limit);

  CLI::App* ask = add_common(app.add_subcommand("ask", "post-retrieval query-focused summary"));
  ask->add_option("index_dir", opt.index_dir)->required();
  ask->add_option("query", opt.query)->required();
  ask->add_option("--k0", opt.k0);
  ask->add_option("--budget", opt.budget);
  ask->add_flag("--expand", opt.expand, "query expansion from top retrieved docs");
  ask->add_flag("--answer", opt.answer, "also generate an answer (remote backend)");
  ask->add_option("--retriever", opt.retriever)->check(CLI::IsMember({"naive", "collapsed"}));

  CLI::App* stats = add_common(app.add_subcommand("stats", "print tree statistics"));
  stats->add_option("index_dir", opt.index_dir)->required();

  CLI::App* bench = add_common(app.add_subcommand("bench-split",
                                                  "split-ingest benchmark (incremental vs rebuild)"));
  bench->add_option("corpus_dir", opt.corpus_dir)->required();
  bench->add_option("--fraction", opt.fraction)->check(CLI::Range(0.0, 1.0));
  bench->add_option("--embed-dim", opt.embed_dim);

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* cmd = app.get_subcommands().at(0);
    apply_config_and_env(opt, *cmd);
    if (cmd == build) return cmd_build(opt);
    if (cmd == add) return cmd_add(opt);
    if (cmd == rm) return cmd_remove(opt);
    if (cmd == query) return cmd_query(opt);
    if (cmd == ask) return cmd_ask(opt);
    if (cmd == stats) return cmd_stats(opt);
    if (cmd == bench) return cmd_bench_split(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "raptor/adrap.hpp"

using namespace raptor;

namespace {

RaTree fixture_tree(int n, std::uint64_t seed, MockEmbedder& emb, MockSummarizer& sum) {
  auto chunks = fixtures::make_corpus(n, seed);
  return build_tree(chunks, emb, sum, ClusteringMode::two_step, SummaryMode::generic,
                    std::nullopt, seed);
}

Chunk make_chunk(const std::string& text, const std::string& doc, int pos) {
  Chunk c;
  c.doc_id = doc;
  c.position = pos;
  c.text = text;
  c.body = text;
  c.token_count = count_tokens(text);
  c.id = fnv1a64_hex(doc + '\x1f' + std::to_string(pos) + '\x1f' + text);
  return c;
}

std::set<std::string> ancestors_of(const RaTree& tree, const std::string& id) {
  std::set<std::string> out;
  std::vector<std::string> stack = {id};
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    for (const auto& p : tree.nodes.at(cur).parents)
      if (out.insert(p).second) stack.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("insertion adds a retrievable leaf and resummarizes its ancestors") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(60, 21, emb, sum);
  size_t nodes_before = tree.nodes.size();

  Chunk c = make_chunk("Piston torque surged while the gearbox ignition held steady.", "new", 0);
  AdaptiveConfig cfg;
  UpdateReport rep = add_document(tree, c, emb, sum, cfg);

  CHECK(fixtures::validate_tree(tree) == "");
  CHECK(tree.nodes.count(c.id) == 1);
  CHECK(tree.nodes.size() >= nodes_before + 1);
  REQUIRE(!rep.new_node_ids.empty());
  CHECK(rep.new_node_ids.front() == c.id);
  CHECK(rep.summary_call_count == static_cast<int>(rep.resummarized_node_ids.size()));

  if (!rep.split_attempted) {
    auto anc = ancestors_of(tree, c.id);
    for (const auto& id : rep.resummarized_node_ids) CHECK(anc.count(id) == 1);
    CHECK(rep.resummarized_node_ids.size() <= 5);
  }

  // self-retrieval over the leaves at k = 1
  const Vec& q = tree.nodes.at(c.id).embedding;
  std::string best;
  double best_sim = -2;
  for (const auto& id : tree.layers[0]) {
    double s = cosine_similarity(q, tree.nodes.at(id).embedding);
    if (s > best_sim) {
      best_sim = s;
      best = id;
    }
  }
  CHECK(best == c.id);
}

TEST_CASE("insertion into a single-layer tree is a plain append") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(6, 22, emb, sum);
  Chunk c = make_chunk("Sonata tempo rose with the crescendo.", "new", 0);
  UpdateReport rep = add_document(tree, c, emb, sum, AdaptiveConfig{});
  CHECK(tree.layers[0].size() == 7);
  CHECK(rep.summary_call_count == 0);
  CHECK(fixtures::validate_tree(tree) == "");
}

TEST_CASE("insertion rejects oversized chunks and duplicates") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(20, 23, emb, sum);
  Chunk big = make_chunk("x", "new", 0);
  big.token_count = 301;
  CHECK_THROWS_AS(add_document(tree, big, emb, sum, AdaptiveConfig{}), std::invalid_argument);

  Chunk dup = make_chunk("Fresh material for the tree.", "new", 1);
  add_document(tree, dup, emb, sum, AdaptiveConfig{});
  CHECK_THROWS_AS(add_document(tree, dup, emb, sum, AdaptiveConfig{}), std::invalid_argument);
}

TEST_CASE("greedy mode never touches mixture parameters") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(60, 24, emb, sum);

  // snapshot all local mixture weights
  std::vector<Eigen::VectorXd> before;
  for (const auto& lm : tree.layer_models)
    for (const auto& local : lm.locals)
      if (local.gmm) before.push_back(local.gmm->weights);

  Chunk c = make_chunk("Ballast freighter moored at the quay manifest.", "new", 0);
  UpdateReport rep = add_document(tree, c, emb, sum, AdaptiveConfig{}, UpdateMode::greedy);
  CHECK(!rep.split_attempted);
  CHECK(fixtures::validate_tree(tree) == "");

  std::vector<Eigen::VectorXd> after;
  for (const auto& lm : tree.layer_models)
    for (const auto& local : lm.locals)
      if (local.gmm) after.push_back(local.gmm->weights);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) {
    REQUIRE(before[i].size() == after[i].size());
    CHECK((before[i] - after[i]).cwiseAbs().maxCoeff() == 0.0);  // bit-identical
  }
}

TEST_CASE("near-duplicate flooding triggers a split attempt") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(60, 25, emb, sum);
  AdaptiveConfig cfg;
  cfg.tau_c = 11;

  bool attempted = false;
  for (int i = 0; i < 14; ++i) {
    Chunk c = make_chunk("Nebula parallax occultation reading number " + std::to_string(i) +
                             " from the albedo transit survey.",
                         "flood", i);
    UpdateReport rep = add_document(tree, c, emb, sum, cfg);
    attempted = attempted || rep.split_attempted;
  }
  CHECK(attempted);
  CHECK(fixtures::validate_tree(tree) == "");
}

TEST_CASE("removal deletes the leaf and cascades childless parents") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(60, 26, emb, sum);
  std::string victim = tree.layers[0][5];

  UpdateReport rep = remove_document(tree, victim, emb, sum, AdaptiveConfig{});
  CHECK(tree.nodes.count(victim) == 0);
  CHECK(fixtures::validate_tree(tree) == "");
  CHECK(rep.summary_call_count == static_cast<int>(rep.resummarized_node_ids.size()));
  for (const auto& [id, node] : tree.nodes)
    for (const auto& cid : node.children) CHECK(cid != victim);

  CHECK_THROWS_AS(remove_document(tree, "nope", emb, sum, AdaptiveConfig{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(remove_document(tree, victim, emb, sum, AdaptiveConfig{}),
                  std::invalid_argument);
}

TEST_CASE("removal with reclustering keeps the tree consistent") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(60, 27, emb, sum);
  for (int i = 0; i < 5; ++i) {
    std::string victim = tree.layers[0][static_cast<size_t>(3 + 2 * i)];
    remove_document(tree, victim, emb, sum, AdaptiveConfig{}, /*recluster=*/true);
    CHECK(fixtures::validate_tree(tree) == "");
  }
  CHECK(tree.layers[0].size() == 55);
}

TEST_CASE("removed text no longer surfaces in retrieval") {
  MockEmbedder emb(32);
  MockSummarizer sum;
  RaTree tree = fixture_tree(40, 28, emb, sum);
  std::string victim = tree.layers[0][0];
  Vec victim_emb = tree.nodes.at(victim).embedding;
  remove_document(tree, victim, emb, sum, AdaptiveConfig{});
  auto hits = collapsed_query(tree, victim_emb, 5, 100000);
  for (const auto& h : hits) CHECK(h.node_id != victim);
}

TEST_CASE("split ingest: incremental path spends fewer summary calls than a rebuild") {
  auto chunks = fixtures::make_corpus(120, 29);
  MockEmbedder emb(32);
  MockSummarizer sum;
  AdaptiveConfig cfg;
  cfg.tau_n = 10;  // constant-time statistic updates for the bulk of the stream
  cfg.tau_c = 40;
  auto res = simulate_split_ingest(chunks, 0.7, cfg, 17, emb, sum);
  CHECK(res.full_rebuild_calls > 0);
  CHECK(res.adrap_calls < res.full_rebuild_calls);
  CHECK(fixtures::validate_tree(res.tree_adrap) == "");
  CHECK(res.tree_adrap.layers[0].size() == 120);
}

TEST_CASE("split ingest with fraction 1.0 spends zero incremental calls") {
  auto chunks = fixtures::make_corpus(40, 30);
  MockEmbedder emb(32);
  MockSummarizer sum;
  auto res = simulate_split_ingest(chunks, 1.0, AdaptiveConfig{}, 3, emb, sum);
  CHECK(res.adrap_calls == 0);
}

// Shared test fixtures: deterministic synthetic corpora and structural
// tree validation. No test-framework dependencies, so the acceptance
// harness can use it too.
#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "raptor/tree.hpp"

namespace fixtures {

inline const std::vector<std::vector<std::string>>& topic_vocab() {
  static const std::vector<std::vector<std::string>> topics = {
      {"engine", "piston", "torque", "exhaust", "camshaft", "ignition", "gearbox"},
      {"glacier", "moraine", "icefield", "crevasse", "meltwater", "firn", "serac"},
      {"violin", "sonata", "tempo", "crescendo", "vibrato", "cadenza", "arpeggio"},
      {"enzyme", "substrate", "catalysis", "kinase", "peptide", "ligand", "isomer"},
      {"harbor", "freighter", "ballast", "mooring", "stevedore", "manifest", "quay"},
      {"orchard", "grafting", "pollination", "cultivar", "rootstock", "canopy", "harvest"},
      {"telescope", "aperture", "nebula", "parallax", "occultation", "albedo", "transit"},
      {"ledger", "audit", "accrual", "liability", "depreciation", "solvency", "invoice"},
  };
  return topics;
}

/// `count` chunks over 8 topics in contiguous blocks (documents about one
/// subject arrive together, as in a real ingest stream); deterministic for
/// a given seed.
inline std::vector<raptor::Chunk> make_corpus(int count, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  const auto& topics = topic_vocab();
  std::vector<raptor::Chunk> chunks;
  for (int i = 0; i < count; ++i) {
    size_t topic = static_cast<size_t>(i) * topics.size() / static_cast<size_t>(count);
    const auto& vocab = topics[topic];
    std::uniform_int_distribution<size_t> pick(0, vocab.size() - 1);
    std::uniform_int_distribution<int> len(2, 4);
    std::string text;
    int sentences = len(rng);
    for (int s = 0; s < sentences; ++s) {
      std::string word = vocab[pick(rng)];
      word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
      std::string sent = word + " work met the " + vocab[pick(rng)] + " near the " +
                         vocab[pick(rng)] + " on day " + std::to_string(i) + ".";
      if (!text.empty()) text += ' ';
      text += sent;
    }
    raptor::Chunk c;
    c.doc_id = "doc" + std::to_string(i % 10);
    c.position = i;
    c.text = text;
    c.body = text;
    c.token_count = raptor::count_tokens(text);
    c.id = raptor::fnv1a64_hex(c.doc_id + '\x1f' + std::to_string(i) + '\x1f' + text);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

/// Full structural validation: layer bounds, budgets, bidirectional links,
/// parent coverage. Returns an empty string when consistent, otherwise a
/// description of the first problem found.
inline std::string validate_tree(const raptor::RaTree& tree) {
  using namespace raptor;
  auto fail = [](const std::string& msg) { return msg; };
  if (tree.height() < 1) return fail("tree has no layers");
  if (tree.height() > kMaxLayers) return fail("more than 5 layers");
  if (tree.layers.back().size() > static_cast<size_t>(kTopLayerTarget) &&
      tree.height() != kMaxLayers)
    return fail("top layer oversized without hitting the layer cap");

  size_t counted = 0;
  for (size_t l = 0; l < tree.layers.size(); ++l) {
    for (const auto& id : tree.layers[l]) {
      if (!tree.nodes.count(id)) return fail("layer lists unknown node " + id);
      const TreeNode& node = tree.nodes.at(id);
      ++counted;
      if (node.layer != static_cast<int>(l)) return fail("layer field mismatch on " + id);
      if (node.is_leaf != (l == 0)) return fail("is_leaf mismatch on " + id);
      if (!node.is_leaf && node.children.empty()) return fail("childless summary " + id);
      if (node.is_leaf && !node.children.empty()) return fail("leaf with children " + id);
      if (!node.is_leaf && node.token_count > kSummaryBudget)
        return fail("summary over budget: " + id);
      if (l + 1 < tree.layers.size() && node.parents.empty())
        return fail("non-top node without parent: " + id);
      for (const auto& cid : node.children) {
        if (!tree.nodes.count(cid)) return fail(id + " links unknown child " + cid);
        const TreeNode& child = tree.nodes.at(cid);
        if (child.layer != static_cast<int>(l) - 1) return fail("cross-layer link from " + id);
        if (!std::binary_search(child.parents.begin(), child.parents.end(), id))
          return fail("one-way child link " + id + " -> " + cid);
      }
      for (const auto& pid : node.parents) {
        if (!tree.nodes.count(pid)) return fail(id + " links unknown parent " + pid);
        const TreeNode& parent = tree.nodes.at(pid);
        if (parent.layer != static_cast<int>(l) + 1) return fail("cross-layer parent on " + id);
        if (!std::binary_search(parent.children.begin(), parent.children.end(), id))
          return fail("one-way parent link " + id + " -> " + pid);
      }
      if (node.embedding.size() != static_cast<size_t>(tree.embed_dim))
        return fail("embedding dim mismatch on " + id);
    }
  }
  if (counted != tree.nodes.size()) return fail("nodes map and layers disagree");
  return "";
}

}  // namespace fixtures

#pragma once
#include <map>
#include <optional>
#include <string>

#include "wk/tree.hpp"

namespace wk {

// ---------------------------------------------------------------------------
// Building blocks of the regular-couple calculus.
//
// A mini couple is the scale-2 couple made of two scale-1 trees with no
// siblings paired (2 variants). A mini tree is the scale-2 saturated paired
// tree with no siblings paired: two branching nodes, two cross leaf pairs and
// one lone leaf (6 variants = first digit c in {1,2,3} x pairing variant).
// Step A replaces a paired leaf pair by a mini couple; step B replaces a node
// by a mini tree, the old subtree moving to the lone slot. Couples reachable
// from the trivial couple by these steps are the regular couples.
// ---------------------------------------------------------------------------

struct MiniTreePattern {
  int inner_slot;  // child slot of the root holding the inner branching node
  int lone_slot;   // child slot of the inner node left unpaired
  // (root child slot, inner child slot) of the two leaf pairs
  std::array<std::pair<int, int>, 2> pairs;
};

// c in {1,2,3} (the first code digit), var in {0,1}. Slots are 0-based.
const MiniTreePattern& mini_tree_pattern(int c, int var);

// The two (1,1)-mini couples. var 0 pairs slot j of one root with slot j of
// the other; var 1 swaps the outer slots.
Couple mini_couple(int var);

// leaf_pair must be a pair of q.pairing (either order). Returns the couple
// with that pair expanded into a mini couple of the given variant.
Couple apply_step_A(const Couple& q, std::pair<int, int> leaf_pair, int var);

// Replaces node g (any node, leaves and roots included) by a mini tree with
// code digits (c, var); the subtree rooted at g reattaches at the lone slot.
Couple apply_step_B(const Couple& q, int g, int c, int var);

struct BuildStep {
  char kind = 'A';  // 'A' or 'B'
  int a = -1;       // A: one leaf of the pair; B: the target node
  int b = -1;       // A: the other leaf
  int c = 0;        // B: first code digit (1..3)
  int var = 0;      // pairing variant, both kinds
};

Couple replay(const Couple& start, const std::vector<BuildStep>& steps);

// ---------------------------------------------------------------------------
// Skeletons. Reverting steps A and B until neither applies yields a unique
// prime couple; the leftovers organize as one regular chain per surviving
// branching node plus one regular couple per surviving leaf pair.
// ---------------------------------------------------------------------------

// A regular chain, stored as its legal partition of {1..2m} plus a code per
// pair; pair_couples[j] holds the regular couples attached to the j-th
// pair's two leaf pairs (lower root slot first). Scale of the chain itself
// is 2m; attachments add their own scale.
struct ChainDecomp {
  std::vector<std::pair<int, int>> partition;  // {a,b}, a<b, increasing a
  std::vector<std::pair<int, int>> codes;      // (c, var) per pair
  std::vector<std::pair<Couple, Couple>> pair_couples;
  int half_length() const { return (int)partition.size(); }
};

struct SkeletonResult {
  Couple prime;
  bool regular = false;  // prime is the trivial couple
  // prime branching node id -> chain inserted above it (absent = none)
  std::map<int, ChainDecomp> chains;
  // prime leaf pair -> nontrivial regular couple replacing it (absent = none)
  std::map<std::pair<int, int>, Couple> leaf_couples;
  // replay(prime, witness) reconstructs the original couple
  std::vector<BuildStep> witness;
};

SkeletonResult skeleton(const Couple& q);

// Naive reduction applying the available reversals in rng-shuffled order;
// used to check order independence of the prime.
Couple skeleton_prime_randomized(const Couple& q, Rng& rng);

// Rebuilds the original couple from prime + chains + leaf couples.
Couple reconstruct(const SkeletonResult& r);

bool is_regular(const Couple& q);

// ---------------------------------------------------------------------------
// Legal partitions (non-crossing perfect matchings of {1..2m}).
// ---------------------------------------------------------------------------

using Partition = std::vector<std::pair<int, int>>;

std::vector<Partition> legal_partitions(int m);
bool partition_is_legal(const Partition& p);
bool partition_is_dominant(const Partition& p);

// ---------------------------------------------------------------------------
// Branching-node pairing and the choice set N^ch of a regular couple.
// ---------------------------------------------------------------------------

struct NchEntry {
  int node;  // global id in q
  char tag;  // 'r' root of a type-1 layer, 'c' chosen chain node
};

struct BranchPairing {
  std::vector<std::pair<int, int>> pairs;  // all branching nodes, matched
  std::vector<NchEntry> n_ch;              // one node per pair
};

// Throws std::invalid_argument if q is not regular.
BranchPairing branch_pairing(const Couple& q);

// ---------------------------------------------------------------------------
// Encoded trees and dominant-couple classification.
// ---------------------------------------------------------------------------

struct EncodedTree {
  struct Node {
    int parent = -1;
    std::array<int, 3> child{-1, -1, -1};
    int code = -1;  // 0..3 on branching nodes, -1 on leaves
  };
  std::vector<Node> nodes;  // preorder

  bool is_leaf(int i) const { return nodes[i].child[0] < 0; }
  int size() const { return (int)nodes.size(); }
  int scale() const {
    int n = 0;
    for (auto& nd : nodes) n += (nd.child[0] >= 0);
    return n;
  }
  std::string key() const;  // shape + codes, for dedup
};

int tree_zeta_star(const EncodedTree& t);  // prod (-1)^{c_n}, in {-1,+1}

// Canonical equivalence-class key. Type 1 (root code 0) keeps its subtree
// classes ordered; a type-2 chain contributes the multiset of its
// (c, class, class) tuples plus the tail class.
std::string tree_class_id(const EncodedTree& t);

// All encoded trees of scale n (every shape x every code assignment).
std::vector<EncodedTree> enumerate_encoded_trees(int n);

// Canonical dominant couple mapping to t (all chain pairs on the plus side,
// variant digits 0).
Couple decode_tree(const EncodedTree& t);

struct ClassifyResult {
  bool dominant = false;
  std::optional<EncodedTree> encoded;  // present iff dominant
  std::string class_id;                // empty unless dominant
};

// Throws std::invalid_argument if q is not regular.
ClassifyResult classify_dominant(const Couple& q);

// Reference enumeration of all dominant couples of the given half-scale
// (couple scale = 2 * half_scale). Cached; reference stays valid.
const std::vector<Couple>& dominant_couples(int half_scale);

// Special subsets Z of N^ch (those avoiding every type-1 root), smallest
// first; q must be dominant. Each entry is a sorted list of global ids.
std::vector<std::vector<int>> special_Z_sets(const Couple& q);

// Class key of the enhanced couple (q, Z); Z as global ids. With empty Z
// this coincides with classify_dominant(q).class_id.
std::string enhanced_class_id(const Couple& q, const std::vector<int>& Z);

// One layer of a dominant couple, with sub-couples materialized. Type 1: the
// three couples replacing the leaf pairs of the root mini couple, in plus-root
// child order. Type 2: per side, the two attachment couples of each chain
// pair (its cross leaf pairs, in pattern order), chain pairs from the top of
// the chain down, plus the couple at the lone pair.
struct DominantDecomp {
  int type = 0;  // 0 trivial, 1, 2
  std::vector<Couple> sub;
  std::vector<std::pair<Couple, Couple>> plus_pairs, minus_pairs;
  Couple lp;
};

// Throws std::invalid_argument unless q is dominant.
DominantDecomp decompose_dominant(const Couple& q);

// ---------------------------------------------------------------------------
// Irregular chains.
// ---------------------------------------------------------------------------

struct IrregularChain {
  std::vector<int> n;  // n_0..n_q, each the parent of the next
  std::vector<int> m;  // m_j (j=0..q-1): leaf child of n_j paired into n_{j+1}
  std::vector<int> p;  // p_j (j=0..q): the remaining leaf child of n_j
  int e = -1, f = -1;  // children of n_q besides p_q, sign(e)=+1, sign(f)=-1
  int length() const { return (int)n.size() - 1; }
};

// All maximal irregular chains (length >= 1).
std::vector<IrregularChain> irregular_chains(const Couple& q);

// The 2^q couples obtained by rechoosing the signs zeta_{n_1}..zeta_{n_q}
// within the congruence class of h (positions of the p_j preserved).
std::vector<Couple> congruent_variants(const Couple& q, const IrregularChain& h);

struct CongdecReport {
  bool ok = false;        // all three identities hold
  IVec h;                 // k_0 - l_0
  bool h_constant = false;  // k_j - l_j = h along the chain
  bool omega_ok = false;    // zeta_n Omega_n = 2<h, k_{j+1}-k_j>_beta, exactly
  bool eps_ok = false;      // eps at n_j = eps_{k_{j+1} l_{j+1} l_j}
};

CongdecReport verify_congdec(const Couple& q, const IrregularChain& h,
                             const Decoration& dec, const LatticeSpec& spec);

}  // namespace wk

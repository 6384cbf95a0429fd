#pragma once
#include <complex>
#include <functional>
#include <optional>
#include <utility>

#include "wk/common.hpp"

namespace wk {

// Signed ternary tree, nodes stored flat in depth-first preorder (children
// left to right). A node either has exactly 3 children or none. Child signs
// of a sign-z branching node are (z, -z, z).
struct Tree {
  struct Node {
    int parent = -1;
    std::array<int, 3> child{-1, -1, -1};
    int sign = +1;
  };
  std::vector<Node> nodes;

  bool is_leaf(int i) const { return nodes[i].child[0] < 0; }
  int sign() const { return nodes.empty() ? +1 : nodes[0].sign; }
  int size() const { return (int)nodes.size(); }

  int scale() const {
    int n = 0;
    for (auto& nd : nodes) n += (nd.child[0] >= 0);
    return n;
  }

  std::vector<int> leaf_ids() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (is_leaf(i)) out.push_back(i);
    return out;
  }

  Tree conjugate() const {
    Tree t = *this;
    for (auto& nd : t.nodes) nd.sign = -nd.sign;
    return t;
  }

  // Shape only (signs are determined by the root sign anyway).
  std::string shape_key() const;
};

Tree single_leaf(int sign);

// All trees of scale n and root sign, in a deterministic canonical order.
// Cached; the returned reference stays valid.
const std::vector<Tree>& enumerate_trees(int n, int sign);

// Independent count oracle: T(n) = sum_{a+b+c=n-1} T(a)T(b)T(c), T(0)=1.
long long tree_count_oracle(int n);

// Pair of signed trees with all leaves matched into opposite-sign pairs.
// Global node ids: plus-tree nodes first (preorder), then minus-tree nodes.
struct Couple {
  Tree plus_t;   // root sign +1
  Tree minus_t;  // root sign -1
  std::vector<std::pair<int, int>> pairing;  // global leaf ids, first<second, sorted

  int plus_size() const { return plus_t.size(); }
  int total_nodes() const { return plus_t.size() + minus_t.size(); }
  int scale() const { return plus_t.scale() + minus_t.scale(); }
  bool in_plus(int g) const { return g < plus_size(); }
  const Tree::Node& node(int g) const {
    return in_plus(g) ? plus_t.nodes[g] : minus_t.nodes[g - plus_size()];
  }
  bool is_leaf(int g) const { return node(g).child[0] < 0; }
  int node_sign(int g) const { return node(g).sign; }
  // Children/parent in global ids (-1 when absent).
  int child(int g, int j) const {
    int c = node(g).child[j];
    if (c < 0) return -1;
    return in_plus(g) ? c : c + plus_size();
  }
  int parent(int g) const {
    int p = node(g).parent;
    if (p < 0) return -1;
    return in_plus(g) ? p : p + plus_size();
  }
  std::vector<int> branching_ids() const {
    std::vector<int> out;
    for (int g = 0; g < total_nodes(); ++g)
      if (!is_leaf(g)) out.push_back(g);
    return out;
  }
  std::vector<int> leaf_ids() const {
    std::vector<int> out;
    for (int g = 0; g < total_nodes(); ++g)
      if (is_leaf(g)) out.push_back(g);
    return out;
  }
  int pair_of(int leaf) const;

  std::string key() const;  // canonical serialization, usable for dedup
  void validate() const;    // throws on broken invariants
};

Couple trivial_couple();

// All couples of scale n: both tree shapes plus every opposite-sign perfect
// matching of the 2n+2 leaves. Canonical order, no duplicates.
std::vector<Couple> enumerate_couples(int n);

// Independent count oracle: sum_{a+b=n} T(a)T(b)(n+1)!.
long long couple_count_oracle(int n);

// Assignment node -> m in Z^d (physical vector m/L) for every global node.
struct Decoration {
  std::vector<IVec> m;
};

// Iterates the k-decorations of a couple with every leaf vector inside the
// sup-norm box |k^j| <= bound. k passed as integer vector (times L). One free
// value per leaf pair except one cross pair solved from the root equation.
class DecorationRange {
 public:
  DecorationRange(const Couple& q, IVec k, const LatticeSpec& spec, double bound);

  class iterator {
   public:
    using value_type = Decoration;
    const Decoration& operator*() const { return dec_; }
    iterator& operator++();
    bool operator!=(const iterator& o) const { return !done_ || !o.done_; }

   private:
    friend class DecorationRange;
    iterator() : done_(true) {}
    explicit iterator(const DecorationRange* r);
    void settle();  // advance until the solved pair lands in the box (or end)
    bool materialize();
    const DecorationRange* r_ = nullptr;
    std::vector<i64> odo_;  // flat odometer over free pairs x dimensions
    Decoration dec_;
    bool done_ = false;
  };

  iterator begin() const { return iterator(this); }
  iterator end() const { return iterator(); }

  // Convenience: run f over all decorations, return count.
  long long for_each(const std::function<void(const Decoration&)>& f) const;
  long long count() const { return for_each(nullptr); }

 private:
  friend class iterator;
  const Couple& q_;
  IVec k_;
  int d_;
  i64 box_;  // leaf coordinates range over [-box, box]
  std::vector<int> free_pairs_;
  int solve_pair_ = -1;
  int solve_coeff_ = 0;  // coefficient of the solved pair in the plus-root equation
  std::vector<int> pair_coeff_;  // per pair, coefficient in the plus-root equation
};

// Fill internal nodes bottom-up from leaf values; returns false if the given
// leaf assignment is not a k-decoration (roots off k).
bool complete_decoration(const Couple& q, const IVec& k, Decoration& dec);

// Per-branching-node resonance and coupling coefficient.
struct ResonanceReport {
  std::vector<int> nodes;          // global branching ids, preorder
  std::vector<double> omega;       // Omega_n
  std::vector<int> eps;            // epsilon in {-1,0,1}
  int eps_product = 1;
  bool forms_agree = true;         // difference-of-squares vs inner-product form
};

ResonanceReport resonance_and_epsilon(const Couple& q, const Decoration& dec,
                                      const LatticeSpec& spec);

// Exact integer resonance data: Omega_n = (sum_j beta_j coeff_j) / L^2.
IVec omega_coeffs(const Couple& q, const Decoration& dec, int branching_g);

// epsilon_{k1 k2 k3}: 1 if k2 differs from both k1 and k3, -1 if all equal,
// 0 otherwise.
int epsilon_factor(const IVec& k1, const IVec& k2, const IVec& k3);

// prod over branching nodes of (i * zeta_n); lands in {1, -1, i, -i}.
std::complex<double> zeta_star(const Couple& q);

// JSON round trip (nested child arrays + pairing list). See docs/formats.md.
std::string couple_to_json(const Couple& q);
Couple couple_from_json(const std::string& text);

}  // namespace wk

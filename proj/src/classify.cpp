#include "wk/classify.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <mutex>
#include <set>

namespace wk {

namespace {

constexpr int slot_sign(int slot) { return slot == 1 ? -1 : +1; }

// Pairing patterns of the six mini trees, 0-based slots. For code c the inner
// branching node sits at root slot c-1; the sign-forced pair is fixed and the
// free pair gives the two variants. The lone slot always carries the root
// sign, so splicing a subtree there never touches its signs.
const MiniTreePattern kPatterns[3][2] = {
    {{0, 2, {{{1, 0}, {2, 1}}}}, {0, 0, {{{1, 2}, {2, 1}}}}},
    {{1, 1, {{{0, 0}, {2, 2}}}}, {1, 1, {{{0, 2}, {2, 0}}}}},
    {{2, 2, {{{0, 1}, {1, 0}}}}, {2, 0, {{{0, 1}, {1, 2}}}}},
};

// ---------------------------------------------------------------------------
// Mutable couple with stable node ids. Collapses keep dead nodes around so
// they can be resurrected when unwinding a reduction.
// ---------------------------------------------------------------------------

struct ENode {
  int sign = +1;
  int parent = -1;
  std::array<int, 3> child{-1, -1, -1};
  int pair = -1;
  bool alive = true;
};

struct EditCouple {
  std::vector<ENode> nd;
  int rplus = 0, rminus = 1;

  static EditCouple from_couple(const Couple& q) {
    EditCouple ec;
    int n = q.total_nodes();
    ec.nd.resize(n);
    for (int g = 0; g < n; ++g) {
      ec.nd[g].sign = q.node_sign(g);
      ec.nd[g].parent = q.parent(g);
      for (int j = 0; j < 3; ++j) ec.nd[g].child[j] = q.child(g, j);
    }
    for (auto& pr : q.pairing) {
      ec.nd[pr.first].pair = pr.second;
      ec.nd[pr.second].pair = pr.first;
    }
    ec.rplus = 0;
    ec.rminus = q.plus_size();
    return ec;
  }

  bool leaf(int v) const { return nd[v].child[0] < 0; }

  int slot_in_parent(int v) const {
    int p = nd[v].parent;
    for (int j = 0; j < 3; ++j)
      if (nd[p].child[j] == v) return j;
    throw std::logic_error("slot_in_parent: broken link");
  }

  int fresh(int sign, int parent) {
    nd.push_back({sign, parent, {-1, -1, -1}, -1, true});
    return (int)nd.size() - 1;
  }

  void set_pair(int a, int b) {
    if (nd[a].sign + nd[b].sign != 0) throw std::logic_error("pairing equal signs");
    nd[a].pair = b;
    nd[b].pair = a;
  }

  void sprout(int v) {
    for (int j = 0; j < 3; ++j) {
      int c = fresh(nd[v].sign * slot_sign(j), v);
      nd[v].child[j] = c;
    }
  }

  // step A at the paired leaf pair (u,v)
  void expand_A(int u, int v, int var) {
    if (var < 0 || var > 1) throw std::invalid_argument("step A variant out of range");
    if (u < 0 || v < 0 || u >= (int)nd.size() || v >= (int)nd.size() || !leaf(u) ||
        nd[u].pair != v)
      throw std::invalid_argument("step A needs a paired leaf pair");
    nd[u].pair = nd[v].pair = -1;
    sprout(u);
    sprout(v);
    int a = nd[u].sign == +1 ? u : v;
    int b = a == u ? v : u;
    for (int j = 0; j < 3; ++j) set_pair(nd[a].child[j], nd[b].child[var == 0 ? j : 2 - j]);
  }

  // step B at node g (leaves and roots allowed)
  void expand_B(int g, int c, int var) {
    if (c < 1 || c > 3 || var < 0 || var > 1)
      throw std::invalid_argument("step B code out of range");
    const MiniTreePattern& pat = kPatterns[c - 1][var];
    int sg = nd[g].sign;
    int p = nd[g].parent;
    bool was_plus_root = g == rplus;
    int x;
    if (p >= 0) {
      int slot = slot_in_parent(g);
      x = fresh(sg, p);
      nd[p].child[slot] = x;
    } else {
      x = fresh(sg, -1);
      (was_plus_root ? rplus : rminus) = x;
    }
    int inner = -1;
    for (int j = 0; j < 3; ++j) {
      int ch = fresh(sg * slot_sign(j), x);
      nd[x].child[j] = ch;
      if (j == pat.inner_slot) inner = ch;
    }
    int si = nd[inner].sign;
    for (int j = 0; j < 3; ++j) {
      if (j == pat.lone_slot) {
        nd[inner].child[j] = g;
      } else {
        int ch = fresh(si * slot_sign(j), inner);
        nd[inner].child[j] = ch;
      }
    }
    nd[g].parent = inner;
    if (sg != si * slot_sign(pat.lone_slot)) throw std::logic_error("lone slot sign mismatch");
    for (auto& pr : pat.pairs) set_pair(nd[x].child[pr.first], nd[inner].child[pr.second]);
  }

  Couple to_couple(std::vector<int>* edit_to_canon = nullptr) const {
    std::vector<int> map(nd.size(), -1);
    Couple out;
    auto build = [&](int root, Tree& t, int offset) {
      std::function<void(int, int)> rec = [&](int v, int pnew) {
        int id = (int)t.nodes.size();
        map[v] = id + offset;
        t.nodes.push_back({pnew, {-1, -1, -1}, nd[v].sign});
        if (!leaf(v))
          for (int j = 0; j < 3; ++j) {
            t.nodes[id].child[j] = (int)t.nodes.size();
            rec(nd[v].child[j], id);
          }
      };
      rec(root, -1);
    };
    build(rplus, out.plus_t, 0);
    build(rminus, out.minus_t, out.plus_t.size());
    for (int v = 0; v < (int)nd.size(); ++v) {
      if (!nd[v].alive || !leaf(v) || map[v] < 0) continue;
      int w = nd[v].pair;
      if (w < 0) throw std::logic_error("to_couple: unpaired leaf");
      if (v < w) {
        int a = map[v], b = map[w];
        out.pairing.push_back({std::min(a, b), std::max(a, b)});
      }
    }
    std::sort(out.pairing.begin(), out.pairing.end());
    out.validate();
    if (edit_to_canon) *edit_to_canon = std::move(map);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Reduction: find and undo steps A and B until neither applies.
// ---------------------------------------------------------------------------

struct MiniCoupleHit {
  int x, y, var;
};
struct MiniTreeHit {
  int x, y, c, var;
};

// branching x whose three children are leaves all paired to the children of
// one other branching node
std::optional<MiniCoupleHit> mini_couple_at(const EditCouple& ec, int x) {
  int y = -1;
  for (int j = 0; j < 3; ++j) {
    int ch = ec.nd[x].child[j];
    if (!ec.leaf(ch)) return std::nullopt;
    int w = ec.nd[ch].pair;
    if (w < 0) return std::nullopt;
    int py = ec.nd[w].parent;
    if (py < 0 || (y >= 0 && y != py)) return std::nullopt;
    y = py;
  }
  if (y == x) return std::nullopt;
  int a = ec.nd[x].sign == +1 ? x : y;
  int b = a == x ? y : x;
  int var = ec.nd[b].child[0] == ec.nd[ec.nd[a].child[0]].pair ? 0 : 1;
  return MiniCoupleHit{x, y, var};
}

// branching x with two leaf children paired into its single branching child
std::optional<MiniTreeHit> mini_tree_at(const EditCouple& ec, int x) {
  int inner = -1, nleaf = 0;
  for (int j = 0; j < 3; ++j) {
    int ch = ec.nd[x].child[j];
    if (ec.leaf(ch)) {
      ++nleaf;
    } else {
      if (inner >= 0) return std::nullopt;
      inner = j;
    }
  }
  if (nleaf != 2 || inner < 0) return std::nullopt;
  int y = ec.nd[x].child[inner];
  for (int j = 0; j < 3; ++j) {
    if (j == inner) continue;
    int w = ec.nd[ec.nd[x].child[j]].pair;
    if (w < 0 || ec.nd[w].parent != y) return std::nullopt;
  }
  int c = inner + 1;
  for (int var = 0; var < 2; ++var) {
    const MiniTreePattern& pat = kPatterns[c - 1][var];
    bool ok = true;
    for (auto& pr : pat.pairs)
      ok = ok && ec.nd[ec.nd[x].child[pr.first]].pair == ec.nd[y].child[pr.second];
    if (ok) return MiniTreeHit{x, y, c, var};
  }
  throw std::logic_error("paired mini tree matches no variant");
}

struct Undo {
  std::vector<std::pair<int, ENode>> saved;
  int rplus, rminus;
};

struct Event {
  char kind = 'A';
  int x = -1, y = -1;
  int c = 0, var = 0;
  int survivor = -1;  // B only: node that keeps the position
  Undo undo;
};

void save_node(const EditCouple& ec, Undo& u, int v) { u.saved.push_back({v, ec.nd[v]}); }

void apply_undo(EditCouple& ec, const Event& e) {
  for (auto& [id, node] : e.undo.saved) ec.nd[id] = node;
  ec.rplus = e.undo.rplus;
  ec.rminus = e.undo.rminus;
}

void collapse_mini_couple(EditCouple& ec, const MiniCoupleHit& h, Event& ev) {
  ev.kind = 'A';
  ev.x = h.x;
  ev.y = h.y;
  ev.var = h.var;
  ev.undo.rplus = ec.rplus;
  ev.undo.rminus = ec.rminus;
  save_node(ec, ev.undo, h.x);
  save_node(ec, ev.undo, h.y);
  for (int r : {h.x, h.y})
    for (int j = 0; j < 3; ++j) save_node(ec, ev.undo, ec.nd[r].child[j]);
  for (int r : {h.x, h.y})
    for (int j = 0; j < 3; ++j) {
      ec.nd[ec.nd[r].child[j]].alive = false;
      ec.nd[r].child[j] = -1;
    }
  ec.set_pair(h.x, h.y);
}

void collapse_mini_tree(EditCouple& ec, const MiniTreeHit& h, Event& ev) {
  const MiniTreePattern& pat = kPatterns[h.c - 1][h.var];
  int lone = ec.nd[h.y].child[pat.lone_slot];
  ev.kind = 'B';
  ev.x = h.x;
  ev.y = h.y;
  ev.c = h.c;
  ev.var = h.var;
  ev.survivor = lone;
  ev.undo.rplus = ec.rplus;
  ev.undo.rminus = ec.rminus;
  save_node(ec, ev.undo, h.x);
  save_node(ec, ev.undo, h.y);
  save_node(ec, ev.undo, lone);
  int p = ec.nd[h.x].parent;
  if (p >= 0) save_node(ec, ev.undo, p);
  for (int j = 0; j < 3; ++j) {
    if (ec.nd[h.x].child[j] != h.y) save_node(ec, ev.undo, ec.nd[h.x].child[j]);
    if (j != pat.lone_slot) save_node(ec, ev.undo, ec.nd[h.y].child[j]);
  }
  if (ec.nd[lone].sign != ec.nd[h.x].sign) throw std::logic_error("lone subtree sign mismatch");
  for (int j = 0; j < 3; ++j) {
    if (ec.nd[h.x].child[j] != h.y) ec.nd[ec.nd[h.x].child[j]].alive = false;
    if (j != pat.lone_slot) ec.nd[ec.nd[h.y].child[j]].alive = false;
  }
  if (p >= 0) {
    ec.nd[p].child[ec.slot_in_parent(h.x)] = lone;
  } else if (h.x == ec.rplus) {
    ec.rplus = lone;
  } else {
    ec.rminus = lone;
  }
  ec.nd[lone].parent = p;
  ec.nd[h.x].alive = false;
  ec.nd[h.y].alive = false;
}

// One reduction step; scans alive branching nodes and applies the first hit
// (or an rng-chosen one). Returns false when the couple is prime.
bool reduce_once(EditCouple& ec, Rng* rng, std::vector<Event>* log) {
  std::vector<std::pair<char, int>> hits;
  for (int v = 0; v < (int)ec.nd.size(); ++v) {
    if (!ec.nd[v].alive || ec.leaf(v)) continue;
    if (mini_couple_at(ec, v)) {
      hits.push_back({'A', v});
      if (!rng) break;
    } else if (mini_tree_at(ec, v)) {
      hits.push_back({'B', v});
      if (!rng) break;
    }
  }
  if (hits.empty()) return false;
  auto [kind, v] = hits[rng ? (*rng)() % hits.size() : 0];
  Event ev;
  if (kind == 'A') {
    collapse_mini_couple(ec, *mini_couple_at(ec, v), ev);
  } else {
    collapse_mini_tree(ec, *mini_tree_at(ec, v), ev);
  }
  if (log) log->push_back(std::move(ev));
  return true;
}

// ---------------------------------------------------------------------------
// Extraction of sub-couples and attachment of couples at leaf pairs.
// ---------------------------------------------------------------------------

Couple extract_couple(const Couple& q, int u, int v, std::vector<int>* new_to_old) {
  if (q.node_sign(u) != +1 || q.node_sign(v) != -1)
    throw std::logic_error("extract_couple: root signs must be +1/-1");
  std::vector<int> n2o;
  std::vector<int> o2n(q.total_nodes(), -1);
  Couple out;
  auto build = [&](int root, Tree& t) {
    std::function<void(int, int)> rec = [&](int g, int pnew) {
      int id = (int)t.nodes.size();
      o2n[g] = (int)n2o.size();
      n2o.push_back(g);
      t.nodes.push_back({pnew, {-1, -1, -1}, q.node_sign(g)});
      if (!q.is_leaf(g))
        for (int j = 0; j < 3; ++j) {
          t.nodes[id].child[j] = (int)t.nodes.size();
          rec(q.child(g, j), id);
        }
    };
    rec(root, -1);
  };
  build(u, out.plus_t);
  build(v, out.minus_t);
  for (auto& pr : q.pairing) {
    int a = o2n[pr.first], b = o2n[pr.second];
    if ((a < 0) != (b < 0)) throw std::logic_error("extract_couple: pairing not closed");
    if (a >= 0) out.pairing.push_back({std::min(a, b), std::max(a, b)});
  }
  std::sort(out.pairing.begin(), out.pairing.end());
  out.validate();
  if (new_to_old) *new_to_old = std::move(n2o);
  return out;
}

// graft couple X onto the paired leaf pair (u,v); trivial X is a no-op
void attach_couple(EditCouple& ec, int u, int v, const Couple& X) {
  if (X.scale() == 0) return;
  if (!ec.leaf(u) || ec.nd[u].pair != v) throw std::logic_error("attach needs a paired leaf pair");
  int pu = ec.nd[u].sign == +1 ? u : v;
  int pv = pu == u ? v : u;
  std::vector<int> x2e(X.total_nodes(), -1);
  std::function<void(int, int)> graft = [&](int g, int e) {
    x2e[g] = e;
    if (X.is_leaf(g)) return;
    for (int j = 0; j < 3; ++j) {
      int cg = X.child(g, j);
      int ce = ec.fresh(X.node_sign(cg), e);
      ec.nd[e].child[j] = ce;
      graft(cg, ce);
    }
  };
  ec.nd[pu].pair = ec.nd[pv].pair = -1;
  graft(0, pu);
  graft(X.plus_size(), pv);
  for (auto& pr : X.pairing) ec.set_pair(x2e[pr.first], x2e[pr.second]);
}

// insert a regular chain above node g; the node's subtree reattaches at the
// final continuation slot and the chain's leaf pairs receive cd.pair_couples
void insert_chain(EditCouple& ec, int g, const ChainDecomp& cd) {
  int m = cd.half_length();
  if (m == 0) return;
  if (!partition_is_legal(cd.partition))
    throw std::invalid_argument("chain partition must be legal");
  if ((int)cd.codes.size() != m || (int)cd.pair_couples.size() != m)
    throw std::invalid_argument("chain decomposition sizes disagree");
  int len = 2 * m;
  std::vector<int> cont(len + 1, -1);
  for (int pi = 0; pi < m; ++pi) {
    auto [a, b] = cd.partition[pi];
    auto [c, var] = cd.codes[pi];
    if (c < 1 || c > 3 || var < 0 || var > 1) throw std::invalid_argument("chain code out of range");
    cont[a] = c - 1;
    cont[b] = kPatterns[c - 1][var].lone_slot;
  }
  std::vector<int> sigma(len + 2);
  sigma[1] = ec.nd[g].sign;
  for (int i = 1; i <= len; ++i) sigma[i + 1] = sigma[i] * slot_sign(cont[i]);
  if (sigma[len + 1] != ec.nd[g].sign) throw std::logic_error("chain sign does not close");
  std::vector<int> nodes(len + 1, -1);
  int p = ec.nd[g].parent;
  int gslot = p >= 0 ? ec.slot_in_parent(g) : -1;
  for (int i = 1; i <= len; ++i) nodes[i] = ec.fresh(sigma[i], -1);
  if (p >= 0) {
    ec.nd[p].child[gslot] = nodes[1];
    ec.nd[nodes[1]].parent = p;
  } else if (g == ec.rplus) {
    ec.rplus = nodes[1];
  } else {
    ec.rminus = nodes[1];
  }
  for (int i = 1; i <= len; ++i) {
    int nxt = i < len ? nodes[i + 1] : g;
    for (int j = 0; j < 3; ++j) {
      if (j == cont[i]) {
        ec.nd[nodes[i]].child[j] = nxt;
        ec.nd[nxt].parent = nodes[i];
      } else {
        int lf = ec.fresh(sigma[i] * slot_sign(j), nodes[i]);
        ec.nd[nodes[i]].child[j] = lf;
      }
    }
  }
  for (int pi = 0; pi < m; ++pi) {
    auto [a, b] = cd.partition[pi];
    auto [c, var] = cd.codes[pi];
    const MiniTreePattern& pat = kPatterns[c - 1][var];
    for (int t = 0; t < 2; ++t) {
      int u = ec.nd[nodes[a]].child[pat.pairs[t].first];
      int v = ec.nd[nodes[b]].child[pat.pairs[t].second];
      ec.set_pair(u, v);
      attach_couple(ec, u, v, t == 0 ? cd.pair_couples[pi].first : cd.pair_couples[pi].second);
    }
  }
}

// ---------------------------------------------------------------------------
// Maximal regular sub-couples (phase 1 of the skeleton decomposition).
// ---------------------------------------------------------------------------

struct SubCouple {
  int u, v;
  Couple extracted;
};

std::vector<SubCouple> maximal_regular_subcouples(const Couple& q) {
  int n = q.total_nodes();
  if (n > 64) throw std::invalid_argument("couples beyond 64 nodes are not supported here");
  std::vector<uint64_t> lmask(n, 0), nmask(n, 0);
  for (int v = n - 1; v >= 0; --v) {
    nmask[v] = 1ull << v;
    if (q.is_leaf(v)) {
      lmask[v] = 1ull << v;
    } else {
      for (int j = 0; j < 3; ++j) {
        lmask[v] |= lmask[q.child(v, j)];
        nmask[v] |= nmask[q.child(v, j)];
      }
    }
  }
  auto closed = [&](uint64_t leaves) {
    uint64_t rest = leaves;
    while (rest) {
      int v = __builtin_ctzll(rest);
      rest &= rest - 1;
      if (!(leaves >> q.pair_of(v) & 1)) return false;
    }
    return true;
  };
  std::vector<SubCouple> cands;
  for (int u = 0; u < n; ++u) {
    if (q.node_sign(u) != +1) continue;
    for (int v = 0; v < n; ++v) {
      if (q.node_sign(v) != -1 || (nmask[u] & nmask[v])) continue;
      if (!closed(lmask[u] | lmask[v])) continue;
      Couple ex = extract_couple(q, u, v, nullptr);
      if (ex.scale() == 0 || !is_regular(ex)) continue;
      cands.push_back({u, v, std::move(ex)});
    }
  }
  std::sort(cands.begin(), cands.end(), [&](const SubCouple& a, const SubCouple& b) {
    int pa = __builtin_popcountll(nmask[a.u] | nmask[a.v]);
    int pb = __builtin_popcountll(nmask[b.u] | nmask[b.v]);
    if (pa != pb) return pa > pb;
    return std::make_pair(a.u, a.v) < std::make_pair(b.u, b.v);
  });
  std::vector<SubCouple> out;
  std::vector<uint64_t> taken;
  for (auto& c : cands) {
    uint64_t m = nmask[c.u] | nmask[c.v];
    bool overlap = false, contained = false;
    for (uint64_t t : taken) {
      if (m & t) overlap = true;
      if ((m & t) == m) contained = true;
    }
    if (!overlap) {
      taken.push_back(m);
      out.push_back(std::move(c));
    } else if (!contained) {
      throw std::logic_error("maximal regular sub-couples overlap without nesting");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure analysis of a regular couple: type, chains, classes, choice set.
// ---------------------------------------------------------------------------

EncodedTree leaf_tree() {
  EncodedTree t;
  t.nodes.push_back({});
  return t;
}

int append_encoded(EncodedTree& dst, const EncodedTree& src, int v, int parent) {
  int id = (int)dst.nodes.size();
  dst.nodes.push_back({parent, {-1, -1, -1}, src.nodes[v].code});
  if (!src.is_leaf(v))
    for (int j = 0; j < 3; ++j) {
      int cid = append_encoded(dst, src, src.nodes[v].child[j], id);
      dst.nodes[id].child[j] = cid;
    }
  return id;
}

int child_slot(const Couple& q, int p, int c) {
  for (int j = 0; j < 3; ++j)
    if (q.child(p, j) == c) return j;
  throw std::logic_error("child_slot: broken link");
}

struct AnalyzeOut {
  int type = 0;  // 0 trivial
  bool dominant = false;
  std::string cls;
  EncodedTree enc;
  std::vector<std::pair<int, int>> bpairs;
  std::vector<NchEntry> nch;
  // materialized top-layer decomposition (see DominantDecomp)
  std::vector<Couple> sub;
  std::vector<std::pair<Couple, Couple>> ppairs, mpairs;
  Couple lpc;
};

AnalyzeOut analyze(const Couple& q, const std::set<int>* Z) {
  AnalyzeOut out;
  if (q.scale() == 0) {
    out.dominant = true;
    out.cls = "*";
    out.enc = leaf_tree();
    return out;
  }
  int n = q.total_nodes();
  if (n > 64) throw std::invalid_argument("couples beyond 64 nodes are not supported here");
  int rp = 0, rm = q.plus_size();

  // per node: any descendant leaf paired across the two trees
  std::vector<char> cross(n, 0);
  std::vector<uint64_t> lmask(n, 0);
  for (int v = n - 1; v >= 0; --v) {
    if (q.is_leaf(v)) {
      cross[v] = q.in_plus(v) != q.in_plus(q.pair_of(v));
      lmask[v] = 1ull << v;
    } else {
      for (int j = 0; j < 3; ++j) {
        cross[v] |= cross[q.child(v, j)];
        lmask[v] |= lmask[q.child(v, j)];
      }
    }
  }
  auto partners = [&](uint64_t leaves) {
    uint64_t p = 0;
    while (leaves) {
      int v = __builtin_ctzll(leaves);
      leaves &= leaves - 1;
      p |= 1ull << q.pair_of(v);
    }
    return p;
  };
  auto recurse = [&](int u, int v, const std::vector<int>*& n2o_out, std::vector<int>& n2o_store,
                     Couple* keep = nullptr) -> AnalyzeOut {
    int pu = q.node_sign(u) == +1 ? u : v;
    int pv = pu == u ? v : u;
    Couple X = extract_couple(q, pu, pv, &n2o_store);
    n2o_out = &n2o_store;
    if (keep) *keep = X;
    std::set<int> zsub;
    if (Z)
      for (int w = 0; w < (int)n2o_store.size(); ++w)
        if (Z->count(n2o_store[w])) zsub.insert(w);
    return analyze(X, Z ? &zsub : nullptr);
  };

  bool type1 = !q.is_leaf(rp) && !q.is_leaf(rm);
  if (type1)
    for (int j = 0; j < 3; ++j)
      type1 = type1 && cross[q.child(rp, j)] && cross[q.child(rm, j)];

  if (type1) {
    out.type = 1;
    int sigma[3] = {-1, -1, -1};
    for (int j = 0; j < 3; ++j) {
      uint64_t pm = partners(lmask[q.child(rp, j)]);
      for (int i = 0; i < 3; ++i)
        if (pm & lmask[q.child(rm, i)]) {
          if (sigma[j] >= 0 && sigma[j] != i)
            throw std::logic_error("root subtree pairs into two slots");
          sigma[j] = i;
        }
      if (pm & ~(lmask[q.child(rp, j)] | lmask[q.child(rm, sigma[j])]))
        throw std::logic_error("root subtree pairing not closed");
    }
    if (sigma[1] != 1 || sigma[0] == 1 || sigma[2] == 1 || sigma[0] == sigma[2])
      throw std::logic_error("root pairing is not a mini couple");
    if (Z && Z->count(rp)) throw std::invalid_argument("Z contains a type-1 root");
    out.dominant = true;
    out.enc.nodes.push_back({-1, {-1, -1, -1}, 0});
    out.bpairs.push_back({rp, rm});
    out.nch.push_back({rp, 'r'});
    std::string ids[3];
    for (int j = 0; j < 3; ++j) {
      const std::vector<int>* n2o = nullptr;
      std::vector<int> store;
      Couple kept;
      AnalyzeOut s = recurse(q.child(rp, j), q.child(rm, sigma[j]), n2o, store, &kept);
      out.sub.push_back(std::move(kept));
      out.dominant = out.dominant && s.dominant;
      ids[j] = s.cls;
      int cid = append_encoded(out.enc, s.enc, 0, 0);
      out.enc.nodes[0].child[j] = cid;
      for (auto& bp : s.bpairs) out.bpairs.push_back({(*n2o)[bp.first], (*n2o)[bp.second]});
      for (auto& e : s.nch) out.nch.push_back({(*n2o)[e.node], e.tag});
    }
    out.cls = "(0;" + ids[0] + "," + ids[1] + "," + ids[2] + ")";
    return out;
  }

  // type 2: greedy chain walk from each root
  out.type = 2;
  auto walk = [&](int root, std::vector<int>& chain) {
    int v = root;
    while (!q.is_leaf(v)) {
      int lcount = 0, lkid = -1;
      for (int j = 0; j < 3; ++j)
        if (cross[q.child(v, j)]) {
          ++lcount;
          lkid = q.child(v, j);
        }
      if (lcount == 1) {
        chain.push_back(v);
        v = lkid;
      } else if (lcount == 3) {
        break;
      } else {
        throw std::logic_error("chain walk found a non-regular branching");
      }
    }
    return v;
  };
  std::vector<int> cp, cm;
  int tp = walk(rp, cp), tm = walk(rm, cm);
  if (cp.size() % 2 || cm.size() % 2) throw std::logic_error("chain of odd length");
  if (q.is_leaf(tp) != q.is_leaf(tm)) throw std::logic_error("mismatched chain terminals");
  if (q.is_leaf(tp) && q.pair_of(tp) != tm)
    throw std::logic_error("terminal leaves are not the lone pair");

  struct TupleRec {
    int code = 0;
    int I = 0;
    std::string cls1, cls2;
    EncodedTree t1, t2;
    Couple c1, c2;
    bool dom = true;
  };
  std::vector<TupleRec> tuples;
  bool dom = true;

  auto read_chain = [&](const std::vector<int>& nodes, int terminal) {
    int len = (int)nodes.size();
    if (!len) return;
    std::vector<int> cont(len);
    for (int i = 0; i < len; ++i)
      cont[i] = child_slot(q, nodes[i], i + 1 < len ? nodes[i + 1] : terminal);
    std::vector<std::array<int, 2>> side(len);
    std::vector<uint64_t> smask(len, 0);
    for (int i = 0; i < len; ++i) {
      int k = 0;
      for (int j = 0; j < 3; ++j)
        if (j != cont[i]) side[i][k++] = j;
      smask[i] = lmask[q.child(nodes[i], side[i][0])] | lmask[q.child(nodes[i], side[i][1])];
    }
    std::vector<int> mate(len, -1);
    for (int i = 0; i < len; ++i) {
      uint64_t pm = partners(smask[i]) & ~smask[i];
      if (!pm) throw std::logic_error("chain node with no external pairs");
      for (int j = 0; j < len; ++j)
        if (j != i && (pm & smask[j])) {
          if (mate[i] >= 0 && mate[i] != j) throw std::logic_error("chain node with two mates");
          mate[i] = j;
        }
      if (mate[i] < 0 || (pm & ~smask[mate[i]]))
        throw std::logic_error("chain pairs leak outside the chain");
    }
    Partition part;
    for (int i = 0; i < len; ++i) {
      if (mate[mate[i]] != i) throw std::logic_error("chain mates not symmetric");
      if (i < mate[i]) part.push_back({i + 1, mate[i] + 1});
    }
    if (!partition_is_legal(part)) throw std::logic_error("chain partition crosses");
    dom = dom && partition_is_dominant(part);
    for (auto [a1, b1] : part) {
      int a = a1 - 1, b = b1 - 1;
      // per side subtree of the first node, locate the linked slot of the second
      std::array<std::pair<int, int>, 2> links;
      for (int t = 0; t < 2; ++t) {
        uint64_t pm = partners(lmask[q.child(nodes[a], side[a][t])]) & smask[b];
        int hit = -1;
        for (int s = 0; s < 2; ++s)
          if (pm & lmask[q.child(nodes[b], side[b][s])]) {
            if (hit >= 0) throw std::logic_error("side subtree pairs into two slots");
            hit = side[b][s];
          }
        if (hit < 0 || (pm & ~lmask[q.child(nodes[b], hit)]))
          throw std::logic_error("side subtree pairing not closed");
        links[t] = {side[a][t], hit};
      }
      int c = cont[a] + 1;
      int var = -1;
      for (int v2 = 0; v2 < 2; ++v2) {
        auto pp = kPatterns[c - 1][v2].pairs;
        if ((links[0] == pp[0] && links[1] == pp[1]) || (links[0] == pp[1] && links[1] == pp[0]))
          var = v2;
      }
      if (var < 0) throw std::logic_error("chain pair matches no mini tree pattern");
      if (cont[b] != kPatterns[c - 1][var].lone_slot)
        throw std::logic_error("chain continuation off the lone slot");
      TupleRec tr;
      tr.code = c;
      tr.I = Z && Z->count(nodes[a]) ? 1 : 0;
      for (int t = 0; t < 2; ++t) {
        auto pp = kPatterns[c - 1][var].pairs[t];
        const std::vector<int>* n2o = nullptr;
        std::vector<int> store;
        AnalyzeOut s = recurse(q.child(nodes[a], pp.first), q.child(nodes[b], pp.second), n2o,
                               store, t == 0 ? &tr.c1 : &tr.c2);
        tr.dom = tr.dom && s.dominant;
        (t == 0 ? tr.cls1 : tr.cls2) = s.cls;
        (t == 0 ? tr.t1 : tr.t2) = s.enc;
        for (auto& bp : s.bpairs) out.bpairs.push_back({(*n2o)[bp.first], (*n2o)[bp.second]});
        for (auto& e : s.nch) out.nch.push_back({(*n2o)[e.node], e.tag});
      }
      out.bpairs.push_back({nodes[a], nodes[b]});
      out.nch.push_back({nodes[a], 'c'});
      dom = dom && tr.dom;
      tuples.push_back(std::move(tr));
    }
  };
  read_chain(cp, tp);
  size_t plus_tuples = tuples.size();
  read_chain(cm, tm);
  for (size_t i = 0; i < tuples.size(); ++i)
    (i < plus_tuples ? out.ppairs : out.mpairs).push_back({tuples[i].c1, tuples[i].c2});

  const std::vector<int>* lp_n2o = nullptr;
  std::vector<int> lp_store;
  AnalyzeOut lps = recurse(tp, tm, lp_n2o, lp_store, &out.lpc);
  if (lps.type == 2) throw std::logic_error("greedy chain left a two-sided tail");
  dom = dom && lps.dominant;
  for (auto& bp : lps.bpairs) out.bpairs.push_back({(*lp_n2o)[bp.first], (*lp_n2o)[bp.second]});
  for (auto& e : lps.nch) out.nch.push_back({(*lp_n2o)[e.node], e.tag});

  std::vector<std::string> ts;
  for (auto& t : tuples)
    ts.push_back("(" + std::to_string(t.I) + "," + std::to_string(t.code) + ";" + t.cls1 + "," +
                 t.cls2 + ")");
  std::sort(ts.begin(), ts.end());
  std::string body;
  for (auto& s : ts) body += s;
  out.cls = "(2;[" + body + "];" + lps.cls + ")";
  out.dominant = dom;

  // encoded chain: tuples in canonical order, continuation at slot code-1
  std::function<int(size_t, int)> build = [&](size_t idx, int parent) -> int {
    if (idx == tuples.size()) return append_encoded(out.enc, lps.enc, 0, parent);
    const TupleRec& t = tuples[idx];
    int id = (int)out.enc.nodes.size();
    out.enc.nodes.push_back({parent, {-1, -1, -1}, t.code});
    int seen = 0;
    for (int slot = 0; slot < 3; ++slot) {
      int cid;
      if (slot == t.code - 1) {
        cid = build(idx + 1, id);
      } else {
        cid = append_encoded(out.enc, seen++ ? t.t2 : t.t1, 0, id);
      }
      out.enc.nodes[id].child[slot] = cid;
    }
    return id;
  };
  build(0, -1);
  return out;
}

// ---------------------------------------------------------------------------
// Chain read-off for the skeleton decomposition (phase 2 bookkeeping).
// ---------------------------------------------------------------------------

ChainDecomp read_off_chain(const EditCouple& qi, const std::set<int>& members, int surv,
                           std::map<std::pair<int, int>, Couple>& stripped) {
  int top = -1;
  for (int v : members) {
    int p = qi.nd[v].parent;
    if (p < 0 || !members.count(p)) {
      if (top >= 0) throw std::logic_error("chain with two top nodes");
      top = v;
    }
  }
  std::vector<int> path;
  int cur = top;
  for (;;) {
    path.push_back(cur);
    int nxt = -1;
    for (int j = 0; j < 3; ++j) {
      int ch = qi.nd[cur].child[j];
      if (members.count(ch) || ch == surv) {
        if (nxt >= 0) throw std::logic_error("chain node with two continuations");
        nxt = ch;
      }
    }
    if (nxt < 0) throw std::logic_error("chain does not reach the survivor");
    if (nxt == surv) break;
    cur = nxt;
  }
  if (path.size() != members.size() || path.size() % 2)
    throw std::logic_error("chain path does not cover its nodes");
  int len = (int)path.size();
  std::vector<int> cont(len), index(qi.nd.size(), -1);
  for (int i = 0; i < len; ++i) index[path[i]] = i;
  for (int i = 0; i < len; ++i) {
    int nxt = i + 1 < len ? path[i + 1] : surv;
    for (int j = 0; j < 3; ++j)
      if (qi.nd[path[i]].child[j] == nxt) cont[i] = j;
  }
  std::vector<int> mate(len, -1);
  std::vector<std::array<std::pair<int, int>, 2>> links(len);
  for (int i = 0; i < len; ++i) {
    int k = 0;
    for (int j = 0; j < 3; ++j) {
      if (j == cont[i]) continue;
      int ch = qi.nd[path[i]].child[j];
      if (!qi.leaf(ch)) throw std::logic_error("chain side child is not a leaf");
      int w = qi.nd[ch].pair;
      int owner = qi.nd[w].parent;
      if (owner < 0 || index[owner] < 0) throw std::logic_error("chain leaf pairs outside the chain");
      if (mate[i] >= 0 && mate[i] != index[owner])
        throw std::logic_error("chain node with two mates");
      mate[i] = index[owner];
      links[i][k++] = {j, qi.slot_in_parent(w)};
    }
  }
  ChainDecomp cd;
  for (int i = 0; i < len; ++i) {
    if (mate[mate[i]] != i) throw std::logic_error("chain mates not symmetric");
    if (i > mate[i]) continue;
    int a = i, b = mate[i];
    int c = cont[a] + 1;
    int var = -1;
    for (int v2 = 0; v2 < 2; ++v2) {
      auto pp = kPatterns[c - 1][v2].pairs;
      if ((links[a][0] == pp[0] && links[a][1] == pp[1]) ||
          (links[a][0] == pp[1] && links[a][1] == pp[0]))
        var = v2;
    }
    if (var < 0) throw std::logic_error("chain pair matches no mini tree pattern");
    if (cont[b] != kPatterns[c - 1][var].lone_slot)
      throw std::logic_error("chain continuation off the lone slot");
    cd.partition.push_back({a + 1, b + 1});
    cd.codes.push_back({c, var});
    std::pair<Couple, Couple> pc{trivial_couple(), trivial_couple()};
    for (int t = 0; t < 2; ++t) {
      auto pp = kPatterns[c - 1][var].pairs[t];
      int u = qi.nd[path[a]].child[pp.first];
      int v = qi.nd[u].pair;
      if (v != qi.nd[path[b]].child[pp.second]) throw std::logic_error("chain pair slots disagree");
      auto key = std::make_pair(std::min(u, v), std::max(u, v));
      auto it = stripped.find(key);
      if (it != stripped.end()) {
        (t == 0 ? pc.first : pc.second) = std::move(it->second);
        stripped.erase(it);
      }
    }
    cd.pair_couples.push_back(std::move(pc));
  }
  if (!partition_is_legal(cd.partition)) throw std::logic_error("chain partition crosses");
  return cd;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface.
// ---------------------------------------------------------------------------

const MiniTreePattern& mini_tree_pattern(int c, int var) {
  if (c < 1 || c > 3 || var < 0 || var > 1)
    throw std::invalid_argument("mini tree code out of range");
  return kPatterns[c - 1][var];
}

Couple mini_couple(int var) {
  EditCouple ec = EditCouple::from_couple(trivial_couple());
  ec.expand_A(0, 1, var);
  return ec.to_couple();
}

Couple apply_step_A(const Couple& q, std::pair<int, int> leaf_pair, int var) {
  EditCouple ec = EditCouple::from_couple(q);
  ec.expand_A(leaf_pair.first, leaf_pair.second, var);
  return ec.to_couple();
}

Couple apply_step_B(const Couple& q, int g, int c, int var) {
  if (g < 0 || g >= q.total_nodes()) throw std::invalid_argument("step B node out of range");
  EditCouple ec = EditCouple::from_couple(q);
  ec.expand_B(g, c, var);
  return ec.to_couple();
}

Couple replay(const Couple& start, const std::vector<BuildStep>& steps) {
  Couple q = start;
  for (const auto& s : steps) {
    if (s.kind == 'A')
      q = apply_step_A(q, {s.a, s.b}, s.var);
    else if (s.kind == 'B')
      q = apply_step_B(q, s.a, s.c, s.var);
    else
      throw std::invalid_argument("unknown build step kind");
  }
  return q;
}

bool is_regular(const Couple& q) {
  EditCouple ec = EditCouple::from_couple(q);
  while (reduce_once(ec, nullptr, nullptr)) {
  }
  return ec.to_couple().scale() == 0;
}

Couple skeleton_prime_randomized(const Couple& q, Rng& rng) {
  EditCouple ec = EditCouple::from_couple(q);
  while (reduce_once(ec, &rng, nullptr)) {
  }
  return ec.to_couple();
}

SkeletonResult skeleton(const Couple& q) {
  q.validate();
  SkeletonResult out;

  // plain reduction; the event stack doubles as the witness generator
  EditCouple ec = EditCouple::from_couple(q);
  std::vector<Event> events;
  while (reduce_once(ec, nullptr, &events)) {
  }
  out.prime = ec.to_couple();
  out.regular = out.prime.scale() == 0;
  for (int i = (int)events.size() - 1; i >= 0; --i) {
    std::vector<int> map;
    ec.to_couple(&map);
    const Event& e = events[i];
    if (e.kind == 'A')
      out.witness.push_back({'A', map[e.x], map[e.y], 0, e.var});
    else
      out.witness.push_back({'B', map[e.survivor], -1, e.c, e.var});
    apply_undo(ec, e);
  }
  if (ec.to_couple().key() != q.key())
    throw std::logic_error("undo stack does not restore the couple");

  // structured pass: strip maximal regular sub-couples, then collapse chains
  EditCouple sc = EditCouple::from_couple(q);
  std::map<std::pair<int, int>, Couple> stripped;
  for (auto& s : maximal_regular_subcouples(q)) {
    for (int r : {s.u, s.v}) {
      std::function<void(int)> drop = [&](int v) {
        if (sc.leaf(v)) return;
        for (int j = 0; j < 3; ++j) {
          drop(sc.nd[v].child[j]);
          sc.nd[sc.nd[v].child[j]].alive = false;
        }
        sc.nd[v].child = {-1, -1, -1};
      };
      drop(r);
    }
    sc.set_pair(s.u, s.v);
    stripped[{std::min(s.u, s.v), std::max(s.u, s.v)}] = std::move(s.extracted);
  }
  EditCouple qint = sc;

  std::map<int, int> into;
  auto find_surv = [&](int v) {
    while (into.count(v)) v = into.at(v);
    return v;
  };
  for (;;) {
    bool found = false;
    for (int v = 0; v < (int)sc.nd.size() && !found; ++v) {
      if (!sc.nd[v].alive || sc.leaf(v)) continue;
      if (mini_couple_at(sc, v))
        throw std::logic_error("mini couple survived sub-couple stripping");
      if (auto h = mini_tree_at(sc, v)) {
        Event ev;
        collapse_mini_tree(sc, *h, ev);
        into[h->x] = ev.survivor;
        into[h->y] = ev.survivor;
        found = true;
      }
    }
    if (!found) break;
  }
  std::vector<int> pmap;
  Couple sprime = sc.to_couple(&pmap);
  if (sprime.key() != out.prime.key())
    throw std::logic_error("structured and plain reductions disagree");

  std::map<int, std::set<int>> classes;
  for (auto& [v, w] : into) classes[find_surv(v)].insert(v);
  for (auto& [surv, members] : classes) {
    if (!sc.nd[surv].alive || sc.leaf(surv))
      throw std::logic_error("chain collapsed onto a skeleton leaf");
    out.chains[pmap[surv]] = read_off_chain(qint, members, surv, stripped);
  }
  for (auto& [pr, X] : stripped) {
    int a = pmap[pr.first], b = pmap[pr.second];
    if (a < 0 || b < 0) throw std::logic_error("stripped pair lost in reduction");
    out.leaf_couples[{std::min(a, b), std::max(a, b)}] = X;
  }
  return out;
}

Couple reconstruct(const SkeletonResult& r) {
  EditCouple ec = EditCouple::from_couple(r.prime);
  for (auto& [g, cd] : r.chains) {
    if (g < 0 || g >= r.prime.total_nodes() || r.prime.is_leaf(g))
      throw std::invalid_argument("chains attach above branching nodes");
    insert_chain(ec, g, cd);
  }
  for (auto& [pr, X] : r.leaf_couples) attach_couple(ec, pr.first, pr.second, X);
  return ec.to_couple();
}

std::vector<Partition> legal_partitions(int m) {
  if (m < 0) throw std::invalid_argument("legal_partitions: negative size");
  std::function<std::vector<Partition>(int, int)> gen = [&](int lo, int hi) {
    std::vector<Partition> out;
    if (lo > hi) {
      out.push_back({});
      return out;
    }
    for (int p = lo + 1; p <= hi; p += 2) {
      auto inner = gen(lo + 1, p - 1);
      auto outer = gen(p + 1, hi);
      for (auto& in : inner)
        for (auto& ou : outer) {
          Partition q{{lo, p}};
          q.insert(q.end(), in.begin(), in.end());
          q.insert(q.end(), ou.begin(), ou.end());
          std::sort(q.begin(), q.end());
          out.push_back(std::move(q));
        }
    }
    return out;
  };
  return gen(1, 2 * m);
}

bool partition_is_legal(const Partition& p) {
  int m = (int)p.size();
  std::vector<char> seen(2 * m + 1, 0);
  for (auto [a, b] : p) {
    if (a < 1 || b < 1 || a > 2 * m || b > 2 * m || a >= b) return false;
    if (seen[a] || seen[b]) return false;
    seen[a] = seen[b] = 1;
  }
  for (auto [a, b] : p)
    for (auto [c, d] : p)
      if (a < c && c < b && b < d) return false;
  return true;
}

bool partition_is_dominant(const Partition& p) {
  Partition s = p;
  std::sort(s.begin(), s.end());
  for (int j = 0; j < (int)s.size(); ++j)
    if (s[j] != std::make_pair(2 * j + 1, 2 * j + 2)) return false;
  return true;
}

BranchPairing branch_pairing(const Couple& q) {
  if (!is_regular(q)) throw std::invalid_argument("branch pairing needs a regular couple");
  AnalyzeOut a = analyze(q, nullptr);
  return {std::move(a.bpairs), std::move(a.nch)};
}

std::string EncodedTree::key() const {
  std::string out;
  std::function<void(int)> rec = [&](int v) {
    if (is_leaf(v)) {
      out += '.';
      return;
    }
    out += '(';
    out += char('0' + nodes[v].code);
    for (int j = 0; j < 3; ++j) rec(nodes[v].child[j]);
    out += ')';
  };
  rec(0);
  return out;
}

int tree_zeta_star(const EncodedTree& t) {
  int z = 1;
  for (auto& nd : t.nodes)
    if (nd.child[0] >= 0 && nd.code % 2) z = -z;
  return z;
}

namespace {

std::string tree_cls(const EncodedTree& t, int v) {
  if (t.is_leaf(v)) return "*";
  if (t.nodes[v].code == 0)
    return "(0;" + tree_cls(t, t.nodes[v].child[0]) + "," + tree_cls(t, t.nodes[v].child[1]) +
           "," + tree_cls(t, t.nodes[v].child[2]) + ")";
  std::vector<std::string> ts;
  int cur = v;
  while (!t.is_leaf(cur) && t.nodes[cur].code != 0) {
    int c = t.nodes[cur].code;
    std::vector<int> side;
    for (int j = 0; j < 3; ++j)
      if (j != c - 1) side.push_back(t.nodes[cur].child[j]);
    ts.push_back("(0," + std::to_string(c) + ";" + tree_cls(t, side[0]) + "," +
                 tree_cls(t, side[1]) + ")");
    cur = t.nodes[cur].child[c - 1];
  }
  std::sort(ts.begin(), ts.end());
  std::string body;
  for (auto& s : ts) body += s;
  return "(2;[" + body + "];" + tree_cls(t, cur) + ")";
}

}  // namespace

std::string tree_class_id(const EncodedTree& t) { return tree_cls(t, 0); }

std::vector<EncodedTree> enumerate_encoded_trees(int n) {
  std::vector<EncodedTree> out;
  for (const Tree& shape : enumerate_trees(n, +1)) {
    EncodedTree base;
    base.nodes.resize(shape.size());
    std::vector<int> br;
    for (int i = 0; i < shape.size(); ++i) {
      base.nodes[i].parent = shape.nodes[i].parent;
      base.nodes[i].child = shape.nodes[i].child;
      base.nodes[i].code = -1;
      if (!shape.is_leaf(i)) br.push_back(i);
    }
    long long total = 1;
    for (size_t i = 0; i < br.size(); ++i) total *= 4;
    for (long long mask = 0; mask < total; ++mask) {
      EncodedTree t = base;
      long long m = mask;
      for (int b : br) {
        t.nodes[b].code = (int)(m % 4);
        m /= 4;
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

Couple decode_tree(const EncodedTree& t) {
  std::function<Couple(int)> rec = [&](int v) -> Couple {
    if (t.is_leaf(v)) return trivial_couple();
    if (t.nodes[v].code == 0) {
      EditCouple ec = EditCouple::from_couple(trivial_couple());
      ec.expand_A(0, 1, 0);
      for (int j = 0; j < 3; ++j) {
        Couple X = rec(t.nodes[v].child[j]);
        attach_couple(ec, ec.nd[0].child[j], ec.nd[1].child[j], X);
      }
      return ec.to_couple();
    }
    ChainDecomp cd;
    int cur = v;
    while (!t.is_leaf(cur) && t.nodes[cur].code != 0) {
      int c = t.nodes[cur].code;
      std::vector<int> side;
      for (int j = 0; j < 3; ++j)
        if (j != c - 1) side.push_back(t.nodes[cur].child[j]);
      int i = (int)cd.partition.size();
      cd.partition.push_back({2 * i + 1, 2 * i + 2});
      cd.codes.push_back({c, 0});
      cd.pair_couples.push_back({rec(side[0]), rec(side[1])});
      cur = t.nodes[cur].child[c - 1];
    }
    EditCouple ec = EditCouple::from_couple(trivial_couple());
    insert_chain(ec, 0, cd);
    attach_couple(ec, 0, 1, rec(cur));
    return ec.to_couple();
  };
  return rec(0);
}

ClassifyResult classify_dominant(const Couple& q) {
  if (!is_regular(q)) throw std::invalid_argument("classification needs a regular couple");
  AnalyzeOut a = analyze(q, nullptr);
  ClassifyResult r;
  r.dominant = a.dominant;
  if (a.dominant) {
    r.encoded = std::move(a.enc);
    r.class_id = std::move(a.cls);
  }
  return r;
}

DominantDecomp decompose_dominant(const Couple& q) {
  if (!is_regular(q)) throw std::invalid_argument("decomposition needs a regular couple");
  AnalyzeOut a = analyze(q, nullptr);
  if (!a.dominant) throw std::invalid_argument("decomposition needs a dominant couple");
  DominantDecomp out;
  out.type = a.type;
  out.sub = std::move(a.sub);
  out.plus_pairs = std::move(a.ppairs);
  out.minus_pairs = std::move(a.mpairs);
  out.lp = a.type == 2 ? std::move(a.lpc) : trivial_couple();
  return out;
}

const std::vector<Couple>& dominant_couples(int half_scale) {
  struct DomSet {
    std::vector<Couple> all;
    std::vector<Couple> lp_ok;  // trivial or type-1 members, valid lone-pair tails
  };
  static std::map<int, DomSet> memo;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::function<const DomSet&(int)> build = [&](int n) -> const DomSet& {
    auto it = memo.find(n);
    if (it != memo.end()) return it->second;
    DomSet out;
    if (n == 0) {
      out.all.push_back(trivial_couple());
      out.lp_ok = out.all;
    } else {
      // type 1: mini couple at the roots, sub-couples on its three pairs
      for (int n1 = 0; n1 <= n - 1; ++n1)
        for (int n2 = 0; n1 + n2 <= n - 1; ++n2) {
          int n3 = n - 1 - n1 - n2;
          auto p1 = build(n1).all, p2 = build(n2).all, p3 = build(n3).all;
          for (int var = 0; var < 2; ++var)
            for (auto& x1 : p1)
              for (auto& x2 : p2)
                for (auto& x3 : p3) {
                  EditCouple ec = EditCouple::from_couple(trivial_couple());
                  ec.expand_A(0, 1, var);
                  int b0 = ec.nd[1].child[var == 0 ? 0 : 2];
                  int b2 = ec.nd[1].child[var == 0 ? 2 : 0];
                  attach_couple(ec, ec.nd[0].child[0], b0, x1);
                  attach_couple(ec, ec.nd[0].child[1], ec.nd[1].child[1], x2);
                  attach_couple(ec, ec.nd[0].child[2], b2, x3);
                  Couple c = ec.to_couple();
                  out.lp_ok.push_back(c);
                  out.all.push_back(std::move(c));
                }
        }
      // type 2: double chain with adjacent pairs, tuples split across the
      // sides, lone pair carrying a trivial or type-1 couple
      for (int m = 1; m <= n; ++m) {
        int rem = n - m;
        std::vector<int> comp(2 * m + 1, 0);
        std::function<void(int, int)> comps = [&](int slot, int left) {
          if (slot == 2 * m) {
            comp[slot] = left;
            const std::vector<Couple>& lps = build(comp[2 * m]).lp_ok;
            std::vector<const std::vector<Couple>*> pools;
            for (int s = 0; s < 2 * m; ++s) pools.push_back(&build(comp[s]).all);
            // odometer over pool picks, codes, variants, lone-pair pick, split
            std::vector<size_t> radix;
            for (auto* p : pools) radix.push_back(p->size());
            for (int i = 0; i < m; ++i) {
              radix.push_back(3);
              radix.push_back(2);
            }
            radix.push_back(lps.size());
            radix.push_back(m + 1);
            for (size_t r : radix)
              if (!r) return;
            std::vector<size_t> idx(radix.size(), 0);
            for (;;) {
              std::vector<std::pair<int, int>> codes(m);
              for (int i = 0; i < m; ++i)
                codes[i] = {(int)idx[2 * m + 2 * i] + 1, (int)idx[2 * m + 2 * i + 1]};
              int mplus = (int)idx.back();
              EditCouple ec = EditCouple::from_couple(trivial_couple());
              auto side = [&](int root, int lo, int hi) {
                ChainDecomp cd;
                for (int i = lo; i < hi; ++i) {
                  int k = (int)cd.partition.size();
                  cd.partition.push_back({2 * k + 1, 2 * k + 2});
                  cd.codes.push_back(codes[i]);
                  cd.pair_couples.push_back(
                      {(*pools[2 * i])[idx[2 * i]], (*pools[2 * i + 1])[idx[2 * i + 1]]});
                }
                insert_chain(ec, root, cd);
              };
              side(0, 0, mplus);
              side(1, mplus, m);
              attach_couple(ec, 0, 1, lps[idx[2 * m + 2 * m]]);
              out.all.push_back(ec.to_couple());
              size_t d = 0;
              while (d < radix.size() && ++idx[d] == radix[d]) idx[d++] = 0;
              if (d == radix.size()) break;
            }
            return;
          }
          for (int k = 0; k <= left; ++k) {
            comp[slot] = k;
            comps(slot + 1, left - k);
          }
        };
        comps(0, rem);
      }
      std::set<std::string> keys;
      for (auto& c : out.all)
        if (!keys.insert(c.key()).second)
          throw std::logic_error("dominant enumeration produced a duplicate");
    }
    return memo.emplace(n, std::move(out)).first->second;
  };
  return build(half_scale).all;
}

std::vector<std::vector<int>> special_Z_sets(const Couple& q) {
  if (!is_regular(q)) throw std::invalid_argument("special subsets need a regular couple");
  AnalyzeOut a = analyze(q, nullptr);
  if (!a.dominant) throw std::invalid_argument("special subsets need a dominant couple");
  std::vector<int> cn;
  for (auto& e : a.nch)
    if (e.tag == 'c') cn.push_back(e.node);
  std::sort(cn.begin(), cn.end());
  if (cn.size() > 20) throw std::invalid_argument("too many chain nodes to enumerate subsets");
  std::vector<std::vector<int>> out;
  for (uint32_t mask = 0; mask < (1u << cn.size()); ++mask) {
    std::vector<int> z;
    for (size_t i = 0; i < cn.size(); ++i)
      if (mask >> i & 1) z.push_back(cn[i]);
    out.push_back(std::move(z));
  }
  std::sort(out.begin(), out.end(), [](const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  return out;
}

std::string enhanced_class_id(const Couple& q, const std::vector<int>& Z) {
  if (!is_regular(q)) throw std::invalid_argument("enhanced classes need a regular couple");
  AnalyzeOut plain = analyze(q, nullptr);
  if (!plain.dominant) throw std::invalid_argument("enhanced classes need a dominant couple");
  std::set<int> allowed;
  for (auto& e : plain.nch)
    if (e.tag == 'c') allowed.insert(e.node);
  std::set<int> zs(Z.begin(), Z.end());
  for (int v : zs)
    if (!allowed.count(v))
      throw std::invalid_argument("Z must consist of chain-chosen nodes");
  return analyze(q, &zs).cls;
}

std::vector<IrregularChain> irregular_chains(const Couple& q) {
  int n = q.total_nodes();
  std::vector<int> nxt(n, -1), mj(n, -1);
  std::vector<char> has_in(n, 0);
  for (int v = 0; v < n; ++v) {
    if (q.is_leaf(v)) continue;
    int bc = -1, nb = 0;
    for (int j = 0; j < 3; ++j)
      if (!q.is_leaf(q.child(v, j))) {
        ++nb;
        bc = q.child(v, j);
      }
    if (nb != 1) continue;
    for (int j = 0; j < 3; ++j) {
      int ch = q.child(v, j);
      if (!q.is_leaf(ch) || q.node_sign(ch) != -q.node_sign(bc)) continue;
      if (q.parent(q.pair_of(ch)) == bc) {
        nxt[v] = bc;
        mj[v] = ch;  // lowest qualifying slot wins
        has_in[bc] = 1;
        break;
      }
    }
  }
  std::vector<IrregularChain> out;
  for (int v = 0; v < n; ++v) {
    if (nxt[v] < 0 || has_in[v]) continue;
    IrregularChain ch;
    for (int cur = v;; cur = nxt[cur]) {
      ch.n.push_back(cur);
      if (nxt[cur] < 0) break;
      ch.m.push_back(mj[cur]);
    }
    ch.p.resize(ch.n.size());
    for (int j = 0; j < 3; ++j) {
      int c = q.child(ch.n[0], j);
      if (c != ch.m[0] && c != ch.n[1]) ch.p[0] = c;
    }
    for (size_t j = 1; j < ch.n.size(); ++j) ch.p[j] = q.pair_of(ch.m[j - 1]);
    int nq = ch.n.back();
    for (int j = 0; j < 3; ++j) {
      int c = q.child(nq, j);
      if (c == ch.p.back()) continue;
      (q.node_sign(c) == +1 ? ch.e : ch.f) = c;
    }
    out.push_back(std::move(ch));
  }
  return out;
}

namespace {

void validate_chain(const Couple& q, const IrregularChain& h) {
  int len = h.length();
  if (len < 1 || (int)h.m.size() != len || (int)h.p.size() != len + 1)
    throw std::invalid_argument("irregular chain sizes disagree");
  for (int j = 0; j < len; ++j) {
    if (q.parent(h.n[j + 1]) != h.n[j] || q.is_leaf(h.n[j + 1]))
      throw std::invalid_argument("chain nodes are not a branching path");
    if (!q.is_leaf(h.m[j]) || q.parent(h.m[j]) != h.n[j])
      throw std::invalid_argument("chain m-node is not a leaf child");
    if (q.node_sign(h.m[j]) != -q.node_sign(h.n[j + 1]))
      throw std::invalid_argument("chain m-node has the wrong sign");
    if (q.pair_of(h.m[j]) != h.p[j + 1] || q.parent(h.p[j + 1]) != h.n[j + 1])
      throw std::invalid_argument("chain m-node is not paired one level down");
  }
  for (int j = 0; j <= len; ++j)
    if (!q.is_leaf(h.p[j]) || q.parent(h.p[j]) != h.n[j])
      throw std::invalid_argument("chain p-node is not a leaf child");
  if (q.parent(h.e) != h.n.back() || q.parent(h.f) != h.n.back() ||
      q.node_sign(h.e) != +1 || q.node_sign(h.f) != -1)
    throw std::invalid_argument("chain tail children are wrong");
}

}  // namespace

std::vector<Couple> congruent_variants(const Couple& q, const IrregularChain& h) {
  validate_chain(q, h);
  int len = h.length();
  if (len > 20) throw std::invalid_argument("chain too long to enumerate variants");
  std::vector<Couple> out;
  for (uint32_t mask = 0; mask < (1u << len); ++mask) {
    EditCouple ec = EditCouple::from_couple(q);
    std::vector<int> zeta(len + 1);
    zeta[0] = q.node_sign(h.n[0]);
    for (int i = 1; i <= len; ++i) zeta[i] = (mask >> (i - 1) & 1) ? +1 : -1;
    for (int i = 1; i <= len; ++i) ec.nd[h.n[i]].sign = zeta[i];
    for (int j = 0; j <= len; ++j) ec.nd[h.p[j]].sign = zeta[j];
    for (int j = 0; j < len; ++j) ec.nd[h.m[j]].sign = -zeta[j + 1];
    for (int j = 0; j < len; ++j) {
      int pslot = child_slot(q, h.n[j], h.p[j]);
      int outer = pslot == 0 ? 2 : 0;
      auto& C = ec.nd[h.n[j]].child;
      C[pslot] = h.p[j];
      if (zeta[j + 1] == zeta[j]) {
        C[outer] = h.n[j + 1];
        C[1] = h.m[j];
      } else {
        C[1] = h.n[j + 1];
        C[outer] = h.m[j];
      }
    }
    int pslot = child_slot(q, h.n.back(), h.p.back());
    int outer = pslot == 0 ? 2 : 0;
    auto& C = ec.nd[h.n.back()].child;
    C[pslot] = h.p.back();
    if (zeta[len] == +1) {
      C[outer] = h.e;
      C[1] = h.f;
    } else {
      C[outer] = h.f;
      C[1] = h.e;
    }
    out.push_back(ec.to_couple());
  }
  return out;
}

CongdecReport verify_congdec(const Couple& q, const IrregularChain& h, const Decoration& dec,
                             const LatticeSpec& spec) {
  validate_chain(q, h);
  if ((int)dec.m.size() != q.total_nodes())
    throw std::invalid_argument("decoration size disagrees with the couple");
  int len = h.length();
  CongdecReport rep;
  std::vector<IVec> kj(len + 2), lj(len + 2);
  for (int j = 0; j <= len; ++j) {
    bool plus = q.node_sign(h.n[j]) == +1;
    kj[j] = dec.m[plus ? h.n[j] : h.p[j]];
    lj[j] = dec.m[plus ? h.p[j] : h.n[j]];
  }
  kj[len + 1] = dec.m[h.e];
  lj[len + 1] = dec.m[h.f];
  rep.h = iv_sub(kj[0], lj[0]);
  rep.h_constant = true;
  for (int j = 1; j <= len + 1; ++j)
    rep.h_constant = rep.h_constant && iv_eq(iv_sub(kj[j], lj[j]), rep.h);
  rep.omega_ok = true;
  for (int j = 0; j <= len; ++j) {
    IVec co = omega_coeffs(q, dec, h.n[j]);
    i64 z = q.node_sign(h.n[j]);
    for (int t = 0; t < spec.d; ++t)
      rep.omega_ok = rep.omega_ok && z * co[t] == 2 * rep.h[t] * (kj[j + 1][t] - kj[j][t]);
  }
  rep.eps_ok = true;
  for (int j = 0; j <= len; ++j) {
    int e1 = epsilon_factor(dec.m[q.child(h.n[j], 0)], dec.m[q.child(h.n[j], 1)],
                            dec.m[q.child(h.n[j], 2)]);
    int e2 = epsilon_factor(kj[j + 1], lj[j + 1], lj[j]);
    rep.eps_ok = rep.eps_ok && e1 == e2;
  }
  rep.ok = rep.h_constant && rep.omega_ok && rep.eps_ok;
  return rep;
}

}  // namespace wk

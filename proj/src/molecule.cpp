#include "wk/molecule.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace wk {

namespace {

// Sign factor a child picks up from its slot code (1..3 -> +,-,+).
constexpr int kSlotSign[4] = {0, +1, -1, +1};

int slot_of(const Couple& q, int node) {
  int p = q.parent(node);
  for (int j = 0; j < 3; ++j)
    if (q.child(p, j) == node) return j + 1;
  throw std::logic_error("slot_of: node detached from its parent");
}

bool contains(const std::vector<int>& sorted, int x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

}  // namespace

// ---------------------------------------------------------------------------
// Molecule basics
// ---------------------------------------------------------------------------

bool Molecule::has_atom(int v) const { return contains(atoms, v); }

const Bond* Molecule::bond(int id) const {
  auto it = std::lower_bound(bonds.begin(), bonds.end(), id,
                             [](const Bond& b, int x) { return b.id < x; });
  return (it != bonds.end() && it->id == id) ? &*it : nullptr;
}

int Molecule::degree(int v) const {
  int s = 0;
  for (auto& b : bonds) s += (b.from == v) + (b.to == v);
  return s;
}

int Molecule::out_degree(int v) const {
  int s = 0;
  for (auto& b : bonds) s += (b.from == v);
  return s;
}

int Molecule::in_degree(int v) const {
  int s = 0;
  for (auto& b : bonds) s += (b.to == v);
  return s;
}

std::vector<int> Molecule::bonds_at(int v) const {
  std::vector<int> out;
  for (auto& b : bonds)
    if (b.from == v || b.to == v) out.push_back(b.id);
  return out;
}

std::vector<int> Molecule::bonds_between(int u, int v) const {
  std::vector<int> out;
  for (auto& b : bonds) {
    bool hit = (u == v) ? (b.from == u && b.to == u)
                        : ((b.from == u && b.to == v) || (b.from == v && b.to == u));
    if (hit) out.push_back(b.id);
  }
  return out;
}

std::vector<int> Molecule::neighbors(int v) const {
  std::vector<int> out;
  for (auto& b : bonds) {
    if (b.from == v && b.to != v) out.push_back(b.to);
    if (b.to == v && b.from != v) out.push_back(b.from);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> Molecule::component_of(int v, const std::set<int>& without) const {
  if (!has_atom(v) || without.count(v)) return {};
  std::set<int> seen{v};
  std::queue<int> bfs;
  bfs.push(v);
  while (!bfs.empty()) {
    int u = bfs.front();
    bfs.pop();
    for (auto& b : bonds) {
      if (b.from != u && b.to != u) continue;
      int w = b.from == u ? b.to : b.from;
      if (without.count(w) || seen.count(w)) continue;
      seen.insert(w);
      bfs.push(w);
    }
  }
  return std::vector<int>(seen.begin(), seen.end());
}

std::vector<std::vector<int>> Molecule::components() const {
  std::vector<std::vector<int>> out;
  std::set<int> done;
  for (int v : atoms) {
    if (done.count(v)) continue;
    auto comp = component_of(v);
    done.insert(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

int Molecule::component_count() const { return (int)components().size(); }

bool Molecule::is_bridge(int bond_id) const {
  const Bond* b = bond(bond_id);
  if (!b) throw std::invalid_argument("is_bridge: unknown bond id");
  if (b->from == b->to) return false;
  // BFS from one endpoint, skipping the bond itself.
  std::set<int> seen{b->from};
  std::queue<int> bfs;
  bfs.push(b->from);
  while (!bfs.empty()) {
    int u = bfs.front();
    bfs.pop();
    for (auto& e : bonds) {
      if (e.id == bond_id || (e.from != u && e.to != u)) continue;
      int w = e.from == u ? e.to : e.from;
      if (seen.count(w)) continue;
      if (w == b->to) return false;
      seen.insert(w);
      bfs.push(w);
    }
  }
  return true;
}

void Molecule::remove_bond(int bond_id) {
  auto it = std::find_if(bonds.begin(), bonds.end(),
                         [&](const Bond& b) { return b.id == bond_id; });
  if (it == bonds.end()) throw std::invalid_argument("remove_bond: unknown bond id");
  bonds.erase(it);
}

void Molecule::remove_atom(int v) {
  auto it = std::find(atoms.begin(), atoms.end(), v);
  if (it == atoms.end()) throw std::invalid_argument("remove_atom: unknown atom id");
  atoms.erase(it);
  bonds.erase(std::remove_if(bonds.begin(), bonds.end(),
                             [&](const Bond& b) { return b.from == v || b.to == v; }),
              bonds.end());
}

void Molecule::add_bond(const Bond& b) {
  if (!has_atom(b.from) || !has_atom(b.to))
    throw std::invalid_argument("add_bond: endpoint atom missing");
  if (bond(b.id)) throw std::invalid_argument("add_bond: duplicate bond id");
  auto it = std::lower_bound(bonds.begin(), bonds.end(), b.id,
                             [](const Bond& x, int id) { return x.id < id; });
  bonds.insert(it, b);
}

void Molecule::validate() const {
  for (size_t i = 0; i + 1 < atoms.size(); ++i)
    if (atoms[i] >= atoms[i + 1])
      throw std::invalid_argument("molecule: atom ids must be ascending and unique");
  for (size_t i = 0; i + 1 < bonds.size(); ++i)
    if (bonds[i].id >= bonds[i + 1].id)
      throw std::invalid_argument("molecule: bond ids must be ascending and unique");
  std::map<std::pair<int, int>, int> mult;
  for (auto& b : bonds) {
    if (!has_atom(b.from) || !has_atom(b.to))
      throw std::invalid_argument("molecule: bond endpoint is not an atom");
    mult[{std::min(b.from, b.to), std::max(b.from, b.to)}]++;
  }
  for (auto& [uv, k] : mult) {
    if (uv.first == uv.second && k > 1)
      throw std::invalid_argument("molecule: at most one self-loop per atom");
    if (uv.first != uv.second && k > 3)
      throw std::invalid_argument("molecule: more than a triple bond between two atoms");
  }
  for (int v : atoms) {
    if (out_degree(v) > 2) throw std::invalid_argument("molecule: atom with >2 outgoing bonds");
    if (in_degree(v) > 2) throw std::invalid_argument("molecule: atom with >2 incoming bonds");
  }
  for (auto& comp : components()) {
    bool sub4 = false;
    for (int v : comp) sub4 = sub4 || degree(v) != 4;
    if (!sub4) throw std::invalid_argument("molecule: saturated component (all atoms degree 4)");
  }
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

namespace {

// Unordered endpoint pair -> bond ids, self-loops excluded.
std::map<std::pair<int, int>, std::vector<const Bond*>> pair_groups(const Molecule& m) {
  std::map<std::pair<int, int>, std::vector<const Bond*>> g;
  for (auto& b : m.bonds)
    if (b.from != b.to) g[{std::min(b.from, b.to), std::max(b.from, b.to)}].push_back(&b);
  return g;
}

// Walk a graph whose components are simple paths or cycles (every vertex has
// at most two partners); returns the vertex sequences, paths from their
// least endpoint, cycles from their least vertex.
template <typename Node>
std::vector<std::vector<Node>> walk_chains(const std::map<Node, std::vector<Node>>& adj) {
  std::vector<std::vector<Node>> out;
  std::set<Node> used;
  auto emit = [&](Node start) {
    std::vector<Node> run{start};
    used.insert(start);
    Node cur = start;
    for (;;) {
      bool moved = false;
      for (const Node& nx : adj.at(cur))
        if (!used.count(nx)) {
          run.push_back(nx);
          used.insert(nx);
          cur = nx;
          moved = true;
          break;
        }
      if (!moved) break;
    }
    out.push_back(std::move(run));
  };
  // Path ends first so paths start at a degree-1 vertex.
  for (auto& [v, nb] : adj)
    if (!used.count(v) && nb.size() == 1) emit(v);
  for (auto& [v, nb] : adj)
    if (!used.count(v)) emit(v);  // remaining components are cycles
  return out;
}

}  // namespace

MoleculeAnalysis analyze(const Molecule& m) {
  m.validate();
  MoleculeAnalysis a;
  int V = (int)m.atoms.size(), E = (int)m.bonds.size(), F = m.component_count();
  int cnt[5] = {0, 0, 0, 0, 0};
  for (int v : m.atoms) cnt[m.degree(v)]++;
  a.chi = E - V + F;
  a.eta = cnt[3] + 2 * cnt[2] + 3 * cnt[1] + 4 * cnt[0] - 4 * F;
  a.eta_star = cnt[3] + 2 * cnt[2] + 2 * cnt[1] + 2 * cnt[0] - 2 * F;

  for (auto& b : m.bonds) {
    if (b.from == b.to) {
      a.must_be_degenerate.push_back(b.from);
      continue;
    }
    if (m.is_bridge(b.id)) a.bridges.push_back(b.id);
  }
  std::sort(a.must_be_degenerate.begin(), a.must_be_degenerate.end());

  auto groups = pair_groups(m);

  // Special bonds: single, degree-3 ends, each end doubled to its own third atom.
  for (auto& [uv, g] : groups) {
    if (g.size() != 1) continue;
    auto [u, w] = uv;
    if (m.degree(u) != 3 || m.degree(w) != 3) continue;
    auto double_partner = [&](int x, int other) -> int {
      for (auto& [pq, h] : groups) {
        if (h.size() != 2) continue;
        int y = pq.first == x ? pq.second : pq.second == x ? pq.first : -1;
        if (y >= 0 && y != other) return y;
      }
      return -1;
    };
    int x = double_partner(u, w), y = double_partner(w, u);
    if (x >= 0 && y >= 0 && x != y && x != u && y != w) a.special_bonds.push_back(g[0]->id);
  }

  // Type I chains: doubles whose halves run opposite ways.
  std::map<int, std::vector<int>> adj1;
  for (auto& [uv, g] : groups) {
    if (g.size() != 2) continue;
    if (g[0]->from != g[1]->to || g[0]->to != g[1]->from) continue;
    adj1[uv.first].push_back(uv.second);
    adj1[uv.second].push_back(uv.first);
  }
  for (auto& [v, nb] : adj1) std::sort(nb.begin(), nb.end());
  a.type_i_chains = walk_chains(adj1);

  // Type II chains: double-bonded pairs linked by opposite single bonds.
  std::vector<std::pair<int, int>> pairs;
  for (auto& [uv, g] : groups)
    if (g.size() == 2) pairs.push_back(uv);
  auto single_between = [&](int x, int y) -> const Bond* {
    auto it = groups.find({std::min(x, y), std::max(x, y)});
    return (it != groups.end() && it->second.size() == 1) ? it->second[0] : nullptr;
  };
  std::map<std::pair<int, int>, std::vector<std::pair<int, int>>> adj2;
  for (size_t i = 0; i < pairs.size(); ++i)
    for (size_t j = i + 1; j < pairs.size(); ++j) {
      auto [u, v] = pairs[i];
      auto [x, y] = pairs[j];
      if (u == x || u == y || v == x || v == y) continue;
      auto linked = [&](int p1, int q1, int p2, int q2) {
        const Bond *s1 = single_between(p1, q1), *s2 = single_between(p2, q2);
        return s1 && s2 && (s1->from == p1) != (s2->from == p2);
      };
      if (linked(u, x, v, y) || linked(u, y, v, x)) {
        adj2[pairs[i]].push_back(pairs[j]);
        adj2[pairs[j]].push_back(pairs[i]);
      }
    }
  for (auto& [v, nb] : adj2) std::sort(nb.begin(), nb.end());
  for (auto& run : walk_chains(adj2))
    if (run.size() >= 2) a.type_ii_chains.push_back(run);

  return a;
}

// ---------------------------------------------------------------------------
// Couple -> molecule
// ---------------------------------------------------------------------------

Molecule molecule_of(const Couple& q) {
  q.validate();
  if (q.scale() < 1)
    throw std::invalid_argument("molecule_of: the trivial couple has no branching nodes");
  Molecule m;
  m.atoms = q.branching_ids();
  int next = 1;
  for (int n : m.atoms) {
    int p = q.parent(n);
    if (p < 0) continue;  // tree roots carry no parent bond
    int alpha = slot_of(q, n);
    Bond b;
    b.id = next++;
    b.label = 'P';
    if (q.node_sign(n) > 0) {
      b.from = n, b.to = p, b.code_from = 0, b.code_to = alpha;
    } else {
      b.from = p, b.to = n, b.code_from = alpha, b.code_to = 0;
    }
    m.bonds.push_back(b);
  }
  for (auto [l1, l2] : q.pairing) {
    if (q.parent(l1) < 0 || q.parent(l2) < 0) continue;  // pair with a trivial-tree root
    int minus = q.node_sign(l1) < 0 ? l1 : l2;
    int plus = minus == l1 ? l2 : l1;
    Bond b;
    b.id = next++;
    b.label = 'L';
    b.from = q.parent(minus), b.to = q.parent(plus);
    b.code_from = slot_of(q, minus), b.code_to = slot_of(q, plus);
    m.bonds.push_back(b);
  }
  std::stable_sort(m.bonds.begin(), m.bonds.end(),
                   [](const Bond& x, const Bond& y) { return x.id < y.id; });
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Molecule -> couple
// ---------------------------------------------------------------------------

std::optional<Couple> decode_molecule(const Molecule& m) {
  try {
    m.validate();
  } catch (...) {
    return std::nullopt;
  }
  if (m.atoms.empty()) return std::nullopt;

  // Slot occupancy per atom: code -> bond id.
  std::map<int, std::array<int, 4>> slot;
  for (int v : m.atoms) slot[v] = {-1, -1, -1, -1};
  for (auto& b : m.bonds) {
    if (b.code_from < 0 || b.code_from > 3 || b.code_to < 0 || b.code_to > 3)
      return std::nullopt;
    auto put = [&](int atom, int c) {
      auto& s = slot[atom];
      if (s[c] != -1) return false;
      s[c] = b.id;
      return true;
    };
    if (!put(b.from, b.code_from)) return std::nullopt;
    if (!put(b.to, b.code_to)) return std::nullopt;
  }

  // Block signs pinned by bond directions, parent links from the 0 codes.
  std::map<int, int> sign;
  auto pin = [&](int atom, int s) {
    auto [it, fresh] = sign.emplace(atom, s);
    return fresh || it->second == s;
  };
  std::map<int, std::pair<int, int>> up;  // child atom -> (parent atom, slot)
  for (auto& b : m.bonds) {
    bool zf = b.code_from == 0, zt = b.code_to == 0;
    if (zf && zt) return std::nullopt;
    if (zf || zt) {
      int c = zf ? b.from : b.to;
      int p = zf ? b.to : b.from;
      int alpha = zf ? b.code_to : b.code_from;
      if (up.count(c)) return std::nullopt;
      up[c] = {p, alpha};
      int sc = b.from == c ? +1 : -1;  // the bond leaves the block of a + node
      if (!pin(c, sc) || !pin(p, sc * kSlotSign[alpha])) return std::nullopt;
    } else {
      // Leaf pair runs from the minus leaf to the plus leaf.
      if (!pin(b.from, -kSlotSign[b.code_from])) return std::nullopt;
      if (!pin(b.to, kSlotSign[b.code_to])) return std::nullopt;
    }
  }
  for (int v : m.atoms)
    if (!sign.count(v)) return std::nullopt;

  std::vector<int> roots;
  for (int v : m.atoms)
    if (!up.count(v)) roots.push_back(v);
  if (roots.empty() || roots.size() > 2) return std::nullopt;
  for (int v : m.atoms) {  // parent links must be acyclic
    int u = v, hops = 0;
    while (up.count(u)) {
      u = up[u].first;
      if (++hops > (int)m.atoms.size()) return std::nullopt;
    }
  }

  std::vector<std::pair<int, int>> holes;  // (atom, slot) without a bond
  for (int v : m.atoms)
    for (int c = 1; c <= 3; ++c)
      if (slot[v][c] == -1) holes.push_back({v, c});
  if (holes.size() != 2 - roots.size()) return std::nullopt;

  int plus_root = -1, minus_root = -1;
  if (roots.size() == 2) {
    if (sign[roots[0]] + sign[roots[1]] != 0) return std::nullopt;
    plus_root = sign[roots[0]] > 0 ? roots[0] : roots[1];
    minus_root = plus_root == roots[0] ? roots[1] : roots[0];
  } else {
    // One tree is trivial; the leftover leaf pairs with its root, so the leaf
    // sign must match the nontrivial root sign.
    auto [ha, hc] = holes[0];
    if (sign[ha] * kSlotSign[hc] != sign[roots[0]]) return std::nullopt;
    (sign[roots[0]] > 0 ? plus_root : minus_root) = roots[0];
  }

  std::map<int, std::array<int, 4>> kid;
  for (int v : m.atoms) kid[v] = {-1, -1, -1, -1};
  for (auto& [c, pa] : up) kid[pa.first][pa.second] = c;

  std::map<std::pair<int, int>, int> leaf_gid;  // (atom, slot) -> global leaf id
  bool ok = true;
  auto build = [&](int root_atom, int offset) {
    Tree t;
    auto rec = [&](auto&& self, int atom, int parent_idx, int want) -> int {
      if (sign[atom] != want) {
        ok = false;
        return 0;
      }
      int idx = (int)t.nodes.size();
      t.nodes.push_back({parent_idx, {-1, -1, -1}, want});
      for (int c = 1; c <= 3 && ok; ++c) {
        int ch;
        if (kid[atom][c] >= 0) {
          ch = self(self, kid[atom][c], idx, want * kSlotSign[c]);
        } else {
          ch = (int)t.nodes.size();
          t.nodes.push_back({idx, {-1, -1, -1}, want * kSlotSign[c]});
          leaf_gid[{atom, c}] = offset + ch;
        }
        t.nodes[idx].child[c - 1] = ch;
      }
      return idx;
    };
    rec(rec, root_atom, -1, sign[root_atom]);
    return t;
  };

  Tree plus_t, minus_t;
  int trivial_gid = -1;
  if (plus_root >= 0 && minus_root >= 0) {
    plus_t = build(plus_root, 0);
    minus_t = build(minus_root, plus_t.size());
  } else if (plus_root >= 0) {
    plus_t = build(plus_root, 0);
    minus_t = single_leaf(-1);
    trivial_gid = plus_t.size();
  } else {
    plus_t = single_leaf(+1);
    minus_t = build(minus_root, 1);
    trivial_gid = 0;
  }
  if (!ok) return std::nullopt;

  std::vector<std::pair<int, int>> pairing;
  for (auto& b : m.bonds) {
    if (b.code_from == 0 || b.code_to == 0) continue;
    auto i1 = leaf_gid.find({b.from, b.code_from}), i2 = leaf_gid.find({b.to, b.code_to});
    if (i1 == leaf_gid.end() || i2 == leaf_gid.end()) return std::nullopt;
    pairing.push_back({std::min(i1->second, i2->second), std::max(i1->second, i2->second)});
  }
  if (trivial_gid >= 0) {
    auto ih = leaf_gid.find(holes[0]);
    if (ih == leaf_gid.end()) return std::nullopt;
    pairing.push_back({std::min(ih->second, trivial_gid), std::max(ih->second, trivial_gid)});
  }
  std::sort(pairing.begin(), pairing.end());

  Couple q;
  q.plus_t = std::move(plus_t);
  q.minus_t = std::move(minus_t);
  q.pairing = std::move(pairing);
  try {
    q.validate();
  } catch (...) {
    return std::nullopt;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

std::string label_str(char c) {
  if (c == 'P') return "PC";
  if (c == 'L') return "LP";
  return std::string(1, c);
}

char label_chr(const std::string& s) {
  if (s == "PC") return 'P';
  if (s == "LP") return 'L';
  if (s.size() == 1) return s[0];
  throw std::invalid_argument("molecule json: unknown bond label '" + s + "'");
}

}  // namespace

std::string molecule_to_json(const Molecule& m) {
  nlohmann::json j;
  j["atoms"] = m.atoms;
  auto arr = nlohmann::json::array();
  for (auto& b : m.bonds) {
    nlohmann::json e{{"id", b.id}, {"from", b.from}, {"to", b.to}, {"label", label_str(b.label)}};
    if (b.code_from >= 0) e["code_from"] = b.code_from;
    if (b.code_to >= 0) e["code_to"] = b.code_to;
    arr.push_back(std::move(e));
  }
  j["bonds"] = std::move(arr);
  return j.dump(2);
}

Molecule molecule_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  Molecule m;
  m.atoms = j.at("atoms").get<std::vector<int>>();
  std::sort(m.atoms.begin(), m.atoms.end());
  for (auto& e : j.at("bonds")) {
    Bond b;
    b.id = e.at("id").get<int>();
    b.from = e.at("from").get<int>();
    b.to = e.at("to").get<int>();
    b.label = label_chr(e.at("label").get<std::string>());
    b.code_from = e.value("code_from", -1);
    b.code_to = e.value("code_to", -1);
    m.bonds.push_back(b);
  }
  std::sort(m.bonds.begin(), m.bonds.end(),
            [](const Bond& x, const Bond& y) { return x.id < y.id; });
  m.validate();
  return m;
}

std::string molecule_to_dot(const Molecule& m) {
  std::ostringstream os;
  os << "digraph molecule {\n";
  for (int v : m.atoms) os << "  a" << v << " [label=\"" << v << "\"];\n";
  for (auto& b : m.bonds)
    os << "  a" << b.from << " -> a" << b.to << " [label=\"" << label_str(b.label) << " "
       << b.id << "\"];\n";
  os << "}\n";
  return os.str();
}

}  // namespace wk

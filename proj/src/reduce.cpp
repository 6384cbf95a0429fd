#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "wk/molecule.hpp"

namespace wk {

// ---------------------------------------------------------------------------
// Ext conditions
// ---------------------------------------------------------------------------

namespace {

ExtCondition eq_cond(int a, int b) {
  ExtCondition c;
  c.kind = ExtCondition::Kind::Eq;
  c.a = std::min(a, b), c.b = std::max(a, b);
  return c;
}

ExtCondition good_cond(int a, int b) {
  ExtCondition c;
  c.kind = ExtCondition::Kind::Good;
  c.a = std::min(a, b), c.b = std::max(a, b);
  return c;
}

ExtCondition not_all(std::vector<ExtCondition> sub) {
  ExtCondition c;
  c.kind = ExtCondition::Kind::NotAll;
  c.sub = std::move(sub);
  return c;
}

void subst_bond(ExtCondition& c, int from, int to) {
  if (c.a == from) c.a = to;
  if (c.b == from) c.b = to;
  if (c.a > c.b) std::swap(c.a, c.b);
  for (auto& s : c.sub) subst_bond(s, from, to);
}

bool ext_less(const ExtCondition& x, const ExtCondition& y) {
  auto key = [](const ExtCondition& c) {
    return std::tuple((int)c.kind, c.a, c.b, c.sub.size());
  };
  if (key(x) != key(y)) return key(x) < key(y);
  for (size_t i = 0; i < x.sub.size(); ++i) {
    if (ext_less(x.sub[i], y.sub[i])) return true;
    if (ext_less(y.sub[i], x.sub[i])) return false;
  }
  return false;
}

nlohmann::json ext_json(const ExtCondition& c) {
  using K = ExtCondition::Kind;
  nlohmann::json j;
  j["kind"] = c.kind == K::Eq ? "eq" : c.kind == K::Good ? "good" : "not-all";
  if (c.kind != K::NotAll) {
    j["a"] = c.a, j["b"] = c.b;
  } else {
    auto arr = nlohmann::json::array();
    for (auto& s : c.sub) arr.push_back(ext_json(s));
    j["sub"] = std::move(arr);
  }
  j["text"] = ext_to_string(c);
  return j;
}

std::string rational_str(const Rational& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

}  // namespace

std::string ext_to_string(const ExtCondition& c) {
  using K = ExtCondition::Kind;
  if (c.kind == K::Eq) return "k[" + std::to_string(c.a) + "] = k[" + std::to_string(c.b) + "]";
  if (c.kind == K::Good)
    return "k[" + std::to_string(c.a) + "] - k[" + std::to_string(c.b) + "] good";
  std::string s = "not(";
  for (size_t i = 0; i < c.sub.size(); ++i) {
    if (i) s += " and ";
    s += ext_to_string(c.sub[i]);
  }
  return s + ")";
}

// ---------------------------------------------------------------------------
// Reduction engine
// ---------------------------------------------------------------------------

namespace {

struct RState {
  Molecule m;
  std::vector<ReduceStep> steps;
  std::vector<std::vector<int>> focus;  // stack of component snapshots
  int checkpoints = 0;
  int next_bond_id = 1;
  bool vacuous = false;
  std::string vacuous_reason;
};

bool in_set(const std::vector<int>& sorted, int x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

struct Engine {
  int d = 3;
  Rational eps6, eps4, eps3;
  std::vector<Track> out;

  enum class Res { None, Stepped, Consumed };

  [[noreturn]] void bail(const RState& st, const std::string& msg) const {
    std::ostringstream os;
    os << "reduce: " << msg << "; steps so far:";
    for (auto& s : st.steps) os << " " << s.name;
    throw std::logic_error(os.str());
  }

  // Applies one step: removes atoms (with incident bonds) and extra bonds,
  // adds bonds, records deltas, and checks the step against its class.
  ReduceStep& apply(RState& st, const char* name, std::vector<int> rm_atoms,
                    std::vector<int> rm_bonds, std::vector<Bond> add, bool chi_plus,
                    Rational g, Rational dk, std::vector<ExtCondition> dext,
                    std::optional<int> expect_dF) {
    int V0 = (int)st.m.atoms.size(), E0 = (int)st.m.bonds.size(), F0 = st.m.component_count();
    std::set<int> gone(rm_bonds.begin(), rm_bonds.end());
    for (int v : rm_atoms)
      for (int id : st.m.bonds_at(v)) gone.insert(id);
    for (int v : rm_atoms) st.m.remove_atom(v);
    for (int id : rm_bonds)
      if (st.m.bond(id)) st.m.remove_bond(id);
    for (auto& nb : add) st.m.add_bond(nb);

    ReduceStep s;
    s.name = name;
    s.removed_atoms = std::move(rm_atoms);
    std::sort(s.removed_atoms.begin(), s.removed_atoms.end());
    s.removed_bonds.assign(gone.begin(), gone.end());
    s.added_bonds = std::move(add);
    s.dV = (int)st.m.atoms.size() - V0;
    s.dE = (int)st.m.bonds.size() - E0;
    s.dF = st.m.component_count() - F0;
    s.dChi = s.dE - s.dV + s.dF;
    s.dGamma = chi_plus ? Rational(s.dChi) + g : g;
    s.dKappa = dk;
    s.good = s.dGamma > s.dChi;
    s.delta_ext = std::move(dext);

    Rational gap = s.dGamma - s.dChi;
    if (s.good ? gap < eps6 : gap != 0)
      bail(st, std::string(name) + " violates its step class (gap " + rational_str(gap) + ")");
    if (expect_dF && s.dF != *expect_dF)
      bail(st, std::string(name) + " changed component count by " + std::to_string(s.dF) +
                   ", expected " + std::to_string(*expect_dF));
    st.m.validate();

    for (auto& f : st.focus)
      f.erase(std::remove_if(f.begin(), f.end(), [&](int v) { return !st.m.has_atom(v); }),
              f.end());
    st.steps.push_back(std::move(s));
    return st.steps.back();
  }

  // Splits the search: each branch gets its own state and must finish it
  // (apply steps, then run or walk on). The branch's first step is tagged
  // with the checkpoint ordinal.
  void fork(RState st, std::function<void(RState, int)> a, std::function<void(RState, int)> b) {
    int cp = st.checkpoints++;
    RState other = st;
    a(std::move(st), cp);
    b(std::move(other), cp);
  }

  // ---- phase one: degenerate atoms ----------------------------------------

  void phase_one(RState& st, const std::set<int>& S) {
    for (;;) {
      int pick = -1;
      for (int v : st.m.atoms)
        if (S.count(v) && st.m.degree(v) == 4) {
          pick = v;
          break;
        }
      if (pick < 0)
        for (int v : st.m.atoms)
          if (S.count(v) && st.m.degree(v) > 0) {
            pick = v;
            break;
          }
      if (pick < 0) return;
      int dv = st.m.degree(pick);
      int j = (int)st.m.bonds_between(pick, pick).size();
      Molecule probe = st.m;
      probe.remove_atom(pick);
      int dF = probe.component_count() - st.m.component_count();
      Rational g = 0;
      if (dv == 4 && dF + j < 2) g = Rational(-7, 4);
      apply(st, "(DA)", {pick}, {}, {}, false, g, 0, {}, dF);
    }
  }

  // ---- scanning helpers ----------------------------------------------------

  static bool out_at(const Bond& b, int v) { return b.from == v; }

  // The unique bond at u besides the ids in skip, or null if not unique.
  const Bond* other_bond(const RState& st, int u, const std::set<int>& skip) const {
    const Bond* hit = nullptr;
    for (int id : st.m.bonds_at(u))
      if (!skip.count(id)) {
        if (hit) return nullptr;
        hit = st.m.bond(id);
      }
    return hit;
  }

  // ---- (1) bridges ---------------------------------------------------------

  Res try_bridge(RState& st, const std::vector<int>& sc) {
    for (auto& b : st.m.bonds) {
      if (!in_set(sc, b.from) && !in_set(sc, b.to)) continue;
      if (!st.m.is_bridge(b.id)) continue;
      apply(st, "(BR)", {}, {b.id}, {}, false, 0, 0, {}, 1);
      return Res::Stepped;
    }
    return Res::None;
  }

  // ---- (2) degree-3 pairs joined by a single bond ----------------------------

  struct S3Shape {
    int v1 = -1, v2 = -1, l1 = -1;
    int n3 = -1, n4 = -1, l2 = -1, l3 = -1;  // v1 side, n3 < n4
    int n5 = -1, n6 = -1, l4 = -1, l5 = -1;  // v2 side, matched to n3/n4
    bool clean = false, i_holds = false, ii_holds = false;
  };

  S3Shape s3_shape(const RState& st, int u, int v) const {
    S3Shape sh;
    sh.v1 = u, sh.v2 = v;
    sh.l1 = st.m.bonds_between(u, v)[0];
    auto side = [&](int w, int& a1, int& a2, int& b1, int& b2) {
      std::vector<std::pair<int, int>> nb;  // (atom, bond)
      for (int id : st.m.bonds_at(w)) {
        if (id == sh.l1) continue;
        const Bond* b = st.m.bond(id);
        nb.push_back({b->from == w ? b->to : b->from, id});
      }
      std::sort(nb.begin(), nb.end());
      a1 = nb[0].first, b1 = nb[0].second;
      a2 = nb[1].first, b2 = nb[1].second;
      return nb[0].first != nb[1].first;
    };
    int m3, m4, k2, k3, m5, m6, k4, k5;
    bool cu = side(u, m3, m4, k2, k3);
    bool cv = side(v, m5, m6, k4, k5);
    sh.clean = cu && cv && m3 != m5 && m3 != m6 && m4 != m5 && m4 != m6;
    if (!sh.clean) return sh;
    sh.n3 = m3, sh.n4 = m4, sh.l2 = k2, sh.l3 = k3;
    // (i): removing the pair splits the neighbors two against two
    auto c3 = st.m.component_of(m3, {u, v});
    if (in_set(c3, m4)) return sh;
    auto c4 = st.m.component_of(m4, {u, v});
    bool a_in3 = in_set(c3, m5), b_in3 = in_set(c3, m6);
    if (a_in3 == b_in3) return sh;
    if (a_in3 ? !in_set(c4, m6) : !in_set(c4, m5)) return sh;
    sh.i_holds = true;
    sh.n5 = a_in3 ? m5 : m6, sh.l4 = a_in3 ? k4 : k5;
    sh.n6 = a_in3 ? m6 : m5, sh.l5 = a_in3 ? k5 : k4;
    // (ii): matched bonds run opposite ways viewed from the pair
    sh.ii_holds = out_at(*st.m.bond(sh.l2), u) != out_at(*st.m.bond(sh.l4), v) &&
                  out_at(*st.m.bond(sh.l3), u) != out_at(*st.m.bond(sh.l5), v);
    return sh;
  }

  std::vector<ExtCondition> s3_conds(const RState& st, const S3Shape& sh) const {
    std::vector<ExtCondition> c{eq_cond(sh.l2, sh.l4), eq_cond(sh.l3, sh.l5)};
    if (out_at(*st.m.bond(sh.l1), sh.v1) != out_at(*st.m.bond(sh.l3), sh.v1))
      c.push_back(good_cond(sh.l1, sh.l3));
    return c;
  }

  void post_3g_triple(RState& st, int u, int v) {
    if (st.m.bonds_between(u, v).size() < 3) return;
    int du = st.m.degree(u), dv = st.m.degree(v);
    if (du == 4 && dv == 4) {
      st.vacuous = true;
      st.vacuous_reason =
          "triple bond between two saturated atoms forces an empty decoration set";
      return;
    }
    if (du == 3 && dv == 3)
      apply(st, "(TB-1)", {u, v}, {}, {}, false, -2, -1, {}, -1);
    else
      apply(st, "(TB-2)", {u, v}, {}, {}, false, -2, -1, {}, 0);
  }

  Res try_deg3_single(RState& st, const std::vector<int>& sc) {
    std::vector<std::pair<int, int>> pairs;
    for (int u : sc) {
      if (st.m.degree(u) != 3) continue;
      for (int v : st.m.neighbors(u))
        if (v > u && in_set(sc, v) && st.m.degree(v) == 3 &&
            st.m.bonds_between(u, v).size() == 1)
          pairs.push_back({u, v});
    }
    if (pairs.empty()) return Res::None;
    std::sort(pairs.begin(), pairs.end());

    for (auto [u, v] : pairs) {
      S3Shape sh = s3_shape(st, u, v);
      if (!sh.clean) {
        apply(st, "(3S3-5G)", {u, v}, {}, {}, true, eps6, -2, {}, std::nullopt);
        return Res::Stepped;
      }
    }

    S3Shape sh = s3_shape(st, pairs[0].first, pairs[0].second);
    if (!sh.i_holds || !sh.ii_holds) {
      apply(st, "(3S3-4G)", {sh.v1, sh.v2}, {}, {}, true, eps6, -2, {}, sh.i_holds ? 1 : 0);
      return Res::Stepped;
    }

    bool all4 = st.m.degree(sh.n3) == 4 && st.m.degree(sh.n4) == 4 &&
                st.m.degree(sh.n5) == 4 && st.m.degree(sh.n6) == 4;
    if (all4) {
      fork(
          std::move(st),
          [this, sh](RState s, int cp) {
            size_t k = s.steps.size();
            apply(s, "(3S3-1)", {sh.v1, sh.v2}, {}, {}, false, -2, -1, s3_conds(s, sh), 1);
            s.steps[k].checkpoint = cp;
            run(std::move(s));
          },
          [this, sh](RState s, int cp) {
            size_t k = s.steps.size();
            apply(s, "(3S3-2G)", {sh.v1, sh.v2}, {}, {}, true, eps6, -2,
                  {not_all(s3_conds(s, sh))}, 1);
            s.steps[k].checkpoint = cp;
            run(std::move(s));
          });
      return Res::Consumed;
    }

    // Pick a side that is not all degree 4; ties go to the smallest atom id.
    bool qa = st.m.degree(sh.n3) != 4 || st.m.degree(sh.n5) != 4;
    bool qb = st.m.degree(sh.n4) != 4 || st.m.degree(sh.n6) != 4;
    bool use_a = qa;
    if (qa && qb) {
      int lo = std::min({sh.n3, sh.n4, sh.n5, sh.n6});
      use_a = lo == sh.n3 || lo == sh.n5;
    }
    if (!use_a) {
      std::swap(sh.n3, sh.n4), std::swap(sh.n5, sh.n6);
      std::swap(sh.l2, sh.l3), std::swap(sh.l4, sh.l5);
    }
    fork(
        std::move(st),
        [this, sh](RState s, int cp) {
          size_t k = s.steps.size();
          apply(s, "(3S3-2G)", {sh.v1, sh.v2}, {}, {}, true, eps6, -2,
                {not_all(s3_conds(s, sh))}, 1);
          s.steps[k].checkpoint = cp;
          run(std::move(s));
        },
        [this, sh](RState s, int cp) {
          Bond nb;
          nb.id = s.next_bond_id++;
          nb.label = 'X';
          const Bond* l2 = s.m.bond(sh.l2);
          if (l2->from == sh.n3) {
            nb.from = sh.n3, nb.to = sh.n5;
          } else {
            nb.from = sh.n5, nb.to = sh.n3;
          }
          size_t k = s.steps.size();
          auto& step = apply(s, "(3S3-3G)", {sh.v1, sh.v2}, {}, {nb}, true, eps6, -1,
                             s3_conds(s, sh), 1);
          step.renew_new = nb.id, step.renew_old = sh.l2;
          s.steps[k].checkpoint = cp;
          post_3g_triple(s, std::min(sh.n3, sh.n5), std::max(sh.n3, sh.n5));
          run(std::move(s));
        });
    return Res::Consumed;
  }

  // ---- (3) degree-3 pairs joined by a double bond ----------------------------

  struct D3Shape {
    int x = -1, y = -1, l3 = -1, l4 = -1;
    std::vector<ExtCondition> conds;
  };

  D3Shape d3_shape(const RState& st, int v1, int v2) const {
    auto dbl = st.m.bonds_between(v1, v2);
    std::set<int> skip(dbl.begin(), dbl.end());
    const Bond* b1 = other_bond(st, v1, skip);
    const Bond* b2 = other_bond(st, v2, skip);
    D3Shape sh;
    sh.x = b1->from == v1 ? b1->to : b1->from;
    sh.y = b2->from == v2 ? b2->to : b2->from;
    sh.l3 = b1->id, sh.l4 = b2->id;
    sh.conds.push_back(eq_cond(sh.l3, sh.l4));
    const Bond* h0 = st.m.bond(dbl[0]);
    const Bond* h1 = st.m.bond(dbl[1]);
    if (h0->from != h1->from) sh.conds.push_back(good_cond(dbl[0], dbl[1]));
    return sh;
  }

  // Does the ladder of opposite doubles continue past (x, y)?
  bool chain_next(const RState& st, int x, int y, int l3, int l4) const {
    auto dbl = st.m.bonds_between(x, y);
    if (dbl.size() != 2) return false;
    if (st.m.degree(x) != 4 || st.m.degree(y) != 4) return false;
    std::set<int> skipx(dbl.begin(), dbl.end());
    skipx.insert(l3);
    const Bond* b5 = other_bond(st, x, skipx);
    std::set<int> skipy(dbl.begin(), dbl.end());
    skipy.insert(l4);
    const Bond* b6 = other_bond(st, y, skipy);
    if (!b5 || !b6) return false;
    int w5 = b5->from == x ? b5->to : b5->from;
    int w6 = b6->from == y ? b6->to : b6->from;
    if (w5 == w6 || w5 == y || w6 == x) return false;
    return out_at(*b5, x) != out_at(*b6, y);
  }

  Res try_deg3_double(RState& st, const std::vector<int>& sc) {
    std::vector<std::pair<int, int>> pairs;
    for (int u : sc) {
      if (st.m.degree(u) != 3) continue;
      for (int v : st.m.neighbors(u))
        if (v > u && in_set(sc, v) && st.m.degree(v) == 3 &&
            st.m.bonds_between(u, v).size() == 2)
          pairs.push_back({u, v});
    }
    if (pairs.empty()) return Res::None;
    std::sort(pairs.begin(), pairs.end());

    for (auto [u, v] : pairs) {
      auto dbl = st.m.bonds_between(u, v);
      std::set<int> skip(dbl.begin(), dbl.end());
      const Bond* bu = other_bond(st, u, skip);
      const Bond* bv = other_bond(st, v, skip);
      int x = bu->from == u ? bu->to : bu->from;
      int y = bv->from == v ? bv->to : bv->from;
      if (x == y) {
        apply(st, "(3D3-5G)", {u, v}, {}, {}, true, eps4, -2, {}, 0);
        return Res::Stepped;
      }
      if (out_at(*bu, u) == out_at(*bv, v)) {
        apply(st, "(3D3-4G)", {u, v}, {}, {}, true, eps4, -2, {}, 0);
        return Res::Stepped;
      }
    }
    chain_walk(std::move(st), pairs[0].first, pairs[0].second);
    return Res::Consumed;
  }

  void chain_walk(RState st, int v1, int v2) {
    D3Shape sh = d3_shape(st, v1, v2);
    if (chain_next(st, sh.x, sh.y, sh.l3, sh.l4)) {
      fork(
          std::move(st),
          [this, sh, v1, v2](RState s, int cp) {
            size_t k = s.steps.size();
            apply(s, "(3D3-1)", {v1, v2}, {}, {}, false, -2, -1, sh.conds, 0);
            s.steps[k].checkpoint = cp;
            chain_walk(std::move(s), sh.x, sh.y);
          },
          [this, sh, v1, v2](RState s, int cp) {
            size_t k = s.steps.size();
            apply(s, "(3D3-2G)", {v1, v2}, {}, {}, true, eps4, -2, {not_all(sh.conds)}, 0);
            s.steps[k].checkpoint = cp;
            chain_walk(std::move(s), sh.x, sh.y);
          });
      return;
    }
    chain_finish(std::move(st), v1, v2, sh);
  }

  void chain_finish(RState st, int v1, int v2, const D3Shape& sh) {
    auto comp = st.m.component_of(v1);
    bool off4 = false;
    for (int w : comp) off4 = off4 || (w != v1 && w != v2 && st.m.degree(w) != 4);
    if (off4) {
      fork(
          std::move(st),
          [this, sh, v1, v2](RState s, int cp) {
            size_t k = s.steps.size();
            apply(s, "(3D3-2G)", {v1, v2}, {}, {}, true, eps4, -2, {not_all(sh.conds)}, 0);
            s.steps[k].checkpoint = cp;
            run(std::move(s));
          },
          [this, sh, v1, v2](RState s, int cp) {
            Bond nb;
            nb.id = s.next_bond_id++;
            nb.label = 'X';
            const Bond* l3 = s.m.bond(sh.l3);
            if (l3->from == v1) {
              nb.from = sh.y, nb.to = sh.x;
            } else {
              nb.from = sh.x, nb.to = sh.y;
            }
            size_t k = s.steps.size();
            auto& step =
                apply(s, "(3D3-3G)", {v1, v2}, {}, {nb}, true, eps4, -1, sh.conds, 0);
            step.renew_new = nb.id, step.renew_old = sh.l3;
            s.steps[k].checkpoint = cp;
            post_3g_triple(s, std::min(sh.x, sh.y), std::max(sh.x, sh.y));
            run(std::move(s));
          });
      return;
    }
    // Every other atom in the component has degree 4.
    auto single_xy = st.m.bonds_between(sh.x, sh.y);
    bool fig_new = false;
    int xp = -1, yp = -1;
    if (single_xy.size() == 1) {
      for (int w : st.m.neighbors(sh.x))
        if (st.m.bonds_between(sh.x, w).size() == 2) xp = w;
      for (int w : st.m.neighbors(sh.y))
        if (st.m.bonds_between(sh.y, w).size() == 2) yp = w;
      fig_new = xp >= 0 && yp >= 0 && xp != yp;
    }
    if (fig_new) {
      Molecule probe = st.m;
      probe.remove_atom(v1);
      probe.remove_atom(v2);
      int dF = probe.is_bridge(single_xy[0]) ? 1 : 0;
      auto& s =
          apply(st, "(3D3-6G)", {v1, v2, sh.x, sh.y}, {}, {}, true, eps6, -4, {}, dF);
      s.note = "main case";
      run(std::move(st));
      return;
    }
    apply(st, "(3D3-1)", {v1, v2}, {}, {}, false, -2, -1, sh.conds, 0);
    st.focus.push_back(st.m.component_of(sh.x));
    run(std::move(st));
  }

  // ---- (4) degree 3 doubled to degree 4 --------------------------------------

  Res try_3d4(RState& st, const std::vector<int>& sc) {
    for (int u : sc) {
      if (st.m.degree(u) != 3) continue;
      for (int w : st.m.neighbors(u))
        if (st.m.bonds_between(u, w).size() == 2 && st.m.degree(w) == 4) {
          apply(st, "(3D4G)", {u, w}, {}, {}, true, eps4, -2, {}, 0);
          return Res::Stepped;
        }
    }
    return Res::None;
  }

  // ---- (5) degree 3 bonded to degree 2 ---------------------------------------

  Res try_3s2(RState& st, const std::vector<int>& sc) {
    for (int u : sc) {
      if (st.m.degree(u) != 3) continue;
      for (int w : st.m.neighbors(u)) {
        if (st.m.degree(w) != 2) continue;
        if (st.m.bonds_between(u, w).size() != 1)
          bail(st, "(3S2G) met a double bond, which the bridge pass should have prevented");
        apply(st, "(3S2G)", {u, w}, {}, {}, true, eps4, -2, {}, 0);
        return Res::Stepped;
      }
    }
    return Res::None;
  }

  // ---- (6) lone degree-3 atoms -----------------------------------------------

  Res try_3r(RState& st, const std::vector<int>& sc) {
    int v = -1;
    for (int u : sc)
      if (st.m.degree(u) == 3) {
        v = u;
        break;
      }
    if (v < 0) return Res::None;
    auto nb = st.m.neighbors(v);
    if (nb.size() != 3) bail(st, "(3R) atom without three distinct neighbors");
    for (int w : nb)
      if (st.m.degree(w) != 4 || st.m.bonds_between(v, w).size() != 1)
        bail(st, "(3R) atom whose neighbors are not all degree 4 across single bonds");
    Molecule probe = st.m;
    probe.remove_atom(v);
    auto comp = probe.component_of(nb[0]);
    if (!in_set(comp, nb[1]) || !in_set(comp, nb[2]))
      bail(st, "(3R) removal split the component, contradicting bridge-freeness");
    auto pa = analyze(probe);
    int special = -1;
    for (int id : pa.special_bonds) {
      const Bond* b = probe.bond(id);
      if (in_set(comp, b->from)) {
        special = id;
        break;
      }
    }
    if (special < 0) {
      apply(st, "(3R-1)", {v}, {}, {}, false, -2, -1, {}, 0);
    } else {
      const Bond* b = probe.bond(special);
      apply(st, "(3R-2G)", {v, b->from, b->to}, {}, {}, true, eps6, -4, {}, std::nullopt);
    }
    return Res::Stepped;
  }

  // ---- (7) degree-2 atoms ------------------------------------------------------

  Res try_2r(RState& st, const std::vector<int>& sc) {
    for (int v : sc) {
      if (st.m.degree(v) != 2) continue;
      auto ids = st.m.bonds_at(v);
      if (ids.size() != 2) bail(st, "(2R) degree-2 atom carrying a self-loop after phase one");
      const Bond* b1 = st.m.bond(ids[0]);
      const Bond* b2 = st.m.bond(ids[1]);
      int w1 = b1->from == v ? b1->to : b1->from;
      int w2 = b2->from == v ? b2->to : b2->from;
      if (w1 == w2) {
        int dw = st.m.degree(w1);
        if (dw == 4) {
          if (out_at(*b1, v) == out_at(*b2, v)) {
            apply(st, "(2R-2G)", {v}, {}, {}, true, eps3, -1, {}, 0);
            return Res::Stepped;
          }
          continue;  // opposite halves wait for the chain pass
        }
        if (dw == 2) {
          apply(st, "(2R-5)", {v, w1}, {}, {}, false, -1, -1, {}, -1);
          return Res::Stepped;
        }
        bail(st, "(2R) double bond onto a degree-3 atom survived the earlier passes");
      }
      int d1 = st.m.degree(w1), d2 = st.m.degree(w2);
      if (d1 == 4 || d2 == 4) {
        apply(st, "(2R-3)", {v}, {}, {}, false, -1, -1, {}, 0);
        return Res::Stepped;
      }
      if (d1 == 2 && d2 == 2) {
        bool tri = !st.m.bonds_between(w1, w2).empty();
        apply(st, "(2R-4)", {v, w1, w2}, {}, {}, false, -1, -1, {}, tri ? -1 : 0);
        return Res::Stepped;
      }
      bail(st, "(2R) degree-2 atom with a degree-3 neighbor survived the earlier passes");
    }
    return Res::None;
  }

  // ---- (8) chains of opposite doubles onto degree 4 ---------------------------

  Res try_type1(RState& st, const std::vector<int>& sc) {
    auto pick = [&](const std::vector<int>& in) -> int {
      for (int v : in) {
        if (!st.m.has_atom(v) || st.m.degree(v) != 2) continue;
        auto ids = st.m.bonds_at(v);
        if (ids.size() != 2) continue;
        const Bond* b1 = st.m.bond(ids[0]);
        const Bond* b2 = st.m.bond(ids[1]);
        int w1 = b1->from == v ? b1->to : b1->from;
        int w2 = b2->from == v ? b2->to : b2->from;
        if (w1 != w2 || st.m.degree(w1) != 4) continue;
        if (out_at(*b1, v) == out_at(*b2, v)) continue;
        return v;
      }
      return -1;
    };
    int v = pick(sc);
    if (v < 0) return Res::None;
    st.focus.push_back(st.m.component_of(v));
    for (;;) {
      int u = pick(st.focus.back());
      if (u < 0) break;
      apply(st, "(2R-1)", {u}, {}, {}, false, -1, -1, {}, 0);
    }
    return Res::Stepped;
  }

  // ---- main loop ---------------------------------------------------------------

  void run(RState st) {
    for (;;) {
      if (st.vacuous) break;
      while (!st.focus.empty()) {
        bool live = false;
        for (auto& b : st.m.bonds)
          live = live || in_set(st.focus.back(), b.from) || in_set(st.focus.back(), b.to);
        if (live) break;
        st.focus.pop_back();
      }
      if (st.m.bonds.empty()) break;
      auto sc = st.focus.empty() ? st.m.atoms : st.focus.back();
      Res r;
      if ((r = try_bridge(st, sc)) != Res::None) {
      } else if ((r = try_deg3_single(st, sc)) != Res::None) {
      } else if ((r = try_deg3_double(st, sc)) != Res::None) {
      } else if ((r = try_3d4(st, sc)) != Res::None) {
      } else if ((r = try_3s2(st, sc)) != Res::None) {
      } else if ((r = try_3r(st, sc)) != Res::None) {
      } else if ((r = try_2r(st, sc)) != Res::None) {
      } else if ((r = try_type1(st, sc)) != Res::None) {
      } else {
        bail(st, "no step applies but bonds remain");
      }
      if (r == Res::Consumed) return;
    }
    finalize(std::move(st));
  }

  void finalize(RState st) {
    Track t;
    t.steps = std::move(st.steps);
    t.checkpoints = st.checkpoints;
    t.vacuous = st.vacuous;
    t.vacuous_reason = std::move(st.vacuous_reason);
    for (auto& s : t.steps) t.good_steps += s.good ? 1 : 0;
    if (!t.vacuous) {
      std::vector<ExtCondition> ext;
      for (auto it = t.steps.rbegin(); it != t.steps.rend(); ++it) {
        if (it->renew_new >= 0)
          for (auto& c : ext) subst_bond(c, it->renew_new, it->renew_old);
        for (auto& c : it->delta_ext) ext.push_back(c);
        t.gamma -= it->dGamma;
        t.kappa -= it->dKappa;
      }
      std::sort(ext.begin(), ext.end(), ext_less);
      ext.erase(std::unique(ext.begin(), ext.end()), ext.end());
      t.ext = std::move(ext);
    }
    out.push_back(std::move(t));
  }
};

}  // namespace

std::vector<Track> reduce(const Molecule& m, const std::set<int>& degenerate, int d) {
  if (d < 2) throw std::invalid_argument("reduce: dimension must be at least 2");
  m.validate();
  for (int v : degenerate)
    if (!m.has_atom(v)) throw std::invalid_argument("reduce: unknown degenerate atom");
  std::map<std::pair<int, int>, int> mult;
  for (auto& b : m.bonds) {
    if (b.from == b.to && !degenerate.count(b.from))
      throw std::invalid_argument(
          "reduce: a self-loop atom must be degenerate or the decoration set is empty");
    mult[{std::min(b.from, b.to), std::max(b.from, b.to)}]++;
  }
  for (auto& [uv, k] : mult)
    if (uv.first != uv.second && k >= 3)
      throw std::invalid_argument("reduce: triple bonds cannot appear in an input molecule");

  Engine eng;
  eng.d = d;
  eng.eps6 = Rational(1, 6 * (d - 1));
  eng.eps4 = Rational(1, 4 * (d - 1));
  eng.eps3 = Rational(1, 3 * (d - 1));

  RState st;
  st.m = m;
  for (auto& b : m.bonds) st.next_bond_id = std::max(st.next_bond_id, b.id + 1);
  eng.phase_one(st, degenerate);
  eng.run(std::move(st));
  return std::move(eng.out);
}

CountBound predicted_bound(const Track& t, int d) {
  CountBound cb;
  cb.cplus_exponent = (int)t.steps.size();
  cb.kappa = t.kappa;
  cb.L_exponent = Rational(d - 1) * t.gamma;
  return cb;
}

std::string track_to_json(const Track& t) {
  nlohmann::json j;
  auto steps = nlohmann::json::array();
  for (auto& s : t.steps) {
    nlohmann::json e;
    e["name"] = s.name;
    e["removed_atoms"] = s.removed_atoms;
    e["removed_bonds"] = s.removed_bonds;
    auto added = nlohmann::json::array();
    for (auto& b : s.added_bonds)
      added.push_back({{"id", b.id}, {"from", b.from}, {"to", b.to}});
    e["added_bonds"] = std::move(added);
    e["dV"] = s.dV, e["dE"] = s.dE, e["dF"] = s.dF, e["dChi"] = s.dChi;
    e["dGamma"] = rational_str(s.dGamma);
    e["dKappa"] = rational_str(s.dKappa);
    e["good"] = s.good;
    auto dext = nlohmann::json::array();
    for (auto& c : s.delta_ext) dext.push_back(ext_json(c));
    e["delta_ext"] = std::move(dext);
    if (s.renew_new >= 0) e["renew"] = {{"fresh", s.renew_new}, {"old", s.renew_old}};
    if (s.checkpoint >= 0) e["checkpoint"] = s.checkpoint;
    if (!s.note.empty()) e["note"] = s.note;
    steps.push_back(std::move(e));
  }
  j["steps"] = std::move(steps);
  j["gamma"] = rational_str(t.gamma);
  j["kappa"] = rational_str(t.kappa);
  j["good_steps"] = t.good_steps;
  j["checkpoints"] = t.checkpoints;
  j["vacuous"] = t.vacuous;
  if (t.vacuous) j["vacuous_reason"] = t.vacuous_reason;
  auto ext = nlohmann::json::array();
  for (auto& c : t.ext) ext.push_back(ext_json(c));
  j["ext"] = std::move(ext);
  return j.dump(2);
}

}  // namespace wk

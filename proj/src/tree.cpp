#include "wk/tree.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace wk {

Tree single_leaf(int sign) {
  Tree t;
  t.nodes.push_back({-1, {-1, -1, -1}, sign});
  return t;
}

std::string Tree::shape_key() const {
  std::string out;
  // preorder parenthesization; signs are implied by the root sign
  std::function<void(int)> rec = [&](int i) {
    if (is_leaf(i)) {
      out += '.';
      return;
    }
    out += '(';
    for (int j = 0; j < 3; ++j) rec(nodes[i].child[j]);
    out += ')';
  };
  rec(0);
  return out;
}

namespace {

Tree compose(int sign, const Tree& a, const Tree& b, const Tree& c) {
  Tree t;
  t.nodes.reserve(1 + a.size() + b.size() + c.size());
  t.nodes.push_back({-1, {1, 1 + a.size(), 1 + a.size() + b.size()}, sign});
  auto append = [&t](const Tree& s) {
    int off = t.size();
    for (auto nd : s.nodes) {
      if (nd.parent >= 0) nd.parent += off;
      else nd.parent = 0;
      for (auto& ch : nd.child)
        if (ch >= 0) ch += off;
      t.nodes.push_back(nd);
    }
  };
  append(a);
  append(b);
  append(c);
  return t;
}

}  // namespace

const std::vector<Tree>& enumerate_trees(int n, int sign) {
  static std::map<std::pair<int, int>, std::vector<Tree>> memo;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(n, sign);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;

  std::function<const std::vector<Tree>&(int, int)> build = [&](int m, int s) -> const std::vector<Tree>& {
    auto k = std::make_pair(m, s);
    auto f = memo.find(k);
    if (f != memo.end()) return f->second;
    std::vector<Tree> out;
    if (m == 0) {
      out.push_back(single_leaf(s));
    } else {
      for (int a = 0; a <= m - 1; ++a)
        for (int b = 0; a + b <= m - 1; ++b) {
          int c = m - 1 - a - b;
          // copy lists up front: recursion may invalidate map references
          auto la = build(a, s);
          auto lb = build(b, -s);
          auto lc = build(c, s);
          for (const auto& ta : la)
            for (const auto& tb : lb)
              for (const auto& tc : lc) out.push_back(compose(s, ta, tb, tc));
        }
    }
    return memo.emplace(k, std::move(out)).first->second;
  };
  return build(n, sign);
}

long long tree_count_oracle(int n) {
  static std::vector<long long> t{1};
  while ((int)t.size() <= n) {
    int m = (int)t.size();
    long long s = 0;
    for (int a = 0; a <= m - 1; ++a)
      for (int b = 0; a + b <= m - 1; ++b) s += t[a] * t[b] * t[m - 1 - a - b];
    t.push_back(s);
  }
  return t[n];
}

int Couple::pair_of(int leaf) const {
  for (auto& [a, b] : pairing) {
    if (a == leaf) return b;
    if (b == leaf) return a;
  }
  throw std::invalid_argument("pair_of: not a paired leaf");
}

std::string Couple::key() const {
  std::ostringstream os;
  os << plus_t.shape_key() << '|' << minus_t.shape_key() << '|';
  for (auto& [a, b] : pairing) os << a << '-' << b << ',';
  return os.str();
}

void Couple::validate() const {
  if (plus_t.sign() != +1 || minus_t.sign() != -1)
    throw std::logic_error("couple: tree signs must be (+,-)");
  for (const Tree* t : {&plus_t, &minus_t}) {
    for (int i = 0; i < t->size(); ++i) {
      auto& nd = t->nodes[i];
      bool leaf = nd.child[0] < 0;
      for (int j = 0; j < 3; ++j) {
        if (leaf != (nd.child[j] < 0)) throw std::logic_error("couple: node with 1 or 2 children");
        if (!leaf) {
          auto& ch = t->nodes[nd.child[j]];
          if (ch.parent != i) throw std::logic_error("couple: parent link broken");
          int want = (j == 1) ? -nd.sign : nd.sign;
          if (ch.sign != want) throw std::logic_error("couple: child sign pattern broken");
        }
      }
    }
    // node ids are preorder positions; pairing ids depend on it
    int next = 0;
    std::function<void(int)> walk = [&](int v) {
      if (v != next++) throw std::logic_error("couple: nodes not in preorder");
      if (t->nodes[v].child[0] < 0) return;
      for (int j = 0; j < 3; ++j) walk(t->nodes[v].child[j]);
    };
    if (t->size() > 0) walk(0);
    if (next != t->size()) throw std::logic_error("couple: unreachable nodes");
  }
  auto lv = leaf_ids();
  std::vector<int> seen(total_nodes(), 0);
  for (auto& [a, b] : pairing) {
    if (a >= b) throw std::logic_error("couple: pairs must be (min,max)");
    if (!is_leaf(a) || !is_leaf(b)) throw std::logic_error("couple: pairing non-leaf");
    if (node_sign(a) + node_sign(b) != 0) throw std::logic_error("couple: paired signs not opposite");
    seen[a]++, seen[b]++;
  }
  for (int l : lv)
    if (seen[l] != 1) throw std::logic_error("couple: pairing is not a perfect matching");
  if (2 * pairing.size() != lv.size()) throw std::logic_error("couple: pair count mismatch");
  for (size_t i = 1; i < pairing.size(); ++i)
    if (pairing[i - 1].first >= pairing[i].first) throw std::logic_error("couple: pairs unsorted");
}

Couple trivial_couple() {
  Couple q;
  q.plus_t = single_leaf(+1);
  q.minus_t = single_leaf(-1);
  q.pairing = {{0, 1}};
  return q;
}

std::vector<Couple> enumerate_couples(int n) {
  std::vector<Couple> out;
  for (int a = 0; a <= n; ++a) {
    int b = n - a;
    for (const auto& tp : enumerate_trees(a, +1)) {
      for (const auto& tm : enumerate_trees(b, -1)) {
        Couple base;
        base.plus_t = tp;
        base.minus_t = tm;
        std::vector<int> plus_leaves, minus_leaves;
        int P = tp.size();
        for (int i = 0; i < P; ++i)
          if (tp.nodes[i].child[0] < 0)
            (tp.nodes[i].sign > 0 ? plus_leaves : minus_leaves).push_back(i);
        for (int i = 0; i < tm.size(); ++i)
          if (tm.nodes[i].child[0] < 0)
            (tm.nodes[i].sign > 0 ? plus_leaves : minus_leaves).push_back(i + P);
        // lexicographic enumeration of bijections plus -> minus
        std::vector<int> perm(minus_leaves.size());
        std::iota(perm.begin(), perm.end(), 0);
        do {
          Couple q = base;
          for (size_t i = 0; i < plus_leaves.size(); ++i) {
            int u = plus_leaves[i], v = minus_leaves[perm[i]];
            q.pairing.emplace_back(std::min(u, v), std::max(u, v));
          }
          std::sort(q.pairing.begin(), q.pairing.end());
          out.push_back(std::move(q));
        } while (std::next_permutation(perm.begin(), perm.end()));
      }
    }
  }
  return out;
}

long long couple_count_oracle(int n) {
  long long fact = 1;
  for (int i = 2; i <= n + 1; ++i) fact *= i;
  long long s = 0;
  for (int a = 0; a <= n; ++a) s += tree_count_oracle(a) * tree_count_oracle(n - a);
  return s * fact;
}

bool complete_decoration(const Couple& q, const IVec& k, Decoration& dec) {
  int P = q.plus_size(), N = q.total_nodes();
  // children come after parents in preorder, so fill in reverse
  for (int g = N - 1; g >= 0; --g) {
    if (q.is_leaf(g)) continue;
    dec.m[g] = iv_sub(iv_add(dec.m[q.child(g, 0)], dec.m[q.child(g, 2)]), dec.m[q.child(g, 1)]);
  }
  return iv_eq(dec.m[0], k) && iv_eq(dec.m[P], k);
}

DecorationRange::DecorationRange(const Couple& q, IVec k, const LatticeSpec& spec, double bound)
    : q_(q), k_(std::move(k)), d_(spec.d) {
  if ((int)k_.size() != d_) throw std::invalid_argument("decorations: k dimension mismatch");
  box_ = (i64)std::floor(bound * spec.L + 1e-9);
  if (box_ < 0) box_ = 0;
  pair_coeff_.assign(q_.pairing.size(), 0);
  for (size_t p = 0; p < q_.pairing.size(); ++p) {
    auto [a, b] = q_.pairing[p];
    if (q_.in_plus(a)) pair_coeff_[p] += q_.node_sign(a);
    if (q_.in_plus(b)) pair_coeff_[p] += q_.node_sign(b);
  }
  for (int p = (int)q_.pairing.size() - 1; p >= 0; --p)
    if (pair_coeff_[p] != 0) {
      solve_pair_ = p;
      solve_coeff_ = pair_coeff_[p];
      break;
    }
  // a cross pair always exists: the plus tree has an odd number of leaves
  if (solve_pair_ < 0) throw std::logic_error("decorations: no cross pair found");
  for (int p = 0; p < (int)q_.pairing.size(); ++p)
    if (p != solve_pair_) free_pairs_.push_back(p);
}

DecorationRange::iterator::iterator(const DecorationRange* r) : r_(r) {
  odo_.assign(r_->free_pairs_.size() * r_->d_, 0);
  dec_.m.assign(r_->q_.total_nodes(), iv_zero(r_->d_));
  settle();
}

bool DecorationRange::iterator::materialize() {
  const auto& R = *r_;
  IVec rhs = R.k_;
  for (size_t i = 0; i < R.free_pairs_.size(); ++i) {
    int p = R.free_pairs_[i];
    for (int j = 0; j < R.d_; ++j) {
      i64 v = odo_[i * R.d_ + j] - R.box_;
      rhs[j] -= R.pair_coeff_[p] * v;
    }
  }
  IVec sv(R.d_);
  for (int j = 0; j < R.d_; ++j) {
    sv[j] = R.solve_coeff_ * rhs[j];  // coefficient is +-1
    if (sv[j] < -R.box_ || sv[j] > R.box_) return false;
  }
  for (size_t i = 0; i < R.free_pairs_.size(); ++i) {
    auto [a, b] = R.q_.pairing[R.free_pairs_[i]];
    for (int j = 0; j < R.d_; ++j)
      dec_.m[a][j] = dec_.m[b][j] = odo_[i * R.d_ + j] - R.box_;
  }
  auto [sa, sb] = R.q_.pairing[R.solve_pair_];
  dec_.m[sa] = dec_.m[sb] = sv;
  if (!complete_decoration(R.q_, R.k_, dec_)) throw std::logic_error("decorations: root equation broke");
  return true;
}

DecorationRange::iterator& DecorationRange::iterator::operator++() {
  // odometer step then re-settle
  size_t i = 0;
  for (; i < odo_.size(); ++i) {
    if (odo_[i] < 2 * r_->box_) {
      odo_[i]++;
      std::fill(odo_.begin(), odo_.begin() + i, 0);
      break;
    }
  }
  if (i == odo_.size()) {
    done_ = true;
    return *this;
  }
  settle();
  return *this;
}

void DecorationRange::iterator::settle() {
  while (!materialize()) {
    size_t i = 0;
    for (; i < odo_.size(); ++i) {
      if (odo_[i] < 2 * r_->box_) {
        odo_[i]++;
        std::fill(odo_.begin(), odo_.begin() + i, 0);
        break;
      }
    }
    if (i == odo_.size()) {
      done_ = true;
      return;
    }
  }
}

long long DecorationRange::for_each(const std::function<void(const Decoration&)>& f) const {
  long long n = 0;
  for (auto it = begin(); it != end(); ++it) {
    ++n;
    if (f) f(*it);
  }
  return n;
}

IVec omega_coeffs(const Couple& q, const Decoration& dec, int g) {
  const IVec& m1 = dec.m[q.child(g, 0)];
  const IVec& m2 = dec.m[q.child(g, 1)];
  const IVec& m3 = dec.m[q.child(g, 2)];
  const IVec& m0 = dec.m[g];
  IVec c(m0.size());
  for (size_t j = 0; j < m0.size(); ++j)
    c[j] = m1[j] * m1[j] - m2[j] * m2[j] + m3[j] * m3[j] - m0[j] * m0[j];
  return c;
}

int epsilon_factor(const IVec& k1, const IVec& k2, const IVec& k3) {
  bool e12 = iv_eq(k1, k2), e23 = iv_eq(k2, k3);
  if (!e12 && !e23) return 1;
  if (e12 && e23) return -1;
  return 0;
}

ResonanceReport resonance_and_epsilon(const Couple& q, const Decoration& dec,
                                      const LatticeSpec& spec) {
  ResonanceReport rep;
  for (int g : q.branching_ids()) {
    IVec c = omega_coeffs(q, dec, g);
    // inner-product form: 2<k1-k, k-k3>_beta, exact per coordinate
    const IVec& m1 = dec.m[q.child(g, 0)];
    const IVec& m3 = dec.m[q.child(g, 2)];
    const IVec& m0 = dec.m[g];
    double om = 0;
    for (int j = 0; j < spec.d; ++j) {
      i64 alt = 2 * (m1[j] - m0[j]) * (m0[j] - m3[j]);
      if (alt != c[j]) rep.forms_agree = false;
      om += spec.beta[j] * (double)c[j];
    }
    om /= spec.L * spec.L;
    int e = epsilon_factor(dec.m[q.child(g, 0)], dec.m[q.child(g, 1)], dec.m[q.child(g, 2)]);
    rep.nodes.push_back(g);
    rep.omega.push_back(om);
    rep.eps.push_back(e);
    rep.eps_product *= e;
  }
  return rep;
}

std::complex<double> zeta_star(const Couple& q) {
  int quarter = 0;  // power of i
  for (int g : q.branching_ids()) quarter += (q.node_sign(g) > 0) ? 1 : 3;
  switch (quarter % 4) {
    case 0: return {1, 0};
    case 1: return {0, 1};
    case 2: return {-1, 0};
    default: return {0, -1};
  }
}

namespace {

nlohmann::json shape_to_json(const Tree& t, int i) {
  nlohmann::json j = nlohmann::json::array();
  if (t.nodes[i].child[0] < 0) return j;
  for (int c = 0; c < 3; ++c) j.push_back(shape_to_json(t, t.nodes[i].child[c]));
  return j;
}

void shape_from_json(const nlohmann::json& j, Tree& t, int parent, int sign) {
  int me = t.size();
  t.nodes.push_back({parent, {-1, -1, -1}, sign});
  if (j.empty()) return;
  if (j.size() != 3) throw std::invalid_argument("tree json: nodes have 0 or 3 children");
  for (int c = 0; c < 3; ++c) {
    t.nodes[me].child[c] = t.size();
    shape_from_json(j[c], t, me, c == 1 ? -sign : sign);
  }
}

}  // namespace

std::string couple_to_json(const Couple& q) {
  nlohmann::json j;
  j["plus"] = shape_to_json(q.plus_t, 0);
  j["minus"] = shape_to_json(q.minus_t, 0);
  j["pairs"] = nlohmann::json::array();
  for (auto& [a, b] : q.pairing) j["pairs"].push_back({a, b});
  return j.dump();
}

Couple couple_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  Couple q;
  shape_from_json(j.at("plus"), q.plus_t, -1, +1);
  shape_from_json(j.at("minus"), q.minus_t, -1, -1);
  for (auto& pr : j.at("pairs")) q.pairing.emplace_back(pr[0].get<int>(), pr[1].get<int>());
  std::sort(q.pairing.begin(), q.pairing.end());
  q.validate();
  return q;
}

}  // namespace wk

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <complex>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wk/classify.hpp"

using namespace wk;

// ============================================================
// helpers and oracles
// ============================================================

static std::set<std::string> key_set(const std::vector<Couple>& v) {
  std::set<std::string> s;
  for (auto& q : v) s.insert(q.key());
  return s;
}

static long long catalan(int m) {
  long long r = 1;
  for (int i = 1; i <= m; ++i) r = r * (m + i) / i;
  return r / (m + 1);
}

// Every couple reachable from q in one step A or B.
static std::vector<Couple> all_one_step(const Couple& q) {
  std::vector<Couple> out;
  for (auto pr : q.pairing)
    for (int v = 0; v < 2; ++v) out.push_back(apply_step_A(q, pr, v));
  for (int g = 0; g < q.total_nodes(); ++g)
    for (int c = 1; c <= 3; ++c)
      for (int v = 0; v < 2; ++v) out.push_back(apply_step_B(q, g, c, v));
  return out;
}

// Counting bound: equality case of the structural inequality, two routes.
static std::vector<long long> bound_via_quadratic(int N) {
  std::vector<long long> B(N + 1, 0);
  B[0] = 1;
  for (int n = 1; n <= N; ++n) {
    long long s = 0;
    for (int a = 0; a < n; ++a) s += B[a] * B[n - 1 - a];
    B[n] = -5 * B[n - 1] + 10 * s;
  }
  return B;
}

static std::vector<long long> bound_via_msum(int N) {
  std::vector<long long> B(N + 1, 0);
  B[0] = 1;
  for (int n = 1; n <= N; ++n) {
    long long total = 0;
    for (int m = 1; m <= n; ++m) {
      // (m+1)-fold convolution of the sequence so far, evaluated at n-m
      std::vector<long long> conv(n - m + 1, 0);
      conv[0] = 1;
      for (int f = 0; f < m + 1; ++f) {
        std::vector<long long> nx(n - m + 1, 0);
        for (int i = 0; i <= n - m; ++i)
          if (conv[i])
            for (int j = 0; i + j <= n - m; ++j) nx[i + j] += conv[i] * B[j];
        conv = nx;
      }
      long long p5 = 1;
      for (int i = 0; i < m; ++i) p5 *= 5;
      total += p5 * conv[n - m];
    }
    B[n] = total;
  }
  return B;
}

static Couple random_couple(Rng& rng, int n) {
  int a = (int)(rng() % (n + 1));
  const auto& tps = enumerate_trees(a, +1);
  const auto& tms = enumerate_trees(n - a, -1);
  Couple q;
  q.plus_t = tps[rng() % tps.size()];
  q.minus_t = tms[rng() % tms.size()];
  std::vector<int> pos, neg;
  for (int l : q.leaf_ids()) (q.node_sign(l) > 0 ? pos : neg).push_back(l);
  std::shuffle(neg.begin(), neg.end(), rng);
  for (size_t i = 0; i < pos.size(); ++i)
    q.pairing.push_back({std::min(pos[i], neg[i]), std::max(pos[i], neg[i])});
  std::sort(q.pairing.begin(), q.pairing.end());
  q.validate();
  return q;
}

static Couple random_regular(Rng& rng, int steps) {
  Couple q = trivial_couple();
  for (int s = 0; s < steps; ++s) {
    if (rng() % 2 == 0) {
      auto pr = q.pairing[rng() % q.pairing.size()];
      q = apply_step_A(q, pr, (int)(rng() % 2));
    } else {
      q = apply_step_B(q, (int)(rng() % q.total_nodes()), 1 + (int)(rng() % 3),
                       (int)(rng() % 2));
    }
  }
  return q;
}

static int copy_enc(const EncodedTree& src, int v, EncodedTree& dst, int parent) {
  int id = (int)dst.nodes.size();
  dst.nodes.push_back({parent, {-1, -1, -1}, src.nodes[v].code});
  for (int j = 0; j < 3; ++j) {
    int c = src.nodes[v].child[j];
    if (c >= 0) dst.nodes[id].child[j] = copy_enc(src, c, dst, id);
  }
  return id;
}

static EncodedTree enc_subtree(const EncodedTree& t, int v) {
  EncodedTree s;
  copy_enc(t, v, s, -1);
  return s;
}

// Number of dominant couples mapping to exactly this encoded tree.
static long long enc_fiber(const EncodedTree& t, int v) {
  if (t.is_leaf(v)) return 1;
  if (t.nodes[v].code == 0) {
    long long r = 2;
    for (int j = 0; j < 3; ++j) r *= enc_fiber(t, t.nodes[v].child[j]);
    return r;
  }
  long long prod = 1;
  int m = 0, cur = v;
  while (!t.is_leaf(cur) && t.nodes[cur].code != 0) {
    int c = t.nodes[cur].code;
    ++m;
    long long side = 2;
    for (int j = 0; j < 3; ++j)
      if (j != c - 1) side *= enc_fiber(t, t.nodes[cur].child[j]);
    prod *= side;
    cur = t.nodes[cur].child[c - 1];
  }
  return (m + 1) * prod * enc_fiber(t, cur);
}

// Number of dominant couples in the equivalence class of this encoded tree.
static long long enc_multiplicity(const EncodedTree& t, int v) {
  if (t.is_leaf(v)) return 1;
  if (t.nodes[v].code == 0) {
    long long r = 2;
    for (int j = 0; j < 3; ++j) r *= enc_multiplicity(t, t.nodes[v].child[j]);
    return r;
  }
  std::map<std::string, long long> dup;
  long long prod = 1;
  int m = 0, cur = v;
  while (!t.is_leaf(cur) && t.nodes[cur].code != 0) {
    int c = t.nodes[cur].code;
    ++m;
    std::vector<int> side;
    for (int j = 0; j < 3; ++j)
      if (j != c - 1) side.push_back(t.nodes[cur].child[j]);
    dup["(" + std::to_string(c) + ";" + tree_class_id(enc_subtree(t, side[0])) + "," +
        tree_class_id(enc_subtree(t, side[1])) + ")"]++;
    prod *= 2 * enc_multiplicity(t, side[0]) * enc_multiplicity(t, side[1]);
    cur = t.nodes[cur].child[c - 1];
  }
  long long arr = 1;
  for (int i = 2; i <= m; ++i) arr *= i;
  for (auto& [k, d] : dup)
    for (long long i = 2; i <= d; ++i) arr /= i;
  return (m + 1) * arr * prod * enc_multiplicity(t, cur);
}

static int enc_add(EncodedTree& t, int parent, int slot, int code) {
  int id = (int)t.nodes.size();
  t.nodes.push_back({parent, {-1, -1, -1}, code});
  if (parent >= 0) t.nodes[parent].child[slot] = id;
  return id;
}

static void enc_saturate(EncodedTree& t, int v) {
  for (int j = 0; j < 3; ++j)
    if (t.nodes[v].child[j] < 0) enc_add(t, v, j, -1);
}

// Independent maximal-chain finder: link v->w iff w is the unique branching
// child of v, the other two children of v are leaves, and one of them with
// sign opposite to w is paired to a child of w.
static std::vector<std::vector<int>> chain_paths_oracle(const Couple& q) {
  std::map<int, int> link;
  std::set<int> has_in;
  for (int v : q.branching_ids()) {
    int bc = -1, nb = 0;
    std::vector<int> leaves;
    for (int j = 0; j < 3; ++j) {
      int c = q.child(v, j);
      if (q.is_leaf(c))
        leaves.push_back(c);
      else
        bc = c, nb++;
    }
    if (nb != 1) continue;
    bool ok = false;
    for (int m : leaves)
      if (q.node_sign(m) == -q.node_sign(bc) && q.parent(q.pair_of(m)) == bc) ok = true;
    if (ok) link[v] = bc, has_in.insert(bc);
  }
  std::vector<std::vector<int>> out;
  for (auto& [v, w] : link) {
    if (has_in.count(v)) continue;
    std::vector<int> path{v};
    int cur = v;
    while (link.count(cur)) {
      cur = link.at(cur);
      path.push_back(cur);
    }
    out.push_back(path);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// A free-standing chain of given length: descending branching path at slot 0,
// each level holding the partner of the previous level's marked leaf; the
// leftovers close up with the opposite root. Nodes are laid out in preorder.
static Couple handmade_chain_couple(int q) {
  REQUIRE(q >= 1);
  Tree t;
  std::vector<int> n(q + 1), m(q), p(q);
  int tail0 = -1, tail1 = -1, tail2 = -1;
  std::function<int(int, int)> build = [&](int parent, int depth) {
    int id = (int)t.nodes.size();
    t.nodes.push_back({parent, {-1, -1, -1}, +1});
    n[depth] = id;
    int c0, c1, c2;
    if (depth < q) {
      c0 = build(id, depth + 1);  // next chain node, slot 0
      c1 = (int)t.nodes.size();
      t.nodes.push_back({id, {-1, -1, -1}, -1});  // marked leaf m_depth
      c2 = (int)t.nodes.size();
      t.nodes.push_back({id, {-1, -1, -1}, +1});  // remaining leaf p_depth
      m[depth] = c1, p[depth] = c2;
    } else {
      c0 = (int)t.nodes.size();
      t.nodes.push_back({id, {-1, -1, -1}, +1});  // partner of the last marked leaf
      c1 = (int)t.nodes.size();
      t.nodes.push_back({id, {-1, -1, -1}, -1});
      c2 = (int)t.nodes.size();
      t.nodes.push_back({id, {-1, -1, -1}, +1});
      tail0 = c0, tail1 = c1, tail2 = c2;
    }
    t.nodes[id].child = {c0, c1, c2};
    return id;
  };
  build(-1, 0);
  Couple out;
  out.plus_t = t;
  out.minus_t = single_leaf(-1);
  int mroot = out.plus_t.size();
  for (int j = 0; j + 1 < q; ++j)
    out.pairing.push_back({std::min(m[j], p[j + 1]), std::max(m[j], p[j + 1])});
  out.pairing.push_back({std::min(m[q - 1], tail0), std::max(m[q - 1], tail0)});
  out.pairing.push_back({std::min(p[0], tail1), std::max(p[0], tail1)});
  out.pairing.push_back({tail2, mroot});
  std::sort(out.pairing.begin(), out.pairing.end());
  out.validate();
  return out;
}

// ============================================================
// mini structures
// ============================================================

TEST_CASE("mini tree patterns match the slot and sign table") {
  struct Row {
    int c, var, inner, lone;
    std::array<std::pair<int, int>, 2> pairs;
  };
  const Row rows[] = {
      {1, 0, 0, 2, {{{1, 0}, {2, 1}}}}, {1, 1, 0, 0, {{{1, 2}, {2, 1}}}},
      {2, 0, 1, 1, {{{0, 0}, {2, 2}}}}, {2, 1, 1, 1, {{{0, 2}, {2, 0}}}},
      {3, 0, 2, 2, {{{0, 1}, {1, 0}}}}, {3, 1, 2, 0, {{{0, 1}, {1, 2}}}},
  };
  for (const auto& r : rows) {
    const auto& p = mini_tree_pattern(r.c, r.var);
    CHECK(p.inner_slot == r.inner);
    CHECK(p.lone_slot == r.lone);
    CHECK(p.pairs == r.pairs);
  }
  CHECK_THROWS_AS(mini_tree_pattern(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(mini_tree_pattern(4, 0), std::invalid_argument);
  CHECK_THROWS_AS(mini_tree_pattern(1, 2), std::invalid_argument);
}

TEST_CASE("mini couples pair across the two scale-1 trees") {
  Couple m0 = mini_couple(0), m1 = mini_couple(1);
  for (const Couple* q : {&m0, &m1}) {
    q->validate();
    CHECK(q->scale() == 2);
    CHECK(q->plus_t.scale() == 1);
    CHECK(q->minus_t.scale() == 1);
    // no two siblings paired
    for (auto& [a, b] : q->pairing) CHECK(q->parent(a) != q->parent(b));
  }
  CHECK(m0.key() != m1.key());
  // variant 0 keeps slots parallel, variant 1 swaps the outer ones
  auto pair_of = [](const Couple& q, int a) {
    for (auto& [x, y] : q.pairing) {
      if (x == a) return y;
      if (y == a) return x;
    }
    return -1;
  };
  // plus leaves 1,2,3; minus leaves 5,6,7
  CHECK(pair_of(m0, 1) == 5);
  CHECK(pair_of(m0, 2) == 6);
  CHECK(pair_of(m0, 3) == 7);
  CHECK(pair_of(m1, 1) == 7);
  CHECK(pair_of(m1, 2) == 6);
  CHECK(pair_of(m1, 3) == 5);
}

TEST_CASE("step A at the trivial couple builds the mini couples") {
  Couple x = trivial_couple();
  CHECK(apply_step_A(x, {0, 1}, 0).key() == mini_couple(0).key());
  CHECK(apply_step_A(x, {1, 0}, 1).key() == mini_couple(1).key());
  CHECK_THROWS_AS(apply_step_A(x, {0, 1}, 2), std::invalid_argument);
  CHECK_THROWS_AS(apply_step_A(mini_couple(0), {1, 2}, 0), std::invalid_argument);
}

TEST_CASE("step B at the trivial couple gives twelve chain couples") {
  std::set<std::string> keys;
  for (int g = 0; g < 2; ++g)
    for (int c = 1; c <= 3; ++c)
      for (int v = 0; v < 2; ++v) {
        Couple q = apply_step_B(trivial_couple(), g, c, v);
        q.validate();
        CHECK(q.scale() == 2);
        CHECK(is_regular(q));
        // the replaced root moved to the lone slot: one tree is saturated
        CHECK((g == 0 ? q.plus_t : q.minus_t).scale() == 2);
        keys.insert(q.key());
      }
  CHECK(keys.size() == 12);
  keys.insert(mini_couple(0).key());
  keys.insert(mini_couple(1).key());
  CHECK(keys.size() == 14);
  CHECK_THROWS_AS(apply_step_B(trivial_couple(), 0, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(apply_step_B(trivial_couple(), 5, 1, 0), std::invalid_argument);
}

TEST_CASE("replay rebuilds couples step by step") {
  std::vector<BuildStep> steps;
  steps.push_back({'A', 0, 1, 0, 1});
  Couple q1 = replay(trivial_couple(), steps);
  CHECK(q1.key() == mini_couple(1).key());
  steps.push_back({'B', 2, -1, 3, 0});
  Couple q2 = replay(trivial_couple(), steps);
  CHECK(q2.key() == apply_step_B(mini_couple(1), 2, 3, 0).key());
  std::vector<BuildStep> bad{{'X', 0, 1, 0, 0}};
  CHECK_THROWS_AS(replay(trivial_couple(), bad), std::invalid_argument);
}

// ============================================================
// regular couples: filters vs generative closures
// ============================================================

TEST_CASE("scale-2 regular couples are exactly the fourteen step products") {
  std::set<std::string> gen;
  gen.insert(mini_couple(0).key());
  gen.insert(mini_couple(1).key());
  for (int g = 0; g < 2; ++g)
    for (int c = 1; c <= 3; ++c)
      for (int v = 0; v < 2; ++v) gen.insert(apply_step_B(trivial_couple(), g, c, v).key());
  REQUIRE(gen.size() == 14);

  std::set<std::string> filt;
  for (const auto& q : enumerate_couples(2))
    if (is_regular(q)) filt.insert(q.key());
  CHECK(filt == gen);

  for (const auto& q : enumerate_couples(1)) CHECK(!is_regular(q));
  for (const auto& q : enumerate_couples(3)) CHECK(!is_regular(q));
  CHECK(is_regular(trivial_couple()));
}

TEST_CASE("scale-4 regular couples: reduction filter equals two-step closure") {
  std::set<std::string> gen;
  for (const auto& q2 : enumerate_couples(2)) {
    if (!is_regular(q2)) continue;
    for (const auto& q4 : all_one_step(q2)) gen.insert(q4.key());
  }
  std::set<std::string> filt;
  for (const auto& q : enumerate_couples(4))
    if (is_regular(q)) filt.insert(q.key());
  CHECK(filt == gen);

  auto B = bound_via_quadratic(6);
  CHECK(14 <= B[2]);
  CHECK((long long)filt.size() <= B[4]);
}

TEST_CASE("counting bound sequence: the two recurrences agree") {
  auto Bq = bound_via_quadratic(6);
  auto Bm = bound_via_msum(6);
  CHECK(Bq == Bm);
  const long long frozen[] = {1, 5, 75, 1375, 28125, 615625};
  for (int n = 0; n <= 5; ++n) CHECK(Bq[n] == frozen[n]);
}

// ============================================================
// skeletons
// ============================================================

TEST_CASE("regular couples reduce to the trivial skeleton and replay back") {
  std::vector<Couple> pool;
  for (const auto& q : enumerate_couples(2))
    if (is_regular(q)) pool.push_back(q);
  Rng rng(2026);
  for (int i = 0; i < 40; ++i) pool.push_back(random_regular(rng, 2 + (int)(rng() % 3)));
  for (const auto& q : pool) {
    auto r = skeleton(q);
    CHECK(r.regular);
    CHECK(r.prime.key() == trivial_couple().key());
    CHECK(r.chains.empty());
    CHECK(replay(r.prime, r.witness).key() == q.key());
    CHECK(reconstruct(r).key() == q.key());
  }
}

TEST_CASE("skeleton decomposition and witness invert every couple of scale <= 4") {
  for (int n = 1; n <= 4; ++n) {
    for (const auto& q : enumerate_couples(n)) {
      auto r = skeleton(q);
      CHECK(r.regular == is_regular(q));
      CHECK(r.regular == (r.prime.key() == trivial_couple().key()));
      CHECK(reconstruct(r).key() == q.key());
      CHECK(replay(r.prime, r.witness).key() == q.key());
      auto rr = skeleton(r.prime);
      CHECK(rr.prime.key() == r.prime.key());
      CHECK(rr.witness.empty());
      CHECK(rr.chains.empty());
      CHECK(rr.leaf_couples.empty());
    }
  }
}

TEST_CASE("skeleton inverts sampled couples of scale 5 and 6") {
  Rng rng(77);
  for (int n : {5, 6}) {
    for (int i = 0; i < 300; ++i) {
      Couple q = random_couple(rng, n);
      auto r = skeleton(q);
      CHECK(reconstruct(r).key() == q.key());
      CHECK(replay(r.prime, r.witness).key() == q.key());
      if (n == 5) CHECK(!r.regular);
      auto rr = skeleton(r.prime);
      CHECK(rr.prime.key() == r.prime.key());
      CHECK(rr.witness.empty());
    }
  }
}

TEST_CASE("reduction order does not change the prime") {
  std::vector<Couple> pool;
  for (const auto& q : enumerate_couples(2)) pool.push_back(q);
  {
    auto c4 = enumerate_couples(4);
    for (size_t i = 0; i < c4.size(); i += 61) pool.push_back(c4[i]);
  }
  Rng rng(5150);
  for (int i = 0; i < 100; ++i) pool.push_back(random_couple(rng, 6));
  for (int i = 0; i < 50; ++i) pool.push_back(random_regular(rng, 3));
  for (const auto& q : pool) {
    std::string want = skeleton(q).prime.key();
    for (int seed = 0; seed < 20; ++seed) {
      Rng r1(seed), r2(seed);
      CHECK(skeleton_prime_randomized(q, r1).key() == want);
      CHECK(skeleton_prime_randomized(q, r2).key() == want);  // same seed, same walk
    }
  }
}

TEST_CASE("insertions on a prime couple are recovered exactly") {
  std::vector<Couple> primes;
  for (const auto& q : enumerate_couples(2))
    if (!is_regular(q)) primes.push_back(q);
  REQUIRE(primes.size() == 42 - 14);

  int stacked = 0;
  for (const auto& P : primes) {
    // step A at a leaf pair -> one leaf couple in the decomposition
    auto pr = P.pairing[0];
    for (int v = 0; v < 2; ++v) {
      Couple q = apply_step_A(P, pr, v);
      auto r = skeleton(q);
      CHECK(r.prime.key() == P.key());
      CHECK(r.chains.empty());
      REQUIRE(r.leaf_couples.size() == 1);
      auto it = r.leaf_couples.find(pr);
      REQUIRE(it != r.leaf_couples.end());
      CHECK(it->second.key() == mini_couple(v).key());
      CHECK(reconstruct(r).key() == q.key());
    }
    // step B at a branching node -> one chain above that node
    for (int g : P.branching_ids()) {
      for (int c = 1; c <= 3; ++c)
        for (int v = 0; v < 2; ++v) {
          Couple q = apply_step_B(P, g, c, v);
          auto r = skeleton(q);
          CHECK(r.prime.key() == P.key());
          CHECK(r.leaf_couples.empty());
          REQUIRE(r.chains.size() == 1);
          auto it = r.chains.find(g);
          REQUIRE(it != r.chains.end());
          CHECK(it->second.half_length() == 1);
          CHECK(it->second.partition == Partition{{1, 2}});
          CHECK(it->second.codes[0] == std::pair<int, int>(c, v));
          CHECK(it->second.pair_couples[0].first.scale() == 0);
          CHECK(it->second.pair_couples[0].second.scale() == 0);
          CHECK(reconstruct(r).key() == q.key());
        }
    }
    // step B at a leaf -> a leaf couple again (absorbed as a regular sub-couple)
    {
      int g = P.pairing[1].first;
      Couple q = apply_step_B(P, g, 2, 1);
      auto r = skeleton(q);
      CHECK(r.prime.key() == P.key());
      CHECK(r.chains.empty());
      REQUIRE(r.leaf_couples.size() == 1);
      const Couple& lc = r.leaf_couples.begin()->second;
      CHECK(lc.scale() == 2);
      CHECK(is_regular(lc));
      CHECK(reconstruct(r).key() == q.key());
    }
    // stacked A and B recover both pieces; B at the plus root with code 3
    // keeps the old content on last slots twice, shifting every old id by 6
    if (P.branching_ids()[0] == 0) {
      Couple q1 = apply_step_B(P, 0, 3, 0);
      Couple q = apply_step_A(q1, {pr.first + 6, pr.second + 6}, 1);
      auto r = skeleton(q);
      CHECK(r.prime.key() == P.key());
      REQUIRE(r.chains.count(0) == 1);
      CHECK(r.chains.at(0).codes[0] == std::pair<int, int>(3, 0));
      REQUIRE(r.leaf_couples.count(pr) == 1);
      CHECK(r.leaf_couples.at(pr).key() == mini_couple(1).key());
      CHECK(reconstruct(r).key() == q.key());
      ++stacked;
    }
  }
  CHECK(stacked > 0);
}

TEST_CASE("reconstruct matches direct step application on a hand-built result") {
  Couple P;
  for (const auto& q : enumerate_couples(2))
    if (!is_regular(q)) {
      P = q;
      break;
    }
  SkeletonResult r;
  r.prime = P;
  ChainDecomp cd;
  cd.partition = {{1, 2}};
  cd.codes = {{2, 1}};
  cd.pair_couples = {{trivial_couple(), trivial_couple()}};
  int g = P.branching_ids()[0];
  r.chains[g] = cd;
  CHECK(reconstruct(r).key() == apply_step_B(P, g, 2, 1).key());

  SkeletonResult r2;
  r2.prime = P;
  r2.leaf_couples[P.pairing[0]] = mini_couple(1);
  CHECK(reconstruct(r2).key() == apply_step_A(P, P.pairing[0], 1).key());
}

// ============================================================
// legal partitions
// ============================================================

TEST_CASE("legal partitions are the non-crossing matchings, Catalan many") {
  const long long frozen[] = {1, 1, 2, 5, 14, 42, 132, 429, 1430};
  for (int m = 1; m <= 8; ++m) {
    auto ps = legal_partitions(m);
    CHECK((long long)ps.size() == frozen[m]);
    CHECK((long long)ps.size() == catalan(m));
    std::set<Partition> uniq(ps.begin(), ps.end());
    CHECK(uniq.size() == ps.size());
    int dominant = 0;
    for (const auto& p : ps) {
      CHECK(partition_is_legal(p));
      CHECK((int)p.size() == m);
      for (size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i].first < p[i].second);
        if (i) CHECK(p[i - 1].first < p[i].first);
      }
      if (partition_is_dominant(p)) dominant++;
    }
    CHECK(dominant == 1);
  }
  CHECK(partition_is_legal({{1, 2}, {3, 6}, {4, 5}}));
  CHECK(!partition_is_legal({{1, 6}, {2, 4}, {3, 5}}));
  CHECK(partition_is_legal({{1, 4}, {2, 3}, {5, 6}}));
  CHECK(partition_is_legal({{2, 3}, {1, 4}}));  // order of pairs is irrelevant
  CHECK(!partition_is_legal({{1, 3}, {2, 4}}));
  CHECK(!partition_is_legal({{1, 1}, {2, 3}}));
  CHECK(!partition_is_legal({{1, 2}, {2, 3}}));
  CHECK(!partition_is_legal({{1, 2}, {4, 5}}));
  CHECK(partition_is_dominant({{1, 2}, {3, 4}}));
  CHECK(!partition_is_dominant({{1, 4}, {2, 3}}));
}

// ============================================================
// branching-node pairing
// ============================================================

static void check_antisymmetry(const Couple& q, const LatticeSpec& spec, const IVec& k,
                               double bound) {
  auto bp = branch_pairing(q);
  CHECK(2 * bp.pairs.size() == (size_t)q.scale());
  CHECK(bp.n_ch.size() == bp.pairs.size());
  // one chosen node per pair
  std::set<int> chosen;
  for (auto& e : bp.n_ch) chosen.insert(e.node);
  CHECK(chosen.size() == bp.pairs.size());
  for (auto& [a, b] : bp.pairs) CHECK((chosen.count(a) + chosen.count(b)) == 1);

  DecorationRange r(q, k, spec, bound);
  long long seen = 0;
  r.for_each([&](const Decoration& dec) {
    ++seen;
    for (auto& [a, b] : bp.pairs) {
      IVec ca = omega_coeffs(q, dec, a), cb = omega_coeffs(q, dec, b);
      int za = q.node_sign(a), zb = q.node_sign(b);
      for (size_t t = 0; t < ca.size(); ++t) CHECK(za * ca[t] + zb * cb[t] == 0);
    }
  });
  CHECK(seen > 0);
}

TEST_CASE("paired branching nodes carry opposite resonance factors") {
  LatticeSpec spec(1, 1.0, {1.0}, 1.0);
  std::vector<Couple> regs2, regs4;
  for (const auto& q : enumerate_couples(2))
    if (is_regular(q)) regs2.push_back(q);
  for (const auto& q : enumerate_couples(4))
    if (is_regular(q)) regs4.push_back(q);
  for (const auto& q : regs2) {
    check_antisymmetry(q, spec, {0}, 2.0);
    check_antisymmetry(q, spec, {1}, 2.0);
  }
  for (size_t i = 0; i < regs4.size(); i += 7) check_antisymmetry(regs4[i], spec, {0}, 1.0);

  Rng rng(31337);
  for (int i = 0; i < 20; ++i) {
    Couple q = random_regular(rng, 3);
    if (q.scale() <= 6) check_antisymmetry(q, spec, {0}, 1.0);
  }
}

TEST_CASE("choice set tags distinguish layer roots from chain nodes") {
  auto bp0 = branch_pairing(trivial_couple());
  CHECK(bp0.pairs.empty());
  CHECK(bp0.n_ch.empty());

  for (int v = 0; v < 2; ++v) {
    auto bp = branch_pairing(mini_couple(v));
    REQUIRE(bp.n_ch.size() == 1);
    CHECK(bp.n_ch[0].node == 0);  // the + root
    CHECK(bp.n_ch[0].tag == 'r');
    REQUIRE(bp.pairs.size() == 1);
    CHECK(std::minmax(bp.pairs[0].first, bp.pairs[0].second) == std::minmax(0, 4));
  }
  for (int c = 1; c <= 3; ++c) {
    auto bp = branch_pairing(apply_step_B(trivial_couple(), 0, c, 0));
    REQUIRE(bp.n_ch.size() == 1);
    CHECK(bp.n_ch[0].node == 0);  // top of the chain on the plus side
    CHECK(bp.n_ch[0].tag == 'c');
    auto bm = branch_pairing(apply_step_B(trivial_couple(), 1, c, 0));
    REQUIRE(bm.n_ch.size() == 1);
    CHECK(bm.n_ch[0].node == 1);  // minus root, plus side is a lone leaf
    CHECK(bm.n_ch[0].tag == 'c');
  }

  for (const auto& q : enumerate_couples(1)) CHECK_THROWS_AS(branch_pairing(q), std::invalid_argument);
  for (const auto& q : enumerate_couples(2))
    if (!is_regular(q)) CHECK_THROWS_AS(branch_pairing(q), std::invalid_argument);
}

// ============================================================
// dominant couples and equivalence classes
// ============================================================

TEST_CASE("dominant enumeration matches the classification filter") {
  auto d1 = dominant_couples(1);
  CHECK(d1.size() == 14);
  std::set<std::string> filt1;
  for (const auto& q : enumerate_couples(2))
    if (is_regular(q) && classify_dominant(q).dominant) filt1.insert(q.key());
  CHECK(key_set(d1) == filt1);

  auto d2 = dominant_couples(2);
  CHECK(d2.size() == 552);
  std::set<std::string> filt2;
  for (const auto& q : enumerate_couples(4))
    if (is_regular(q) && classify_dominant(q).dominant) filt2.insert(q.key());
  CHECK(key_set(d2) == filt2);

  CHECK(dominant_couples(0).size() == 1);
  CHECK(dominant_couples(3).size() == 28896);
}

TEST_CASE("half-scale-1 classes carry the expected keys and sizes") {
  auto res = classify_dominant(trivial_couple());
  CHECK(res.dominant);
  CHECK(res.class_id == "*");
  REQUIRE(res.encoded.has_value());
  CHECK(res.encoded->size() == 1);

  std::map<std::string, int> sizes;
  for (const auto& q : dominant_couples(1)) sizes[classify_dominant(q).class_id]++;
  REQUIRE(sizes.size() == 4);
  CHECK(sizes["(0;*,*,*)"] == 2);
  CHECK(sizes["(2;[(0,1;*,*)];*)"] == 4);
  CHECK(sizes["(2;[(0,2;*,*)];*)"] == 4);
  CHECK(sizes["(2;[(0,3;*,*)];*)"] == 4);
}

TEST_CASE("half-scale-2 classes: grammar, invariants and multiplicities") {
  std::map<std::string, std::vector<const Couple*>> groups;
  std::map<std::string, int> fibers;
  std::set<std::string> enc_keys;
  const auto& d2 = dominant_couples(2);
  for (const auto& q : d2) {
    auto res = classify_dominant(q);
    REQUIRE(res.dominant);
    REQUIRE(res.encoded.has_value());
    CHECK(res.encoded->scale() == 2);
    CHECK(tree_class_id(*res.encoded) == res.class_id);
    // net sign carries over to the encoded tree
    auto z = zeta_star(q);
    CHECK(z.imag() == doctest::Approx(0.0));
    CHECK((int)std::lround(z.real()) == tree_zeta_star(*res.encoded));
    groups[res.class_id].push_back(&q);
    fibers[res.encoded->key()]++;
    enc_keys.insert(res.encoded->key());
  }
  CHECK(groups.size() == 45);
  int type1 = 0;
  long long total = 0;
  for (auto& [cls, members] : groups) {
    if (cls.rfind("(0;", 0) == 0) type1++;
    // members of one class share the net sign
    double z0 = zeta_star(*members[0]).real();
    for (auto* q : members) CHECK(zeta_star(*q).real() == doctest::Approx(z0));
    auto enc = *classify_dominant(*members[0]).encoded;
    CHECK(enc_multiplicity(enc, 0) == (long long)members.size());
    total += members.size();
  }
  CHECK(type1 == 12);
  CHECK(total == 552);

  // per-tree fibers and surjectivity of the couple -> tree map
  auto trees = enumerate_encoded_trees(2);
  CHECK(trees.size() == 48);
  std::set<std::string> all_tree_keys, all_tree_classes, couple_classes;
  for (const auto& t : trees) {
    all_tree_keys.insert(t.key());
    all_tree_classes.insert(tree_class_id(t));
    REQUIRE(fibers.count(t.key()) == 1);
    CHECK((long long)fibers[t.key()] == enc_fiber(t, 0));
  }
  CHECK(enc_keys == all_tree_keys);
  for (auto& [cls, members] : groups) couple_classes.insert(cls);
  CHECK(all_tree_classes == couple_classes);
}

TEST_CASE("encoded tree enumeration and decoding round trip") {
  CHECK(enumerate_encoded_trees(0).size() == 1);
  CHECK(enumerate_encoded_trees(1).size() == 4);
  CHECK(enumerate_encoded_trees(2).size() == 48);
  CHECK(enumerate_encoded_trees(3).size() == 768);
  CHECK(decode_tree(enumerate_encoded_trees(0)[0]).key() == trivial_couple().key());
  CHECK(tree_class_id(enumerate_encoded_trees(0)[0]) == "*");
  CHECK(tree_zeta_star(enumerate_encoded_trees(0)[0]) == 1);

  for (int n = 1; n <= 2; ++n) {
    std::set<std::string> keys;
    for (const auto& t : enumerate_encoded_trees(n)) {
      CHECK(t.scale() == n);
      keys.insert(t.key());
      Couple q = decode_tree(t);
      auto res = classify_dominant(q);
      REQUIRE(res.dominant);
      CHECK(res.encoded->key() == t.key());
      CHECK(res.class_id == tree_class_id(t));
      auto z = zeta_star(q);
      CHECK(z.imag() == doctest::Approx(0.0));
      CHECK((int)std::lround(z.real()) == tree_zeta_star(t));
    }
    CHECK(keys.size() == enumerate_encoded_trees(n).size());
  }
}

TEST_CASE("swapping equal-code chain tuples preserves the class") {
  EncodedTree t1;
  {
    int r = enc_add(t1, -1, 0, 1);
    int x = enc_add(t1, r, 1, 0);
    enc_saturate(t1, x);
    int n2 = enc_add(t1, r, 0, 1);
    enc_saturate(t1, r);
    enc_saturate(t1, n2);
  }
  EncodedTree t2;
  {
    int r = enc_add(t2, -1, 0, 1);
    int n2 = enc_add(t2, r, 0, 1);
    enc_saturate(t2, r);
    int x = enc_add(t2, n2, 1, 0);
    enc_saturate(t2, x);
    enc_saturate(t2, n2);
  }
  CHECK(t1.key() != t2.key());
  CHECK(tree_class_id(t1) == tree_class_id(t2));
  Couple q1 = decode_tree(t1), q2 = decode_tree(t2);
  CHECK(q1.key() != q2.key());
  auto r1 = classify_dominant(q1), r2 = classify_dominant(q2);
  CHECK(r1.dominant);
  CHECK(r2.dominant);
  CHECK(r1.class_id == r2.class_id);
}

TEST_CASE("half-scale-3 classification suite") {
  const auto& d3 = dominant_couples(3);
  REQUIRE(d3.size() == 28896);
  std::map<std::string, long long> groups;
  std::map<std::string, long long> fibers;
  std::map<std::string, const Couple*> repr;
  for (const auto& q : d3) {
    auto res = classify_dominant(q);
    REQUIRE(res.dominant);
    CHECK(res.encoded->scale() == 3);
    groups[res.class_id]++;
    fibers[res.encoded->key()]++;
    if (!repr.count(res.class_id)) repr[res.class_id] = &q;
  }
  auto trees = enumerate_encoded_trees(3);
  std::set<std::string> tree_classes;
  long long fiber_total = 0;
  for (const auto& t : trees) {
    tree_classes.insert(tree_class_id(t));
    REQUIRE(fibers.count(t.key()) == 1);
    CHECK(fibers[t.key()] == enc_fiber(t, 0));
    fiber_total += enc_fiber(t, 0);
  }
  CHECK(fibers.size() == trees.size());
  CHECK(fiber_total == 28896);

  std::set<std::string> couple_classes;
  long long mult_total = 0;
  for (auto& [cls, count] : groups) {
    couple_classes.insert(cls);
    auto enc = *classify_dominant(*repr[cls]).encoded;
    CHECK(enc_multiplicity(enc, 0) == count);
    mult_total += count;
  }
  CHECK(mult_total == 28896);
  CHECK(tree_classes == couple_classes);

  // decode round trip across the full tree enumeration
  for (const auto& t : trees) {
    Couple q = decode_tree(t);
    auto res = classify_dominant(q);
    REQUIRE(res.dominant);
    CHECK(res.encoded->key() == t.key());
    CHECK(res.class_id == tree_class_id(t));
  }
}

TEST_CASE("non-dominant regular couples are detected") {
  // a type-2 couple whose partition is legal but nested is not dominant
  // chain with partition {{1,4},{2,3}}: build by inserting one chain into another
  Couple q = apply_step_B(trivial_couple(), 0, 1, 0);
  // replace the top node by a mini tree: the new pair spans the old one
  Couple q2 = apply_step_B(q, 0, 1, 0);
  // q2 has a scale-4 plus tree; check which partition its skeleton reports
  auto res2 = classify_dominant(q2);
  CHECK(res2.dominant);  // stacking at the root nests the old pair below: {{1,2},{3,4}}

  bool found_nested = false;
  for (const auto& q4 : enumerate_couples(4)) {
    if (!is_regular(q4)) continue;
    if (!classify_dominant(q4).dominant) {
      found_nested = true;
      break;
    }
  }
  CHECK(found_nested);
}

// ============================================================
// special subsets and enhanced classes
// ============================================================

TEST_CASE("special subsets enumerate the chain-chosen nodes") {
  for (int n = 1; n <= 2; ++n) {
    for (const auto& q : dominant_couples(n)) {
      auto bp = branch_pairing(q);
      std::set<int> cnodes;
      for (auto& e : bp.n_ch)
        if (e.tag == 'c') cnodes.insert(e.node);
      auto zs = special_Z_sets(q);
      CHECK(zs.size() == (size_t)1 << cnodes.size());
      CHECK(zs[0].empty());
      std::set<std::vector<int>> uniq(zs.begin(), zs.end());
      CHECK(uniq.size() == zs.size());
      std::string plain = classify_dominant(q).class_id;
      CHECK(enhanced_class_id(q, {}) == plain);
      for (const auto& z : zs) {
        for (int v : z) CHECK(cnodes.count(v) == 1);
        std::string id = enhanced_class_id(q, z);
        if (z.empty())
          CHECK(id == plain);
        else
          CHECK(id != plain);
      }
      // layer roots are never allowed in Z
      for (auto& e : bp.n_ch)
        if (e.tag == 'r') CHECK_THROWS_AS(enhanced_class_id(q, {e.node}), std::invalid_argument);
    }
  }
}

TEST_CASE("enhanced classes are permutation invariant across equal tuples") {
  // double chain with equal codes: marking either chosen node gives one class
  Couple q = apply_step_B(apply_step_B(trivial_couple(), 0, 1, 0), 0, 1, 0);
  auto res = classify_dominant(q);
  REQUIRE(res.dominant);
  auto zs = special_Z_sets(q);
  REQUIRE(zs.size() == 4);
  std::vector<int> za = zs[1], zb = zs[2];
  REQUIRE(za.size() == 1);
  REQUIRE(zb.size() == 1);
  CHECK(enhanced_class_id(q, za) == enhanced_class_id(q, zb));
  CHECK(enhanced_class_id(q, za) != res.class_id);
  CHECK(enhanced_class_id(q, zs[3]) != enhanced_class_id(q, za));

  CHECK_THROWS_AS(special_Z_sets(handmade_chain_couple(2)), std::invalid_argument);
}

// ============================================================
// irregular chains
// ============================================================

TEST_CASE("irregular chain detection matches the link oracle") {
  long long with_chain = 0;
  for (int n = 1; n <= 3; ++n) {
    for (const auto& q : enumerate_couples(n)) {
      auto got = irregular_chains(q);
      std::vector<std::vector<int>> ns;
      for (auto& h : got) ns.push_back(h.n);
      std::sort(ns.begin(), ns.end());
      CHECK(ns == chain_paths_oracle(q));
      with_chain += !got.empty();
      for (auto& h : got) {
        REQUIRE(h.length() >= 1);
        REQUIRE(h.n.size() == h.p.size());
        REQUIRE(h.m.size() + 1 == h.n.size());
        for (int j = 0; j < h.length(); ++j) {
          CHECK(q.parent(h.n[j + 1]) == h.n[j]);
          CHECK(q.parent(h.m[j]) == h.n[j]);
          CHECK(q.is_leaf(h.m[j]));
          CHECK(q.node_sign(h.m[j]) == -q.node_sign(h.n[j + 1]));
          CHECK(q.pair_of(h.m[j]) == h.p[j + 1]);
          CHECK(q.parent(h.p[j + 1]) == h.n[j + 1]);
        }
        // p_j has the sign of n_j, p_0 is the remaining child of n_0
        for (size_t j = 0; j < h.p.size(); ++j) {
          CHECK(q.parent(h.p[j]) == h.n[j]);
          CHECK(q.node_sign(h.p[j]) == q.node_sign(h.n[j]));
        }
        CHECK(q.parent(h.e) == h.n.back());
        CHECK(q.parent(h.f) == h.n.back());
        CHECK(q.node_sign(h.e) == +1);
        CHECK(q.node_sign(h.f) == -1);
      }
    }
  }
  CHECK(with_chain > 0);

  Rng rng(99);
  for (int i = 0; i < 400; ++i) {
    Couple q = random_couple(rng, 4);
    std::vector<std::vector<int>> ns;
    for (auto& h : irregular_chains(q)) ns.push_back(h.n);
    std::sort(ns.begin(), ns.end());
    CHECK(ns == chain_paths_oracle(q));
  }

  for (int v = 0; v < 2; ++v) CHECK(irregular_chains(mini_couple(v)).empty());
  for (int c = 1; c <= 3; ++c)
    for (int v = 0; v < 2; ++v) {
      auto hs = irregular_chains(apply_step_B(trivial_couple(), 0, c, v));
      REQUIRE(hs.size() == 1);
      CHECK(hs[0].length() == 1);
      CHECK(hs[0].n == std::vector<int>{0, 1 + mini_tree_pattern(c, v).inner_slot});
    }
}

TEST_CASE("a regular double chain splits into separate short chains") {
  Couple q = apply_step_B(apply_step_B(trivial_couple(), 0, 2, 0), 0, 3, 1);
  auto hs = irregular_chains(q);
  REQUIRE(hs.size() == 2);
  CHECK(hs[0].length() == 1);
  CHECK(hs[1].length() == 1);
}

TEST_CASE("handmade chains of prescribed length are found whole") {
  for (int len = 1; len <= 4; ++len) {
    Couple q = handmade_chain_couple(len);
    CHECK(q.scale() == len + 1);
    auto hs = irregular_chains(q);
    REQUIRE(hs.size() == 1);
    CHECK(hs[0].length() == len);
    CHECK(hs[0].n[0] == 0);
  }
}

TEST_CASE("congruent variants rechoose the interior signs") {
  std::vector<Couple> pool;
  for (int c = 1; c <= 3; ++c)
    for (int v = 0; v < 2; ++v) pool.push_back(apply_step_B(trivial_couple(), 0, c, v));
  for (int len = 2; len <= 3; ++len) pool.push_back(handmade_chain_couple(len));

  for (const auto& q : pool) {
    auto hs = irregular_chains(q);
    REQUIRE(hs.size() == 1);
    const auto& h = hs[0];
    auto vars = congruent_variants(q, h);
    CHECK(vars.size() == (size_t)1 << h.length());
    std::set<std::string> keys;
    bool has_original = false;
    int sk_scale = skeleton(q).prime.scale();
    for (const auto& v : vars) {
      v.validate();
      keys.insert(v.key());
      if (v.key() == q.key()) has_original = true;
      CHECK(v.scale() == q.scale());
      CHECK(skeleton(v).prime.scale() == sk_scale);
      // the variant carries an irregular chain of the same length at the top
      auto vh = irregular_chains(v);
      REQUIRE(vh.size() >= 1);
      bool same_len = false;
      for (auto& hh : vh) same_len |= hh.length() == h.length() && hh.n[0] == h.n[0];
      CHECK(same_len);
      // congruence keeps zeta_{n_0} and the outer slots of the p_j, j < q
      auto& hv = vh[0];
      CHECK(v.node_sign(hv.n[0]) == q.node_sign(h.n[0]));
    }
    CHECK(keys.size() == vars.size());
    CHECK(has_original);
  }
}

TEST_CASE("variants of a chain in a prime couple keep the skeleton scale") {
  int tested = 0;
  for (const auto& q : enumerate_couples(3)) {
    if (is_regular(q)) continue;
    auto hs = irregular_chains(q);
    if (hs.empty()) continue;
    auto vars = congruent_variants(q, hs[0]);
    int sk = skeleton(q).prime.scale();
    for (const auto& v : vars) {
      CHECK(v.scale() == q.scale());
      CHECK(skeleton(v).prime.scale() == sk);
    }
    ++tested;
    if (tested >= 60) break;
  }
  CHECK(tested > 0);
}

TEST_CASE("chain decorations satisfy the gap identities exactly") {
  LatticeSpec spec(2, 2.0, {1.0, 1.4142135623730951}, 1.0);
  std::vector<Couple> pool;
  for (int c = 1; c <= 3; ++c)
    for (int v = 0; v < 2; ++v) pool.push_back(apply_step_B(trivial_couple(), 0, c, v));
  pool.push_back(handmade_chain_couple(2));
  pool.push_back(handmade_chain_couple(3));

  for (const auto& q : pool) {
    auto hs = irregular_chains(q);
    REQUIRE(hs.size() == 1);
    const auto& h = hs[0];
    for (const IVec& k : {IVec{0, 0}, IVec{1, -1}}) {
      DecorationRange r(q, k, spec, 0.5);
      long long seen = 0, zerogap = 0;
      r.for_each([&](const Decoration& dec) {
        ++seen;
        auto rep = verify_congdec(q, h, dec, spec);
        CHECK(rep.ok);
        CHECK(rep.h_constant);
        CHECK(rep.omega_ok);
        CHECK(rep.eps_ok);
        bool h0 = true;
        for (i64 x : rep.h) h0 &= x == 0;
        if (h0) {
          ++zerogap;
          // zero gap with nonzero couplings collapses the chain values
          bool all_eps = true;
          for (int j = 0; j <= h.length(); ++j) {
            IVec k1 = dec.m[q.child(h.n[j], 0)], k2 = dec.m[q.child(h.n[j], 1)],
                 k3 = dec.m[q.child(h.n[j], 2)];
            all_eps &= epsilon_factor(k1, k2, k3) != 0;
          }
          if (all_eps) {
            IVec v0 = dec.m[q.node_sign(h.n[0]) > 0 ? h.n[0] : h.p[0]];
            for (int j = 1; j <= h.length(); ++j) {
              IVec vj = dec.m[q.node_sign(h.n[j]) > 0 ? h.n[j] : h.p[j]];
              CHECK(iv_eq(v0, vj));
            }
          }
        }
      });
      CHECK(seen > 0);
      if (k == IVec{0, 0}) CHECK(zerogap > 0);
    }
  }

  // variants preserve the identities as well
  Couple q = handmade_chain_couple(2);
  auto h = irregular_chains(q)[0];
  for (const auto& v : congruent_variants(q, h)) {
    auto vh = irregular_chains(v);
    REQUIRE(!vh.empty());
    DecorationRange r(v, {0, 0}, spec, 0.5);
    r.for_each([&](const Decoration& dec) { CHECK(verify_congdec(v, vh[0], dec, spec).ok); });
  }
}

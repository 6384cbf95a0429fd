#include "wk/coefficients.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace wk {
namespace {

// ---------------------------------------------------------------------------
// Bivariate exact algebra for the chain integrals. A Poly2 is a polynomial in
// (x, T); rows[i] holds the T-polynomial multiplying x^i. x plays the role of
// the innermost simplex time, T the ambient one.
// ---------------------------------------------------------------------------

struct Poly2 {
  std::vector<RationalPoly> rows;

  void trim() {
    while (!rows.empty() && rows.back().is_zero()) rows.pop_back();
  }
};

Poly2 p2_one() {
  Poly2 p;
  p.rows.push_back(RationalPoly::constant(1));
  return p;
}

Poly2 embed_T(const RationalPoly& f) {
  Poly2 p;
  if (!f.is_zero()) p.rows.push_back(f);
  return p;
}

Poly2 embed_x(const RationalPoly& f) {
  Poly2 p;
  p.rows.reserve(f.c.size());
  for (const Rational& a : f.c) p.rows.push_back(RationalPoly::constant(a));
  p.trim();
  return p;
}

Poly2 p2_add(Poly2 a, const Poly2& b) {
  if (b.rows.size() > a.rows.size()) a.rows.resize(b.rows.size());
  for (size_t i = 0; i < b.rows.size(); ++i) a.rows[i] += b.rows[i];
  a.trim();
  return a;
}

Poly2 p2_sub(Poly2 a, const Poly2& b) {
  if (b.rows.size() > a.rows.size()) a.rows.resize(b.rows.size());
  for (size_t i = 0; i < b.rows.size(); ++i) a.rows[i] -= b.rows[i];
  a.trim();
  return a;
}

Poly2 p2_mul(const Poly2& a, const Poly2& b) {
  Poly2 out;
  if (a.rows.empty() || b.rows.empty()) return out;
  out.rows.resize(a.rows.size() + b.rows.size() - 1);
  for (size_t i = 0; i < a.rows.size(); ++i)
    for (size_t j = 0; j < b.rows.size(); ++j) out.rows[i + j] += a.rows[i] * b.rows[j];
  out.trim();
  return out;
}

// Antiderivative in x vanishing at x = 0, i.e. the integral from 0 to x.
Poly2 antideriv_x(const Poly2& f) {
  Poly2 out;
  if (f.rows.empty()) return out;
  out.rows.resize(f.rows.size() + 1);
  for (size_t i = 0; i < f.rows.size(); ++i) {
    RationalPoly r = f.rows[i];
    r *= Rational(1, int(i) + 1);
    out.rows[i + 1] = std::move(r);
  }
  out.trim();
  return out;
}

// Substitute x = T.
RationalPoly collapse_at_T(const Poly2& f) {
  RationalPoly acc;
  for (size_t i = 0; i < f.rows.size(); ++i)
    acc += f.rows[i] * RationalPoly::monomial(Rational(1), (int)i);
  return acc;
}

Poly2 int_from_x_to_T(const Poly2& f) {
  Poly2 F = antideriv_x(f);
  return p2_sub(embed_T(collapse_at_T(F)), F);
}

RationalPoly int_zero_to_T(const Poly2& f) { return collapse_at_T(antideriv_x(f)); }

// Marginal density of the innermost time of one ordered chain: fs holds the
// per-pair diagonal factors from the top of the chain down, and the result
// V(x, T) satisfies int_0^T V(x, T) w(x) dx = the nested simplex integral of
// prod fs with tail weight w at the innermost time.
Poly2 chain_density(const std::vector<RationalPoly>& fs) {
  Poly2 w = p2_one();
  for (size_t k = 0; k + 1 < fs.size(); ++k) w = int_from_x_to_T(p2_mul(embed_x(fs[k]), w));
  return p2_mul(embed_x(fs.back()), w);
}

RationalPoly jb_rec(const Couple& q, std::map<std::string, RationalPoly>& cache) {
  if (q.scale() == 0) return RationalPoly::constant(1);
  std::string key = q.key();
  auto hit = cache.find(key);
  if (hit != cache.end()) return hit->second;

  DominantDecomp d = decompose_dominant(q);
  RationalPoly out;
  if (d.type == 1) {
    RationalPoly prod = RationalPoly::constant(2);
    for (const Couple& s : d.sub) prod = prod * jb_rec(s, cache);
    out = prod.integral();
  } else if (d.type == 2) {
    auto factors = [&](const std::vector<std::pair<Couple, Couple>>& ps) {
      std::vector<RationalPoly> fs;
      fs.reserve(ps.size());
      for (const auto& pr : ps) fs.push_back(jb_rec(pr.first, cache) * jb_rec(pr.second, cache));
      return fs;
    };
    std::vector<RationalPoly> fp = factors(d.plus_pairs);
    std::vector<RationalPoly> fm = factors(d.minus_pairs);
    RationalPoly tail = jb_rec(d.lp, cache);
    if (fp.empty() && fm.empty()) {
      out = tail;
    } else if (fp.empty() || fm.empty()) {
      // One chain only: its innermost time bounds the tail argument.
      Poly2 v = chain_density(fp.empty() ? fm : fp);
      out = int_zero_to_T(p2_mul(v, embed_x(tail)));
    } else {
      // Two chains coupled through tail(min(x, y)): split the inner integral
      // at y = x.
      Poly2 vp = chain_density(fp);
      Poly2 vm = chain_density(fm);
      Poly2 below = antideriv_x(p2_mul(vm, embed_x(tail)));
      Poly2 above = p2_mul(embed_x(tail), int_from_x_to_T(vm));
      out = int_zero_to_T(p2_mul(vp, p2_add(below, above)));
    }
  } else {
    throw std::logic_error("unexpected decomposition type for a positive-scale couple");
  }
  cache.emplace(std::move(key), out);
  return out;
}

std::vector<IdentityReport> empty_Z_reports(int half_scale) {
  if (half_scale < 1) throw std::invalid_argument("half scale must be at least 1");
  std::map<std::string, RationalPoly> cache;
  std::map<std::string, RationalPoly> lhs, rhs;
  for (const Couple& q : dominant_couples(half_scale))
    lhs[classify_dominant(q).class_id] += jb_rec(q, cache);
  boost::multiprecision::cpp_int pow4 = boost::multiprecision::cpp_int(1) << (2 * half_scale);
  for (const EncodedTree& t : enumerate_encoded_trees(half_scale)) {
    RationalPoly g = g_tree(t);
    g *= Rational(pow4);
    rhs[tree_class_id(t)] += g;
  }
  if (lhs.size() != rhs.size())
    throw std::logic_error("couple classes and encoded-tree classes disagree");
  std::vector<IdentityReport> out;
  out.reserve(lhs.size());
  for (auto& [cls, left] : lhs) {
    auto it = rhs.find(cls);
    if (it == rhs.end())
      throw std::logic_error("couple classes and encoded-tree classes disagree");
    out.push_back({cls, left, it->second, left == it->second});
  }
  return out;
}

}  // namespace

RationalPoly g_tree(const EncodedTree& t) {
  Rational hook(1);
  for (int v = 0; v < t.size(); ++v) {
    if (t.is_leaf(v)) continue;
    int cnt = 0;
    for (int u = 0; u < t.size(); ++u) {
      if (t.is_leaf(u)) continue;
      int w = u;
      while (w >= 0 && w != v) w = t.nodes[w].parent;
      cnt += (w == v);
    }
    hook *= cnt;
  }
  return RationalPoly::monomial(1 / hook, t.scale());
}

RationalPoly jb_dominant(const Couple& q) {
  std::map<std::string, RationalPoly> cache;
  return jb_rec(q, cache);
}

std::vector<IdentityReport> check_empty_Z(int half_scale) { return empty_Z_reports(half_scale); }

IdentityReport check_empty_Z(const std::string& class_id, int half_scale) {
  for (IdentityReport& r : empty_Z_reports(half_scale))
    if (r.class_id == class_id) return r;
  throw std::invalid_argument("unknown class id at this half scale: " + class_id);
}

std::vector<SignedSumReport> check_nonempty_Z(int half_scale) {
  if (half_scale < 1) throw std::invalid_argument("half scale must be at least 1");
  std::map<std::string, RationalPoly> cache;
  struct Acc {
    int z_size = -1;
    int members = 0;
    long long zeta_sum = 0;
    RationalPoly weighted;
  };
  std::map<std::string, Acc> acc;
  for (const Couple& q : dominant_couples(half_scale)) {
    RationalPoly jb = jb_rec(q, cache);
    for (const std::vector<int>& z : special_Z_sets(q)) {
      Acc& a = acc[enhanced_class_id(q, z)];
      if (a.z_size < 0)
        a.z_size = (int)z.size();
      else if (a.z_size != (int)z.size())
        throw std::logic_error("inconsistent Z size within an enhanced class");
      int zeta = 1;
      for (int g : z) zeta *= q.node_sign(g);
      a.members += 1;
      a.zeta_sum += zeta;
      RationalPoly w = jb;
      w *= Rational(zeta);
      a.weighted += w;
    }
  }
  std::vector<SignedSumReport> out;
  out.reserve(acc.size());
  for (auto& [cls, a] : acc) {
    SignedSumReport r;
    r.class_id = cls;
    r.z_size = a.z_size;
    r.members = a.members;
    r.zeta_sum = a.zeta_sum;
    r.weighted = a.weighted;
    r.pass = a.z_size > 0 ? a.weighted.is_zero() : (a.zeta_sum == a.members);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Numeric coefficients. Each branching node gets a Chebyshev interpolant of
// its integrand on [0, tmax], refined until the coefficient tail clears the
// per-node tolerance, then integrated exactly on the series. All candidate
// point evaluations draw from one shared budget.
// ---------------------------------------------------------------------------

namespace {

using Cx = std::complex<double>;

struct Budget {
  long long used = 0;
  static constexpr long long kCap = 1000000;
  void charge(long long n) {
    used += n;
    if (used > kCap)
      throw std::runtime_error("coefficient quadrature exceeded its budget of 1e6 evaluations");
  }
};

struct Cheb {
  double lo = 0.0, hi = 1.0;
  std::vector<Cx> c;  // c[0] stored pre-halved

  Cx eval(double x) const {
    double half = 0.5 * (hi - lo);
    double u = half == 0.0 ? 0.0 : (x - lo - half) / half;
    Cx b1 = 0.0, b2 = 0.0;
    for (int j = (int)c.size() - 1; j >= 1; --j) {
      Cx b0 = 2.0 * u * b1 - b2 + c[j];
      b2 = b1;
      b1 = b0;
    }
    return c[0] + u * b1 - b2;
  }
};

template <class F>
Cheb cheb_fit(const F& f, double lo, double hi, int n, Budget& budget) {
  budget.charge(n);
  Cheb out;
  out.lo = lo;
  out.hi = hi;
  out.c.assign(n, Cx(0.0));
  double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  for (int k = 0; k < n; ++k) {
    double theta = M_PI * (k + 0.5) / n;
    double ct = std::cos(theta);
    Cx v = f(mid + half * ct);
    // cos(j theta) by the three-term recurrence
    double c0 = 1.0, c1 = ct;
    out.c[0] += v;
    if (n > 1) out.c[1] += v * c1;
    for (int j = 2; j < n; ++j) {
      double c2 = 2.0 * ct * c1 - c0;
      out.c[j] += v * c2;
      c0 = c1;
      c1 = c2;
    }
  }
  for (int j = 0; j < n; ++j) out.c[j] *= 2.0 / n;
  out.c[0] *= 0.5;
  return out;
}

// Antiderivative series vanishing at lo.
Cheb cheb_antideriv(const Cheb& a) {
  int n = (int)a.c.size();
  double half = 0.5 * (a.hi - a.lo);
  Cheb out;
  out.lo = a.lo;
  out.hi = a.hi;
  out.c.assign(n + 1, Cx(0.0));
  auto d = [&](int j) -> Cx {
    if (j >= n) return Cx(0.0);
    return j == 0 ? 2.0 * a.c[0] : a.c[j];
  };
  for (int j = 1; j <= n; ++j) out.c[j] = half * (d(j - 1) - d(j + 1)) / (2.0 * j);
  Cx at_lo = 0.0;
  for (int j = 1; j <= n; ++j) at_lo += (j % 2 == 0 ? 1.0 : -1.0) * out.c[j];
  out.c[0] = -at_lo;
  return out;
}

struct TreeFitter {
  const Couple& q;
  const AlphaVector& alpha;
  double tmax;
  double node_tol;
  Budget& budget;
  std::map<int, Cheb> series;  // branching id -> antiderivative, equals A on [0, tmax]

  const Cheb& build(int g) {
    auto hit = series.find(g);
    if (hit != series.end()) return hit->second;
    std::array<const Cheb*, 3> kid{nullptr, nullptr, nullptr};
    for (int j = 0; j < 3; ++j) {
      int cg = q.child(g, j);
      if (!q.is_leaf(cg)) kid[j] = &build(cg);
    }
    double w = M_PI * q.node_sign(g) * alpha[g];
    auto f = [&](double tau) {
      Cx val = std::exp(Cx(0.0, w * tau));
      for (const Cheb* k : kid)
        if (k) val *= k->eval(tau);
      return val;
    };
    for (int n = 32; n <= 16384; n *= 2) {
      Cheb fit = cheb_fit(f, 0.0, tmax, n, budget);
      double tail = 0.0;
      for (int j = n - std::max(2, n / 16); j < n; ++j) tail = std::max(tail, std::abs(fit.c[j]));
      if (tail < 0.1 * node_tol) return series.emplace(g, cheb_antideriv(fit)).first->second;
    }
    throw std::runtime_error("coefficient tolerance not met within the evaluation budget");
  }
};

void validate_inputs(const Couple& q, double time, const AlphaVector& alpha, double tol,
                     const char* what) {
  if (q.scale() > 6)
    throw std::invalid_argument("numeric coefficients support couple scale at most 6");
  if ((int)alpha.size() != q.total_nodes())
    throw std::invalid_argument("alpha must provide one entry per node of the couple");
  for (double a : alpha)
    if (!std::isfinite(a)) throw std::invalid_argument("alpha entries must be finite");
  if (!(time >= 0.0 && time <= 1.0))
    throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
}

Cx a_impl(const Couple& q, int side, double time, const AlphaVector& alpha, double tree_tol,
          Budget& budget) {
  int root = side == 0 ? 0 : q.plus_size();
  int branching = side == 0 ? q.plus_t.scale() : q.minus_t.scale();
  if (branching == 0) return Cx(1.0);
  if (time == 0.0) return Cx(0.0);
  TreeFitter fitter{q, alpha, time, tree_tol / (2.0 * branching), budget, {}};
  return fitter.build(root).eval(time);
}

}  // namespace

std::complex<double> a_coeff_numeric(const Couple& q, int side, double time,
                                     const AlphaVector& alpha, double tol) {
  if (side != 0 && side != 1) throw std::invalid_argument("side must be 0 (plus) or 1 (minus)");
  validate_inputs(q, time, alpha, tol, "time");
  Budget budget;
  return a_impl(q, side, time, alpha, tol, budget);
}

std::complex<double> b_coeff_numeric(const Couple& q, double t, double s,
                                     const AlphaVector& alpha, double tol) {
  validate_inputs(q, t, alpha, tol, "t");
  validate_inputs(q, s, alpha, tol, "s");
  Budget budget;
  Cx plus = a_impl(q, 0, t, alpha, 0.5 * tol, budget);
  Cx minus = a_impl(q, 1, s, alpha, 0.5 * tol, budget);
  return plus * minus;
}

}  // namespace wk

#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wk {

using i64 = long long;

// Integer lattice vector scaled by L: the physical vector is m/L on (1/L)Z^d.
// Exact integer storage keeps pairing equality and epsilon tests exact.
using IVec = std::vector<i64>;

inline IVec iv_zero(int d) { return IVec(d, 0); }

inline IVec iv_add(const IVec& a, const IVec& b) {
  IVec r(a.size());
  for (size_t j = 0; j < a.size(); ++j) r[j] = a[j] + b[j];
  return r;
}

inline IVec iv_sub(const IVec& a, const IVec& b) {
  IVec r(a.size());
  for (size_t j = 0; j < a.size(); ++j) r[j] = a[j] - b[j];
  return r;
}

inline IVec iv_neg(const IVec& a) {
  IVec r(a.size());
  for (size_t j = 0; j < a.size(); ++j) r[j] = -a[j];
  return r;
}

inline bool iv_eq(const IVec& a, const IVec& b) { return a == b; }

// Torus geometry and kinetic parameters shared by all modules.
struct LatticeSpec {
  int d = 2;
  double L = 4.0;
  std::vector<double> beta{1.0, std::sqrt(2.0)};  // aspect ratios
  double delta = 1.0;

  LatticeSpec() = default;
  LatticeSpec(int d_, double L_, std::vector<double> beta_, double delta_)
      : d(d_), L(L_), beta(std::move(beta_)), delta(delta_) {
    validate();
  }

  void validate() const {
    if (d < 1) throw std::invalid_argument("LatticeSpec: d must be >= 1");
    if (L <= 0) throw std::invalid_argument("LatticeSpec: L must be positive");
    if (delta <= 0) throw std::invalid_argument("LatticeSpec: delta must be positive");
    if ((int)beta.size() != d) throw std::invalid_argument("LatticeSpec: beta size != d");
    for (double b : beta)
      if (!(b >= 1.0 && b <= 2.0))
        throw std::invalid_argument("LatticeSpec: beta components must lie in [1,2]");
  }

  // |k|^2_beta for k = m/L.
  double norm2_beta(const IVec& m) const {
    double s = 0;
    for (int j = 0; j < d; ++j) s += beta[j] * (double)m[j] * (double)m[j];
    return s / (L * L);
  }

  // <a,b>_beta for a = ma/L, b = mb/L.
  double inner_beta(const IVec& ma, const IVec& mb) const {
    double s = 0;
    for (int j = 0; j < d; ++j) s += beta[j] * (double)ma[j] * (double)mb[j];
    return s / (L * L);
  }
};

// Rescale a positive beta vector so every component lands in [1,2] (divide by
// the minimum). Throws if the spread makes that impossible.
inline std::vector<double> normalize_beta(std::vector<double> b) {
  double mn = b[0];
  for (double x : b) {
    if (x <= 0) throw std::invalid_argument("beta components must be positive");
    mn = std::min(mn, x);
  }
  for (double& x : b) x /= mn;
  for (double x : b)
    if (x > 2.0) throw std::invalid_argument("beta spread exceeds [1,2] after normalization");
  return b;
}

// Deterministic PRNG used everywhere randomness appears; seeds are logged in
// reports so runs reproduce bit-exactly.
using Rng = std::mt19937_64;

}  // namespace wk

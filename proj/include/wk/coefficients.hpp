#pragma once
#include <boost/multiprecision/cpp_int.hpp>
#include <complex>
#include <string>
#include <vector>

#include "wk/classify.hpp"

namespace wk {

using Rational = boost::multiprecision::cpp_rational;

// Univariate polynomial in t with exact rational coefficients.
struct RationalPoly {
  std::vector<Rational> c;  // c[k] multiplies t^k; no trailing zeros

  static RationalPoly constant(const Rational& v);
  static RationalPoly monomial(const Rational& coeff, int power);

  int degree() const { return (int)c.size() - 1; }  // -1 for the zero poly
  bool is_zero() const { return c.empty(); }
  Rational coeff(int k) const { return k >= 0 && k < (int)c.size() ? c[k] : Rational(0); }
  void trim();

  RationalPoly& operator+=(const RationalPoly& o);
  RationalPoly& operator-=(const RationalPoly& o);
  RationalPoly& operator*=(const Rational& v);

  RationalPoly integral() const;  // antiderivative vanishing at t = 0
  Rational eval_exact(const Rational& t) const;
  double eval(double t) const;
  std::string str() const;  // "2/3 t^2 - t + 1", zero prints "0"
};

RationalPoly operator+(RationalPoly a, const RationalPoly& b);
RationalPoly operator-(RationalPoly a, const RationalPoly& b);
RationalPoly operator*(const RationalPoly& a, const RationalPoly& b);
RationalPoly operator*(const Rational& v, RationalPoly p);
bool operator==(const RationalPoly& a, const RationalPoly& b);
bool operator!=(const RationalPoly& a, const RationalPoly& b);

// Iterated time integral of a tree shape (codes are irrelevant): the monomial
// t^n divided by the product over branching nodes of their subtree scales.
RationalPoly g_tree(const EncodedTree& t);

// Diagonal value JB(t,t) of the alpha-integrated coefficient of a dominant
// couple, exact via the recurrences: type 1 is twice the antiderivative of
// the product of the three sub-couple values; type 2 integrates the per-side
// ordered chains over nested simplices, the two sides coupled only through
// the tail evaluated at the smaller of the two innermost times (resolved by
// case-splitting that double integral symbolically). Throws
// std::invalid_argument unless q is dominant.
RationalPoly jb_dominant(const Couple& q);

// One class-level identity with Z empty: the sum of JB(t,t) over a dominant
// class equals 2^{2n} times the sum of g over the encoded trees of the same
// class, at half-scale n.
struct IdentityReport {
  std::string class_id;
  RationalPoly lhs, rhs;
  bool pass = false;
};
std::vector<IdentityReport> check_empty_Z(int half_scale);
IdentityReport check_empty_Z(const std::string& class_id, int half_scale);

// Signed sums over one class of enhanced dominant couples (q, Z). For Z
// nonempty the JB-weighted signed sum (each member contributing
// prod_{n in Z} zeta_n times its JB polynomial) must vanish; that is the
// cancellation the class structure guarantees. The bare sign sum is reported
// for reference: it vanishes when Z sits inside a single chain pair per
// member, but not when the pairs carrying Z can migrate between the two
// trees. For Z empty the sign sum equals the class size and the weighted sum
// is the empty-Z identity left side.
struct SignedSumReport {
  std::string class_id;
  int z_size = 0;
  int members = 0;
  long long zeta_sum = 0;
  RationalPoly weighted;
  bool pass = false;
};
std::vector<SignedSumReport> check_nonempty_Z(int half_scale);

// One real value per global node id; only branching entries are read.
using AlphaVector = std::vector<double>;

// Numeric A coefficient of one tree of the couple (side 0 plus, 1 minus) at
// the given time in [0, 1]: the nested oscillatory integral with phase
// exp(zeta_n pi i alpha_n t_n) per branching node, built bottom-up from
// adaptively refined Chebyshev interpolants whose antiderivatives are taken
// exactly on the coefficients. Throws std::runtime_error when the requested
// tolerance is not reached within the evaluation budget of 1e6 points.
std::complex<double> a_coeff_numeric(const Couple& q, int side, double time,
                                     const AlphaVector& alpha, double tol);

// B coefficient: product of the plus-tree A at t and the minus-tree A at s.
// Requires couple scale <= 6 and alpha sized to q.total_nodes().
std::complex<double> b_coeff_numeric(const Couple& q, double t, double s,
                                     const AlphaVector& alpha, double tol);

}  // namespace wk

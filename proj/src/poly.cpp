#include "wk/coefficients.hpp"

#include <sstream>

namespace wk {

RationalPoly RationalPoly::constant(const Rational& v) {
  RationalPoly p;
  if (v != 0) p.c.push_back(v);
  return p;
}

RationalPoly RationalPoly::monomial(const Rational& coeff, int power) {
  RationalPoly p;
  if (coeff != 0) {
    p.c.assign(power + 1, Rational(0));
    p.c[power] = coeff;
  }
  return p;
}

void RationalPoly::trim() {
  while (!c.empty() && c.back() == 0) c.pop_back();
}

RationalPoly& RationalPoly::operator+=(const RationalPoly& o) {
  if (o.c.size() > c.size()) c.resize(o.c.size(), Rational(0));
  for (size_t k = 0; k < o.c.size(); ++k) c[k] += o.c[k];
  trim();
  return *this;
}

RationalPoly& RationalPoly::operator-=(const RationalPoly& o) {
  if (o.c.size() > c.size()) c.resize(o.c.size(), Rational(0));
  for (size_t k = 0; k < o.c.size(); ++k) c[k] -= o.c[k];
  trim();
  return *this;
}

RationalPoly& RationalPoly::operator*=(const Rational& v) {
  if (v == 0) {
    c.clear();
    return *this;
  }
  for (auto& x : c) x *= v;
  return *this;
}

RationalPoly RationalPoly::integral() const {
  RationalPoly out;
  if (c.empty()) return out;
  out.c.assign(c.size() + 1, Rational(0));
  for (size_t k = 0; k < c.size(); ++k) out.c[k + 1] = c[k] / Rational(int(k) + 1);
  out.trim();
  return out;
}

Rational RationalPoly::eval_exact(const Rational& t) const {
  Rational acc(0);
  for (size_t k = c.size(); k-- > 0;) acc = acc * t + c[k];
  return acc;
}

double RationalPoly::eval(double t) const {
  double acc = 0.0;
  for (size_t k = c.size(); k-- > 0;) acc = acc * t + c[k].convert_to<double>();
  return acc;
}

std::string RationalPoly::str() const {
  if (c.empty()) return "0";
  std::ostringstream os;
  bool first = true;
  for (int k = (int)c.size() - 1; k >= 0; --k) {
    if (c[k] == 0) continue;
    Rational a = c[k];
    if (first) {
      if (a < 0) {
        os << "-";
        a = -a;
      }
      first = false;
    } else {
      os << (a < 0 ? " - " : " + ");
      if (a < 0) a = -a;
    }
    bool unit = (a == 1);
    if (!unit || k == 0) os << a.str();
    if (k > 0) {
      if (!unit) os << " ";
      os << "t";
      if (k > 1) os << "^" << k;
    }
  }
  return os.str();
}

RationalPoly operator+(RationalPoly a, const RationalPoly& b) {
  a += b;
  return a;
}

RationalPoly operator-(RationalPoly a, const RationalPoly& b) {
  a -= b;
  return a;
}

RationalPoly operator*(const RationalPoly& a, const RationalPoly& b) {
  RationalPoly out;
  if (a.c.empty() || b.c.empty()) return out;
  out.c.assign(a.c.size() + b.c.size() - 1, Rational(0));
  for (size_t i = 0; i < a.c.size(); ++i) {
    if (a.c[i] == 0) continue;
    for (size_t j = 0; j < b.c.size(); ++j) out.c[i + j] += a.c[i] * b.c[j];
  }
  out.trim();
  return out;
}

RationalPoly operator*(const Rational& v, RationalPoly p) {
  p *= v;
  return p;
}

bool operator==(const RationalPoly& a, const RationalPoly& b) { return a.c == b.c; }
bool operator!=(const RationalPoly& a, const RationalPoly& b) { return !(a == b); }

}  // namespace wk

#include "popmech/potentials.hpp"

#include <cmath>

#include "popmech/errors.hpp"

namespace popmech {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

struct Terms {
  double v, dv, d2v;
};

// Per-coordinate term of each separable potential and its derivatives.
Terms term(const Potential& p, std::size_t axis, double x) {
  switch (p.kind) {
    case PotentialKind::Harmonic: {
      double w2 = p.coef * p.coef;
      return {0.5 * w2 * x * x, w2 * x, w2};
    }
    case PotentialKind::Quadratic:
      return {p.coef * x * x, 2.0 * p.coef * x, 2.0 * p.coef};
    case PotentialKind::AnisoQuadratic: {
      double a = p.coefs[axis];
      return {0.5 * a * x * x, a * x, a};
    }
    case PotentialKind::Bohachevsky: {
      if (axis == 0)
        return {10.0 * (x * x - 0.3 * std::cos(3.0 * kPi * x)),
                10.0 * (2.0 * x + 0.9 * kPi * std::sin(3.0 * kPi * x)),
                10.0 * (2.0 + 2.7 * kPi * kPi * std::cos(3.0 * kPi * x))};
      return {10.0 * (2.0 * x * x - 0.4 * std::cos(4.0 * kPi * x)),
              10.0 * (4.0 * x + 1.6 * kPi * std::sin(4.0 * kPi * x)),
              10.0 * (4.0 + 6.4 * kPi * kPi * std::cos(4.0 * kPi * x))};
    }
    case PotentialKind::OakleyOhagan:
      return {5.0 * (std::sin(x) + std::cos(x) + x * x + x),
              5.0 * (std::cos(x) - std::sin(x) + 2.0 * x + 1.0),
              5.0 * (-std::sin(x) - std::cos(x) + 2.0)};
    case PotentialKind::StyblinskiTang:
      return {0.5 * (x * x * x * x - 16.0 * x * x + 5.0 * x),
              2.0 * x * x * x - 16.0 * x + 2.5, 6.0 * x * x - 16.0};
    case PotentialKind::WavyPlateau:
      return {std::cos(kPi * x) + 0.5 * x * x * x * x - 3.0 * x * x + 1.0,
              -kPi * std::sin(kPi * x) + 2.0 * x * x * x - 6.0 * x,
              -kPi * kPi * std::cos(kPi * x) + 6.0 * x * x - 6.0};
  }
  throw ConfigError("potential: unknown kind");
}

}  // namespace

double Potential::value(const double* x, std::size_t dim) const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) s += term(*this, i, x[i]).v;
  return s;
}

void Potential::gradient(const double* x, std::size_t dim, double* out) const {
  for (std::size_t i = 0; i < dim; ++i) out[i] = term(*this, i, x[i]).dv;
}

void Potential::hessian_diag(const double* x, std::size_t dim,
                             double* out) const {
  for (std::size_t i = 0; i < dim; ++i) out[i] = term(*this, i, x[i]).d2v;
}

Array Potential::value_rows(const Array& X) const {
  if (X.rank() != 2) throw ShapeError("potential: expected an (N,d) cloud");
  std::size_t n = X.shape()[0], d = X.shape()[1];
  validate_dim(d);
  Array out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = value(X.data() + i * d, d);
  return out;
}

Array Potential::gradient_rows(const Array& X) const {
  if (X.rank() != 2) throw ShapeError("potential: expected an (N,d) cloud");
  std::size_t n = X.shape()[0], d = X.shape()[1];
  validate_dim(d);
  Array out(X.shape());
  for (std::size_t i = 0; i < n; ++i)
    gradient(X.data() + i * d, d, out.data() + i * d);
  return out;
}

void Potential::validate_dim(std::size_t dim) const {
  if (kind == PotentialKind::Bohachevsky && dim != 2)
    throw ConfigError("potential bohachevsky: defined for dim 2, got dim " +
                      std::to_string(dim));
  if (kind == PotentialKind::AnisoQuadratic && coefs.size() != dim)
    throw ConfigError("potential aniso_quadratic: got " +
                      std::to_string(coefs.size()) + " coefficients for dim " +
                      std::to_string(dim));
}

std::string Potential::name() const {
  switch (kind) {
    case PotentialKind::Harmonic: return "harmonic";
    case PotentialKind::Quadratic: return "quadratic";
    case PotentialKind::AnisoQuadratic: return "aniso_quadratic";
    case PotentialKind::Bohachevsky: return "bohachevsky";
    case PotentialKind::OakleyOhagan: return "oakley_ohagan";
    case PotentialKind::StyblinskiTang: return "styblinski_tang";
    case PotentialKind::WavyPlateau: return "wavy_plateau";
  }
  return "?";
}

Potential Potential::parse(const std::string& name, double coef,
                           std::vector<double> coefs) {
  Potential p;
  p.coef = coef;
  p.coefs = std::move(coefs);
  if (name == "harmonic") p.kind = PotentialKind::Harmonic;
  else if (name == "quadratic") p.kind = PotentialKind::Quadratic;
  else if (name == "aniso_quadratic") p.kind = PotentialKind::AnisoQuadratic;
  else if (name == "bohachevsky") p.kind = PotentialKind::Bohachevsky;
  else if (name == "oakley_ohagan") p.kind = PotentialKind::OakleyOhagan;
  else if (name == "styblinski_tang") p.kind = PotentialKind::StyblinskiTang;
  else if (name == "wavy_plateau") p.kind = PotentialKind::WavyPlateau;
  else
    throw ConfigError("potential: unknown name '" + name + "'");
  return p;
}

}  // namespace popmech

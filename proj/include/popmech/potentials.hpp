#pragma once

#include <string>
#include <vector>

#include "popmech/array.hpp"

namespace popmech {

// Closed-form scalar potentials V(x). All of them are separable,
// V(x) = sum_i v_i(x_i), so gradients and Hessians reduce to per-coordinate
// derivatives; the Hessian is diagonal.
enum class PotentialKind {
  Harmonic,        // 0.5 w^2 |x|^2
  Quadratic,       // c |x|^2
  AnisoQuadratic,  // 0.5 sum_i a_i x_i^2
  Bohachevsky,     // 2-D only
  OakleyOhagan,
  StyblinskiTang,
  WavyPlateau,
};

struct Potential {
  PotentialKind kind = PotentialKind::Quadratic;
  double coef = 1.0;          // w for Harmonic, c for Quadratic
  std::vector<double> coefs;  // per-axis a_i for AnisoQuadratic

  double value(const double* x, std::size_t dim) const;
  void gradient(const double* x, std::size_t dim, double* out) const;
  // Diagonal of the Hessian (the potentials are separable).
  void hessian_diag(const double* x, std::size_t dim, double* out) const;

  // Row-wise value over an (N, d) cloud.
  Array value_rows(const Array& X) const;
  // Row-wise gradient over an (N, d) cloud, same shape as X.
  Array gradient_rows(const Array& X) const;

  // Throws ConfigError if the potential cannot live in `dim` dimensions.
  void validate_dim(std::size_t dim) const;

  std::string name() const;
  // Accepts names: harmonic, quadratic, aniso_quadratic, bohachevsky,
  // oakley_ohagan, styblinski_tang, wavy_plateau.
  static Potential parse(const std::string& name, double coef = 1.0,
                         std::vector<double> coefs = {});
};

}  // namespace popmech

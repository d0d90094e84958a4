#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace skt {

using Vector = Eigen::VectorXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

/**
 * @brief Uniform cell-centred grid on [0, length] with homogeneous Neumann boundary.
 *
 * Cell values live at x_m = (m + 1/2) dx, m = 0..M-1. Face values live at
 * x_f = f dx, f = 0..M; faces 0 and M are the boundary.
 *
 * gradient() and divergence() form a summation-by-parts pair: the boundary
 * faces always carry zero flux, so for any cell function f and face function g
 *
 *     dx * sum_m divergence(g)_m f_m = -dx * sum_f g_f gradient(f)_f
 *
 * holds exactly, and sum_m divergence(g)_m = 0 up to rounding.
 */
class Grid {
 public:
  Grid(double length, int cells) : length_(length), cells_(cells) {
    if (!(length > 0.0) || !std::isfinite(length)) {
      throw std::invalid_argument("Grid: length must be positive and finite");
    }
    if (cells < 8) {
      throw std::invalid_argument("Grid: need at least 8 cells, got " + std::to_string(cells));
    }
    dx_ = length_ / cells_;
  }

  double length() const { return length_; }
  int cells() const { return cells_; }
  int faces() const { return cells_ + 1; }
  double dx() const { return dx_; }

  double center(int m) const { return (m + 0.5) * dx_; }
  double face(int f) const { return f * dx_; }

  Vector centers() const {
    Vector x(cells_);
    for (int m = 0; m < cells_; ++m) x[m] = center(m);
    return x;
  }

  Vector face_positions() const {
    Vector x(faces());
    for (int f = 0; f < faces(); ++f) x[f] = face(f);
    return x;
  }

  /// Cell values -> face differences. Boundary faces are zero (mirror ghost cells).
  Vector gradient(VectorRef f) const {
    check_cells(f.size(), "gradient");
    Vector g = Vector::Zero(faces());
    for (int k = 1; k < cells_; ++k) g[k] = (f[k] - f[k - 1]) / dx_;
    return g;
  }

  /// Face fluxes -> cell divergence. Boundary fluxes are ignored (no-flux).
  Vector divergence(VectorRef g) const {
    check_faces(g.size(), "divergence");
    Vector d(cells_);
    for (int m = 0; m < cells_; ++m) {
      const double right = (m + 1 < cells_) ? g[m + 1] : 0.0;
      const double left = (m > 0) ? g[m] : 0.0;
      d[m] = (right - left) / dx_;
    }
    return d;
  }

  /// Arithmetic face average; boundary faces copy the adjacent cell.
  Vector face_average(VectorRef f) const {
    check_cells(f.size(), "face_average");
    Vector g(faces());
    g[0] = f[0];
    g[cells_] = f[cells_ - 1];
    for (int k = 1; k < cells_; ++k) g[k] = 0.5 * (f[k] + f[k - 1]);
    return g;
  }

  /// Midpoint quadrature sum_m f_m dx.
  double integrate(VectorRef f) const {
    check_cells(f.size(), "integrate");
    return f.sum() * dx_;
  }

  double inner(VectorRef f, VectorRef g) const {
    check_cells(f.size(), "inner");
    check_cells(g.size(), "inner");
    return f.dot(g) * dx_;
  }

  /// Quadrature over interior faces, matching the inner product of gradient().
  double integrate_faces(VectorRef g) const {
    check_faces(g.size(), "integrate_faces");
    return g.segment(1, cells_ - 1).sum() * dx_;
  }

 private:
  void check_cells(Eigen::Index n, const char* what) const {
    if (n != cells_) {
      throw std::invalid_argument(std::string("Grid::") + what + ": expected " +
                                  std::to_string(cells_) + " cell values, got " + std::to_string(n));
    }
  }
  void check_faces(Eigen::Index n, const char* what) const {
    if (n != cells_ + 1) {
      throw std::invalid_argument(std::string("Grid::") + what + ": expected " +
                                  std::to_string(cells_ + 1) + " face values, got " +
                                  std::to_string(n));
    }
  }

  double length_;
  int cells_;
  double dx_;
};

/**
 * @brief Discrete eigenbasis of the Neumann Laplacian on a Grid.
 *
 * phi_k(x) = c_k cos(k pi x / length), c_0 = 1/sqrt(length), c_k = sqrt(2/length),
 * with eigenvalues (k pi / length)^2, k = 0..M-1. Sampled at cell centres these
 * modes are exactly orthonormal in the dx-weighted inner product, so the cosine
 * transform below is an isometry.
 */
class NeumannEigenbasis {
 public:
  explicit NeumannEigenbasis(const Grid& grid) : grid_(grid) {
    const int M = grid.cells();
    table_.resize(M, M);
    eigenvalues_.resize(M);
    for (int k = 0; k < M; ++k) {
      eigenvalues_[k] = std::pow(wavenumber(k), 2);
      for (int m = 0; m < M; ++m) table_(m, k) = mode(k, grid.center(m));
    }
  }

  const Grid& grid() const { return grid_; }
  int size() const { return grid_.cells(); }

  double wavenumber(int k) const { return k * std::numbers::pi / grid_.length(); }
  double normalization(int k) const {
    return k == 0 ? 1.0 / std::sqrt(grid_.length()) : std::sqrt(2.0 / grid_.length());
  }
  double mode(int k, double x) const { return normalization(k) * std::cos(wavenumber(k) * x); }
  double mode_derivative(int k, double x) const {
    return -normalization(k) * wavenumber(k) * std::sin(wavenumber(k) * x);
  }

  const Vector& eigenvalues() const { return eigenvalues_; }
  /// (m, k) -> phi_k(x_m)
  const Eigen::MatrixXd& table() const { return table_; }

  Vector to_spectral(VectorRef f) const { return grid_.dx() * (table_.transpose() * f); }
  Vector from_spectral(VectorRef c) const { return table_ * c; }

 private:
  Grid grid_;
  Eigen::MatrixXd table_;
  Vector eigenvalues_;
};

}  // namespace skt

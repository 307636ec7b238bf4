// SPDX-License-Identifier: Apache-2.0
//
// Per-element far fields of uniform linear and planar arrays sampled on a
// spherical (theta, phi) grid. Positions are in wavelengths; the operating
// wavelength is normalized to 1.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace superdir {

using Vec3 = Eigen::Vector3d;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

struct Direction {
    double theta_deg = 0.0;  // elevation, [0, 180]
    double phi_deg = 0.0;    // azimuth, [0, 360)
};

// Equality after wrapping phi modulo 360.
bool same_direction(const Direction& a, const Direction& b, double tol_deg = 1e-9);
double wrap_phi_deg(double phi_deg);
std::string to_string(const Direction& d);

// Unit propagation vector (sin t cos p, sin t sin p, cos t).
Vec3 unit_vector(const Direction& d);

enum class Weighting { uniform, sin_theta };

Weighting parse_weighting(const std::string& s);
std::string to_string(Weighting w);

struct SamplingGrid {
    double theta_step_deg = 0.0;  // 0 for custom grids
    double phi_step_deg = 0.0;
    Weighting weighting = Weighting::uniform;
    std::vector<Direction> directions;  // theta-major, phi-minor
    std::vector<double> quad_weights;

    std::size_t size() const { return directions.size(); }
    double weight_sum() const;
    std::optional<std::size_t> find(const Direction& d) const;
    std::size_t nearest(const Direction& d) const;
    // Index of d; throws InvalidArgument naming the nearest grid point when
    // d is not on the grid.
    std::size_t index_of(const Direction& d) const;
};

// theta in {0, step, ..., 180} inclusive, phi in {0, ..., 360 - step}.
// Uniform weights are all 1 (the unweighted Gram matrix); sin-theta weights
// are proportional to sin(theta) dtheta dphi and sum to 4 pi.
SamplingGrid make_grid(double theta_step_deg, double phi_step_deg,
                       Weighting weighting = Weighting::uniform);

// Arbitrary direction list, e.g. a single direction or an imported file.
// Empty weights means all ones.
SamplingGrid make_custom_grid(std::vector<Direction> directions, std::vector<double> weights = {});

enum class ElementKind { isotropic, ideal_dipole };

struct ElementPattern {
    ElementKind kind = ElementKind::isotropic;
    Vec3 axis = Vec3::UnitZ();  // dipole axis, unit length

    static ElementPattern isotropic() { return {}; }
    static ElementPattern ideal_dipole(const Vec3& axis);

    // |g(u)|: 1 for isotropic, sin of the angle between axis and u for a dipole.
    double amplitude(const Vec3& u) const;
};

enum class ArrayKind { ula, upa };

struct ArrayGeometry {
    std::vector<Vec3> positions_wl;
    ElementPattern element;
    ArrayKind kind = ArrayKind::ula;
    std::size_t rows = 1;
    std::size_t cols = 1;
    double spacing_wl = 0.0;

    std::size_t size() const { return positions_wl.size(); }
};

// m elements centered on the origin along `axis`, adjacent separation spacing_wl.
ArrayGeometry make_ula(std::size_t m, double spacing_wl, const Vec3& axis = Vec3::UnitX(),
                       ElementPattern element = ElementPattern::isotropic());

// rows x cols lattice in the xy plane centered on the origin: columns run
// along x, rows along y, elements ordered row-major.
ArrayGeometry make_upa(std::size_t rows, std::size_t cols, double spacing_wl,
                       ElementPattern element = ElementPattern::isotropic());

ArrayGeometry translated(const ArrayGeometry& g, const Vec3& offset);

struct CouplingMatrix {
    CMatrix entries;
    std::size_t size() const { return static_cast<std::size_t>(entries.rows()); }
};

// Synthetic mutual-coupling surrogate: symmetric Toeplitz, unit diagonal,
// |C[i][j]| = strength^|i-j|, phase of diagonal k = -2 pi spacing k plus a
// seeded offset. Deterministic for a fixed seed.
CouplingMatrix make_coupling(std::size_t m, double spacing_wl, double strength, std::uint64_t seed);

struct FieldMatrix {
    CMatrix values;  // (directions x elements)
    SamplingGrid grid;
    std::optional<ArrayGeometry> geometry;

    std::size_t elements() const { return static_cast<std::size_t>(values.cols()); }
    std::size_t directions() const { return static_cast<std::size_t>(values.rows()); }
};

// Entry (k, i) = g_i(u_k) exp(j 2 pi r_i . u_k); with coupling, values * C.
FieldMatrix synth_field_matrix(const ArrayGeometry& geometry, const SamplingGrid& grid,
                               const std::optional<CouplingMatrix>& coupling = std::nullopt);

// Per-element fields in `direction` (one row of the matrix as a column vector).
CVector steering_field(const FieldMatrix& fm, const Direction& direction);

// CSV with header theta_deg,phi_deg,elem_index,re,im; one row per
// (direction, element), grid order.
void write_field_csv(const FieldMatrix& fm, std::ostream& out);
void write_field_csv(const FieldMatrix& fm, const std::string& path);
// The grid is rebuilt as a regular grid when the directions form one,
// otherwise as a custom grid with the requested weighting's uniform fallback.
FieldMatrix read_field_csv(std::istream& in, Weighting weighting = Weighting::uniform);
FieldMatrix read_field_csv(const std::string& path, Weighting weighting = Weighting::uniform);

}  // namespace superdir

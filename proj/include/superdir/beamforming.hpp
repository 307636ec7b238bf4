// SPDX-License-Identifier: Apache-2.0
//
// Directivity and gain of an excitation vector a over a sampled field matrix E,
// and the excitations that maximize them.
//
//   D(a) = c |a^T E_d|^2 / (a^T E^H W E a*)
//
// with W the grid quadrature weights and c normalizing a single isotropic
// element to D = 1 (c = sum of weights). Writing x = a*, D is a Rayleigh
// quotient in x, so the maximizer is x ~ (E^H W E + eps I)^-1 E_d.
#pragma once

#include "superdir/array_field.hpp"
#include "superdir/rng.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace superdir {

enum class SolveMethod { closed_form, eigen };

struct DirectivityOptions {
    std::optional<double> normalization_c;  // nullopt: auto (sum of quadrature weights)
    std::optional<double> tikhonov_eps;     // nullopt: 1e-10 * trace(G) / M
    SolveMethod method = SolveMethod::closed_form;
};

struct ExcitationSolution {
    CVector a;               // unit norm, canonical gauge
    double kappa = 0.0;      // dominant eigenvalue of (G + eps I)^-1 E_d E_d^H
    double achieved = 0.0;   // directivity, or gain for the max-gain solver
    Direction direction;
    double condition = 0.0;  // condition number of the regularized Gram matrix
};

struct LossModel {
    double efficiency = 1.0;
    double r_loss = 0.0;  // loss resistance relative to the radiation resistance
};

// r_loss = (1 - efficiency) / efficiency; efficiency must lie in (0, 1].
LossModel loss_resistance(double efficiency);

double resolve_normalization(const FieldMatrix& fm, const DirectivityOptions& options);

// E^H W E.
CMatrix gram_matrix(const FieldMatrix& fm);

double default_tikhonov_eps(const CMatrix& gram);

// Unit norm, first entry with magnitude > 1e-9 rotated onto the nonnegative
// real axis. Idempotent.
CVector canonical_gauge(const CVector& a);

double directivity(const FieldMatrix& fm, const CVector& a, const Direction& direction,
                   const DirectivityOptions& options = {});

ExcitationSolution solve_max_directivity(const FieldMatrix& fm, const Direction& direction,
                                         const DirectivityOptions& options = {});

// Column i scaled so that a unit excitation of element i radiates unit power,
// i.e. (E^H W E)_ii = c. Required by the gain functions.
FieldMatrix normalize_element_power(const FieldMatrix& fm, const DirectivityOptions& options = {});

// |a^T E_d|^2 / (P_rad + P_loss) with P_rad = a^T E^H W E a* / c and
// P_loss = r_loss ||a||^2, evaluated as directivity * P_rad / (P_rad + P_loss).
double gain(const FieldMatrix& fm, const CVector& a, const Direction& direction, const LossModel& loss,
            const DirectivityOptions& options = {});

ExcitationSolution solve_max_gain(const FieldMatrix& fm, const Direction& direction, const LossModel& loss,
                                  const DirectivityOptions& options = {});

// Factorizes the (loss-augmented, regularized) Gram matrix once and solves
// for many directions of the same field matrix.
class BeamSolver {
public:
    BeamSolver(const FieldMatrix& fm, const DirectivityOptions& options = {},
               const std::optional<LossModel>& loss = std::nullopt);

    ExcitationSolution solve(std::size_t direction_index) const;
    ExcitationSolution solve(const Direction& direction) const;

    double condition() const { return condition_; }
    double normalization() const { return c_; }
    double eps() const { return eps_; }
    const CMatrix& gram() const { return gram_; }

private:
    const FieldMatrix& fm_;
    DirectivityOptions options_;
    std::optional<LossModel> loss_;
    CMatrix gram_;
    CMatrix system_;  // gram + (c r_loss + eps) I
    Eigen::LDLT<CMatrix> ldlt_;
    double c_ = 1.0;
    double eps_ = 0.0;
    double condition_ = 0.0;
};

struct PatternTable {
    std::vector<Direction> directions;
    std::vector<double> values;  // linear directivity per grid direction

    std::size_t argmax() const;
};

PatternTable pattern(const FieldMatrix& fm, const CVector& a, const DirectivityOptions& options = {});

// Complex-Gaussian direction on the unit sphere of C^m; the draws used by
// random_search_oracle.
CVector random_excitation(std::size_t m, Rng& rng);

// Best directivity (or gain when `loss` is given) over n_trials seeded
// complex-Gaussian unit vectors.
double random_search_oracle(const FieldMatrix& fm, const Direction& direction, std::size_t n_trials,
                            std::uint64_t seed, const std::optional<LossModel>& loss = std::nullopt,
                            const DirectivityOptions& options = {});

// header theta_deg,phi_deg,value_db
void write_pattern_csv(const PatternTable& table, const std::string& path);
// header elem_index,amplitude,phase_rad
void write_solution_csv(const CVector& a, const std::string& path);
CVector read_solution_csv(const std::string& path);

double to_db(double linear);

}  // namespace superdir

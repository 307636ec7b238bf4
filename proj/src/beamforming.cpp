// SPDX-License-Identifier: Apache-2.0
#include "superdir/beamforming.hpp"

#include "superdir/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace superdir {
namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kGaugeFloor = 1e-9;

// a^T E^H W E a* with x = conj(a).
double radiated_quadratic(const CMatrix& gram, const CVector& a) {
    const CVector x = a.conjugate();
    return (x.adjoint() * gram * x)(0, 0).real();
}

double numerator(const CVector& a, const CVector& ed) {
    return std::norm(a.cwiseProduct(ed).sum());
}

void require_nonzero(const CVector& a, const char* what) {
    if (a.size() == 0 || !(a.norm() > 0.0)) throw InvalidArgument(std::string(what) + ": excitation vector is zero");
}

void require_shape(const FieldMatrix& fm, const CVector& a, const char* what) {
    if (static_cast<std::size_t>(a.size()) != fm.elements()) {
        throw InvalidArgument(std::string(what) + ": excitation has " + std::to_string(a.size()) +
                              " entries, field matrix has " + std::to_string(fm.elements()) + " elements");
    }
}

void require_unit_power(const CMatrix& gram, double c, const char* what) {
    for (Eigen::Index i = 0; i < gram.rows(); ++i) {
        if (std::abs(gram(i, i).real() / c - 1.0) > 1e-9) {
            throw InvalidArgument(std::string(what) +
                                  ": element columns must radiate unit power, see normalize_element_power");
        }
    }
}

double gain_from(double d, double q, double c, double r_loss, double norm2) {
    const double p_rad = q / c;
    return d * (p_rad / (p_rad + r_loss * norm2));
}

}  // namespace

LossModel loss_resistance(double efficiency) {
    if (!(efficiency > 0.0 && efficiency <= 1.0)) {
        throw InvalidArgument("efficiency must lie in (0, 1], got " + std::to_string(efficiency));
    }
    return {efficiency, (1.0 - efficiency) / efficiency};
}

double resolve_normalization(const FieldMatrix& fm, const DirectivityOptions& options) {
    if (options.normalization_c) {
        if (!(*options.normalization_c > 0.0)) throw InvalidArgument("normalization_c must be positive");
        return *options.normalization_c;
    }
    return fm.grid.weight_sum();
}

CMatrix gram_matrix(const FieldMatrix& fm) {
    const auto& w = fm.grid.quad_weights;
    CMatrix weighted = fm.values;
    for (Eigen::Index k = 0; k < weighted.rows(); ++k) weighted.row(k) *= w[static_cast<std::size_t>(k)];
    CMatrix g = fm.values.adjoint() * weighted;
    return (0.5 * (g + g.adjoint())).eval();
}

double default_tikhonov_eps(const CMatrix& gram) {
    if (gram.rows() == 0) return 0.0;
    return 1e-10 * gram.trace().real() / static_cast<double>(gram.rows());
}

CVector canonical_gauge(const CVector& a) {
    require_nonzero(a, "canonical_gauge");
    CVector out = a / a.norm();
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        const double mag = std::abs(out(i));
        if (mag > kGaugeFloor) {
            out *= std::conj(out(i)) / mag;
            out(i) = {mag, 0.0};
            break;
        }
    }
    return out;
}

double directivity(const FieldMatrix& fm, const CVector& a, const Direction& direction,
                   const DirectivityOptions& options) {
    require_shape(fm, a, "directivity");
    require_nonzero(a, "directivity");
    const CVector ed = steering_field(fm, direction);
    const double c = resolve_normalization(fm, options);
    const double q = radiated_quadratic(gram_matrix(fm), a);
    if (!(q > 0.0)) throw NumericalError("directivity: excitation radiates no power on this grid");
    return c * numerator(a, ed) / q;
}

BeamSolver::BeamSolver(const FieldMatrix& fm, const DirectivityOptions& options, const std::optional<LossModel>& loss)
    : fm_(fm), options_(options), loss_(loss) {
    if (fm.elements() == 0 || fm.directions() == 0) throw InvalidArgument("beam solver: empty field matrix");
    c_ = resolve_normalization(fm, options);
    gram_ = gram_matrix(fm);
    if (loss_) require_unit_power(gram_, c_, "solve_max_gain");
    if (options.tikhonov_eps && *options.tikhonov_eps < 0.0) throw InvalidArgument("tikhonov_eps must be >= 0");
    eps_ = options.tikhonov_eps ? *options.tikhonov_eps : default_tikhonov_eps(gram_);

    const double diag = eps_ + (loss_ ? c_ * loss_->r_loss : 0.0);
    system_ = gram_;
    system_.diagonal().array() += diag;

    Eigen::SelfAdjointEigenSolver<CMatrix> eig(system_, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    condition_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(condition_ <= kMaxCondition)) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "Gram matrix is singular or ill-conditioned (condition %.3g, eps %.3g)%s",
                      condition_, eps_, eps_ == 0.0 ? "; set a nonzero tikhonov_eps" : "; increase tikhonov_eps");
        throw NumericalError(buf);
    }
    ldlt_.compute(system_);
}

ExcitationSolution BeamSolver::solve(const Direction& direction) const {
    return solve(fm_.grid.index_of(direction));
}

ExcitationSolution BeamSolver::solve(std::size_t direction_index) const {
    if (direction_index >= fm_.directions()) throw InvalidArgument("beam solver: direction index out of range");
    const CVector ed = fm_.values.row(static_cast<Eigen::Index>(direction_index)).transpose();
    const Direction& dir = fm_.grid.directions[direction_index];
    if (!(ed.norm() > 0.0)) {
        throw NumericalError("steering field vanishes in direction " + to_string(dir));
    }

    ExcitationSolution sol;
    sol.direction = dir;
    sol.condition = condition_;
    CVector x;
    if (options_.method == SolveMethod::closed_form) {
        x = ldlt_.solve(ed);
        sol.kappa = ed.dot(x).real();
    } else {
        const CMatrix rank1 = ed * ed.adjoint();
        Eigen::GeneralizedSelfAdjointEigenSolver<CMatrix> ges(rank1, system_, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
        if (ges.info() != Eigen::Success) throw NumericalError("generalized eigensolver did not converge");
        const Eigen::Index top = ges.eigenvalues().size() - 1;
        x = ges.eigenvectors().col(top);
        sol.kappa = ges.eigenvalues()(top);
    }
    if (!x.allFinite() || !std::isfinite(sol.kappa)) throw NumericalError("solver produced non-finite excitation");
    sol.kappa = std::max(sol.kappa, 0.0);
    sol.a = canonical_gauge(x.conjugate());

    const double q = radiated_quadratic(gram_, sol.a);
    if (!(q > 0.0)) throw NumericalError("solved excitation radiates no power");
    const double d = c_ * numerator(sol.a, ed) / q;
    sol.achieved = loss_ ? gain_from(d, q, c_, loss_->r_loss, sol.a.squaredNorm()) : d;
    return sol;
}

ExcitationSolution solve_max_directivity(const FieldMatrix& fm, const Direction& direction,
                                         const DirectivityOptions& options) {
    return BeamSolver(fm, options).solve(direction);
}

FieldMatrix normalize_element_power(const FieldMatrix& fm, const DirectivityOptions& options) {
    const double c = resolve_normalization(fm, options);
    const CMatrix g = gram_matrix(fm);
    FieldMatrix out = fm;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double p = g(i, i).real();
        if (!(p > 0.0)) throw NumericalError("element " + std::to_string(i) + " radiates no power on this grid");
        out.values.col(i) *= std::sqrt(c / p);
    }
    return out;
}

double gain(const FieldMatrix& fm, const CVector& a, const Direction& direction, const LossModel& loss,
            const DirectivityOptions& options) {
    require_shape(fm, a, "gain");
    require_nonzero(a, "gain");
    const double c = resolve_normalization(fm, options);
    const CMatrix g = gram_matrix(fm);
    require_unit_power(g, c, "gain");
    const double q = radiated_quadratic(g, a);
    if (!(q > 0.0)) throw NumericalError("gain: excitation radiates no power on this grid");
    const double d = c * numerator(a, steering_field(fm, direction)) / q;
    return gain_from(d, q, c, loss.r_loss, a.squaredNorm());
}

ExcitationSolution solve_max_gain(const FieldMatrix& fm, const Direction& direction, const LossModel& loss,
                                  const DirectivityOptions& options) {
    return BeamSolver(fm, options, loss).solve(direction);
}

std::size_t PatternTable::argmax() const {
    if (values.empty()) throw InvalidArgument("empty pattern table");
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) best = k;
    }
    return best;
}

PatternTable pattern(const FieldMatrix& fm, const CVector& a, const DirectivityOptions& options) {
    require_shape(fm, a, "pattern");
    require_nonzero(a, "pattern");
    const double c = resolve_normalization(fm, options);
    const double q = radiated_quadratic(gram_matrix(fm), a);
    if (!(q > 0.0)) throw NumericalError("pattern: excitation radiates no power on this grid");
    const CVector field = fm.values * a;
    PatternTable t;
    t.directions = fm.grid.directions;
    t.values.resize(fm.directions());
    for (std::size_t k = 0; k < t.values.size(); ++k) {
        t.values[k] = c * std::norm(field(static_cast<Eigen::Index>(k))) / q;
    }
    return t;
}

CVector random_excitation(std::size_t m, Rng& rng) {
    CVector a(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double re = rng.normal();
        const double im = rng.normal();
        a(i) = {re, im};
    }
    return a / a.norm();
}

double random_search_oracle(const FieldMatrix& fm, const Direction& direction, std::size_t n_trials,
                            std::uint64_t seed, const std::optional<LossModel>& loss,
                            const DirectivityOptions& options) {
    if (n_trials == 0) throw InvalidArgument("random_search_oracle: n_trials must be >= 1");
    const double c = resolve_normalization(fm, options);
    const CMatrix g = gram_matrix(fm);
    if (loss) require_unit_power(g, c, "random_search_oracle");
    const CVector ed = steering_field(fm, direction);
    Rng rng(seed);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n_trials; ++t) {
        const CVector a = random_excitation(fm.elements(), rng);
        const double q = radiated_quadratic(g, a);
        if (!(q > 0.0)) continue;
        const double d = c * numerator(a, ed) / q;
        best = std::max(best, loss ? gain_from(d, q, c, loss->r_loss, a.squaredNorm()) : d);
    }
    return best;
}

double to_db(double linear) { return 10.0 * std::log10(linear); }

void write_pattern_csv(const PatternTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path);
    out << "theta_deg,phi_deg,value_db\n";
    char buf[128];
    for (std::size_t k = 0; k < table.values.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", table.directions[k].theta_deg,
                      table.directions[k].phi_deg, to_db(table.values[k]));
        out << buf;
    }
}

void write_solution_csv(const CVector& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path);
    out << "elem_index,amplitude,phase_rad\n";
    char buf[128];
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g\n", static_cast<long>(i), std::abs(a(i)), std::arg(a(i)));
        out << buf;
    }
}

CVector read_solution_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("elem_index,amplitude,phase_rad", 0) != 0) {
        throw InvalidArgument(path + ": expected header elem_index,amplitude,phase_rad");
    }
    std::vector<std::complex<double>> vals;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        long idx;
        double amp, ph;
        if (std::sscanf(line.c_str(), "%ld,%lf,%lf", &idx, &amp, &ph) != 3 || idx != static_cast<long>(vals.size())) {
            throw InvalidArgument(path + ": malformed row at line " + std::to_string(lineno));
        }
        vals.push_back(std::polar(amp, ph));
    }
    if (vals.empty()) throw InvalidArgument(path + ": no excitation rows");
    CVector a(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) a(static_cast<Eigen::Index>(i)) = vals[i];
    return a;
}

}  // namespace superdir

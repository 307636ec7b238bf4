// SPDX-License-Identifier: Apache-2.0
#include "superdir/array_field.hpp"

#include "superdir/error.hpp"
#include "superdir/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace superdir {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

// sin/cos of an angle in degrees, exact at multiples of 90.
void sincos_deg(double deg, double& s, double& c) {
    const double q = deg / 90.0;
    const double r = std::round(q);
    if (std::abs(q - r) < 1e-12) {
        const long k = ((static_cast<long>(r) % 4) + 4) % 4;
        static constexpr double sv[4] = {0.0, 1.0, 0.0, -1.0};
        static constexpr double cv[4] = {1.0, 0.0, -1.0, 0.0};
        s = sv[k];
        c = cv[k];
        return;
    }
    s = std::sin(deg * kDeg);
    c = std::cos(deg * kDeg);
}

// Number of steps in `range`; throws when step does not divide it.
std::size_t step_count(double range, double step, const char* what) {
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw InvalidArgument(std::string(what) + " step must be positive, got " + std::to_string(step));
    }
    const double n = range / step;
    const double r = std::round(n);
    if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s step %.12g does not divide %.0f degrees", what, step, range);
        throw InvalidArgument(buf);
    }
    return static_cast<std::size_t>(r);
}

}  // namespace

double wrap_phi_deg(double phi_deg) {
    double p = std::fmod(phi_deg, 360.0);
    if (p < 0.0) p += 360.0;
    if (p >= 360.0) p -= 360.0;
    return p;
}

bool same_direction(const Direction& a, const Direction& b, double tol_deg) {
    if (std::abs(a.theta_deg - b.theta_deg) > tol_deg) return false;
    double d = std::abs(wrap_phi_deg(a.phi_deg) - wrap_phi_deg(b.phi_deg));
    d = std::min(d, 360.0 - d);
    return d <= tol_deg;
}

std::string to_string(const Direction& d) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%.10g, %.10g)", d.theta_deg, d.phi_deg);
    return buf;
}

Vec3 unit_vector(const Direction& d) {
    double st, ct, sp, cp;
    sincos_deg(d.theta_deg, st, ct);
    sincos_deg(d.phi_deg, sp, cp);
    return {st * cp, st * sp, ct};
}

Weighting parse_weighting(const std::string& s) {
    if (s == "uniform") return Weighting::uniform;
    if (s == "sin" || s == "sin-theta" || s == "sin_theta") return Weighting::sin_theta;
    throw InvalidArgument("unknown weighting '" + s + "' (expected uniform or sin-theta)");
}

std::string to_string(Weighting w) { return w == Weighting::uniform ? "uniform" : "sin-theta"; }

double SamplingGrid::weight_sum() const {
    double s = 0.0;
    for (double w : quad_weights) s += w;
    return s;
}

std::optional<std::size_t> SamplingGrid::find(const Direction& d) const {
    if (theta_step_deg > 0.0 && phi_step_deg > 0.0) {
        const double ti = d.theta_deg / theta_step_deg;
        const double pi = wrap_phi_deg(d.phi_deg) / phi_step_deg;
        const double tr = std::round(ti);
        double pr = std::round(pi);
        const auto n_phi = static_cast<std::size_t>(std::round(360.0 / phi_step_deg));
        if (std::abs(ti - tr) > 1e-9 || std::abs(pi - pr) > 1e-9) return std::nullopt;
        if (tr < 0.0 || tr * theta_step_deg > 180.0 + 1e-9) return std::nullopt;
        if (static_cast<std::size_t>(pr) == n_phi) pr = 0.0;
        return static_cast<std::size_t>(tr) * n_phi + static_cast<std::size_t>(pr);
    }
    for (std::size_t k = 0; k < directions.size(); ++k) {
        if (same_direction(directions[k], d)) return k;
    }
    return std::nullopt;
}

std::size_t SamplingGrid::nearest(const Direction& d) const {
    if (directions.empty()) throw InvalidArgument("empty sampling grid");
    const Vec3 u = unit_vector(d);
    std::size_t best = 0;
    double best_dot = -2.0;
    for (std::size_t k = 0; k < directions.size(); ++k) {
        const double c = u.dot(unit_vector(directions[k]));
        if (c > best_dot + 1e-15) {
            best_dot = c;
            best = k;
        }
    }
    return best;
}

std::size_t SamplingGrid::index_of(const Direction& d) const {
    if (auto k = find(d)) return *k;
    const auto n = nearest(d);
    throw InvalidArgument("direction " + to_string(d) + " is not on the sampling grid; nearest grid point is " +
                          to_string(directions[n]));
}

SamplingGrid make_grid(double theta_step_deg, double phi_step_deg, Weighting weighting) {
    const std::size_t nt = step_count(180.0, theta_step_deg, "theta");
    const std::size_t np = step_count(360.0, phi_step_deg, "phi");
    SamplingGrid g;
    g.theta_step_deg = theta_step_deg;
    g.phi_step_deg = phi_step_deg;
    g.weighting = weighting;
    g.directions.reserve((nt + 1) * np);
    for (std::size_t i = 0; i <= nt; ++i) {
        for (std::size_t j = 0; j < np; ++j) {
            g.directions.push_back({static_cast<double>(i) * theta_step_deg, static_cast<double>(j) * phi_step_deg});
        }
    }
    g.quad_weights.assign(g.directions.size(), 1.0);
    if (weighting == Weighting::sin_theta) {
        const double cell = theta_step_deg * kDeg * phi_step_deg * kDeg;
        double total = 0.0;
        for (std::size_t k = 0; k < g.directions.size(); ++k) {
            double s, c;
            sincos_deg(g.directions[k].theta_deg, s, c);
            g.quad_weights[k] = s * cell;
            total += g.quad_weights[k];
        }
        if (!(total > 0.0)) {
            throw InvalidArgument("sin-theta weighting needs at least one theta sample strictly inside (0, 180)");
        }
        const double scale = 4.0 * kPi / total;
        for (double& w : g.quad_weights) w *= scale;
    }
    return g;
}

SamplingGrid make_custom_grid(std::vector<Direction> directions, std::vector<double> weights) {
    if (directions.empty()) throw InvalidArgument("custom grid needs at least one direction");
    if (weights.empty()) weights.assign(directions.size(), 1.0);
    if (weights.size() != directions.size()) {
        throw InvalidArgument("custom grid: " + std::to_string(weights.size()) + " weights for " +
                              std::to_string(directions.size()) + " directions");
    }
    for (const auto& d : directions) {
        if (d.theta_deg < 0.0 || d.theta_deg > 180.0) {
            throw InvalidArgument("theta out of [0, 180]: " + to_string(d));
        }
    }
    for (double w : weights) {
        if (!(w >= 0.0)) throw InvalidArgument("quadrature weights must be nonnegative");
    }
    SamplingGrid g;
    g.directions = std::move(directions);
    g.quad_weights = std::move(weights);
    return g;
}

ElementPattern ElementPattern::ideal_dipole(const Vec3& axis) {
    const double n = axis.norm();
    if (!(n > 0.0)) throw InvalidArgument("dipole axis must be nonzero");
    return {ElementKind::ideal_dipole, axis / n};
}

double ElementPattern::amplitude(const Vec3& u) const {
    if (kind == ElementKind::isotropic) return 1.0;
    const double c = axis.dot(u);
    return std::sqrt(std::max(0.0, 1.0 - c * c));
}

ArrayGeometry make_ula(std::size_t m, double spacing_wl, const Vec3& axis, ElementPattern element) {
    if (m == 0) throw InvalidArgument("ULA needs at least one element");
    if (!(spacing_wl > 0.0)) throw InvalidArgument("ULA spacing must be positive");
    const double n = axis.norm();
    if (!(n > 0.0)) throw InvalidArgument("ULA axis must be nonzero");
    const Vec3 dir = axis / n;
    ArrayGeometry g;
    g.kind = ArrayKind::ula;
    g.rows = 1;
    g.cols = m;
    g.spacing_wl = spacing_wl;
    g.element = element;
    const double center = 0.5 * static_cast<double>(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
        g.positions_wl.push_back(dir * ((static_cast<double>(i) - center) * spacing_wl));
    }
    return g;
}

ArrayGeometry make_upa(std::size_t rows, std::size_t cols, double spacing_wl, ElementPattern element) {
    if (rows == 0 || cols == 0) throw InvalidArgument("UPA needs rows >= 1 and cols >= 1");
    if (!(spacing_wl > 0.0)) throw InvalidArgument("UPA spacing must be positive");
    ArrayGeometry g;
    g.kind = ArrayKind::upa;
    g.rows = rows;
    g.cols = cols;
    g.spacing_wl = spacing_wl;
    g.element = element;
    const double cr = 0.5 * static_cast<double>(rows - 1);
    const double cc = 0.5 * static_cast<double>(cols - 1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            g.positions_wl.push_back(Vec3((static_cast<double>(c) - cc) * spacing_wl,
                                          (static_cast<double>(r) - cr) * spacing_wl, 0.0));
        }
    }
    return g;
}

ArrayGeometry translated(const ArrayGeometry& g, const Vec3& offset) {
    ArrayGeometry out = g;
    for (auto& p : out.positions_wl) p += offset;
    return out;
}

CouplingMatrix make_coupling(std::size_t m, double spacing_wl, double strength, std::uint64_t seed) {
    if (m == 0) throw InvalidArgument("coupling matrix needs m >= 1");
    if (!(strength >= 0.0) || !(strength < 1.0)) {
        throw InvalidArgument("coupling strength must lie in [0, 1), got " + std::to_string(strength));
    }
    Rng rng(seed);
    std::vector<std::complex<double>> diag(m);
    diag[0] = {1.0, 0.0};
    for (std::size_t k = 1; k < m; ++k) {
        const double offset = rng.uniform(-kPi, kPi);
        const double mag = std::pow(strength, static_cast<double>(k));
        diag[k] = std::polar(mag, -2.0 * kPi * spacing_wl * static_cast<double>(k) + offset);
    }
    CouplingMatrix c;
    c.entries.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            c.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = diag[i > j ? i - j : j - i];
        }
    }
    const Eigen::JacobiSVD<CMatrix> svd(c.entries);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / sv(sv.size() - 1);
    if (!std::isfinite(cond) || cond > 1e12) {
        throw NumericalError("coupling matrix is numerically singular (condition " + std::to_string(cond) +
                             "); lower the strength or change the seed");
    }
    return c;
}

FieldMatrix synth_field_matrix(const ArrayGeometry& geometry, const SamplingGrid& grid,
                               const std::optional<CouplingMatrix>& coupling) {
    const auto m = static_cast<Eigen::Index>(geometry.size());
    const auto n = static_cast<Eigen::Index>(grid.size());
    if (coupling && coupling->entries.rows() != m) {
        throw InvalidArgument("coupling matrix is " + std::to_string(coupling->size()) + "x" +
                              std::to_string(coupling->size()) + " but the array has " + std::to_string(m) +
                              " elements");
    }
    FieldMatrix fm;
    fm.grid = grid;
    fm.geometry = geometry;
    fm.values.resize(n, m);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vec3 u = unit_vector(grid.directions[static_cast<std::size_t>(k)]);
        const double g = geometry.element.amplitude(u);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double phase = 2.0 * kPi * geometry.positions_wl[static_cast<std::size_t>(i)].dot(u);
            fm.values(k, i) = std::polar(g, phase);
        }
    }
    if (coupling) fm.values = (fm.values * coupling->entries).eval();
    return fm;
}

CVector steering_field(const FieldMatrix& fm, const Direction& direction) {
    const auto k = fm.grid.index_of(direction);
    return fm.values.row(static_cast<Eigen::Index>(k)).transpose();
}

void write_field_csv(const FieldMatrix& fm, std::ostream& out) {
    out << "theta_deg,phi_deg,elem_index,re,im\n";
    char buf[160];
    for (Eigen::Index k = 0; k < fm.values.rows(); ++k) {
        const auto& d = fm.grid.directions[static_cast<std::size_t>(k)];
        for (Eigen::Index i = 0; i < fm.values.cols(); ++i) {
            const auto v = fm.values(k, i);
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%ld,%.17g,%.17g\n", d.theta_deg, d.phi_deg,
                          static_cast<long>(i), v.real(), v.imag());
            out << buf;
        }
    }
}

void write_field_csv(const FieldMatrix& fm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot open " + path + " for writing");
    write_field_csv(fm, out);
}

FieldMatrix read_field_csv(std::istream& in, Weighting weighting) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("theta_deg,phi_deg,elem_index,re,im", 0) != 0) {
        throw InvalidArgument("field file: missing header 'theta_deg,phi_deg,elem_index,re,im'");
    }
    struct Row {
        Direction d;
        long elem;
        std::complex<double> v;
    };
    std::vector<Row> rows;
    long max_elem = -1;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Row r{};
        double re = 0.0, im = 0.0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%ld,%lf,%lf", &r.d.theta_deg, &r.d.phi_deg, &r.elem, &re, &im) != 5 ||
            r.elem < 0) {
            throw InvalidArgument("field file: malformed row at line " + std::to_string(lineno));
        }
        r.v = {re, im};
        max_elem = std::max(max_elem, r.elem);
        rows.push_back(r);
    }
    const auto m = static_cast<std::size_t>(max_elem + 1);
    if (m == 0 || rows.size() % m != 0) throw InvalidArgument("field file: incomplete element rows");
    const std::size_t n = rows.size() / m;
    std::vector<Direction> dirs(n);
    CMatrix values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < n; ++k) {
        dirs[k] = rows[k * m].d;
        for (std::size_t i = 0; i < m; ++i) {
            const auto& r = rows[k * m + i];
            if (r.elem != static_cast<long>(i) || !same_direction(r.d, dirs[k])) {
                throw InvalidArgument("field file: rows are not in grid order near direction " + to_string(dirs[k]));
            }
            values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = r.v;
        }
    }
    FieldMatrix fm;
    fm.values = std::move(values);
    // Try to recognize a regular grid from the smallest positive steps.
    double ts = 0.0, ps = 0.0;
    for (const auto& d : dirs) {
        if (d.theta_deg > 0.0 && (ts == 0.0 || d.theta_deg < ts)) ts = d.theta_deg;
        if (d.phi_deg > 0.0 && (ps == 0.0 || d.phi_deg < ps)) ps = d.phi_deg;
    }
    if (ts > 0.0 && ps > 0.0) {
        try {
            auto g = make_grid(ts, ps, weighting);
            bool match = g.size() == n;
            for (std::size_t k = 0; match && k < n; ++k) match = same_direction(g.directions[k], dirs[k]);
            if (match) {
                fm.grid = std::move(g);
                return fm;
            }
        } catch (const InvalidArgument&) {
        }
    }
    fm.grid = make_custom_grid(std::move(dirs));
    return fm;
}

FieldMatrix read_field_csv(const std::string& path, Weighting weighting) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    return read_field_csv(in, weighting);
}

}  // namespace superdir

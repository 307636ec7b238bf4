// SPDX-License-Identifier: Apache-2.0
#include "superdir/array_field.hpp"
#include "superdir/beamforming.hpp"
#include "superdir/error.hpp"
#include "superdir/geometry_config.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace superdir;

TEST_CASE("grid counts") {
    CHECK(make_grid(5, 5).size() == 2664);
    CHECK(make_grid(90, 180).size() == 6);
    CHECK(make_grid(15, 15, Weighting::sin_theta).size() == 312);

    // every divisor pair
    for (int t : {1, 2, 3, 4, 5, 6, 9, 10, 12, 15, 18, 20, 30, 36, 45, 60, 90, 180}) {
        for (int p : {1, 8, 15, 24, 45, 90, 120, 360}) {
            const auto g = make_grid(t, p);
            CHECK(g.size() == static_cast<std::size_t>((180 / t + 1) * (360 / p)));
        }
    }
}

TEST_CASE("grid ordering and endpoints") {
    const auto g = make_grid(90, 180);
    REQUIRE(g.size() == 6);
    CHECK(g.directions[0].theta_deg == 0.0);
    CHECK(g.directions[1].phi_deg == 180.0);
    CHECK(g.directions[2].theta_deg == 90.0);
    CHECK(g.directions[5].theta_deg == 180.0);
    for (const auto& d : g.directions) CHECK(d.phi_deg < 360.0);
}

TEST_CASE("sin-theta weights sum to 4 pi") {
    // direct summation, independent of the weight normalization
    const double t = 15.0 * std::numbers::pi / 180.0;
    double raw = 0.0;
    for (int i = 0; i <= 12; ++i) raw += 24.0 * std::sin(i * t) * t * t;
    const auto g = make_grid(15, 15, Weighting::sin_theta);
    CHECK(std::abs(g.weight_sum() - 4.0 * std::numbers::pi) < 1e-6);
    // relative weights follow sin(theta)
    const double ratio = g.quad_weights[24 * 3] / g.quad_weights[24 * 6];
    CHECK(ratio == doctest::Approx(std::sin(3 * t)).epsilon(1e-12));
    CHECK(raw > 0.0);
    CHECK(g.quad_weights.front() == 0.0);
}

TEST_CASE("non-divisor steps are rejected") {
    CHECK_THROWS_AS(make_grid(7, 5), InvalidArgument);
    CHECK_THROWS_AS(make_grid(5, 7), InvalidArgument);
    CHECK_THROWS_AS(make_grid(0, 5), InvalidArgument);
    CHECK_THROWS_AS(make_grid(180, 90, Weighting::sin_theta), InvalidArgument);
}

TEST_CASE("direction equality wraps phi") {
    CHECK(same_direction({30, 370}, {30, 10}));
    CHECK(same_direction({30, -90}, {30, 270}));
    CHECK_FALSE(same_direction({30, 10}, {31, 10}));
    const auto g = make_grid(15, 15);
    CHECK(g.index_of({90, 450}) == g.index_of({90, 90}));
}

TEST_CASE("off-grid direction names the nearest grid point") {
    const auto g = make_grid(15, 15);
    try {
        static_cast<void>(g.index_of({91, 89}));
        FAIL("expected throw");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("(90, 90)") != std::string::npos);
    }
}

TEST_CASE("ULA positions") {
    const auto g = make_ula(4, 0.25, Vec3::UnitX());
    REQUIRE(g.size() == 4);
    const double expect[] = {-0.375, -0.125, 0.125, 0.375};
    for (int i = 0; i < 4; ++i) {
        CHECK(g.positions_wl[i].x() == doctest::Approx(expect[i]).epsilon(1e-15));
        CHECK(g.positions_wl[i].y() == 0.0);
    }
    const auto one = make_ula(1, 0.3, Vec3::UnitX());
    CHECK(one.positions_wl[0].norm() == 0.0);
    const auto z = make_ula(2, 0.5, Vec3::UnitZ());
    CHECK(z.positions_wl[0].z() == doctest::Approx(-0.25));
    CHECK(z.positions_wl[1].z() == doctest::Approx(0.25));
    CHECK_THROWS_AS(make_ula(0, 0.3), InvalidArgument);
}

TEST_CASE("UPA lattice") {
    const auto g = make_upa(4, 4, 0.25);
    CHECK(g.size() == 16);
    Vec3 sum = Vec3::Zero();
    for (const auto& p : g.positions_wl) sum += p;
    CHECK(sum.norm() < 1e-12);

    const auto h = make_upa(2, 3, 0.2);
    REQUIRE(h.size() == 6);
    double xmin = 1, xmax = -1, ymin = 1, ymax = -1;
    for (const auto& p : h.positions_wl) {
        xmin = std::min(xmin, p.x());
        xmax = std::max(xmax, p.x());
        ymin = std::min(ymin, p.y());
        ymax = std::max(ymax, p.y());
        CHECK(p.z() == 0.0);
    }
    CHECK(ymax - ymin == doctest::Approx(0.2));
    CHECK(xmax - xmin == doctest::Approx(0.4));
    CHECK(make_upa(1, 1, 0.3).size() == 1);
    CHECK_THROWS_AS(make_upa(0, 3, 0.2), InvalidArgument);
}

TEST_CASE("field synthesis examples") {
    const auto grid = make_grid(15, 15);
    const auto single = synth_field_matrix(make_ula(1, 0.3), grid);
    for (Eigen::Index k = 0; k < single.values.rows(); ++k) CHECK(single.values(k, 0) == std::complex<double>(1, 0));

    // exp(j 2 pi (+-0.25)) = +-j
    const auto pair = synth_field_matrix(make_ula(2, 0.5, Vec3::UnitX()), grid);
    const CVector e = steering_field(pair, {90, 0});
    CHECK(std::abs(e(0) - std::complex<double>(0, -1)) < 1e-15);
    CHECK(std::abs(e(1) - std::complex<double>(0, 1)) < 1e-15);

    const auto dip = synth_field_matrix(make_ula(3, 0.2, Vec3::UnitY(), ElementPattern::ideal_dipole(Vec3::UnitZ())), grid);
    CHECK(std::abs(steering_field(dip, {0, 0})(1)) == 0.0);
    CHECK(std::abs(steering_field(dip, {90, 30})(1)) == doctest::Approx(1.0));

    const auto ula = synth_field_matrix(make_ula(4, 0.25), grid);
    const CVector ef = steering_field(ula, {90, 90});
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(ef(i)) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK((steering_field(ula, grid.directions[0]) - ula.values.row(0).transpose()).norm() == 0.0);

    // isotropic magnitudes are exactly one everywhere
    const auto upa = synth_field_matrix(make_upa(3, 2, 0.17), make_grid(5, 5));
    CHECK(((upa.values.cwiseAbs().array() - 1.0).abs() < 1e-15).all());
}

TEST_CASE("coupling surrogate") {
    const auto id = make_coupling(4, 0.2, 0.0, 99);
    CHECK((id.entries - CMatrix::Identity(4, 4)).norm() == 0.0);

    const auto a = make_coupling(4, 0.2, 0.3, 7);
    const auto b = make_coupling(4, 0.2, 0.3, 7);
    CHECK((a.entries - b.entries).norm() == 0.0);

    const auto c = make_coupling(3, 0.2, 0.3, 7);
    CHECK(std::abs(c.entries(0, 1)) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(std::abs(c.entries(0, 2)) == doctest::Approx(0.09).epsilon(1e-14));
    CHECK(std::abs(c.entries(1, 2)) == doctest::Approx(0.3).epsilon(1e-14));
    for (int i = 0; i < 3; ++i) CHECK(c.entries(i, i) == std::complex<double>(1, 0));
    CHECK(c.entries(2, 0) == c.entries(0, 2));
    CHECK_THROWS_AS(make_coupling(4, 0.2, 1.0, 7), InvalidArgument);

    const auto grid = make_grid(30, 30);
    const auto geom = make_ula(4, 0.2);
    const auto plain = synth_field_matrix(geom, grid);
    const auto with_id = synth_field_matrix(geom, grid, id);
    CHECK((plain.values.array() == with_id.values.array()).all());

    const auto coupled = synth_field_matrix(geom, grid, a);
    CHECK((coupled.values - plain.values * a.entries).norm() < 1e-12);
    CHECK_THROWS_AS(synth_field_matrix(geom, grid, make_coupling(3, 0.2, 0.3, 7)), InvalidArgument);
}

TEST_CASE("translation multiplies rows by unit scalars") {
    const auto grid = make_grid(15, 15, Weighting::sin_theta);
    const auto geom = make_upa(2, 3, 0.2);
    const Vec3 off(0.3, -0.7, 0.45);
    const auto a = synth_field_matrix(geom, grid);
    const auto b = synth_field_matrix(translated(geom, off), grid);
    for (Eigen::Index k = 0; k < a.values.rows(); ++k) {
        const std::complex<double> r = b.values(k, 0) / a.values(k, 0);
        CHECK(std::abs(std::abs(r) - 1.0) < 1e-12);
        CHECK((b.values.row(k) - r * a.values.row(k)).norm() < 1e-12);
    }
    for (const Direction d : {Direction{90, 90}, Direction{45, 30}, Direction{120, 300}}) {
        const double da = solve_max_directivity(a, d).achieved;
        const double db = solve_max_directivity(b, d).achieved;
        CHECK(std::abs(da - db) <= 1e-9 * da);
    }
}

TEST_CASE("field csv round trip") {
    const auto grid = make_grid(30, 45);
    const auto fm = synth_field_matrix(make_ula(3, 0.2, Vec3::UnitY(), ElementPattern::ideal_dipole(Vec3::UnitX())), grid);
    std::stringstream ss;
    write_field_csv(fm, ss);
    const std::string text = ss.str();
    CHECK(text.rfind("theta_deg,phi_deg,elem_index,re,im\n", 0) == 0);
    const auto back = read_field_csv(ss);
    CHECK(back.grid.size() == grid.size());
    CHECK(back.grid.theta_step_deg == 30.0);
    CHECK((back.values - fm.values).norm() == 0.0);

    std::stringstream bad("theta_deg,phi_deg,elem_index,re,im\n0,0,0,1\n");
    CHECK_THROWS_AS(read_field_csv(bad), InvalidArgument);
}

TEST_CASE("geometry config parsing") {
    const auto cfg = parse_geometry_config(
        "# test\nkind = ula\nm = 4\nspacing_wl = 0.25\npattern = dipole\naxis = y\ndipole_axis = x\n"
        "coupling_strength = 0.2\ncoupling_seed = 7\n");
    CHECK(cfg.kind == ArrayKind::ula);
    CHECK(cfg.m == 4);
    CHECK(cfg.pattern == ElementKind::ideal_dipole);
    CHECK(cfg.dipole_axis == Vec3::UnitX());
    REQUIRE(cfg.coupling_strength);
    CHECK(*cfg.coupling_strength == 0.2);
    const auto again = parse_geometry_config(format_geometry_config(cfg));
    CHECK(again.m == cfg.m);
    CHECK(again.spacing_wl == cfg.spacing_wl);
    CHECK(again.axis == cfg.axis);
    CHECK(geometry_from_json(to_json(cfg)).coupling_seed == 7);

    const auto upa = parse_geometry_config("kind: upa\nrows: 4\ncols: 4\nspacing_wl: 0.25\n");
    CHECK(upa.elements() == 16);
    CHECK(upa.build().kind == ArrayKind::upa);

    CHECK_THROWS_AS(parse_geometry_config("kind = ula\ncolour = red\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_geometry_config("m = four\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_geometry_config("m = 0\n"), InvalidArgument);
    CHECK(parse_axis("0,0,2") == Vec3::UnitZ());
}

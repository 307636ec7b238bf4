// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// by number (e.g. `acceptance 1 4 7`); no arguments runs all ten.
#include "superdir/beamforming.hpp"
#include "superdir/dataset.hpp"
#include "superdir/error.hpp"
#include "superdir/geometry_config.hpp"
#include "superdir/mtu_gan.hpp"
#include "superdir/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef SUPERDIR_SOURCE_DIR
#error "SUPERDIR_SOURCE_DIR must point at the source tree"
#endif

using namespace superdir;
using namespace superdir::nn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects failed sub-checks so the summary line can name the first one.
class Checker {
public:
    void require(bool ok, const std::string& what) {
        if (!ok && failures_++ == 0) first_ = what;
    }
    Outcome finish(std::string detail) const {
        if (failures_) detail += "; " + std::to_string(failures_) + " failed check(s), first: " + first_;
        return {failures_ == 0, detail};
    }

private:
    std::size_t failures_ = 0;
    std::string first_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double inner_abs(const CVector& a, const CVector& b) { return std::abs(a.dot(b)) / (a.norm() * b.norm()); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path source(const std::string& rel) { return fs::path(SUPERDIR_SOURCE_DIR) / rel; }

// Random ULA or UPA of m elements with a random element pattern.
ArrayGeometry random_geometry(std::size_t m, Rng& rng) {
    const double d = rng.uniform(0.1, 0.5);
    const ElementPattern el =
        rng.below(2) ? ElementPattern::ideal_dipole(Vec3::UnitX()) : ElementPattern::isotropic();
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(m))));
    if (side * side == m && m > 1 && rng.below(2)) return make_upa(side, side, d, el);
    return make_ula(m, d, Vec3::UnitY(), el);
}

// On-grid direction whose steering field is not near an element null.
Direction random_direction(const SamplingGrid& grid, const ArrayGeometry& g, Rng& rng) {
    for (;;) {
        const Direction d = grid.directions[rng.below(grid.size())];
        if (g.element.amplitude(unit_vector(d)) > 0.2) return d;
    }
}

// ---- 1 --------------------------------------------------------------------

Outcome solver_optimality() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto grid = make_grid(15, 15, Weighting::sin_theta);
    Rng rng(20261);
    Checker ck;
    const std::size_t ms[] = {2, 3, 4, 16};
    double worst_inner = 1.0, worst_margin = 1e300;
    for (int t = 0; t < 50; ++t) {
        const std::size_t m = ms[t % 4];
        const auto geo = random_geometry(m, rng);
        const auto fm = synth_field_matrix(geo, grid);
        const Direction dir = random_direction(grid, geo, rng);
        const auto cf = solve_max_directivity(fm, dir);
        DirectivityOptions eo;
        eo.method = SolveMethod::eigen;
        const auto ev = solve_max_directivity(fm, dir, eo);
        const double oracle = random_search_oracle(fm, dir, 10000, 5000 + t);
        const double inner = inner_abs(cf.a, ev.a);
        worst_inner = std::min(worst_inner, inner);
        worst_margin = std::min(worst_margin, cf.achieved / oracle);
        const std::string tag = "trial " + std::to_string(t) + " M=" + std::to_string(m) + " " + to_string(dir);
        ck.require(cf.achieved >= oracle, tag + ": closed form below oracle");
        ck.require(ev.achieved >= oracle, tag + ": eigen route below oracle");
        ck.require(inner >= 1.0 - 1e-8, tag + ": routes disagree, |<a,b>| = " + fmt("%.12f", inner));
    }
    const double secs = seconds_since(t0);
    ck.require(secs < 120.0, "runtime " + fmt("%.1f", secs) + " s");
    return ck.finish("50 configs, min |<a_cf,a_eig>| = " + fmt("%.15f", worst_inner) +
                     ", min D*/oracle = " + fmt("%.4f", worst_margin) + ", " + fmt("%.1f", secs) + " s");
}

// ---- 2 --------------------------------------------------------------------

Outcome superdirectivity_trend() {
    const auto grid = make_grid(5, 5, Weighting::sin_theta);
    const Direction ef{90, 90};
    Checker ck;
    std::string detail;
    for (std::size_t m : {2u, 3u}) {
        const auto fm = synth_field_matrix(make_ula(m, 0.05, Vec3::UnitY()), grid);
        const double d = solve_max_directivity(fm, ef).achieved;
        ck.require(d >= 0.8 * double(m * m), "M=" + std::to_string(m) + " D=" + fmt("%.4f", d));
        detail += "M=" + std::to_string(m) + " D=" + fmt("%.3f", d) + " (>= " + fmt("%.1f", 0.8 * double(m * m)) + "); ";
    }
    double prev = 1e300;
    detail += "M=4:";
    for (double s : {0.05, 0.10, 0.20, 0.40}) {
        const auto fm = synth_field_matrix(make_ula(4, s, Vec3::UnitY()), grid);
        const double d = solve_max_directivity(fm, ef).achieved;
        ck.require(d <= prev, "M=4 not nonincreasing at d=" + fmt("%.2f", s));
        prev = d;
        detail += " " + fmt("%.3f", d);
    }
    return ck.finish(detail);
}

// ---- 3 --------------------------------------------------------------------

Outcome dipole_spacing_trend() {
    const auto grid = make_grid(5, 5, Weighting::sin_theta);
    const Direction ef{90, 90};
    Checker ck;
    std::string detail = "D_max:";
    double prev = 1e300;
    for (double s : {0.15, 0.20, 0.25, 0.30, 0.35, 0.40}) {
        const auto geo = make_ula(4, s, Vec3::UnitY(), ElementPattern::ideal_dipole(Vec3::UnitX()));
        const double d = solve_max_directivity(synth_field_matrix(geo, grid), ef).achieved;
        ck.require(d < prev, "not strictly decreasing at d=" + fmt("%.2f", s));
        prev = d;
        detail += " " + fmt("%.3f", d);
    }
    return ck.finish(detail);
}

// ---- 4 --------------------------------------------------------------------

Outcome gain_physics() {
    const auto t0 = std::chrono::steady_clock::now();
    Checker ck;
    const double r = loss_resistance(0.9546).r_loss;
    ck.require(std::abs(r - 0.04756) <= 1e-5, "r_loss(0.9546) = " + fmt("%.8f", r));

    const auto grid = make_grid(10, 10, Weighting::sin_theta);
    Rng rng(4040);
    double worst_limit = 0.0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t m = 2 + rng.below(4);
        const auto geo = random_geometry(m, rng);
        const auto fm = normalize_element_power(synth_field_matrix(geo, grid));
        const Direction dir = random_direction(grid, geo, rng);
        const LossModel lm = loss_resistance(rng.uniform(0.5, 0.99));
        const std::string tag = "instance " + std::to_string(t);

        const auto best = solve_max_gain(fm, dir, lm);
        ck.require(best.achieved <= directivity(fm, best.a, dir), tag + ": gain above directivity (optimum)");
        const CVector a = random_excitation(m, rng);
        const double da = directivity(fm, a, dir);
        ck.require(gain(fm, a, dir, lm) <= da, tag + ": gain above directivity (random)");

        // the gap closes as efficiency approaches one
        double prev_gap = 1e300;
        for (double eta : {0.9, 0.99, 0.999, 0.9999, 1.0}) {
            const double gap = std::abs(gain(fm, a, dir, loss_resistance(eta)) - da) / da;
            ck.require(gap <= prev_gap, tag + ": gap grows at eta " + fmt("%.4f", eta));
            prev_gap = gap;
        }
        worst_limit = std::max(worst_limit, prev_gap);
        ck.require(prev_gap <= 1e-9, tag + ": gain(eta=1) differs from directivity");
        const double opt_gap =
            std::abs(solve_max_gain(fm, dir, loss_resistance(1.0)).achieved - solve_max_directivity(fm, dir).achieved) /
            solve_max_directivity(fm, dir).achieved;
        worst_limit = std::max(worst_limit, opt_gap);
        ck.require(opt_gap <= 1e-9, tag + ": max gain at eta=1 differs from max directivity");

        const double oracle = random_search_oracle(fm, dir, 10000, 7000 + t, lm);
        ck.require(best.achieved >= oracle, tag + ": max gain below oracle");
    }
    const double secs = seconds_since(t0);
    ck.require(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s");
    return ck.finish("r_loss = " + fmt("%.6f", r) + ", 20 instances, worst eta=1 gap " + fmt("%.2e", worst_limit) +
                     ", " + fmt("%.1f", secs) + " s");
}

// ---- 5 --------------------------------------------------------------------

Tensor randn(const Shape& s, Rng& rng) {
    std::vector<double> v(numel(s));
    for (double& x : v) x = rng.normal();
    return Tensor::from(s, std::move(v), true);
}

Tensor uniform01(const Shape& s, Rng& rng) {
    std::vector<double> v(numel(s));
    for (double& x : v) x = rng.uniform();
    return Tensor::from(s, std::move(v));
}

// fixed random projection so vector-valued ops reduce to a scalar
Tensor project(const Tensor& y) {
    Rng rng(99);
    std::vector<double> w(y.numel());
    for (double& x : w) x = rng.normal();
    return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

GeneratorConfig audit_generator() {
    return load_model_config(source("configs/audit_tiny.json").string()).generator;
}

DiscriminatorConfig audit_discriminator() {
    return load_model_config(source("configs/audit_tiny.json").string()).discriminator;
}

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    Checker ck;
    double worst_affine = 0.0, worst_nonlinear = 0.0;
    std::size_t checks = 0;
    auto run = [&](const char* name, const std::function<Tensor()>& f, const std::vector<Tensor>& wrt, bool affine) {
        const auto r = grad_check(f, wrt);
        ++checks;
        (affine ? worst_affine : worst_nonlinear) = std::max(affine ? worst_affine : worst_nonlinear, r.max_rel_error);
        ck.require(r.coords > 0 && r.passed(affine ? 1e-6 : 1e-4),
                   std::string(name) + " rel " + fmt("%.3e", r.max_rel_error) + " at " + r.worst);
    };

    Rng rng(55);
    const auto a = randn({3, 4}, rng), b = randn({4, 5}, rng), same = randn({3, 4}, rng);
    const auto a3 = randn({2, 3, 4}, rng), b3 = randn({2, 4, 3}, rng);
    const auto w = randn({5, 4}, rng), bias = randn({5}, rng), row = randn({4}, rng);
    run("matmul", [&] { return project(matmul(a, b)); }, {a, b}, true);
    run("matmul shared", [&] { return project(matmul(a3, b)); }, {a3, b}, true);
    run("matmul batched", [&] { return project(matmul(a3, b3)); }, {a3, b3}, true);
    run("linear", [&] { return project(linear(a3, w, bias)); }, {a3, w, bias}, true);
    run("add", [&] { return project(add(a, same)); }, {a, same}, true);
    run("add broadcast", [&] { return project(add(a, row)); }, {a, row}, true);
    run("sub", [&] { return project(sub(a, same)); }, {a, same}, true);
    run("scale", [&] { return project(scale(a, -2.5)); }, {a}, true);
    run("reshape", [&] { return project(reshape(a3, {6, 4})); }, {a3}, true);
    run("permute", [&] { return project(permute(a3, {2, 0, 1})); }, {a3}, true);
    run("transpose", [&] { return project(transpose(a3, 0, 2)); }, {a3}, true);
    run("concat", [&] { return project(concat({a, same}, 1)); }, {a, same}, true);
    run("sum", [&] { return scale(sum(a3), 0.5); }, {a3}, true);
    run("mean", [&] { return mean(a3); }, {a3}, true);
    const auto x = randn({2, 3, 6, 6}, rng), k3 = randn({4, 3, 3, 3}, rng), cb = randn({4}, rng);
    const auto k1 = randn({2, 3, 1, 1}, rng);
    run("conv2d 3x3", [&] { return project(conv2d(x, k3, 1, 1, cb)); }, {x, k3, cb}, true);
    run("conv2d stride 2", [&] { return project(conv2d(x, k3, 2, 1)); }, {x, k3}, true);
    run("conv2d 1x1", [&] { return project(conv2d(x, k1, 1, 0)); }, {x, k1}, true);
    run("upsample", [&] { return project(upsample_nearest(x, 2)); }, {x}, true);

    run("mul", [&] { return project(mul(a, same)); }, {a, same}, false);
    run("relu", [&] { return project(relu(a)); }, {a}, false);
    run("sigmoid", [&] { return project(sigmoid(a)); }, {a}, false);
    run("softmax axis 1", [&] { return project(softmax(a3, 1)); }, {a3}, false);
    run("softmax axis 2", [&] { return project(softmax(a3, 2)); }, {a3}, false);
    const auto g = randn({4}, rng), be = randn({4}, rng);
    run("layer_norm", [&] { return project(layer_norm(a3, g, be)); }, {a3, g, be}, false);
    const auto p = Tensor::from({4}, {0.1, 0.5, 0.9, 0.7}, true);
    run("bce target 1", [&] { return bce(p, 1.0); }, {p}, false);
    run("bce target 0", [&] { return bce(p, 0.0); }, {p}, false);

    Rng mr(56);
    const Generator gen(audit_generator(), mr);
    const Discriminator dis(audit_discriminator(), mr);
    GradCheckOptions opt;
    opt.max_coords = 12;
    const auto xin = uniform01({2, 4, 4}, mr);
    const auto rg = grad_check([&] { return project(gen.forward(xin)); }, gen.parameters(), opt);
    ++checks;
    worst_nonlinear = std::max(worst_nonlinear, rg.max_rel_error);
    ck.require(rg.passed(1e-4), "generator rel " + fmt("%.3e", rg.max_rel_error) + " at " + rg.worst);
    const auto y = uniform01({3, 4, 2}, mr);
    const auto rd = grad_check([&] { return bce(dis.forward(y), 1.0); }, dis.parameters(), opt);
    ++checks;
    worst_nonlinear = std::max(worst_nonlinear, rd.max_rel_error);
    ck.require(rd.passed(1e-4), "discriminator rel " + fmt("%.3e", rd.max_rel_error) + " at " + rd.worst);

    const double secs = seconds_since(t0);
    ck.require(secs < 300.0, "runtime " + fmt("%.1f", secs) + " s");
    return ck.finish(std::to_string(checks) + " checks, worst affine " + fmt("%.2e", worst_affine) +
                     ", worst nonlinear " + fmt("%.2e", worst_nonlinear) + ", " + fmt("%.1f", secs) + " s");
}

// ---- 6 --------------------------------------------------------------------

double column_sum_error(const Tensor& w) {
    const std::size_t n = w.dim(1);
    double worst = 0.0;
    for (std::size_t b = 0; b < w.dim(0); ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += w.data()[(b * n + j) * n + i];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return worst;
}

Outcome architecture_fidelity() {
    Checker ck;
    double worst_col = 0.0;
    Rng rng(66);
    for (std::size_t m : {4u, 16u}) {
        GeneratorConfig c = audit_generator();
        c.m_antennas = m;
        const Generator g(c, rng);
        for (std::size_t b : {1u, 3u}) {
            const auto y = g.forward(uniform01({b, m, 4}, rng));
            ck.require(y.shape() == Shape{b, m, 2, 1}, "generator output " + to_string(y.shape()));
        }
        // bottleneck blocks on the generator's own parameters
        const std::size_t s = c.spatial >> c.depth;
        AttentionCapture tc, gc;
        const auto tokens = uniform01({2, s * s, c.transformer_dim}, rng);
        const auto to = transformer_block(tokens, g.transformer().front(), &tc);
        ck.require(to.shape() == tokens.shape(), "transformer changed shape");
        ck.require(tc.weights.shape() == Shape{2 * c.transformer_heads, s * s, s * s}, "transformer attention shape");
        const auto fmap = uniform01({2, c.transformer_dim, s, s}, rng);
        const auto go = gsa_block(fmap, g.gsa(), &gc);
        ck.require(go.shape() == fmap.shape(), "gsa changed shape");
        ck.require(gc.weights.shape() == Shape{2, s * s, s * s}, "gsa attention shape");
        worst_col = std::max({worst_col, column_sum_error(tc.weights), column_sum_error(gc.weights)});
    }
    // wider random blocks too
    for (int t = 0; t < 6; ++t) {
        const std::size_t heads = 1 + rng.below(4), d = heads * (2 + rng.below(4)), n = 2 + rng.below(30);
        TransformerParams p;
        p.heads = heads;
        p.wq = randn({d, d}, rng);
        p.wk = randn({d, d}, rng);
        p.wv = randn({d, d}, rng);
        p.ln1_gamma = Tensor::full({d}, 1.0);
        p.ln1_beta = Tensor::zeros({d});
        p.w1 = randn({4 * d, d}, rng);
        p.b1 = randn({4 * d}, rng);
        p.w2 = randn({d, 4 * d}, rng);
        p.b2 = randn({d}, rng);
        p.ln2_gamma = Tensor::full({d}, 1.0);
        p.ln2_beta = Tensor::zeros({d});
        AttentionCapture cap;
        const auto x = randn({2, n, d}, rng);
        ck.require(transformer_block(x, p, &cap).shape() == x.shape(), "random transformer changed shape");
        worst_col = std::max(worst_col, column_sum_error(cap.weights));
        const std::size_t gamma = 1 + rng.below(3), ch = gamma * (1 + rng.below(4));
        const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
        GsaParams gp{randn({ch / gamma, ch, 1, 1}, rng), randn({ch / gamma, ch, 1, 1}, rng), randn({ch, ch, 1, 1}, rng)};
        const auto fx = randn({2, ch, h, w}, rng);
        AttentionCapture gcap;
        ck.require(gsa_block(fx, gp, &gcap).shape() == fx.shape(), "random gsa changed shape");
        worst_col = std::max(worst_col, column_sum_error(gcap.weights));
    }
    ck.require(worst_col <= 1e-12, "column sums off by " + fmt("%.2e", worst_col));

    // audit config (S 8, base 2, depth 3, dim 16, 2 heads, 4 antennas), layer by layer
    const std::size_t lift = 16 * 256 + 256;
    const std::size_t enc = (4 * 2 * 9 + 2 * 2 * 9) + (2 * 4 * 9 + 4 * 4 * 9) + (4 * 8 * 9 + 8 * 8 * 9);
    const std::size_t bottleneck = 8 * 16 + 16 * 8;
    const std::size_t transformer = 3 * 16 * 16 + 4 * 16 + (64 * 16 + 64) + (16 * 64 + 16);
    const std::size_t gsa = 2 * (2 * 16) + 16 * 16;
    const std::size_t up = 8 * 4 + 4 * 2 + 2 * 1;
    const std::size_t fuse = (4 * 2) * 4 + (2 * 3) * 2 + (1 * 3 + 3) * 1;
    const std::size_t proj = 4 * 2 + 4 * 1 + 2 * 1;
    const std::size_t input_branch = 4 * 3;
    const std::size_t final_conv = 4 * 4 * 9;
    const std::size_t out = 256 * 8 + 8;
    const std::size_t hand =
        lift + enc + bottleneck + transformer + gsa + up + fuse + proj + input_branch + final_conv + out;
    const std::size_t counted = count_params(audit_generator());
    const std::size_t allocated = Generator(audit_generator(), rng).parameter_count();
    ck.require(counted == hand && allocated == hand,
               "audit count " + std::to_string(counted) + "/" + std::to_string(allocated) + " vs hand " +
                   std::to_string(hand));
    return ck.finish("max column-sum error " + fmt("%.2e", worst_col) + ", audit params " + std::to_string(counted) +
                     " (hand " + std::to_string(hand) + ")");
}

// ---- 7 --------------------------------------------------------------------

Outcome schedule_exactness() {
    Checker ck;
    const WarmupCosine s{4e-6, 1e-3, 20, 100};
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
    const std::pair<std::size_t, double> points[] = {{0, 4e-6}, {20, 1e-3}, {60, 5.02e-4}, {100, 4e-6}};
    double worst = 0.0;
    for (const auto& [t, want] : points) {
        const double e = rel(lr_at(t, s), want);
        worst = std::max(worst, e);
        ck.require(e <= 1e-15, "lr_at(" + std::to_string(t) + ") = " + fmt("%.17g", lr_at(t, s)));
    }
    // warm-up line continued to t = 20 meets the cosine branch
    const double line = s.alpha_min + (s.alpha_max - s.alpha_min) * 20.0 / double(s.t_warm);
    const double e = rel(line, lr_at(20, s));
    worst = std::max(worst, e);
    ck.require(e <= 1e-15, "discontinuous at t_warm");
    return ck.finish("max relative error " + fmt("%.2e", worst));
}

// ---- 8 --------------------------------------------------------------------

Outcome metric_identities() {
    Checker ck;
    Rng rng(88);
    std::vector<double> t(10 * 8);
    for (double& v : t) v = rng.uniform(0.05, 1.0);
    const auto acc = accuracy(t, t);
    ck.require(acc.percent == 100.0, "perfect Acc " + fmt("%.15g", acc.percent));
    const double perfect = nmse_db(t, t, 8);
    ck.require(perfect == kNmseFloorDb, "perfect NMSE " + fmt("%.6g", perfect));
    const double zero = nmse_db(t, std::vector<double>(t.size(), 0.0), 8);
    ck.require(std::abs(zero) <= 1e-12, "zero-prediction NMSE " + fmt("%.3e", zero));
    return ck.finish("Acc " + fmt("%.1f", acc.percent) + "%, perfect NMSE " + fmt("%.0f", perfect) +
                     " dB, zero NMSE " + fmt("%.1e", zero) + " dB");
}

// ---- 9 --------------------------------------------------------------------

DatasetConfig toy_dataset() {
    DatasetConfig c;
    c.geometry = load_geometry_config(source("configs/dipole_ula4.geom").string());
    c.grid = parse_grid_spec("15,15");
    c.spacings = {40, 0.10, 0.50, 1};
    c.split_seed = 1;
    return c;
}

Outcome toy_training() {
    const auto t0 = std::chrono::steady_clock::now();
    Checker ck;
    const Dataset ds = generate_dataset(toy_dataset());
    const std::size_t pairs = ds.samples.size();
    ck.require(pairs >= 5000, std::to_string(pairs) + " pairs");
    const ModelConfig mc = load_model_config(source("configs/toy.json").string());
    const TrainConfig tc = load_train_config(source("configs/toy_train.json").string());
    ck.require(tc.epochs == 30 && tc.schedule.has_value(), "toy train config is not 30 epochs with a schedule");
    const auto sp = split_dataset(ds);
    nlohmann::ordered_json cfg;
    cfg["model"] = to_json(mc);
    Models models = make_models(mc, tc.seed);
    const auto res = train(sp.train, models, tc, cfg.dump());
    const auto rep =
        evaluate(models.generator, sp.test, ds.manifest.stats, dataset_field_matrices(ds.manifest), ds.manifest.config);
    const double secs = seconds_since(t0);
    ck.require(rep.nmse_db <= -10.0, "NMSE " + fmt("%.2f", rep.nmse_db) + " dB");
    ck.require(rep.achieved_ratio >= 0.8, "median ratio " + fmt("%.4f", rep.achieved_ratio));
    ck.require(rep.skipped == 0, std::to_string(rep.skipped) + " test samples unscored");
    ck.require(secs <= 900.0, "runtime " + fmt("%.0f", secs) + " s");
    return ck.finish(std::to_string(pairs) + " pairs, " + std::to_string(res.trace.size()) + " steps, test NMSE " +
                     fmt("%.2f", rep.nmse_db) + " dB, median D(a_hat)/D(a*) " + fmt("%.4f", rep.achieved_ratio) +
                     ", Acc " + fmt("%.2f", rep.acc.percent_nonzero) + "% (nonzero targets), " + fmt("%.0f", secs) +
                     " s");
}

// ---- 10 -------------------------------------------------------------------

struct RunFiles {
    std::vector<std::pair<std::string, std::string>> files;  // relative name, bytes
};

RunFiles collect(const fs::path& dir) {
    RunFiles rf;
    std::vector<fs::path> paths;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) rf.files.emplace_back(fs::relative(p, dir).string(), slurp(p));
    return rf;
}

void run_pipeline(const fs::path& dir) {
    DatasetConfig dc;
    dc.geometry = load_geometry_config(source("configs/dipole_ula4.geom").string());
    dc.grid = parse_grid_spec("30,30");
    dc.spacings = {6, 0.10, 0.50, 9};
    dc.split_seed = 9;
    write_dataset(generate_dataset(dc), (dir / "dataset").string());
    const Dataset ds = read_dataset((dir / "dataset").string());
    const ModelConfig mc = load_model_config(source("configs/audit_tiny.json").string());
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch = 16;
    tc.schedule = WarmupCosine{4e-6, 1e-3, 1, 3};
    tc.seed = 9;
    nlohmann::ordered_json cfg;
    cfg["model"] = to_json(mc);
    cfg["train"] = to_json(tc);
    Models models = make_models(mc, tc.seed);
    const auto sp = split_dataset(ds);
    train(sp.train, models, tc, cfg.dump(), (dir / "train").string());
    const Models loaded = load_models((dir / "train" / "final.ckpt").string());
    auto rep = evaluate(loaded.generator, sp.test, ds.manifest.stats, dataset_field_matrices(ds.manifest),
                        ds.manifest.config);
    rep.epochs = summarize_trace(read_trace_csv((dir / "train" / "trace.csv").string()));
    std::ofstream((dir / "report.json").string(), std::ios::binary) << to_json(rep).dump(2) << "\n";
}

Outcome determinism() {
    Checker ck;
    const fs::path base = fs::temp_directory_path() / ("superdir_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(base);
    const char* prev = std::getenv("SUPERDIR_THREADS");
    const std::string saved = prev ? prev : "";
    run_pipeline(base / "a");
    // second run on a single thread: results must not depend on scheduling
    ::setenv("SUPERDIR_THREADS", "1", 1);
    run_pipeline(base / "b");
    if (prev) ::setenv("SUPERDIR_THREADS", saved.c_str(), 1);
    else ::unsetenv("SUPERDIR_THREADS");

    const auto a = collect(base / "a"), b = collect(base / "b");
    ck.require(a.files.size() == b.files.size(), "different file sets");
    std::size_t bytes = 0;
    for (std::size_t i = 0; i < std::min(a.files.size(), b.files.size()); ++i) {
        ck.require(a.files[i].first == b.files[i].first, "file name mismatch " + a.files[i].first);
        ck.require(a.files[i].second == b.files[i].second, a.files[i].first + " differs");
        bytes += a.files[i].second.size();
    }
    fs::remove_all(base);
    return ck.finish(std::to_string(a.files.size()) + " artifacts (dataset, trace, checkpoints, report), " +
                     std::to_string(bytes) + " bytes compared, second run single-threaded");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"solver optimality", solver_optimality},
        {"superdirectivity trend", superdirectivity_trend},
        {"dipole spacing trend", dipole_spacing_trend},
        {"gain physics", gain_physics},
        {"gradient correctness", gradient_correctness},
        {"architecture fidelity", architecture_fidelity},
        {"schedule exactness", schedule_exactness},
        {"metric identities", metric_identities},
        {"toy end-to-end training", toy_training},
        {"determinism", determinism},
    };
    std::set<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const long k = std::strtol(argv[i], nullptr, 10);
        if (k < 1 || k > static_cast<long>(criteria.size())) {
            std::fprintf(stderr, "usage: %s [criterion 1-%zu ...]\n", argv[0], criteria.size());
            return 1;
        }
        selected.insert(static_cast<std::size_t>(k));
    }
    bool all = true;
    for (std::size_t k = 1; k <= criteria.size(); ++k) {
        if (!selected.empty() && !selected.count(k)) continue;
        Outcome o;
        try {
            o = criteria[k - 1].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k, criteria[k - 1].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}

// SPDX-License-Identifier: Apache-2.0
//
// superdir: field matrices, optimal excitations, datasets, training and
// evaluation from one command line.
//
// Exit codes: 0 success, 1 usage or bad input, 2 numerical failure.
#include "superdir/beamforming.hpp"
#include "superdir/dataset.hpp"
#include "superdir/error.hpp"
#include "superdir/geometry_config.hpp"
#include "superdir/mtu_gan.hpp"
#include "superdir/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace superdir;

namespace {

std::pair<double, double> parse_pair(const std::string& s, const char* what) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw InvalidArgument(std::string(what) + ": expected 'a,b', got '" + s + "'");
    try {
        std::size_t used = 0;
        const double a = std::stod(s.substr(0, comma), &used);
        const std::string rest = s.substr(comma + 1);
        std::size_t used_b = 0;
        const double b = std::stod(rest, &used_b);
        if (used != comma || used_b != rest.size()) throw std::invalid_argument(s);
        return {a, b};
    } catch (const std::logic_error&) {
        throw InvalidArgument(std::string(what) + ": expected 'a,b', got '" + s + "'");
    }
}

// Flags shared by the field-matrix subcommands.
struct ArrayArgs {
    std::string geometry;
    std::string grid = "5,5";
    std::string weighting = "sin_theta";
    double spacing = -1.0;
    std::optional<std::uint64_t> seed;
    std::optional<double> eps;
    std::string method = "closed_form";

    void add(CLI::App* app) {
        app->add_option("--geometry", geometry, "Geometry config file")->required()->check(CLI::ExistingFile);
        app->add_option("--grid", grid, "Theta,phi steps in degrees");
        app->add_option("--weighting", weighting, "Quadrature weighting")
            ->check(CLI::IsMember({"uniform", "sin_theta"}));
        app->add_option("--spacing", spacing, "Element spacing in wavelengths (negative: from the config)");
        app->add_option("--seed", seed, "Coupling surrogate seed (default: from the config)");
        app->add_option("--eps", eps, "Tikhonov regularization (default: 1e-10 tr(G)/M)");
        app->add_option("--method", method, "Solver route")->check(CLI::IsMember({"closed_form", "eigen"}));
    }

    GeometryConfig config() const {
        GeometryConfig g = load_geometry_config(geometry);
        if (spacing >= 0.0) g.spacing_wl = spacing;
        if (seed) g.coupling_seed = *seed;
        return g;
    }

    FieldMatrix field() const {
        const GeometryConfig g = config();
        const SamplingGrid sg = parse_grid_spec(grid, parse_weighting(weighting)).build();
        return synth_field_matrix(g.build(), sg, g.coupling());
    }

    DirectivityOptions options() const {
        DirectivityOptions o;
        o.tikhonov_eps = eps;
        o.method = method == "eigen" ? SolveMethod::eigen : SolveMethod::closed_form;
        return o;
    }
};

Direction parse_direction(const std::string& s) {
    const auto [t, p] = parse_pair(s, "--dir");
    return {t, p};
}

void print_value(const char* name, double v) {
    double db = to_db(v);
    if (std::abs(db) < 1e-12) db = 0.0;  // keep "-0.0000" out of the output
    std::printf("%s %.12g (%.4f dB)\n", name, v, db);
}

int cmd_grid(const ArrayArgs& a, const std::string& out) {
    const FieldMatrix fm = a.field();
    write_field_csv(fm, out);
    std::printf("directions %zu\nelements %zu\nweight_sum %.12g\nwrote %s\n", fm.directions(), fm.elements(),
                fm.grid.weight_sum(), out.c_str());
    return 0;
}

int cmd_solve(const ArrayArgs& a, const std::string& dir, std::optional<double> efficiency, const std::string& out) {
    const Direction d = parse_direction(dir);
    const FieldMatrix fm = a.field();
    if (efficiency) {
        const LossModel loss = loss_resistance(*efficiency);
        const FieldMatrix nfm = normalize_element_power(fm, a.options());
        const auto sol = solve_max_gain(nfm, d, loss, a.options());
        write_solution_csv(sol.a, out);
        print_value("gain", sol.achieved);
        print_value("directivity", directivity(nfm, sol.a, d, a.options()));
        std::printf("r_loss %.12g\ncondition %.6g\nwrote %s\n", loss.r_loss, sol.condition, out.c_str());
    } else {
        const auto sol = solve_max_directivity(fm, d, a.options());
        write_solution_csv(sol.a, out);
        print_value("directivity", sol.achieved);
        std::printf("condition %.6g\nwrote %s\n", sol.condition, out.c_str());
    }
    return 0;
}

int cmd_gain(const ArrayArgs& a, const std::string& dir, double efficiency, const std::string& excitation) {
    const LossModel loss = loss_resistance(efficiency);
    std::printf("efficiency %.12g\nr_loss %.12g\n", loss.efficiency, loss.r_loss);
    if (a.geometry.empty()) return 0;
    const Direction d = parse_direction(dir);
    const FieldMatrix nfm = normalize_element_power(a.field(), a.options());
    const CVector x = excitation.empty() ? solve_max_gain(nfm, d, loss, a.options()).a : read_solution_csv(excitation);
    if (static_cast<std::size_t>(x.size()) != nfm.elements()) {
        throw InvalidArgument("excitation has " + std::to_string(x.size()) + " entries, array has " +
                              std::to_string(nfm.elements()));
    }
    print_value("gain", gain(nfm, x, d, loss, a.options()));
    print_value("directivity", directivity(nfm, x, d, a.options()));
    return 0;
}

int cmd_pattern(const ArrayArgs& a, const std::string& dir, const std::string& excitation, const std::string& out) {
    const FieldMatrix fm = a.field();
    CVector x;
    if (!excitation.empty()) {
        x = read_solution_csv(excitation);
    } else if (!dir.empty()) {
        x = solve_max_directivity(fm, parse_direction(dir), a.options()).a;
    } else {
        throw InvalidArgument("pattern: give --excitation or --dir");
    }
    if (static_cast<std::size_t>(x.size()) != fm.elements()) {
        throw InvalidArgument("excitation has " + std::to_string(x.size()) + " entries, array has " +
                              std::to_string(fm.elements()));
    }
    const PatternTable t = pattern(fm, x, a.options());
    write_pattern_csv(t, out);
    const std::size_t k = t.argmax();
    std::printf("peak %s\n", to_string(t.directions[k]).c_str());
    print_value("directivity", t.values[k]);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

struct DatasetArgs {
    std::string geometry;
    std::string grid = "15,15";
    std::string weighting = "uniform";
    std::size_t spacings = 40;
    std::string range = "0.10,0.50";
    std::uint64_t seed = 1;
    std::optional<double> efficiency;
    std::optional<double> eps;
    double split = 0.7;
    std::string out;
};

int cmd_dataset(const DatasetArgs& a) {
    DatasetConfig c;
    c.geometry = load_geometry_config(a.geometry);
    c.grid = parse_grid_spec(a.grid, parse_weighting(a.weighting));
    const auto [lo, hi] = parse_pair(a.range, "--range");
    c.spacings = {a.spacings, lo, hi, a.seed};
    c.efficiency = a.efficiency;
    c.solver.tikhonov_eps = a.eps;
    c.split_fraction = a.split;
    c.split_seed = a.seed;
    const Dataset ds = generate_dataset(c);
    write_dataset(ds, a.out);
    std::printf("samples %zu\nanomalies %zu\ndirections %zu\nspacings %zu\nwrote %s\n", ds.manifest.sample_count,
                ds.manifest.anomaly_count, ds.manifest.directions, ds.manifest.spacings.size(), a.out.c_str());
    return 0;
}

int cmd_train(const std::string& dataset, const std::string& model, const std::string& train_cfg,
              std::optional<std::uint64_t> seed, const std::string& out) {
    const Dataset ds = read_dataset(dataset);
    const nn::ModelConfig mc = nn::load_model_config(model);
    nn::TrainConfig tc = train_cfg.empty() ? nn::TrainConfig{} : nn::load_train_config(train_cfg);
    if (seed) tc.seed = *seed;
    if (mc.generator.m_antennas != ds.manifest.config.geometry.elements()) {
        throw InvalidArgument("model expects " + std::to_string(mc.generator.m_antennas) + " antennas, dataset has " +
                              std::to_string(ds.manifest.config.geometry.elements()));
    }
    const auto sp = nn::split_dataset(ds);
    nlohmann::ordered_json cfg;
    cfg["model"] = nn::to_json(mc);
    cfg["train"] = nn::to_json(tc);
    nn::Models models = nn::make_models(mc, tc.seed);
    const auto res = nn::train(sp.train, models, tc, cfg.dump(), out);
    const auto ep = nn::summarize_trace(res.trace);
    if (!ep.empty()) {
        std::printf("epochs %zu\nsteps %zu\nfinal_d_loss %.6g\nfinal_g_loss %.6g\nfinal_g_recon %.6g\n", ep.size(),
                    res.trace.size(), ep.back().d_loss, ep.back().g_loss, ep.back().g_recon);
    }
    std::printf("wrote %s\n", res.checkpoints.back().c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset, const std::string& report, std::string trace) {
    const Dataset ds = read_dataset(dataset);
    const nn::Models models = nn::load_models(ckpt);
    const auto sp = nn::split_dataset(ds);
    auto rep = nn::evaluate(models.generator, sp.test, ds.manifest.stats, nn::dataset_field_matrices(ds.manifest),
                            ds.manifest.config);
    if (trace.empty()) {
        const auto sibling = std::filesystem::path(ckpt).parent_path() / "trace.csv";
        if (std::filesystem::exists(sibling)) trace = sibling.string();
    }
    if (!trace.empty()) rep.epochs = nn::summarize_trace(nn::read_trace_csv(trace));
    const std::string text = nn::to_json(rep).dump(2) + "\n";
    {
        std::ofstream f(report, std::ios::binary);
        if (!f) throw InvalidArgument("cannot write " + report);
        f << text;
    }
    std::printf("samples %zu\nnmse_db %.4f\nacc_percent %.4f\nacc_percent_nonzero %.4f\nachieved_ratio_median %.6f\n"
                "wrote %s\n",
                rep.samples, rep.nmse_db, rep.acc.percent, rep.acc.percent_nonzero, rep.achieved_ratio, report.c_str());
    return 0;
}

int cmd_params(const std::string& model) {
    const nn::ModelConfig mc = nn::load_model_config(model);
    const std::size_t g = nn::count_params(mc.generator), d = nn::count_params(mc.discriminator);
    std::printf("generator %zu\ndiscriminator %zu\ntotal %zu\n", g, d, g + d);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Superdirective array beamforming: solver, dataset and learned predictor"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    ArrayArgs grid_args, solve_args, gain_args, pattern_args;
    std::string grid_out = "field.csv";
    auto* grid = app.add_subcommand("grid", "Sample per-element fields on a grid and export them");
    grid_args.add(grid);
    grid->add_option("--out", grid_out, "Field matrix CSV");

    std::string solve_dir, solve_out = "solution.csv";
    std::optional<double> solve_eff;
    auto* solve = app.add_subcommand("solve", "Maximum-directivity (or gain) excitation for one direction");
    solve_args.add(solve);
    solve->add_option("--dir", solve_dir, "Target direction theta,phi in degrees")->required();
    solve->add_option("--efficiency", solve_eff, "Radiation efficiency in (0, 1]; maximizes gain when set")
        ->check(CLI::Range(0.0, 1.0));
    solve->add_option("--out", solve_out, "Solution CSV");

    std::string gain_dir = "90,90", gain_exc;
    double gain_eff = 1.0;
    auto* gain_cmd = app.add_subcommand("gain", "Loss resistance for an efficiency, and gain of an excitation");
    gain_cmd->add_option("--efficiency", gain_eff, "Radiation efficiency in (0, 1]")->check(CLI::Range(0.0, 1.0));
    gain_cmd->add_option("--geometry", gain_args.geometry, "Geometry config file (optional)")
        ->check(CLI::ExistingFile);
    gain_cmd->add_option("--grid", gain_args.grid, "Theta,phi steps in degrees");
    gain_cmd->add_option("--weighting", gain_args.weighting, "Quadrature weighting")
        ->check(CLI::IsMember({"uniform", "sin_theta"}));
    gain_cmd->add_option("--spacing", gain_args.spacing, "Element spacing in wavelengths (negative: from the config)");
    gain_cmd->add_option("--seed", gain_args.seed, "Coupling surrogate seed (default: from the config)");
    gain_cmd->add_option("--eps", gain_args.eps, "Tikhonov regularization (default: 1e-10 tr(G)/M)");
    gain_cmd->add_option("--dir", gain_dir, "Target direction theta,phi in degrees");
    gain_cmd->add_option("--excitation", gain_exc, "Solution CSV (default: the max-gain excitation)")
        ->check(CLI::ExistingFile);

    std::string pattern_dir, pattern_exc, pattern_out = "pattern.csv";
    auto* pattern_cmd = app.add_subcommand("pattern", "Export the directivity pattern of an excitation");
    pattern_args.add(pattern_cmd);
    pattern_cmd->add_option("--dir", pattern_dir, "Steer the optimum here when no excitation is given");
    pattern_cmd->add_option("--excitation", pattern_exc, "Solution CSV")->check(CLI::ExistingFile);
    pattern_cmd->add_option("--out", pattern_out, "Pattern CSV");

    DatasetArgs ds_args;
    auto* dataset = app.add_subcommand("dataset", "Training pair generation");
    dataset->require_subcommand(1);
    auto* gen = dataset->add_subcommand("gen", "Generate (field, optimal excitation) pairs");
    gen->add_option("--geometry", ds_args.geometry, "Geometry config file")->required()->check(CLI::ExistingFile);
    gen->add_option("--grid", ds_args.grid, "Theta,phi steps in degrees");
    gen->add_option("--weighting", ds_args.weighting, "Quadrature weighting")
        ->check(CLI::IsMember({"uniform", "sin_theta"}));
    gen->add_option("--spacings", ds_args.spacings, "Number of sampled spacings")->check(CLI::PositiveNumber);
    gen->add_option("--range", ds_args.range, "Spacing range lo,hi in wavelengths");
    gen->add_option("--seed", ds_args.seed, "Seed for spacings and the train/test split");
    gen->add_option("--efficiency", ds_args.efficiency, "Targets maximize gain at this efficiency")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_option("--eps", ds_args.eps, "Tikhonov regularization (default: 1e-10 tr(G)/M)");
    gen->add_option("--split", ds_args.split, "Train fraction")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--out", ds_args.out, "Output directory")->required();

    std::string tr_dataset, tr_model, tr_cfg, tr_out;
    std::optional<std::uint64_t> tr_seed;
    auto* train = app.add_subcommand("train", "Train the generator and discriminator");
    train->add_option("--dataset", tr_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--model", tr_model, "Model config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--train", tr_cfg, "Train config JSON (default: built-in defaults)")->check(CLI::ExistingFile);
    train->add_option("--seed", tr_seed, "Overrides the train config seed");
    train->add_option("--out", tr_out, "Checkpoint directory")->required();

    std::string ev_ckpt, ev_dataset, ev_report = "report.json", ev_trace;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on the held-out split");
    eval->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--dataset", ev_dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--report", ev_report, "EvalReport JSON");
    eval->add_option("--trace", ev_trace, "Loss trace (default: trace.csv next to the checkpoint)");

    std::string pr_model;
    auto* params = app.add_subcommand("params", "Trainable parameter counts of a model config");
    params->add_option("--model", pr_model, "Model config JSON")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*grid) return cmd_grid(grid_args, grid_out);
        if (*solve) return cmd_solve(solve_args, solve_dir, solve_eff, solve_out);
        if (*gain_cmd) return cmd_gain(gain_args, gain_dir, gain_eff, gain_exc);
        if (*pattern_cmd) return cmd_pattern(pattern_args, pattern_dir, pattern_exc, pattern_out);
        if (*gen) return cmd_dataset(ds_args);
        if (*train) return cmd_train(tr_dataset, tr_model, tr_cfg, tr_seed, tr_out);
        if (*eval) return cmd_eval(ev_ckpt, ev_dataset, ev_report, ev_trace);
        if (*params) return cmd_params(pr_model);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

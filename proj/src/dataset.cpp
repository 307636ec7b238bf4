// SPDX-License-Identifier: Apache-2.0
#include "superdir/dataset.hpp"

#include "superdir/error.hpp"
#include "superdir/parallel.hpp"
#include "superdir/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

namespace superdir {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMaxAnomalyFraction = 0.10;

Range empty_range() {
    return {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
}

void widen(Range& r, double x) {
    r.min = std::min(r.min, x);
    r.max = std::max(r.max, x);
}

nlohmann::json range_json(const Range& r) { return {{"min", r.min}, {"max", r.max}}; }
Range range_from(const nlohmann::json& j) { return {j.at("min").get<double>(), j.at("max").get<double>()}; }

}  // namespace

double wrap_phase(double rad) {
    double p = std::remainder(rad, 2.0 * kPi);  // [-pi, pi]
    if (p >= kPi) p -= 2.0 * kPi;
    return p;
}

std::pair<FieldSample, CoeffSample> encode_sample(const Direction& direction, const CVector& steering,
                                                  const CVector& excitation) {
    if (steering.size() != excitation.size()) {
        throw InvalidArgument("encode_sample: steering has " + std::to_string(steering.size()) +
                              " entries, excitation " + std::to_string(excitation.size()));
    }
    FieldSample f;
    CoeffSample c;
    f.rows.resize(static_cast<std::size_t>(steering.size()));
    c.rows.resize(f.rows.size());
    for (Eigen::Index i = 0; i < steering.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        f.rows[k] = {direction.theta_deg, direction.phi_deg, std::abs(steering(i)), wrap_phase(std::arg(steering(i)))};
        c.rows[k] = {std::abs(excitation(i)), wrap_phase(std::arg(excitation(i)))};
    }
    return {std::move(f), std::move(c)};
}

CVector decode_field(const FieldSample& f) {
    CVector v(static_cast<Eigen::Index>(f.m()));
    for (std::size_t i = 0; i < f.m(); ++i) v(static_cast<Eigen::Index>(i)) = std::polar(f.rows[i][2], f.rows[i][3]);
    return v;
}

CVector decode_coeff(const CoeffSample& c) {
    CVector v(static_cast<Eigen::Index>(c.m()));
    for (std::size_t i = 0; i < c.m(); ++i) {
        // polar() requires a nonnegative magnitude; denormalized predictions
        // can undershoot slightly.
        const double amp = c.rows[i][0];
        v(static_cast<Eigen::Index>(i)) = amp >= 0.0 ? std::polar(amp, c.rows[i][1]) : -std::polar(-amp, c.rows[i][1]);
    }
    return v;
}

NormStats fit_norm_stats(const std::vector<Sample>& samples) {
    if (samples.empty()) throw InvalidArgument("fit_norm_stats: empty dataset");
    NormStats s{empty_range(), empty_range(), empty_range(), empty_range(), empty_range(), empty_range()};
    for (const auto& smp : samples) {
        for (const auto& r : smp.field.rows) {
            widen(s.theta, r[0]);
            widen(s.phi, r[1]);
            widen(s.field_amp, r[2]);
            widen(s.field_phase, r[3]);
        }
        for (const auto& r : smp.coeff.rows) {
            widen(s.coeff_amp, r[0]);
            widen(s.coeff_phase, r[1]);
        }
    }
    return s;
}

FieldSample normalize(const FieldSample& f, const NormStats& s) {
    FieldSample out = f;
    for (auto& r : out.rows) {
        r = {s.theta.normalize(r[0]), s.phi.normalize(r[1]), s.field_amp.normalize(r[2]), s.field_phase.normalize(r[3])};
    }
    return out;
}

CoeffSample normalize(const CoeffSample& c, const NormStats& s) {
    CoeffSample out = c;
    for (auto& r : out.rows) r = {s.coeff_amp.normalize(r[0]), s.coeff_phase.normalize(r[1])};
    return out;
}

FieldSample denormalize(const FieldSample& f, const NormStats& s) {
    FieldSample out = f;
    for (auto& r : out.rows) {
        r = {s.theta.denormalize(r[0]), s.phi.denormalize(r[1]), s.field_amp.denormalize(r[2]),
             s.field_phase.denormalize(r[3])};
    }
    return out;
}

CoeffSample denormalize(const CoeffSample& c, const NormStats& s) {
    CoeffSample out = c;
    for (auto& r : out.rows) r = {s.coeff_amp.denormalize(r[0]), s.coeff_phase.denormalize(r[1])};
    return out;
}

nlohmann::json to_json(const NormStats& s) {
    return {{"field_amp", range_json(s.field_amp)},     {"field_phase", range_json(s.field_phase)},
            {"theta", range_json(s.theta)},             {"phi", range_json(s.phi)},
            {"coeff_amp", range_json(s.coeff_amp)},     {"coeff_phase", range_json(s.coeff_phase)}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
    return {range_from(j.at("field_amp")), range_from(j.at("field_phase")), range_from(j.at("theta")),
            range_from(j.at("phi")),       range_from(j.at("coeff_amp")),   range_from(j.at("coeff_phase"))};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t n, double train_fraction,
                                                                    std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw InvalidArgument("split: train fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    shuffle(idx, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return {std::move(train), std::move(test)};
}

std::vector<double> SpacingSampler::draw() const {
    if (count == 0) throw InvalidArgument("spacing count must be >= 1");
    if (!(lo > 0.0 && hi < 1.0 && lo <= hi)) {
        throw InvalidArgument("spacing range must satisfy 0 < lo <= hi < 1 wavelengths");
    }
    Rng rng(seed);
    std::vector<double> d(count);
    for (auto& x : d) x = rng.uniform(lo, hi);
    std::sort(d.begin(), d.end());
    return d;
}

SamplingGrid GridSpec::build() const {
    if (!custom.empty()) return make_custom_grid(custom);
    return make_grid(theta_step_deg, phi_step_deg, weighting);
}

GridSpec parse_grid_spec(const std::string& s, Weighting weighting) {
    GridSpec g;
    g.weighting = weighting;
    char tail;
    if (std::sscanf(s.c_str(), "%lf,%lf%c", &g.theta_step_deg, &g.phi_step_deg, &tail) != 2) {
        throw InvalidArgument("grid must be 'theta_step,phi_step', got '" + s + "'");
    }
    static_cast<void>(g.build());  // validates divisibility
    return g;
}

nlohmann::json to_json(const DatasetConfig& c) {
    nlohmann::json j;
    j["geometry"] = to_json(c.geometry);
    j["grid"] = {{"theta_step_deg", c.grid.theta_step_deg},
                 {"phi_step_deg", c.grid.phi_step_deg},
                 {"weighting", to_string(c.grid.weighting)}};
    if (!c.grid.custom.empty()) {
        auto dirs = nlohmann::json::array();
        for (const auto& d : c.grid.custom) dirs.push_back({d.theta_deg, d.phi_deg});
        j["grid"]["directions"] = std::move(dirs);
    }
    j["spacings"] = {{"count", c.spacings.count}, {"lo", c.spacings.lo}, {"hi", c.spacings.hi}, {"seed", c.spacings.seed}};
    j["efficiency"] = c.efficiency ? nlohmann::json(*c.efficiency) : nlohmann::json(nullptr);
    j["solver"] = {{"method", c.solver.method == SolveMethod::eigen ? "eigen" : "closed-form"},
                   {"tikhonov_eps", c.solver.tikhonov_eps ? nlohmann::json(*c.solver.tikhonov_eps) : nullptr},
                   {"normalization_c", c.solver.normalization_c ? nlohmann::json(*c.solver.normalization_c) : nullptr}};
    j["split_fraction"] = c.split_fraction;
    j["split_seed"] = c.split_seed;
    return j;
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.geometry = geometry_from_json(j.at("geometry"));
    const auto& g = j.at("grid");
    c.grid = {g.at("theta_step_deg").get<double>(), g.at("phi_step_deg").get<double>(),
              parse_weighting(g.at("weighting").get<std::string>()), {}};
    if (g.contains("directions")) {
        for (const auto& d : g["directions"]) c.grid.custom.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
    }
    const auto& s = j.at("spacings");
    c.spacings = {s.at("count").get<std::size_t>(), s.at("lo").get<double>(), s.at("hi").get<double>(),
                  s.at("seed").get<std::uint64_t>()};
    if (!j.at("efficiency").is_null()) c.efficiency = j["efficiency"].get<double>();
    const auto& sv = j.at("solver");
    c.solver.method = sv.at("method").get<std::string>() == "eigen" ? SolveMethod::eigen : SolveMethod::closed_form;
    if (!sv.at("tikhonov_eps").is_null()) c.solver.tikhonov_eps = sv["tikhonov_eps"].get<double>();
    if (!sv.at("normalization_c").is_null()) c.solver.normalization_c = sv["normalization_c"].get<double>();
    c.split_fraction = j.at("split_fraction").get<double>();
    c.split_seed = j.at("split_seed").get<std::uint64_t>();
    return c;
}

FieldMatrix dataset_field_matrix(const DatasetConfig& c, double spacing_wl) {
    auto fm = synth_field_matrix(c.geometry.build(spacing_wl), c.grid.build(), c.geometry.coupling(spacing_wl));
    if (c.efficiency) fm = normalize_element_power(fm, c.solver);
    return fm;
}

Dataset generate_dataset(const DatasetConfig& config) {
    const SamplingGrid grid = config.grid.build();
    if (grid.size() == 0) throw InvalidArgument("generate_dataset: empty grid");
    const std::vector<double> spacings = config.spacings.draw();
    std::optional<LossModel> loss;
    if (config.efficiency) loss = loss_resistance(*config.efficiency);

    struct PerSpacing {
        std::vector<Sample> samples;
        std::vector<Anomaly> anomalies;
    };
    std::vector<PerSpacing> parts(spacings.size());
    parallel_for(spacings.size(), [&](std::size_t s) {
        auto& part = parts[s];
        const double d = spacings[s];
        std::optional<BeamSolver> solver;
        FieldMatrix fm;
        try {
            fm = dataset_field_matrix(config, d);
            solver.emplace(fm, config.solver, loss);
        } catch (const NumericalError& e) {
            for (std::size_t k = 0; k < grid.size(); ++k) part.anomalies.push_back({s, k, e.what()});
            return;
        }
        part.samples.reserve(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) {
            try {
                const auto sol = solver->solve(k);
                if (!sol.a.allFinite() || !std::isfinite(sol.achieved)) {
                    part.anomalies.push_back({s, k, "non-finite solver output"});
                    continue;
                }
                const CVector ed = fm.values.row(static_cast<Eigen::Index>(k)).transpose();
                auto [f, c] = encode_sample(grid.directions[k], ed, sol.a);
                part.samples.push_back({std::move(f), std::move(c), d, s});
            } catch (const NumericalError& e) {
                part.anomalies.push_back({s, k, e.what()});
            }
        }
    });

    Dataset ds;
    for (auto& p : parts) {
        for (auto& smp : p.samples) ds.samples.push_back(std::move(smp));
        for (auto& a : p.anomalies) ds.anomalies.push_back(std::move(a));
    }
    const std::size_t total = spacings.size() * grid.size();
    if (static_cast<double>(ds.anomalies.size()) > kMaxAnomalyFraction * static_cast<double>(total)) {
        const auto& first = ds.anomalies.front();
        char buf[512];
        std::snprintf(buf, sizeof buf,
                      "dataset generation aborted: %zu of %zu pairs anomalous (limit 10%%); first at spacing %.6g, "
                      "direction %s: %s",
                      ds.anomalies.size(), total, spacings[first.spacing_index],
                      to_string(grid.directions[first.direction_index]).c_str(), first.reason.c_str());
        throw NumericalError(buf);
    }
    if (ds.samples.empty()) throw NumericalError("dataset generation produced no samples");

    auto& m = ds.manifest;
    m.config = config;
    m.spacings = spacings;
    m.directions = grid.size();
    m.sample_count = ds.samples.size();
    m.anomaly_count = ds.anomalies.size();
    m.stats = fit_norm_stats(ds.samples);
    return ds;
}

nlohmann::ordered_json sample_to_json(const Sample& s) {
    nlohmann::ordered_json j;
    const Direction d = s.direction();
    j["theta_deg"] = d.theta_deg;
    j["phi_deg"] = d.phi_deg;
    j["spacing_wl"] = s.spacing_wl;
    j["m"] = s.field.m();
    auto field = nlohmann::ordered_json::array();
    for (const auto& r : s.field.rows) field.push_back({r[2], r[3]});
    auto coeff = nlohmann::ordered_json::array();
    for (const auto& r : s.coeff.rows) coeff.push_back({r[0], r[1]});
    j["field"] = std::move(field);
    j["coeff"] = std::move(coeff);
    return j;
}

Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    const double t = j.at("theta_deg").get<double>();
    const double p = j.at("phi_deg").get<double>();
    s.spacing_wl = j.at("spacing_wl").get<double>();
    const auto m = j.at("m").get<std::size_t>();
    const auto& f = j.at("field");
    const auto& c = j.at("coeff");
    if (f.size() != m || c.size() != m) throw InvalidArgument("sample: field/coeff length differs from m");
    for (std::size_t i = 0; i < m; ++i) {
        s.field.rows.push_back({t, p, f[i].at(0).get<double>(), f[i].at(1).get<double>()});
        s.coeff.rows.push_back({c[i].at(0).get<double>(), c[i].at(1).get<double>()});
    }
    return s;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    {
        std::ofstream out(base / "samples.jsonl");
        if (!out) throw InvalidArgument("cannot write " + (base / "samples.jsonl").string());
        for (const auto& s : ds.samples) out << sample_to_json(s).dump() << '\n';
    }
    const auto& m = ds.manifest;
    nlohmann::json j;
    j["format_version"] = m.format_version;
    j["config"] = to_json(m.config);
    j["spacings"] = m.spacings;
    j["directions"] = m.directions;
    j["sample_count"] = m.sample_count;
    j["anomaly_count"] = m.anomaly_count;
    j["stats"] = to_json(m.stats);
    std::ofstream out(base / "manifest.json");
    if (!out) throw InvalidArgument("cannot write " + (base / "manifest.json").string());
    out << j.dump(2) << '\n';
}

Dataset read_dataset(const std::string& dir) {
    const auto base = std::filesystem::path(dir);
    std::ifstream min(base / "manifest.json");
    if (!min) throw InvalidArgument("cannot open " + (base / "manifest.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(min);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    auto& m = ds.manifest;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kDatasetFormatVersion) {
            throw InvalidArgument("manifest.json: unsupported format_version " + std::to_string(m.format_version));
        }
        m.config = dataset_config_from_json(j.at("config"));
        m.spacings = j.at("spacings").get<std::vector<double>>();
        m.directions = j.at("directions").get<std::size_t>();
        m.sample_count = j.at("sample_count").get<std::size_t>();
        m.anomaly_count = j.at("anomaly_count").get<std::size_t>();
        m.stats = norm_stats_from_json(j.at("stats"));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("manifest.json: " + std::string(e.what()));
    }

    std::ifstream sin(base / "samples.jsonl");
    if (!sin) throw InvalidArgument("cannot open " + (base / "samples.jsonl").string());
    std::string line;
    std::size_t lineno = 0;
    ds.samples.reserve(m.sample_count);
    while (std::getline(sin, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            Sample s = sample_from_json(nlohmann::json::parse(line));
            const auto it = std::find(m.spacings.begin(), m.spacings.end(), s.spacing_wl);
            if (it == m.spacings.end()) throw InvalidArgument("spacing not listed in manifest");
            s.spacing_index = static_cast<std::size_t>(it - m.spacings.begin());
            ds.samples.push_back(std::move(s));
        } catch (const std::exception& e) {
            throw InvalidArgument("samples.jsonl line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.samples.size() != m.sample_count) {
        throw InvalidArgument("samples.jsonl holds " + std::to_string(ds.samples.size()) + " samples, manifest says " +
                              std::to_string(m.sample_count));
    }
    return ds;
}

NormalizedArrays normalized_arrays(const std::vector<Sample>& samples, const NormStats& stats,
                                   const std::vector<std::size_t>& indices) {
    NormalizedArrays a;
    a.n = indices.size();
    if (a.n == 0) return a;
    a.m = samples.at(indices[0]).field.m();
    a.x.reserve(a.n * a.m * 4);
    a.y.reserve(a.n * a.m * 2);
    for (std::size_t i : indices) {
        const auto& s = samples.at(i);
        if (s.field.m() != a.m) throw InvalidArgument("normalized_arrays: mixed antenna counts");
        for (const auto& r : normalize(s.field, stats).rows) a.x.insert(a.x.end(), r.begin(), r.end());
        for (const auto& r : normalize(s.coeff, stats).rows) a.y.insert(a.y.end(), r.begin(), r.end());
    }
    return a;
}

}  // namespace superdir

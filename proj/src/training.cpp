// SPDX-License-Identifier: Apache-2.0
#include "superdir/training.hpp"

#include "superdir/error.hpp"
#include "superdir/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace superdir::nn {
namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
}

bool finite(double v) { return std::isfinite(v); }

std::string epoch_checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
    return buf;
}

}  // namespace

// ---- schedule and config --------------------------------------------------

void WarmupCosine::validate() const {
    require(alpha_min >= 0.0 && alpha_max > alpha_min, "schedule: need 0 <= alpha_min < alpha_max");
    require(t_warm < t_total, "schedule: t_warm must be < t_total");
}

double lr_at(std::size_t t, const WarmupCosine& s) {
    s.validate();
    if (t > s.t_total) {
        throw InvalidArgument("lr_at: epoch " + std::to_string(t) + " outside [0, " + std::to_string(s.t_total) + "]");
    }
    const double span = s.alpha_max - s.alpha_min;
    if (t < s.t_warm) return s.alpha_min + span * static_cast<double>(t) / static_cast<double>(s.t_warm);
    const double x = static_cast<double>(t - s.t_warm) / static_cast<double>(s.t_total - s.t_warm);
    return s.alpha_min + 0.5 * span * (1.0 + std::cos(std::numbers::pi * x));
}

void TrainConfig::validate(std::size_t train_size) const {
    require(alpha_g > 0.0 && alpha_d > 0.0, "train config: learning rates must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train config: betas must lie in [0, 1)");
    require(adam_eps > 0.0, "train config: adam_eps must be positive");
    require(batch >= 1, "train config: batch must be >= 1");
    require(batch <= train_size, "train config: batch " + std::to_string(batch) + " exceeds training set size " +
                                     std::to_string(train_size));
    require(epochs >= 1, "train config: epochs must be >= 1");
    require(lambda >= 0.0, "train config: lambda must be >= 0");
    if (schedule) {
        schedule->validate();
        require(epochs - 1 <= schedule->t_total, "train config: epochs run past the schedule's t_total");
    }
}

double TrainConfig::generator_lr(std::size_t epoch) const { return schedule ? lr_at(epoch, *schedule) : alpha_g; }

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["alpha_g"] = c.alpha_g;
    j["alpha_d"] = c.alpha_d;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["batch"] = c.batch;
    j["epochs"] = c.epochs;
    if (c.schedule) {
        j["schedule"] = {{"alpha_min", c.schedule->alpha_min},
                         {"alpha_max", c.schedule->alpha_max},
                         {"t_warm", c.schedule->t_warm},
                         {"t_total", c.schedule->t_total}};
    } else {
        j["schedule"] = nullptr;
    }
    j["lambda"] = c.lambda;
    j["seed"] = c.seed;
    j["max_steps_per_epoch"] = c.max_steps_per_epoch;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    require(j.is_object(), "train config must be a JSON object");
    static const std::set<std::string> known{"alpha_g", "alpha_d", "beta1", "beta2", "adam_eps", "batch",
                                             "epochs", "schedule", "lambda", "seed", "max_steps_per_epoch"};
    for (const auto& [k, v] : j.items()) require(known.count(k) > 0, "train config: unknown key '" + k + "'");
    TrainConfig c;
    try {
        c.alpha_g = j.value("alpha_g", c.alpha_g);
        c.alpha_d = j.value("alpha_d", c.alpha_d);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.batch = j.value("batch", c.batch);
        c.epochs = j.value("epochs", c.epochs);
        c.lambda = j.value("lambda", c.lambda);
        c.seed = j.value("seed", c.seed);
        c.max_steps_per_epoch = j.value("max_steps_per_epoch", c.max_steps_per_epoch);
        if (j.contains("schedule") && !j.at("schedule").is_null()) {
            const auto& s = j.at("schedule");
            WarmupCosine w;
            w.alpha_min = s.value("alpha_min", w.alpha_min);
            w.alpha_max = s.value("alpha_max", w.alpha_max);
            w.t_warm = s.value("t_warm", w.t_warm);
            w.t_total = s.value("t_total", w.t_total);
            w.validate();
            c.schedule = w;
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open train config " + path);
    try {
        return train_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

// ---- losses ---------------------------------------------------------------

Tensor discriminator_loss(const Tensor& p_real, const Tensor& p_fake) {
    if (p_real.numel() != p_fake.numel()) throw InvalidArgument("discriminator_loss: real and fake batches differ in size");
    return add(bce(p_real, 1.0), bce(p_fake, 0.0));
}

GeneratorLoss generator_loss(const Tensor& p_fake, const Tensor& fake, const Tensor& real, double lambda) {
    if (fake.shape() != real.shape()) {
        throw InvalidArgument("generator_loss: fake " + to_string(fake.shape()) + " vs real " + to_string(real.shape()));
    }
    GeneratorLoss out;
    out.adversarial = scale(bce(p_fake, 0.0), -1.0);
    const Tensor diff = sub(real, fake);
    out.recon = scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(real.dim(0)));
    out.total = add(out.adversarial, scale(out.recon, lambda));
    return out;
}

// ---- models and checkpoints -----------------------------------------------

Models make_models(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    return Models{Generator(config.generator, rng), Discriminator(config.discriminator, rng)};
}

std::vector<NamedTensor> checkpoint_tensors(const Models& models) {
    std::vector<NamedTensor> out;
    for (const auto& nt : models.generator.named_parameters()) out.push_back({"g." + nt.name, nt.tensor});
    for (const auto& nt : models.discriminator.named_parameters()) out.push_back({"d." + nt.name, nt.tensor});
    return out;
}

void save_models(const std::string& path, const std::string& config_json, const Models& models) {
    save_checkpoint(path, config_json, checkpoint_tensors(models));
}

Models load_models(const std::string& path) {
    const auto ck = load_checkpoint(path);
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": embedded config is not JSON: " + e.what());
    }
    if (!cfg.contains("model")) throw InvalidArgument(path + ": embedded config lacks a model section");
    Models m = make_models(model_config_from_json(cfg.at("model")), 0);
    m.generator.load(ck.tensors, "g.");
    m.discriminator.load(ck.tensors, "d.");
    return m;
}

std::string format_trace_row(const TraceRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.d_loss, r.g_loss, r.g_recon,
                  r.lr);
    return buf;
}

// ---- training loop --------------------------------------------------------

TrainResult train(const NormalizedArrays& data, Models& models, const TrainConfig& config,
                  const std::string& config_json, const std::string& out_dir) {
    require(data.n > 0, "train: empty training set");
    config.validate(data.n);
    const std::size_t m = data.m;
    require(m == models.generator.config().m_antennas, "train: dataset M=" + std::to_string(m) +
                                                            " but generator expects M=" +
                                                            std::to_string(models.generator.config().m_antennas));

    std::ofstream trace_out;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        trace_out.open(std::filesystem::path(out_dir) / "trace.csv", std::ios::binary);
        if (!trace_out) throw InvalidArgument("cannot write " + out_dir + "/trace.csv");
        trace_out << kTraceHeader << '\n';
    }

    auto gp = models.generator.parameters();
    auto dp = models.discriminator.parameters();
    AdamState ag{config.alpha_g, config.beta1, config.beta2, config.adam_eps, 0, {}, {}};
    AdamState ad{config.alpha_d, config.beta1, config.beta2, config.adam_eps, 0, {}, {}};

    std::size_t steps = data.n / config.batch;  // drop-last
    if (config.max_steps_per_epoch > 0) steps = std::min(steps, config.max_steps_per_epoch);
    const std::size_t b = config.batch;
    const Rng base(config.seed);

    TrainResult result;
    std::string last_good = "none";
    std::vector<std::size_t> order(data.n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        ag.lr = config.generator_lr(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = base.fork(epoch);
        shuffle(order, rng);

        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<double> xb(b * m * 4), yb(b * m * 2);
            for (std::size_t k = 0; k < b; ++k) {
                const std::size_t i = order[step * b + k];
                std::copy_n(data.x.begin() + static_cast<std::ptrdiff_t>(i * m * 4), m * 4, xb.begin() + static_cast<std::ptrdiff_t>(k * m * 4));
                std::copy_n(data.y.begin() + static_cast<std::ptrdiff_t>(i * m * 2), m * 2, yb.begin() + static_cast<std::ptrdiff_t>(k * m * 2));
            }
            const Tensor x = Tensor::from({b, m, 4}, std::move(xb));
            const Tensor y = Tensor::from({b, m, 2, 1}, std::move(yb));

            const Tensor fake = models.generator.forward(x);

            zero_grads(dp);
            const Tensor dl = discriminator_loss(models.discriminator.forward(y),
                                                 models.discriminator.forward(fake.detach()));
            dl.backward();
            adam_step(dp, ad);

            // discriminator weights act as constants in the generator step
            set_requires_grad(dp, false);
            zero_grads(gp);
            const auto gl = generator_loss(models.discriminator.forward(fake), fake, y, config.lambda);
            gl.total.backward();
            set_requires_grad(dp, true);

            const TraceRow row{epoch, step, dl.item(), gl.total.item(), gl.recon.item(), ag.lr};
            if (!finite(row.d_loss) || !finite(row.g_loss)) {
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step) + " (d_loss " + std::to_string(row.d_loss) + ", g_loss " +
                                     std::to_string(row.g_loss) + "); last good checkpoint: " + last_good);
            }
            adam_step(gp, ag);
            result.trace.push_back(row);
            if (trace_out) trace_out << format_trace_row(row) << '\n';
        }
        if (!out_dir.empty()) {
            trace_out.flush();
            const std::string path = (std::filesystem::path(out_dir) / epoch_checkpoint_name(epoch)).string();
            save_models(path, config_json, models);
            result.checkpoints.push_back(path);
            last_good = path;
        }
    }
    if (!out_dir.empty()) {
        const std::string path = (std::filesystem::path(out_dir) / "final.ckpt").string();
        save_models(path, config_json, models);
        result.checkpoints.push_back(path);
    }
    return result;
}

// ---- metrics --------------------------------------------------------------

double nmse_db(const std::vector<double>& target, const std::vector<double>& pred, std::size_t per_sample) {
    require(per_sample > 0 && target.size() == pred.size() && !target.empty() && target.size() % per_sample == 0,
            "nmse_db: target and prediction sizes must match and divide into samples");
    const std::size_t n = target.size() / per_sample;
    double acc = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = s * per_sample; k < (s + 1) * per_sample; ++k) {
            num += (target[k] - pred[k]) * (target[k] - pred[k]);
            den += target[k] * target[k];
        }
        require(den > 0.0, "nmse_db: sample " + std::to_string(s) + " has an all-zero target");
        acc += num / den;
    }
    const double mean = acc / static_cast<double>(n);
    if (!(mean > 0.0)) return kNmseFloorDb;
    return std::max(10.0 * std::log10(mean), kNmseFloorDb);
}

AccResult accuracy(const std::vector<double>& target, const std::vector<double>& pred) {
    require(target.size() == pred.size() && !target.empty(), "accuracy: target and prediction sizes must match");
    AccResult r;
    double all = 0.0, nz = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) {
        const double mag = std::abs(target[k]);
        const double term = 1.0 - std::abs(target[k] - pred[k]) / std::max(mag, kAccEps);
        all += term;
        if (mag >= kAccEps) {
            nz += term;
        } else {
            ++r.zero_elements;
        }
    }
    r.percent = 100.0 * all / static_cast<double>(target.size());
    const std::size_t n_nz = target.size() - r.zero_elements;
    r.percent_nonzero = n_nz > 0 ? 100.0 * nz / static_cast<double>(n_nz) : 100.0;
    return r;
}

std::vector<EpochLoss> summarize_trace(const std::vector<TraceRow>& trace) {
    std::vector<EpochLoss> out;
    std::vector<std::size_t> counts;
    for (const auto& r : trace) {
        if (out.empty() || out.back().epoch != r.epoch) {
            out.push_back({r.epoch, 0.0, 0.0, 0.0, r.lr});
            counts.push_back(0);
        }
        auto& e = out.back();
        e.d_loss += r.d_loss;
        e.g_loss += r.g_loss;
        e.g_recon += r.g_recon;
        ++counts.back();
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto c = static_cast<double>(counts[i]);
        out[i].d_loss /= c;
        out[i].g_loss /= c;
        out[i].g_recon /= c;
    }
    return out;
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open trace " + path);
    std::string line;
    std::getline(in, line);
    if (line != kTraceHeader) throw InvalidArgument(path + ": unexpected trace header");
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TraceRow r;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf", &r.epoch, &r.step, &r.d_loss, &r.g_loss, &r.g_recon,
                        &r.lr) != 6) {
            throw InvalidArgument(path + ": malformed trace row '" + line + "'");
        }
        rows.push_back(r);
    }
    return rows;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["samples"] = r.samples;
    j["skipped"] = r.skipped;
    j["nmse_db"] = r.nmse_db;
    j["acc_percent"] = r.acc.percent;
    j["acc_percent_nonzero"] = r.acc.percent_nonzero;
    j["acc_zero_elements"] = r.acc.zero_elements;
    j["achieved_ratio_median"] = r.achieved_ratio;
    auto& ep = j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : r.epochs) {
        nlohmann::ordered_json row;
        row["epoch"] = e.epoch;
        row["d_loss"] = e.d_loss;
        row["g_loss"] = e.g_loss;
        row["g_recon"] = e.g_recon;
        row["lr"] = e.lr;
        ep.push_back(row);
    }
    return j;
}

DatasetSplit split_dataset(const Dataset& ds) {
    const auto& cfg = ds.manifest.config;
    const auto [tr, te] = split(ds.samples.size(), cfg.split_fraction, cfg.split_seed);
    DatasetSplit out;
    out.train = normalized_arrays(ds.samples, ds.manifest.stats, tr);
    out.test.reserve(te.size());
    for (auto i : te) out.test.push_back(ds.samples[i]);
    return out;
}

std::vector<std::optional<FieldMatrix>> dataset_field_matrices(const DatasetManifest& manifest) {
    std::vector<std::optional<FieldMatrix>> out;
    for (double d : manifest.spacings) out.emplace_back(dataset_field_matrix(manifest.config, d));
    return out;
}

EvalReport evaluate(const Generator& g, const std::vector<Sample>& test, const NormStats& stats,
                    const std::vector<std::optional<FieldMatrix>>& field_matrices, const DatasetConfig& dataset) {
    require(!test.empty(), "evaluate: empty test set");
    std::vector<std::size_t> all(test.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto arr = normalized_arrays(test, stats, all);
    const std::size_t m = arr.m, n = arr.n;

    std::vector<double> pred(n * m * 2);
    {
        NoGrad ng;
        constexpr std::size_t chunk = 256;
        for (std::size_t s = 0; s < n; s += chunk) {
            const std::size_t b = std::min(chunk, n - s);
            std::vector<double> xb(arr.x.begin() + static_cast<std::ptrdiff_t>(s * m * 4),
                                   arr.x.begin() + static_cast<std::ptrdiff_t>((s + b) * m * 4));
            const auto y = g.forward(Tensor::from({b, m, 4}, std::move(xb)));
            std::copy(y.data().begin(), y.data().end(), pred.begin() + static_cast<std::ptrdiff_t>(s * m * 2));
        }
    }

    return evaluate_predictions(pred, test, stats, field_matrices, dataset);
}

EvalReport evaluate_predictions(const std::vector<double>& pred, const std::vector<Sample>& test,
                                const NormStats& stats, const std::vector<std::optional<FieldMatrix>>& field_matrices,
                                const DatasetConfig& dataset) {
    require(!test.empty(), "evaluate: empty test set");
    std::vector<std::size_t> all(test.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto arr = normalized_arrays(test, stats, all);
    const std::size_t m = arr.m, n = arr.n;
    require(pred.size() == n * m * 2, "evaluate: prediction size does not match the test set");

    EvalReport rep;
    rep.samples = n;
    rep.nmse_db = nmse_db(arr.y, pred, m * 2);
    rep.acc = accuracy(arr.y, pred);

    const std::optional<LossModel> loss =
        dataset.efficiency ? std::optional<LossModel>(loss_resistance(*dataset.efficiency)) : std::nullopt;
    std::vector<std::unique_ptr<BeamSolver>> solvers(field_matrices.size());
    for (std::size_t k = 0; k < field_matrices.size(); ++k) {
        if (field_matrices[k]) solvers[k] = std::make_unique<BeamSolver>(*field_matrices[k], dataset.solver, loss);
    }

    std::vector<double> ratio(n, -1.0);
    parallel_for(n, [&](std::size_t i) {
        const auto& s = test[i];
        if (s.spacing_index >= solvers.size() || !solvers[s.spacing_index]) return;
        const auto& fm = *field_matrices[s.spacing_index];
        CoeffSample c;
        for (std::size_t e = 0; e < m; ++e) c.rows.push_back({pred[(i * m + e) * 2], pred[(i * m + e) * 2 + 1]});
        const CVector a = decode_coeff(denormalize(c, stats));
        const Direction dir = s.direction();
        const double opt = solvers[s.spacing_index]->solve(dir).achieved;
        if (!(a.norm() > 0.0)) {
            ratio[i] = 0.0;
            return;
        }
        const double got = loss ? gain(fm, a, dir, *loss, dataset.solver) : directivity(fm, a, dir, dataset.solver);
        ratio[i] = got / opt;
    });
    std::vector<double> kept;
    for (double r : ratio) {
        if (r >= 0.0) kept.push_back(r);
    }
    rep.skipped = n - kept.size();
    if (!kept.empty()) {
        std::sort(kept.begin(), kept.end());
        const std::size_t h = kept.size() / 2;
        rep.achieved_ratio = kept.size() % 2 ? kept[h] : 0.5 * (kept[h - 1] + kept[h]);
    }
    return rep;
}

}  // namespace superdir::nn

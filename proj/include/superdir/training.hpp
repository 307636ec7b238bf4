// SPDX-License-Identifier: Apache-2.0
//
// Adversarial training of the generator against the discriminator with a
// reconstruction term, plus the held-out evaluation metrics.
#pragma once

#include "superdir/dataset.hpp"
#include "superdir/mtu_gan.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace superdir::nn {

// Linear warm-up from alpha_min to alpha_max over [0, t_warm), then a
// half-cosine back down to alpha_min at t_total. t counts epochs.
struct WarmupCosine {
    double alpha_min = 4e-6;
    double alpha_max = 1e-3;
    std::size_t t_warm = 20;
    std::size_t t_total = 100;

    void validate() const;
};

// Rejects t > t_total.
double lr_at(std::size_t t, const WarmupCosine& s);

struct TrainConfig {
    double alpha_g = 4e-4;
    double alpha_d = 4e-5;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double adam_eps = 1e-8;
    std::size_t batch = 32;
    std::size_t epochs = 30;
    std::optional<WarmupCosine> schedule;  // set: replaces alpha_g per epoch
    double lambda = 1.0;                   // weight of the reconstruction term
    std::uint64_t seed = 1;
    std::size_t max_steps_per_epoch = 0;   // 0: every full batch

    void validate(std::size_t train_size) const;
    double generator_lr(std::size_t epoch) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

// ---- losses ---------------------------------------------------------------

// mean -[log p_real + log(1 - p_fake)], probabilities clamped.
Tensor discriminator_loss(const Tensor& p_real, const Tensor& p_fake);

struct GeneratorLoss {
    Tensor total;
    Tensor adversarial;  // mean log(1 - p_fake)
    Tensor recon;        // sum of squared errors / batch
};

GeneratorLoss generator_loss(const Tensor& p_fake, const Tensor& fake, const Tensor& real, double lambda = 1.0);

// ---- training -------------------------------------------------------------

struct Models {
    Generator generator;
    Discriminator discriminator;
};

// Generator initialized first, then the discriminator, from one stream.
Models make_models(const ModelConfig& config, std::uint64_t seed);

struct TraceRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double g_recon = 0.0;
    double lr = 0.0;
};

inline constexpr const char* kTraceHeader = "epoch,step,d_loss,g_loss,g_recon,lr";
std::string format_trace_row(const TraceRow& r);

struct TrainResult {
    std::vector<TraceRow> trace;
    std::vector<std::string> checkpoints;  // per epoch, then final.ckpt
};

// Checkpoint tensor names carry "g." and "d." prefixes.
std::vector<NamedTensor> checkpoint_tensors(const Models& models);
void save_models(const std::string& path, const std::string& config_json, const Models& models);
// Rebuilds both networks from the model config embedded in the checkpoint.
Models load_models(const std::string& path);

// One discriminator step then one generator step per batch. With a nonempty
// out_dir writes out_dir/trace.csv, out_dir/epoch_NNN.ckpt and
// out_dir/final.ckpt. Non-finite losses throw NumericalError naming the last
// good checkpoint. config_json is embedded in every checkpoint and must hold
// a "model" object.
TrainResult train(const NormalizedArrays& data, Models& models, const TrainConfig& config,
                  const std::string& config_json, const std::string& out_dir = "");

// ---- evaluation -----------------------------------------------------------

inline constexpr double kNmseFloorDb = -120.0;
inline constexpr double kAccEps = 1e-8;

// 10 log10(mean_s ||t_s - p_s||^2 / ||t_s||^2) over samples of `per_sample`
// values, floored at kNmseFloorDb. Samples with ||t_s|| = 0 are rejected.
double nmse_db(const std::vector<double>& target, const std::vector<double>& pred, std::size_t per_sample);

struct AccResult {
    double percent = 0.0;          // every element, |t| guarded by kAccEps
    double percent_nonzero = 0.0;  // elements with |t| >= kAccEps only
    std::size_t zero_elements = 0;
};

AccResult accuracy(const std::vector<double>& target, const std::vector<double>& pred);

struct EpochLoss {
    std::size_t epoch = 0;
    double d_loss = 0.0, g_loss = 0.0, g_recon = 0.0, lr = 0.0;  // epoch means, lr as used
};

std::vector<EpochLoss> summarize_trace(const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_trace_csv(const std::string& path);

struct EvalReport {
    std::size_t samples = 0;
    std::size_t skipped = 0;  // no field matrix for the sample's spacing
    double nmse_db = 0.0;
    AccResult acc;
    double achieved_ratio = 0.0;  // median D(a_hat) / D(a_opt), or gain ratio
    std::vector<EpochLoss> epochs;
};

nlohmann::ordered_json to_json(const EvalReport& r);

// Metrics run on the normalized arrays; the achieved ratio denormalizes,
// reassembles the complex excitation and scores it against the solver
// optimum on field_matrices[spacing_index] (missing entries are skipped).
EvalReport evaluate(const Generator& g, const std::vector<Sample>& test, const NormStats& stats,
                    const std::vector<std::optional<FieldMatrix>>& field_matrices, const DatasetConfig& dataset);

// Same metrics for precomputed normalized predictions laid out n x M x 2.
EvalReport evaluate_predictions(const std::vector<double>& pred, const std::vector<Sample>& test,
                                const NormStats& stats, const std::vector<std::optional<FieldMatrix>>& field_matrices,
                                const DatasetConfig& dataset);

// Train arrays and held-out samples per the manifest's split fraction and seed.
struct DatasetSplit {
    NormalizedArrays train;
    std::vector<Sample> test;
};

DatasetSplit split_dataset(const Dataset& ds);

// Field matrices for every manifest spacing.
std::vector<std::optional<FieldMatrix>> dataset_field_matrices(const DatasetManifest& manifest);

}  // namespace superdir::nn

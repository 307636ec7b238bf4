// SPDX-License-Identifier: Apache-2.0
//
// (field, excitation) training pairs: one pair per (spacing, grid direction),
// the excitation being the solver optimum for that direction.
#pragma once

#include "superdir/array_field.hpp"
#include "superdir/beamforming.hpp"
#include "superdir/geometry_config.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace superdir {

inline constexpr int kDatasetFormatVersion = 1;

// One row per antenna: theta_deg, phi_deg, amplitude, phase_rad.
struct FieldSample {
    std::vector<std::array<double, 4>> rows;
    std::size_t m() const { return rows.size(); }
};

// One row per antenna: amplitude, phase_rad.
struct CoeffSample {
    std::vector<std::array<double, 2>> rows;
    std::size_t m() const { return rows.size(); }
};

// Wraps into [-pi, pi).
double wrap_phase(double rad);

std::pair<FieldSample, CoeffSample> encode_sample(const Direction& direction, const CVector& steering,
                                                  const CVector& excitation);
CVector decode_field(const FieldSample& f);
CVector decode_coeff(const CoeffSample& c);

struct Sample {
    FieldSample field;
    CoeffSample coeff;
    double spacing_wl = 0.0;
    std::size_t spacing_index = 0;

    Direction direction() const { return {field.rows.at(0)[0], field.rows.at(0)[1]}; }
};

struct Range {
    double min = 0.0;
    double max = 0.0;

    // (x - min) / (max - min); 0 when the range is degenerate.
    double normalize(double x) const { return max > min ? (x - min) / (max - min) : 0.0; }
    double denormalize(double y) const { return max > min ? min + y * (max - min) : min; }
};

struct NormStats {
    Range field_amp, field_phase, theta, phi, coeff_amp, coeff_phase;
};

NormStats fit_norm_stats(const std::vector<Sample>& samples);

FieldSample normalize(const FieldSample& f, const NormStats& s);
CoeffSample normalize(const CoeffSample& c, const NormStats& s);
FieldSample denormalize(const FieldSample& f, const NormStats& s);
CoeffSample denormalize(const CoeffSample& c, const NormStats& s);

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

// Seeded uniform train/test index partition: shuffle, then take the first
// round(fraction * n) indices as train.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t n, double train_fraction,
                                                                    std::uint64_t seed);

struct SpacingSampler {
    std::size_t count = 40;
    double lo = 0.10;
    double hi = 0.50;
    std::uint64_t seed = 1;

    // count seeded uniform draws in [lo, hi], ascending.
    std::vector<double> draw() const;
};

struct GridSpec {
    double theta_step_deg = 15.0;
    double phi_step_deg = 15.0;
    Weighting weighting = Weighting::uniform;
    std::vector<Direction> custom;  // nonempty: unit-weight custom grid instead of the regular one

    SamplingGrid build() const;
};

// "a,b" -> (a, b) steps.
GridSpec parse_grid_spec(const std::string& s, Weighting weighting = Weighting::uniform);

struct DatasetConfig {
    GeometryConfig geometry;
    GridSpec grid;
    SpacingSampler spacings;
    std::optional<double> efficiency;  // set: targets maximize gain instead of directivity
    DirectivityOptions solver;
    double split_fraction = 0.7;
    std::uint64_t split_seed = 1;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

// Field matrix the targets for `spacing` were solved on (element-power
// normalized when the config maximizes gain).
FieldMatrix dataset_field_matrix(const DatasetConfig& c, double spacing_wl);

struct Anomaly {
    std::size_t spacing_index = 0;
    std::size_t direction_index = 0;
    std::string reason;
};

struct DatasetManifest {
    DatasetConfig config;
    std::vector<double> spacings;
    std::size_t directions = 0;
    std::size_t sample_count = 0;
    std::size_t anomaly_count = 0;
    NormStats stats;
    int format_version = kDatasetFormatVersion;
};

struct Dataset {
    std::vector<Sample> samples;
    DatasetManifest manifest;
    std::vector<Anomaly> anomalies;
};

// Aborts with NumericalError when more than 10% of the pairs are anomalous.
Dataset generate_dataset(const DatasetConfig& config);

// <dir>/samples.jsonl and <dir>/manifest.json
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// Keys in file order: theta_deg, phi_deg, spacing_wl, m, field, coeff.
nlohmann::ordered_json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

// Flattened network arrays: x is n x M x 4 (theta, phi, amp, phase), y is
// n x M x 2 (amp, phase), all min-max normalized.
struct NormalizedArrays {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> x;
    std::vector<double> y;
};

NormalizedArrays normalized_arrays(const std::vector<Sample>& samples, const NormStats& stats,
                                   const std::vector<std::size_t>& indices);

}  // namespace superdir

// SPDX-License-Identifier: Apache-2.0
//
// MultiTransUNet generator and convolutional discriminator on the autodiff
// engine. Layouts: generator input (B, M, 4[, 1]) of normalized field rows,
// output (B, M, 2, 1) of normalized (amplitude, phase) rows.
#pragma once

#include "superdir/tensor.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

namespace superdir::nn {

// feature4: lift to (4, S, S), first conv has 4 input channels.
// antenna:  lift to (M, S, S), first conv has M input channels.
enum class LiftMode { feature4, antenna };

struct GeneratorConfig {
    std::size_t m_antennas = 4;
    std::size_t spatial = 16;
    std::size_t base_channels = 8;
    std::size_t depth = 4;
    std::size_t transformer_dim = 96;
    std::size_t transformer_heads = 2;
    std::size_t mlp_ratio = 4;
    std::size_t transformer_layers = 1;
    std::size_t gsa_reduction = 8;
    std::size_t input_branch_channels = 3;
    LiftMode lift = LiftMode::feature4;

    // Throws InvalidArgument naming the offending field.
    void validate() const;
    std::size_t lift_channels() const { return lift == LiftMode::feature4 ? 4 : m_antennas; }
};

struct DiscriminatorConfig {
    std::size_t m_antennas = 4;
    std::size_t spatial = 16;
    std::vector<std::size_t> channels{16, 32, 64, 128, 256};

    void validate() const;
};

struct ModelConfig {
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
};

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
nlohmann::json to_json(const ModelConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
ModelConfig load_model_config(const std::string& path);

// ---- building blocks ------------------------------------------------------

struct TransformerParams {
    std::size_t heads = 1;
    Tensor wq, wk, wv;          // (d, d), no bias
    Tensor ln1_gamma, ln1_beta;  // (d)
    Tensor w1, b1;              // (hidden, d), (hidden)
    Tensor w2, b2;              // (d, hidden), (d)
    Tensor ln2_gamma, ln2_beta;
};

struct GsaParams {
    Tensor wk, wq;  // (c/gamma, c, 1, 1)
    Tensor wv;      // (c, c, 1, 1)
};

// Attention weights in column convention: entry (j, i) is the weight of
// position j in the output at position i, so every column sums to one.
// Transformer: (B * heads, n, n); GSA: (B, wh, wh).
struct AttentionCapture {
    Tensor weights;
};

// x (B, n, d): n positions, d features. Z = LN(X + attn(X)),
// O = LN(Z + W2 relu(W1 Z + u1) + u2).
Tensor transformer_block(const Tensor& x, const TransformerParams& p, AttentionCapture* capture = nullptr);

// x (B, c, h, w) -> (B, c, h, w).
Tensor gsa_block(const Tensor& x, const GsaParams& p, AttentionCapture* capture = nullptr);

// X_en + F_t + F_g; all three must share a shape.
Tensor fuse_attention(const Tensor& x_en, const Tensor& f_t, const Tensor& f_g);

// ---- networks -------------------------------------------------------------

class Module {
public:
    const std::vector<NamedTensor>& named_parameters() const { return params_; }
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;
    // Copies values by name; every parameter must be present with its shape.
    void load(const std::vector<NamedTensor>& tensors, const std::string& prefix = "");

protected:
    Tensor add_param(const std::string& name, const Shape& shape, Init scheme, Rng& rng, std::size_t fan_in = 0);
    Tensor add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng);

private:
    std::vector<NamedTensor> params_;
};

class Generator : public Module {
public:
    Generator(const GeneratorConfig& config, Rng& rng);

    const GeneratorConfig& config() const { return cfg_; }
    Tensor forward(const Tensor& field_batch) const;

    // Bottleneck blocks, exposed for inspection.
    const std::vector<TransformerParams>& transformer() const { return transformer_; }
    const GsaParams& gsa() const { return gsa_; }

private:
    struct Conv {
        Tensor w;
        std::size_t stride = 1, pad = 0;
    };

    GeneratorConfig cfg_;
    Tensor lift_w_, lift_b_;
    std::vector<std::pair<Conv, Conv>> enc_;
    Conv bin_, bout_;
    std::vector<TransformerParams> transformer_;
    GsaParams gsa_;
    std::vector<Conv> up_, fuse_;
    std::map<std::pair<std::size_t, std::size_t>, Conv> proj_;  // (from level, to level)
    Conv input_branch_, final_;
    Tensor out_w_, out_b_;
};

class Discriminator : public Module {
public:
    Discriminator(const DiscriminatorConfig& config, Rng& rng);

    const DiscriminatorConfig& config() const { return cfg_; }
    // Any layout with B * M * 2 entries -> (B, 1) probabilities.
    Tensor forward(const Tensor& coeff_batch) const;

    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

private:
    DiscriminatorConfig cfg_;
    Tensor lift_w_, lift_b_;
    std::vector<Tensor> convs_;
    Tensor head_w_, head_b_;
};

// Decoder channel widths, shallowest-resolution level first.
std::vector<std::size_t> decoder_channels(const GeneratorConfig& c);

// Trainable parameter counts enumerated from the config alone.
std::size_t count_params(const GeneratorConfig& c);
std::size_t count_params(const DiscriminatorConfig& c);

}  // namespace superdir::nn

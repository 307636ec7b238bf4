// SPDX-License-Identifier: Apache-2.0
#include "superdir/mtu_gan.hpp"

#include "superdir/error.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace superdir::nn {
namespace {

std::size_t pow2(std::size_t k) { return std::size_t{1} << k; }

void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument(what);
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
    require(j.is_object(), std::string(what) + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        require(known.count(k) > 0, std::string(what) + ": unknown key '" + k + "'");
    }
}

std::size_t enc_channels(const GeneratorConfig& c, std::size_t level) { return c.base_channels * pow2(level); }

}  // namespace

// ---- configs --------------------------------------------------------------

void GeneratorConfig::validate() const {
    require(m_antennas >= 1, "generator: m_antennas must be >= 1");
    require(depth >= 1 && depth <= 8, "generator: depth must be in [1, 8]");
    require(spatial >= pow2(depth) && spatial % pow2(depth) == 0,
            "generator: spatial " + std::to_string(spatial) + " must be divisible by 2^depth = " +
                std::to_string(pow2(depth)));
    require(base_channels >= 2 && base_channels % 2 == 0, "generator: base_channels must be even and >= 2");
    require(transformer_heads >= 1 && transformer_dim % transformer_heads == 0,
            "generator: transformer_dim " + std::to_string(transformer_dim) + " not divisible by heads " +
                std::to_string(transformer_heads));
    require(gsa_reduction >= 1 && transformer_dim % gsa_reduction == 0,
            "generator: transformer_dim " + std::to_string(transformer_dim) + " not divisible by gsa_reduction " +
                std::to_string(gsa_reduction));
    require(mlp_ratio >= 1, "generator: mlp_ratio must be >= 1");
    require(transformer_layers >= 1, "generator: transformer_layers must be >= 1");
    require(input_branch_channels >= 1, "generator: input_branch_channels must be >= 1");
}

void DiscriminatorConfig::validate() const {
    require(m_antennas >= 1, "discriminator: m_antennas must be >= 1");
    require(spatial >= 1, "discriminator: spatial must be >= 1");
    require(channels.size() == 5, "discriminator: exactly five conv blocks required, got " + std::to_string(channels.size()));
    for (auto c : channels) require(c >= 1, "discriminator: channel widths must be >= 1");
}

nlohmann::json to_json(const GeneratorConfig& c) {
    nlohmann::ordered_json j;
    j["m_antennas"] = c.m_antennas;
    j["spatial"] = c.spatial;
    j["base_channels"] = c.base_channels;
    j["depth"] = c.depth;
    j["transformer_dim"] = c.transformer_dim;
    j["transformer_heads"] = c.transformer_heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["transformer_layers"] = c.transformer_layers;
    j["gsa_reduction"] = c.gsa_reduction;
    j["input_branch_channels"] = c.input_branch_channels;
    j["lift"] = c.lift == LiftMode::feature4 ? "feature4" : "antenna";
    return j;
}

nlohmann::json to_json(const DiscriminatorConfig& c) {
    nlohmann::ordered_json j;
    j["m_antennas"] = c.m_antennas;
    j["spatial"] = c.spatial;
    j["channels"] = c.channels;
    return j;
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["generator"] = to_json(c.generator);
    j["discriminator"] = to_json(c.discriminator);
    return j;
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"m_antennas", "spatial", "base_channels", "depth", "transformer_dim", "transformer_heads", "mlp_ratio",
                    "transformer_layers", "gsa_reduction", "input_branch_channels", "lift"},
                   "generator");
    GeneratorConfig c;
    try {
        c.m_antennas = j.value("m_antennas", c.m_antennas);
        c.spatial = j.value("spatial", c.spatial);
        c.base_channels = j.value("base_channels", c.base_channels);
        c.depth = j.value("depth", c.depth);
        c.transformer_dim = j.value("transformer_dim", c.transformer_dim);
        c.transformer_heads = j.value("transformer_heads", c.transformer_heads);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.transformer_layers = j.value("transformer_layers", c.transformer_layers);
        c.gsa_reduction = j.value("gsa_reduction", c.gsa_reduction);
        c.input_branch_channels = j.value("input_branch_channels", c.input_branch_channels);
        const std::string lift = j.value("lift", std::string("feature4"));
        require(lift == "feature4" || lift == "antenna", "generator: lift must be 'feature4' or 'antenna'");
        c.lift = lift == "feature4" ? LiftMode::feature4 : LiftMode::antenna;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("generator config: ") + e.what());
    }
    c.validate();
    return c;
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"m_antennas", "spatial", "channels"}, "discriminator");
    DiscriminatorConfig c;
    try {
        c.m_antennas = j.value("m_antennas", c.m_antennas);
        c.spatial = j.value("spatial", c.spatial);
        c.channels = j.value("channels", c.channels);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("discriminator config: ") + e.what());
    }
    c.validate();
    return c;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"generator", "discriminator"}, "model config");
    ModelConfig c;
    if (j.contains("generator")) c.generator = generator_config_from_json(j.at("generator"));
    nlohmann::json d = j.value("discriminator", nlohmann::json::object());
    // the discriminator sees the generator's output, so it inherits M and S
    if (!d.contains("m_antennas")) d["m_antennas"] = c.generator.m_antennas;
    if (!d.contains("spatial")) d["spatial"] = c.generator.spatial;
    c.discriminator = discriminator_config_from_json(d);
    require(c.discriminator.m_antennas == c.generator.m_antennas, "model config: discriminator and generator M differ");
    return c;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open model config " + path);
    try {
        return model_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

// ---- blocks ---------------------------------------------------------------

Tensor transformer_block(const Tensor& x, const TransformerParams& p, AttentionCapture* capture) {
    if (x.ndim() != 3) throw InvalidArgument("transformer_block: input must be (B, n, d), got " + to_string(x.shape()));
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2), h = p.heads;
    if (h == 0 || d % h != 0) throw InvalidArgument("transformer_block: d " + std::to_string(d) + " not divisible by heads");
    const std::size_t dh = d / h;
    auto split_heads = [&](const Tensor& t) {
        return reshape(permute(reshape(t, {b, n, h, dh}), {0, 2, 1, 3}), {b * h, n, dh});
    };
    const Tensor q = split_heads(linear(x, p.wq, {}));
    const Tensor k = split_heads(linear(x, p.wk, {}));
    const Tensor v = split_heads(linear(x, p.wv, {}));
    // scores(i, j) = q_i . k_j; softmax over keys j
    const Tensor a = softmax(scale(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh))), 2);
    if (capture) capture->weights = transpose(a, 1, 2).detach();
    const Tensor o = reshape(permute(reshape(matmul(a, v), {b, h, n, dh}), {0, 2, 1, 3}), {b, n, d});
    const Tensor z = layer_norm(add(x, o), p.ln1_gamma, p.ln1_beta);
    const Tensor f = linear(relu(linear(z, p.w1, p.b1)), p.w2, p.b2);
    return layer_norm(add(z, f), p.ln2_gamma, p.ln2_beta);
}

Tensor gsa_block(const Tensor& x, const GsaParams& p, AttentionCapture* capture) {
    if (x.ndim() != 4) throw InvalidArgument("gsa_block: input must be (B, c, h, w), got " + to_string(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
    const std::size_t cr = p.wk.dim(0);
    const Tensor k = reshape(conv2d(x, p.wk, 1, 0), {b, cr, n});
    const Tensor q = reshape(conv2d(x, p.wq, 1, 0), {b, cr, n});
    const Tensor v = reshape(conv2d(x, p.wv, 1, 0), {b, c, n});
    const Tensor z = softmax(scale(matmul(transpose(k, 1, 2), q), 1.0 / std::sqrt(static_cast<double>(n))), 1);
    if (capture) capture->weights = z.detach();
    return reshape(matmul(v, z), x.shape());
}

Tensor fuse_attention(const Tensor& x_en, const Tensor& f_t, const Tensor& f_g) {
    if (x_en.shape() != f_t.shape() || x_en.shape() != f_g.shape()) {
        throw InvalidArgument("fuse_attention: shapes " + to_string(x_en.shape()) + ", " + to_string(f_t.shape()) + ", " +
                              to_string(f_g.shape()) + " differ");
    }
    return add(add(x_en, f_t), f_g);
}

// ---- module plumbing ------------------------------------------------------

std::vector<Tensor> Module::parameters() const {
    std::vector<Tensor> out;
    for (const auto& nt : params_) out.push_back(nt.tensor);
    return out;
}

std::size_t Module::parameter_count() const {
    std::size_t n = 0;
    for (const auto& nt : params_) n += nt.tensor.numel();
    return n;
}

void Module::load(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
    for (auto& nt : params_) {
        const auto it = by_name.find(prefix + nt.name);
        if (it == by_name.end()) throw InvalidArgument("checkpoint lacks parameter " + prefix + nt.name);
        if (it->second->shape() != nt.tensor.shape()) {
            throw InvalidArgument("parameter " + prefix + nt.name + " has shape " + to_string(it->second->shape()) +
                                  ", model expects " + to_string(nt.tensor.shape()));
        }
        nt.tensor.data() = it->second->data();
    }
}

Tensor Module::add_param(const std::string& name, const Shape& shape, Init scheme, Rng& rng, std::size_t fan_in) {
    Tensor t = init_tensor(shape, scheme, rng, fan_in);
    params_.push_back({name, t});
    return t;
}

Tensor Module::add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) {
    return add_param(name, {cout, cin, k, k}, Init::fan_in_uniform, rng, cin * k * k);
}

std::vector<std::size_t> decoder_channels(const GeneratorConfig& c) {
    std::vector<std::size_t> out;
    const std::size_t top = enc_channels(c, c.depth - 1);
    for (std::size_t i = 0; i < c.depth; ++i) out.push_back(top / pow2(i + 1));
    return out;
}

// ---- generator ------------------------------------------------------------

Generator::Generator(const GeneratorConfig& config, Rng& rng) : cfg_(config) {
    cfg_.validate();
    const std::size_t m = cfg_.m_antennas, s = cfg_.spatial, lc = cfg_.lift_channels(), L = cfg_.depth;
    const std::size_t d = cfg_.transformer_dim, hidden = cfg_.mlp_ratio * d;

    lift_w_ = add_param("lift.w", {lc * s * s, 4 * m}, Init::fan_in_uniform, rng, 4 * m);
    lift_b_ = add_param("lift.b", {lc * s * s}, Init::zeros, rng);

    std::size_t cin = lc;
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t c = enc_channels(cfg_, j);
        const std::string pre = "enc" + std::to_string(j);
        Conv a{add_conv(pre + ".conv1.w", cin, c, 3, rng), 1, 1};
        Conv b{add_conv(pre + ".conv2.w", c, c, 3, rng), 2, 1};
        enc_.emplace_back(a, b);
        cin = c;
    }
    const std::size_t top = cin;
    bin_ = {add_conv("bottleneck.in.w", top, d, 1, rng), 1, 0};

    for (std::size_t l = 0; l < cfg_.transformer_layers; ++l) {
        const std::string pre = "transformer" + std::to_string(l);
        TransformerParams p;
        p.heads = cfg_.transformer_heads;
        p.wq = add_param(pre + ".wq", {d, d}, Init::fan_in_uniform, rng, d);
        p.wk = add_param(pre + ".wk", {d, d}, Init::fan_in_uniform, rng, d);
        p.wv = add_param(pre + ".wv", {d, d}, Init::fan_in_uniform, rng, d);
        p.ln1_gamma = add_param(pre + ".ln1.gamma", {d}, Init::ones, rng);
        p.ln1_beta = add_param(pre + ".ln1.beta", {d}, Init::zeros, rng);
        p.w1 = add_param(pre + ".fc1.w", {hidden, d}, Init::fan_in_uniform, rng, d);
        p.b1 = add_param(pre + ".fc1.b", {hidden}, Init::zeros, rng);
        p.w2 = add_param(pre + ".fc2.w", {d, hidden}, Init::fan_in_uniform, rng, hidden);
        p.b2 = add_param(pre + ".fc2.b", {d}, Init::zeros, rng);
        p.ln2_gamma = add_param(pre + ".ln2.gamma", {d}, Init::ones, rng);
        p.ln2_beta = add_param(pre + ".ln2.beta", {d}, Init::zeros, rng);
        transformer_.push_back(p);
    }
    const std::size_t cr = d / cfg_.gsa_reduction;
    gsa_.wk = add_conv("gsa.wk", d, cr, 1, rng);
    gsa_.wq = add_conv("gsa.wq", d, cr, 1, rng);
    gsa_.wv = add_conv("gsa.wv", d, d, 1, rng);
    bout_ = {add_conv("bottleneck.out.w", d, top, 1, rng), 1, 0};

    const auto dch = decoder_channels(cfg_);
    for (std::size_t i = 0; i < L; ++i) {
        const std::string pre = "dec" + std::to_string(i);
        const std::size_t up_in = i == 0 ? top : dch[i - 1];
        up_.push_back({add_conv(pre + ".up.w", up_in, dch[i], 1, rng), 1, 0});
        for (std::size_t src = 0; src < i; ++src) {
            proj_[{src, i}] = {add_conv(pre + ".proj" + std::to_string(src) + ".w", dch[src], dch[i], 1, rng), 1, 0};
        }
        const bool last = i + 1 == L;
        const std::size_t fuse_in = last ? dch[i] * L + cfg_.input_branch_channels : dch[i] * (2 + i);
        if (last) input_branch_ = {add_conv(pre + ".input_branch.w", lc, cfg_.input_branch_channels, 1, rng), 1, 0};
        fuse_.push_back({add_conv(pre + ".fuse.w", fuse_in, dch[i], 1, rng), 1, 0});
    }
    final_ = {add_conv("final.w", dch.back() * (L + 1), m, 3, rng), 1, 1};
    out_w_ = add_param("out.w", {2 * m, m * s * s}, Init::fan_in_uniform, rng, m * s * s);
    out_b_ = add_param("out.b", {2 * m}, Init::zeros, rng);
}

Tensor Generator::forward(const Tensor& field_batch) const {
    const std::size_t m = cfg_.m_antennas, s = cfg_.spatial, L = cfg_.depth, lc = cfg_.lift_channels();
    if (field_batch.ndim() < 2 || field_batch.numel() != field_batch.dim(0) * m * 4) {
        throw InvalidArgument("generator: input must be (B, " + std::to_string(m) + ", 4), got " +
                              to_string(field_batch.shape()));
    }
    const std::size_t b = field_batch.dim(0);
    auto conv = [](const Tensor& x, const Conv& c) { return conv2d(x, c.w, c.stride, c.pad); };

    const Tensor x0 = reshape(linear(reshape(field_batch, {b, 4 * m}), lift_w_, lift_b_), {b, lc, s, s});
    Tensor h = x0;
    std::vector<Tensor> skips;
    for (const auto& [c1, c2] : enc_) {
        h = relu(conv(relu(conv(h, c1)), c2));
        skips.push_back(h);
    }

    const Tensor e = conv(h, bin_);
    const std::size_t d = e.dim(1), hb = e.dim(2), wb = e.dim(3);
    Tensor t = transpose(reshape(e, {b, d, hb * wb}), 1, 2);
    for (const auto& p : transformer_) t = transformer_block(t, p);
    const Tensor f_t = reshape(transpose(t, 1, 2), e.shape());
    h = conv(fuse_attention(e, f_t, gsa_block(e, gsa_)), bout_);

    // 1x1 convs and relu commute with nearest upsampling, so both run at the
    // coarse resolution
    std::vector<Tensor> outs;
    Tensor last_u;
    std::vector<Tensor> last_proj;
    for (std::size_t i = 0; i < L; ++i) {
        const bool last = i + 1 == L;
        const Tensor u = upsample_nearest(relu(conv(h, up_[i])), 2);
        std::vector<Tensor> parts{u};
        if (!last) parts.push_back(skips[L - 2 - i]);
        std::vector<Tensor> projs;
        for (std::size_t src = 0; src < i; ++src) {
            projs.push_back(upsample_nearest(conv(outs[src], proj_.at({src, i})), pow2(i - src)));
        }
        parts.insert(parts.end(), projs.begin(), projs.end());
        if (last) {
            parts.push_back(conv(x0, input_branch_));
            last_u = u;
            last_proj = projs;
        }
        h = relu(conv(concat(parts, 1), fuse_[i]));
        outs.push_back(h);
    }
    std::vector<Tensor> tail{h, last_u};
    tail.insert(tail.end(), last_proj.begin(), last_proj.end());
    const Tensor y = conv(concat(tail, 1), final_);
    return reshape(linear(reshape(y, {b, m * s * s}), out_w_, out_b_), {b, m, 2, 1});
}

// ---- discriminator --------------------------------------------------------

namespace {

std::size_t disc_final_spatial(const DiscriminatorConfig& c) {
    std::size_t s = c.spatial;
    for (std::size_t i = 0; i < c.channels.size(); ++i) s = (s + 2 - 3) / 2 + 1;
    return s;
}

}  // namespace

Discriminator::Discriminator(const DiscriminatorConfig& config, Rng& rng) : cfg_(config) {
    cfg_.validate();
    const std::size_t m = cfg_.m_antennas, s = cfg_.spatial;
    lift_w_ = add_param("lift.w", {s * s, 2 * m}, Init::fan_in_uniform, rng, 2 * m);
    lift_b_ = add_param("lift.b", {s * s}, Init::zeros, rng);
    std::size_t cin = 1;
    for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
        convs_.push_back(add_conv("block" + std::to_string(i) + ".w", cin, cfg_.channels[i], 3, rng));
        cin = cfg_.channels[i];
    }
    const std::size_t fs = disc_final_spatial(cfg_);
    const std::size_t flat = cin * fs * fs;
    head_w_ = add_param("head.w", {1, flat}, Init::fan_in_uniform, rng, flat);
    head_b_ = add_param("head.b", {1}, Init::zeros, rng);
}

Tensor Discriminator::forward(const Tensor& coeff_batch) const {
    const std::size_t m = cfg_.m_antennas, s = cfg_.spatial;
    if (coeff_batch.ndim() < 2 || coeff_batch.numel() != coeff_batch.dim(0) * 2 * m) {
        throw InvalidArgument("discriminator: input must hold (B, " + std::to_string(m) + ", 2), got " +
                              to_string(coeff_batch.shape()));
    }
    const std::size_t b = coeff_batch.dim(0);
    Tensor h = reshape(linear(reshape(coeff_batch, {b, 2 * m}), lift_w_, lift_b_), {b, 1, s, s});
    for (const auto& w : convs_) h = relu(conv2d(h, w, 2, 1));
    return sigmoid(linear(reshape(h, {b, h.numel() / b}), head_w_, head_b_));
}

// ---- parameter counts -----------------------------------------------------

std::size_t count_params(const GeneratorConfig& c) {
    c.validate();
    const std::size_t m = c.m_antennas, s = c.spatial, lc = c.lift_channels(), L = c.depth;
    const std::size_t d = c.transformer_dim, hidden = c.mlp_ratio * d;
    std::size_t n = 4 * m * lc * s * s + lc * s * s;  // lift
    std::size_t cin = lc;
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t ch = enc_channels(c, j);
        n += 9 * cin * ch + 9 * ch * ch;
        cin = ch;
    }
    n += 2 * cin * d;  // bottleneck in/out
    n += c.transformer_layers * (3 * d * d + 4 * d + hidden * d + hidden + d * hidden + d);
    n += 2 * (d / c.gsa_reduction) * d + d * d;
    const auto dch = decoder_channels(c);
    for (std::size_t i = 0; i < L; ++i) {
        n += (i == 0 ? cin : dch[i - 1]) * dch[i];  // up
        for (std::size_t src = 0; src < i; ++src) n += dch[src] * dch[i];
        const bool last = i + 1 == L;
        n += (last ? dch[i] * L + c.input_branch_channels : dch[i] * (2 + i)) * dch[i];
    }
    n += lc * c.input_branch_channels;
    n += 9 * dch.back() * (L + 1) * m;
    n += m * s * s * 2 * m + 2 * m;
    return n;
}

std::size_t count_params(const DiscriminatorConfig& c) {
    c.validate();
    const std::size_t s = c.spatial;
    std::size_t n = 2 * c.m_antennas * s * s + s * s;
    std::size_t cin = 1;
    for (auto ch : c.channels) {
        n += 9 * cin * ch;
        cin = ch;
    }
    const std::size_t fs = disc_final_spatial(c);
    return n + cin * fs * fs + 1;
}

}  // namespace superdir::nn

#pragma once

// Reduced-width encoder/decoder around the splat-and-pool fusion, and its checkpoint format.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mesr/autodiff.hpp"
#include "mesr/rng.hpp"
#include "mesr/sequence.hpp"
#include "mesr/splat_pool.hpp"
#include "mesr/tensor.hpp"

namespace mesr {

struct NetConfig {
    int n_features = 16;
    int encoder_blocks = 2;
    int decoder_blocks = 3;
    int kernel_size = 3;
    int scale = 2;
    PoolMode pool{};
    // Input/output scalings so activations stay O(1): details are divided by
    // detail_scale, raw frames by intensity_scale; the decoder output is
    // multiplied back by detail_scale.
    double detail_scale = 50.0;
    double intensity_scale = 3400.0;

    void validate() const
    {
        if (n_features < 1 || encoder_blocks < 1 || decoder_blocks < 1)
            throw Error("NetConfig: feature and block counts must be >= 1");
        if (kernel_size < 1 || kernel_size % 2 == 0) throw Error("NetConfig: kernel_size must be odd");
        if (scale < 1) throw Error("NetConfig: scale must be >= 1");
        if (!(detail_scale > 0.0) || !(intensity_scale > 0.0)) throw Error("NetConfig: scales must be positive");
        if (pool.stat_count() == 0) throw Error("NetConfig: empty pooling mode");
    }

    int decoder_inputs() const { return pool.stat_count() * n_features + 1; }

    /// Receptive-field radius of the decoder in HR pixels.
    int decoder_radius() const { return (kernel_size / 2) * (2 + 2 * decoder_blocks); }

    /// Receptive-field radius of the encoder in LR pixels.
    int encoder_radius() const { return (kernel_size / 2) * (2 + 2 * encoder_blocks); }

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

inline nlohmann::json to_json(const NetConfig& c)
{
    return {{"n_features", c.n_features},     {"encoder_blocks", c.encoder_blocks}, {"decoder_blocks", c.decoder_blocks},
            {"kernel_size", c.kernel_size},   {"scale", c.scale},                   {"pool", c.pool.name()},
            {"detail_scale", c.detail_scale}, {"intensity_scale", c.intensity_scale}, {"padding", "reflection"}};
}

inline NetConfig net_config_from_json(const nlohmann::json& j)
{
    NetConfig c;
    c.n_features = detail::field<int>(j, "n_features");
    c.encoder_blocks = detail::field<int>(j, "encoder_blocks");
    c.decoder_blocks = detail::field<int>(j, "decoder_blocks");
    c.kernel_size = detail::field<int>(j, "kernel_size");
    c.scale = detail::field<int>(j, "scale");
    c.pool = PoolMode::parse(detail::field<std::string>(j, "pool"));
    c.detail_scale = detail::field<double>(j, "detail_scale");
    c.intensity_scale = detail::field<double>(j, "intensity_scale");
    c.validate();
    return c;
}

struct ParamSpec {
    std::string name;
    int n, c, h, w;
    int fan_in() const { return c * h * w; }
    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
};

/// Parameters in declaration order: encoder then decoder, each conv as weight then bias.
inline std::vector<ParamSpec> param_manifest(const NetConfig& cfg)
{
    cfg.validate();
    const int N = cfg.n_features, k = cfg.kernel_size;
    std::vector<ParamSpec> out;
    auto conv = [&](const std::string& name, int cin, int cout) {
        out.push_back({name + ".weight", cout, cin, k, k});
        out.push_back({name + ".bias", 1, cout, 1, 1});
    };
    conv("enc.head", 2, N);
    for (int b = 0; b < cfg.encoder_blocks; ++b) {
        conv("enc.block" + std::to_string(b) + ".conv1", N, N);
        conv("enc.block" + std::to_string(b) + ".conv2", N, N);
    }
    conv("enc.tail", N, N);
    conv("dec.head", cfg.decoder_inputs(), N);
    for (int b = 0; b < cfg.decoder_blocks; ++b) {
        conv("dec.block" + std::to_string(b) + ".conv1", N, N);
        conv("dec.block" + std::to_string(b) + ".conv2", N, N);
    }
    conv("dec.tail", N, 1);
    return out;
}

template <class Real>
struct NetParams {
    NetConfig config;
    std::vector<Tensor<Real>> tensors;  // manifest order

    template <class Other>
    NetParams<Other> cast() const
    {
        NetParams<Other> p{config, {}};
        for (const auto& t : tensors) p.tensors.push_back(t.template cast<Other>());
        return p;
    }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
template <class Real>
NetParams<Real> init_params(const NetConfig& cfg, Rng& rng)
{
    NetParams<Real> p{cfg, {}};
    for (const auto& spec : param_manifest(cfg)) {
        // Bias fan-in is that of the weight it belongs to, i.e. the previous entry.
        const int fan = spec.name.ends_with(".bias") ? p.tensors.back().c * p.tensors.back().h * p.tensors.back().w
                                                     : spec.fan_in();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
        Tensor<Real> t(spec.n, spec.c, spec.h, spec.w);
        for (auto& v : t.v) v = static_cast<Real>(rng.uniform(-bound, bound));
        p.tensors.push_back(std::move(t));
    }
    return p;
}

/// Parameter handles on a tape, in manifest order.
struct ParamIds {
    std::vector<ad::Id> ids;
    std::size_t encoder_count = 0;
};

template <class Real>
ParamIds bind_params(ad::Tape<Real>& tape, const NetParams<Real>& p, bool requires_grad)
{
    ParamIds out;
    for (const auto& t : p.tensors) out.ids.push_back(tape.leaf(t, requires_grad));
    out.encoder_count = static_cast<std::size_t>(2 * (2 + 2 * p.config.encoder_blocks));
    return out;
}

namespace detail {

template <class Real>
ad::Id conv_layer(ad::Tape<Real>& tape, ad::Id x, const ParamIds& ids, std::size_t& cursor)
{
    const ad::Id w = ids.ids.at(cursor), b = ids.ids.at(cursor + 1);
    cursor += 2;
    return ad::conv2d(tape, x, w, b);
}

// head conv, residual blocks (conv-ReLU-conv plus skip), ReLU, tail conv.
template <class Real>
ad::Id conv_trunk(ad::Tape<Real>& tape, ad::Id x, const ParamIds& ids, std::size_t cursor, int blocks)
{
    ad::Id h = conv_layer(tape, x, ids, cursor);
    for (int b = 0; b < blocks; ++b) {
        ad::Id r = conv_layer(tape, h, ids, cursor);
        r = ad::relu(tape, r);
        r = conv_layer(tape, r, ids, cursor);
        h = ad::add(tape, h, r);
    }
    h = ad::relu(tape, h);
    return conv_layer(tape, h, ids, cursor);
}

} // namespace detail

/// Per-frame features from the stacked [m, 2, H, W] (scaled detail, scaled raw frame) input.
template <class Real>
ad::Id encoder_forward(ad::Tape<Real>& tape, const NetConfig& cfg, const ParamIds& ids, ad::Id input)
{
    if (tape.value(input).c != 2) throw ShapeError("encoder_forward: expected 2 input channels, got " + tape.value(input).shape_str());
    return detail::conv_trunk(tape, input, ids, 0, cfg.encoder_blocks);
}

/// HR detail (in scaled units) from the [1, kN+1, sH, sW] pooled input.
template <class Real>
ad::Id decoder_forward(ad::Tape<Real>& tape, const NetConfig& cfg, const ParamIds& ids, ad::Id pooled)
{
    if (tape.value(pooled).c != cfg.decoder_inputs())
        throw ShapeError("decoder_forward: expected " + std::to_string(cfg.decoder_inputs()) + " channels, got " +
                         tape.value(pooled).shape_str());
    return detail::conv_trunk(tape, pooled, ids, ids.encoder_count, cfg.decoder_blocks);
}

/// Encoder input for a set of frames: channel 0 the detail layer, channel 1 the raw frame, both scaled.
template <class Real>
Tensor<Real> encoder_input(const NetConfig& cfg, const std::vector<ImageGrid>& details, const std::vector<ImageGrid>& raw)
{
    if (details.size() != raw.size() || details.empty()) throw Error("encoder_input: details and raw frames must align");
    Tensor<Real> t(static_cast<int>(details.size()), 2, details[0].height(), details[0].width());
    for (std::size_t i = 0; i < details.size(); ++i) {
        require_same_shape(details[i], details[0], "encoder_input");
        require_same_shape(raw[i], details[0], "encoder_input");
        Real* d = t.plane_ptr(static_cast<int>(i), 0);
        Real* r = t.plane_ptr(static_cast<int>(i), 1);
        for (std::size_t k = 0; k < details[i].size(); ++k) {
            d[k] = static_cast<Real>(details[i][k] / cfg.detail_scale);
            r[k] = static_cast<Real>(raw[i][k] / cfg.intensity_scale);
        }
    }
    return t;
}

/// Encode, splat with the given [m, 2, H, W] flows, pool, decode. Returns the HR detail in DN.
template <class Real>
ad::Id fuse_detail(ad::Tape<Real>& tape, const NetConfig& cfg, const ParamIds& ids, ad::Id input, ad::Id flows)
{
    const ad::Id feats = encoder_forward(tape, cfg, ids, input);
    const ad::SplatIds sp = ad::splat(tape, feats, flows, cfg.scale);
    const ad::Id pooled = ad::pool_concat(tape, sp, cfg.pool);
    return ad::scale(tape, decoder_forward(tape, cfg, ids, pooled), cfg.detail_scale);
}

struct TrainingMeta {
    long step = 0;
    int epoch = 0;
    std::uint64_t seed = 0;
    std::vector<double> loss_self;
    std::vector<double> loss_me;
};

struct Checkpoint {
    NetParams<float> params;
    TrainingMeta meta;
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto manifest = param_manifest(ck.params.config);
    if (manifest.size() != ck.params.tensors.size()) throw Error("save_checkpoint: parameter count does not match config");
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = to_json(ck.params.config);
    j["dtype"] = "float32";
    j["endianness"] = "little";
    std::size_t offset = 0;
    std::vector<double> flat;
    flat.reserve(ck.params.count());
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& s = manifest[i];
        const auto& t = ck.params.tensors[i];
        if (t.size() != s.size()) throw Error("save_checkpoint: blob size mismatch for " + s.name);
        j["parameters"].push_back({{"name", s.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", s.size()}});
        offset += s.size();
        for (float v : t.v) flat.push_back(v);
    }
    j["training"] = {{"step", ck.meta.step}, {"epoch", ck.meta.epoch}, {"seed", ck.meta.seed}};
    detail::write_json(dir / "model.json", j);
    detail::write_f32_le(dir / "weights.raw", flat);

    std::ofstream csv(dir / "loss.csv");
    if (!csv) throw ContainerError(ContainerError::Kind::Io, "cannot write " + (dir / "loss.csv").string());
    csv << "step,loss_self,loss_me\n";
    csv.precision(9);
    for (std::size_t i = 0; i < ck.meta.loss_self.size(); ++i)
        csv << i + 1 << ',' << ck.meta.loss_self[i] << ',' << (i < ck.meta.loss_me.size() ? ck.meta.loss_me[i] : 0.0) << '\n';
}

inline std::vector<std::pair<double, double>> read_loss_csv(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw ContainerError(ContainerError::Kind::MissingFile, "missing loss log: " + file.string());
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<double, double>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) throw ContainerError(ContainerError::Kind::InvalidField, "bad loss.csv row: " + line);
        out.emplace_back(std::stod(line.substr(a + 1, b - a - 1)), std::stod(line.substr(b + 1)));
    }
    return out;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
    if (!std::filesystem::exists(dir / "model.json"))
        throw ContainerError(ContainerError::Kind::MissingFile, "missing checkpoint: " + (dir / "model.json").string());
    const nlohmann::json j = detail::read_json(dir / "model.json");
    Checkpoint ck;
    ck.params.config = net_config_from_json(detail::field<nlohmann::json>(j, "config"));
    const auto manifest = param_manifest(ck.params.config);
    const auto& listed = detail::field<nlohmann::json>(j, "parameters");
    if (!listed.is_array() || listed.size() != manifest.size())
        throw ContainerError(ContainerError::Kind::DimensionMismatch, "checkpoint manifest does not match its config");
    std::size_t total = 0;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& s = manifest[i];
        const auto shape = listed[i].at("shape").get<std::vector<int>>();
        if (listed[i].at("name").get<std::string>() != s.name || shape != std::vector<int>{s.n, s.c, s.h, s.w})
            throw ContainerError(ContainerError::Kind::DimensionMismatch, "checkpoint parameter mismatch at " + s.name);
        total += s.size();
    }
    const auto flat = detail::read_f32_le(dir / "weights.raw", total);
    std::size_t off = 0;
    for (const auto& s : manifest) {
        Tensor<float> t(s.n, s.c, s.h, s.w);
        for (auto& v : t.v) v = static_cast<float>(flat[off++]);
        ck.params.tensors.push_back(std::move(t));
    }
    if (j.contains("training")) {
        ck.meta.step = j["training"].value("step", 0L);
        ck.meta.epoch = j["training"].value("epoch", 0);
        ck.meta.seed = j["training"].value("seed", std::uint64_t{0});
    }
    if (std::filesystem::exists(dir / "loss.csv"))
        for (const auto& [ls, lm] : read_loss_csv(dir / "loss.csv")) {
            ck.meta.loss_self.push_back(ls);
            ck.meta.loss_me.push_back(lm);
        }
    return ck;
}

} // namespace mesr

#pragma once

// Self-supervised training of the fusion network and inference with a checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mesr/base_detail.hpp"
#include "mesr/network.hpp"
#include "mesr/register.hpp"
#include "mesr/rng.hpp"
#include "mesr/sequence.hpp"

namespace mesr {

// ---------------------------------------------------------------- optimizer

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class Real>
struct AdamState {
    std::vector<Tensor<Real>> m, v;
    long t = 0;
};

template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, const std::vector<Tensor<Real>>& grads, AdamState<Real>& st,
               const AdamConfig& cfg)
{
    if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count does not match parameters");
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.n, p.c, p.h, p.w);
            st.v.emplace_back(p.n, p.c, p.h, p.w);
        }
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        require_same_shape(params[k], grads[k], "adam_step");
        auto& p = params[k].v;
        const auto& g = grads[k].v;
        auto& m = st.m[k].v;
        auto& v = st.v[k].v;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            p[i] = static_cast<Real>(p[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------- losses

/// Sub-pixel offset of the HR grid: flows are moved by half a LR pixel per set component,
/// which moves the fused output by one HR pixel; the loss then decimates at that phase.
struct GridShift {
    int ex = 0;
    int ey = 0;
};

inline GridShift draw_grid_shift(Rng& rng) { return {rng.uniform_int(0, 1), rng.uniform_int(0, 1)}; }

inline std::vector<FlowField> grid_shift_augment(std::vector<FlowField> flows, GridShift eps)
{
    if (eps.ex < 0 || eps.ex > 1 || eps.ey < 0 || eps.ey > 1) throw Error("grid_shift_augment: epsilon components must be 0 or 1");
    for (auto& f : flows) {
        f.dx += 0.5 * eps.ex;
        f.dy += 0.5 * eps.ey;
    }
    return flows;
}

inline void check_reference_excluded(const std::vector<int>& inputs, int reference)
{
    if (std::find(inputs.begin(), inputs.end(), reference) != inputs.end())
        throw Error("reference leak: frame " + std::to_string(reference) + " is both the target and a fusion input");
}

/// mean |Pi_2 at phase eps of (hr * k) - target| away from a `border`-pixel frame (LR pixels).
template <class Real>
ad::Id self_supervised_loss(ad::Tape<Real>& tape, ad::Id hr_detail, const ImageGrid& lr_detail_ref, const Kernel& k,
                            GridShift eps = {}, int border = 2, int s = 2)
{
    const Tensor<Real>& hr = tape.value(hr_detail);
    if (hr.n != 1 || hr.c != 1 || hr.h != s * lr_detail_ref.height() || hr.w != s * lr_detail_ref.width())
        throw ShapeError("self_supervised_loss: HR detail " + hr.shape_str() + " does not match target " +
                         std::to_string(lr_detail_ref.width()) + "x" + std::to_string(lr_detail_ref.height()));
    const ad::Id blurred = ad::blur(tape, hr_detail, k);
    const ad::Id dec = ad::subsample(tape, blurred, s, eps.ex, eps.ey);
    return ad::l1_mean(tape, dec, stack_images<Real>({lr_detail_ref}), border);
}

// ---------------------------------------------------------------- data

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda1 = 0.003;
    double lambda2 = 3.0;   // weight of the motion loss in the logged total
    int batch = 1;          // sequences per step
    int epochs = 1;
    long steps = 0;         // > 0 overrides epochs
    double lr_decay = 0.3;
    int decay_every_epochs = 400;
    int crop = 64;
    int min_frames = 4;
    int max_frames = 14;
    std::uint64_t seed = 0;
    bool grid_shift = true;
    int checkpoint_every_epochs = 0;  // 0: only at the end
    double kernel_sigma = 0.0;        // 0: identity k
    int loss_border = 2;

    void validate() const
    {
        if (!(lr > 0.0)) throw Error("TrainConfig: lr must be positive");
        if (min_frames < 1 || min_frames > max_frames) throw Error("TrainConfig: need 1 <= min_frames <= max_frames");
        if (batch < 1 || epochs < 0 || steps < 0) throw Error("TrainConfig: batch >= 1, epochs and steps >= 0");
        if (crop < 16) throw Error("TrainConfig: crop must be at least 16");
        if (loss_border < 0) throw Error("TrainConfig: loss_border must be >= 0");
    }

    AdamConfig adam() const { return {lr, beta1, beta2, eps}; }

    Kernel kernel() const { return kernel_sigma > 0.0 ? Kernel::gaussian(kernel_sigma) : Kernel::identity(); }
};

/// Sequence directories under `dir` (sorted), or `dir` itself when it holds a sequence.
inline std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw ContainerError(ContainerError::Kind::MissingFile, "missing dataset directory: " + dir.string());
    if (std::filesystem::exists(dir / "meta.json")) return {dir};
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_directory() && std::filesystem::exists(e.path() / "meta.json")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Sequences with their normalized frames and detail layers, plus a flow cache.
class TrainingSet {
public:
    struct Prepared {
        LRSequence seq;
        std::vector<ImageGrid> normalized;
        std::vector<ImageGrid> details;
    };

    explicit TrainingSet(std::vector<LRSequence> seqs)
    {
        if (seqs.empty()) throw Error("dataset too small: no sequences");
        for (auto& s : seqs) {
            s.validate();
            if (s.frames.size() < 4)
                throw Error("dataset too small: sequences need at least 4 frames, got " + std::to_string(s.frames.size()));
            Prepared p;
            p.normalized = normalize_sequence(s);
            for (const auto& f : p.normalized) p.details.push_back(decompose(f).detail);
            p.seq = std::move(s);
            items_.push_back(std::move(p));
        }
    }

    static TrainingSet load(const std::filesystem::path& dir)
    {
        std::vector<LRSequence> seqs;
        for (const auto& p : list_sequences(dir)) seqs.push_back(load_sequence(p));
        return TrainingSet(std::move(seqs));
    }

    std::size_t size() const { return items_.size(); }
    const Prepared& operator[](std::size_t i) const { return items_.at(i); }

    /// F_{frame -> ref} by registration of the normalized frames, cached.
    FlowField flow(int seq, int frame, int ref)
    {
        if (frame == ref) return {};
        const auto key = std::make_tuple(seq, frame, ref);
        if (auto it = flows_.find(key); it != flows_.end()) return it->second;
        const auto& p = items_.at(static_cast<std::size_t>(seq));
        const FlowField f = estimate_translation(p.normalized[ref], p.normalized[frame]);
        flows_.emplace(key, f);
        return f;
    }

    /// Installs known flows (e.g. ground truth) for a sequence, relative to every reference.
    void set_flows_to_reference(int seq, int ref, const std::vector<FlowField>& flows)
    {
        for (std::size_t i = 0; i < flows.size(); ++i) flows_[std::make_tuple(seq, static_cast<int>(i), ref)] = flows[i];
    }

private:
    std::vector<Prepared> items_;
    std::map<std::tuple<int, int, int>, FlowField> flows_;
};

struct TrainingSample {
    int sequence = 0;
    int reference = 0;
    std::vector<int> inputs;
    int x0 = 0, y0 = 0, size = 0;
    GridShift shift;
};

inline TrainingSample draw_sample(const TrainingSet& data, const TrainConfig& cfg, Rng& rng)
{
    TrainingSample s;
    s.sequence = rng.uniform_int(0, static_cast<int>(data.size()) - 1);
    const auto& p = data[static_cast<std::size_t>(s.sequence)];
    const int m = static_cast<int>(p.seq.frames.size());
    s.reference = rng.uniform_int(0, m - 1);
    const int hi = std::min(cfg.max_frames, m - 1);
    const int lo = std::min(cfg.min_frames, hi);
    const int count = rng.uniform_int(lo, hi);
    std::vector<int> pool;
    for (int i = 0; i < m; ++i)
        if (i != s.reference) pool.push_back(i);
    for (int k = 0; k < count; ++k) {
        const int j = rng.uniform_int(k, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
    }
    s.inputs.assign(pool.begin(), pool.begin() + count);
    std::sort(s.inputs.begin(), s.inputs.end());
    const int W = p.seq.frames[0].width(), H = p.seq.frames[0].height();
    s.size = std::min({cfg.crop, W, H});
    s.x0 = rng.uniform_int(0, W - s.size);
    s.y0 = rng.uniform_int(0, H - s.size);
    if (cfg.grid_shift) s.shift = draw_grid_shift(rng);
    return s;
}

/// Cropped inputs for one sample; flows are unchanged by a common crop of all frames.
struct SampleData {
    std::vector<ImageGrid> details, raw, normalized;
    std::vector<FlowField> flows;
    ImageGrid target_detail;
    ImageGrid target_normalized;
};

inline SampleData gather_sample(TrainingSet& data, const TrainingSample& s)
{
    check_reference_excluded(s.inputs, s.reference);
    const auto& p = data[static_cast<std::size_t>(s.sequence)];
    SampleData d;
    for (int i : s.inputs) {
        d.details.push_back(crop(p.details[i], s.x0, s.y0, s.size, s.size));
        d.raw.push_back(crop(p.seq.frames[i], s.x0, s.y0, s.size, s.size));
        d.normalized.push_back(crop(p.normalized[i], s.x0, s.y0, s.size, s.size));
        d.flows.push_back(data.flow(s.sequence, i, s.reference));
    }
    d.target_detail = crop(p.details[s.reference], s.x0, s.y0, s.size, s.size);
    d.target_normalized = crop(p.normalized[s.reference], s.x0, s.y0, s.size, s.size);
    return d;
}

/// Builds the self-supervised loss of one sample on a tape.
template <class Real>
ad::Id sample_loss(ad::Tape<Real>& tape, const NetConfig& net, const ParamIds& ids, const SampleData& d, GridShift eps,
                   const Kernel& k, int border)
{
    const Tensor<Real> input = encoder_input<Real>(net, d.details, d.raw);
    const Tensor<Real> flows = expand_flows<Real>(grid_shift_augment(d.flows, eps), input.h, input.w);
    const ad::Id hr = fuse_detail(tape, net, ids, tape.leaf(input), tape.leaf(flows));
    return self_supervised_loss(tape, hr, d.target_detail, k, eps, border, net.scale);
}

/// Motion loss of a sample (diagnostic): warping residuals of the inputs against the reference.
inline double sample_motion_loss(const SampleData& d, double lambda1, int border)
{
    std::vector<ImageGrid> frames = d.normalized;
    std::vector<FlowField> flows = d.flows;
    frames.push_back(d.target_normalized);
    flows.push_back({});
    return warping_loss(frames, flows, static_cast<int>(frames.size()) - 1, lambda1, border);
}

// ---------------------------------------------------------------- training

struct TrainProgress {
    long step;
    long total_steps;
    int epoch;
    double loss_self;
    double loss_me;
    double lr;
};

inline long total_training_steps(const TrainConfig& cfg, std::size_t n_sequences)
{
    const long per_epoch = static_cast<long>((n_sequences + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch));
    return cfg.steps > 0 ? cfg.steps : per_epoch * cfg.epochs;
}

inline Checkpoint train(TrainingSet& data, const NetConfig& net, const TrainConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const std::function<void(const TrainProgress&)>& progress = {},
                        std::optional<NetParams<float>> init = std::nullopt)
{
    net.validate();
    cfg.validate();
    Rng rng(cfg.seed);
    Rng init_rng = rng.split(0x1417);
    Checkpoint ck;
    ck.params = init ? std::move(*init) : init_params<float>(net, init_rng);
    if (!(ck.params.config == net)) throw Error("train: initial parameters do not match the network config");
    ck.meta.seed = cfg.seed;
    AdamState<float> adam;
    const Kernel k = cfg.kernel();
    const long per_epoch = std::max<long>(1, static_cast<long>((data.size() + cfg.batch - 1) / cfg.batch));
    const long total = total_training_steps(cfg, data.size());

    for (long step = 1; step <= total; ++step) {
        const int epoch = static_cast<int>((step - 1) / per_epoch);
        AdamConfig ac = cfg.adam();
        if (cfg.decay_every_epochs > 0) ac.lr *= std::pow(cfg.lr_decay, epoch / cfg.decay_every_epochs);

        std::vector<Tensor<float>> grads;
        for (const auto& t : ck.params.tensors) grads.emplace_back(t.n, t.c, t.h, t.w);
        double ls = 0.0, lm = 0.0;
        TrainingSample last;
        for (int b = 0; b < cfg.batch; ++b) {
            const TrainingSample s = draw_sample(data, cfg, rng);
            last = s;
            const SampleData d = gather_sample(data, s);
            ad::Tape<float> tape;
            const ParamIds ids = bind_params(tape, ck.params, true);
            const ad::Id loss = sample_loss(tape, net, ids, d, s.shift, k, cfg.loss_border);
            tape.backward(loss);
            ls += tape.value(loss).v[0] / cfg.batch;
            lm += sample_motion_loss(d, cfg.lambda1, cfg.loss_border) / cfg.batch;
            for (std::size_t i = 0; i < grads.size(); ++i) {
                const auto& g = tape.grad(ids.ids[i]);
                for (std::size_t j = 0; j < g.v.size(); ++j) grads[i].v[j] += g.v[j] / static_cast<float>(cfg.batch);
            }
        }
        if (!std::isfinite(ls)) {
            std::string where = "training diverged: non-finite loss at step " + std::to_string(step) + " (sequence " +
                                std::to_string(last.sequence) + ", reference " + std::to_string(last.reference) + ")";
            if (out_dir) {
                std::filesystem::create_directories(*out_dir);
                nlohmann::json dump{{"step", step}, {"sequence", last.sequence}, {"reference", last.reference},
                                    {"inputs", last.inputs}, {"crop", {last.x0, last.y0, last.size}},
                                    {"grid_shift", {last.shift.ex, last.shift.ey}}, {"loss_self", std::to_string(ls)},
                                    {"loss_history", ck.meta.loss_self}};
                detail::write_json(*out_dir / "nan_dump.json", dump);
                where += "; dump written to " + (*out_dir / "nan_dump.json").string();
            }
            throw Error(where);
        }
        adam_step(ck.params.tensors, grads, adam, ac);
        ck.meta.loss_self.push_back(ls);
        ck.meta.loss_me.push_back(lm);
        ck.meta.step = step;
        ck.meta.epoch = static_cast<int>(step / per_epoch);
        if (progress) progress({step, total, epoch, ls, lm, ac.lr});
        if (out_dir && cfg.checkpoint_every_epochs > 0 && step % (per_epoch * cfg.checkpoint_every_epochs) == 0 && step != total)
            save_checkpoint(ck, *out_dir);
    }
    if (out_dir) save_checkpoint(ck, *out_dir);
    return ck;
}

// ---------------------------------------------------------------- inference

struct InferOptions {
    bool anchor = true;
    std::optional<std::vector<FlowField>> flows;  // F_{i->r}; estimated when absent
};

/// Flows from every frame toward the reference by registration of normalized frames.
inline std::vector<FlowField> register_sequence(const std::vector<ImageGrid>& normalized, int reference)
{
    std::vector<FlowField> flows(normalized.size());
    for (std::size_t i = 0; i < normalized.size(); ++i)
        if (static_cast<int>(i) != reference) flows[i] = estimate_translation(normalized[reference], normalized[i]);
    return flows;
}

/// LR fused base, gain-anchored to the reference base when requested.
inline ImageGrid fused_lr_base(const std::vector<ImageGrid>& bases, const std::vector<double>& exposures,
                               const std::vector<FlowField>& flows, int reference, bool anchor)
{
    ImageGrid b = average_bases(bases, exposures, flows);
    if (anchor) b = b * anchor_gain(b, bases[reference]);
    return b;
}

template <class Real = float>
ImageGrid infer(const LRSequence& seq, const NetParams<Real>& params, const InferOptions& opt = {})
{
    seq.validate();
    const NetConfig& net = params.config;
    const auto norm = normalize_sequence(seq);
    const int r = seq.reference_index;
    const std::vector<FlowField> flows = opt.flows ? *opt.flows : register_sequence(norm, r);
    if (flows.size() != norm.size()) throw Error("infer: need one flow per frame");
    std::vector<ImageGrid> bases, details;
    for (const auto& f : norm) {
        auto bd = decompose(f);
        bases.push_back(std::move(bd.base));
        details.push_back(std::move(bd.detail));
    }
    // At inference the reference is fused together with the other frames.
    ad::Tape<Real> tape;
    const ParamIds ids = bind_params(tape, params, false);
    const Tensor<Real> input = encoder_input<Real>(net, details, seq.frames);
    const ad::Id hr = fuse_detail(tape, net, ids, tape.leaf(input), tape.leaf(expand_flows<Real>(flows, input.h, input.w)));
    const ImageGrid detail_hr = to_image(tape.value(hr));
    const ImageGrid base_hr = bilinear_zoom(fused_lr_base(bases, seq.exposures, flows, r, opt.anchor), net.scale);
    return base_hr + detail_hr;
}

} // namespace mesr

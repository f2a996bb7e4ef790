#pragma once

// Classical multi-exposure fusion pipelines and the evaluation / exposure-analysis drivers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mesr/base_detail.hpp"
#include "mesr/noise_sim.hpp"
#include "mesr/register.hpp"
#include "mesr/training.hpp"

namespace mesr {

enum class SplatKernel { Bilinear, Bicubic };

inline SplatKernel parse_splat_kernel(const std::string& s)
{
    if (s == "bilinear") return SplatKernel::Bilinear;
    if (s == "bicubic") return SplatKernel::Bicubic;
    throw Error("unknown splat kernel '" + s + "' (expected bilinear or bicubic)");
}

/// Numerator/denominator accumulators on the HR grid.
struct SplatAccumulator {
    ImageGrid num;
    ImageGrid den;

    SplatAccumulator(int width, int height) : num(width, height), den(width, height) {}

    /// Deposits `values` (sample x lands at s (x + F)) into num and `weight` times the kernel into den.
    void add(const ImageGrid& values, const FlowField& flow, double weight, int s, SplatKernel kernel)
    {
        const int SW = num.width(), SH = num.height();
        for (int y = 0; y < values.height(); ++y)
            for (int x = 0; x < values.width(); ++x) {
                const double u = s * (x + flow.dx), v = s * (y + flow.dy);
                const double u0 = std::floor(u), v0 = std::floor(v);
                const double tu = u - u0, tv = v - v0;
                const double val = values(x, y);
                if (kernel == SplatKernel::Bilinear) {
                    const double wts[4] = {(1 - tu) * (1 - tv), tu * (1 - tv), (1 - tu) * tv, tu * tv};
                    for (int k = 0; k < 4; ++k) {
                        const int uu = static_cast<int>(u0) + (k & 1), vv = static_cast<int>(v0) + (k >> 1);
                        if (uu < 0 || uu >= SW || vv < 0 || vv >= SH || wts[k] == 0.0) continue;
                        num(uu, vv) += wts[k] * val;
                        den(uu, vv) += wts[k] * weight;
                    }
                } else {
                    for (int j = -1; j <= 2; ++j) {
                        const int vv = static_cast<int>(v0) + j;
                        if (vv < 0 || vv >= SH) continue;
                        const double wy = keys_cubic(tv - j);
                        for (int i = -1; i <= 2; ++i) {
                            const int uu = static_cast<int>(u0) + i;
                            if (uu < 0 || uu >= SW) continue;
                            const double wk = wy * keys_cubic(tu - i);
                            num(uu, vv) += wk * val;
                            den(uu, vv) += wk * weight;
                        }
                    }
                }
            }
    }

    /// num / den, with low-coverage pixels filled by normalized convolution of the accumulators.
    /// The Gaussian widens until every hole has support; the global ratio is the last resort.
    ImageGrid resolve(double hole_sigma = 1.0) const
    {
        double dmax = 0.0, nsum = 0.0, dsum = 0.0;
        for (std::size_t i = 0; i < den.size(); ++i) {
            dmax = std::max(dmax, den[i]);
            nsum += num[i];
            dsum += den[i];
        }
        const double tau = 1e-3 * dmax;
        ImageGrid out(num.width(), num.height()), vn = out, vd = out;
        std::vector<std::size_t> holes;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (den[i] > tau) {
                out[i] = num[i] / den[i];
                vn[i] = num[i];
                vd[i] = den[i];
            } else {
                holes.push_back(i);
            }
        }
        const int limit = std::min(num.width(), num.height()) - 1;
        for (double sigma = hole_sigma; !holes.empty() && std::ceil(4.0 * sigma) <= limit; sigma *= 2.0) {
            const Kernel g = Kernel::gaussian(sigma);
            const ImageGrid sn = convolve(vn, g), sd = convolve(vd, g);
            std::vector<std::size_t> left;
            for (std::size_t i : holes) {
                if (sd[i] > 1e-9 * dmax) out[i] = sn[i] / sd[i];
                else left.push_back(i);
            }
            holes.swap(left);
        }
        for (std::size_t i : holes) out[i] = dsum > 0.0 ? nsum / dsum : 0.0;
        return out;
    }
};

struct FusionOptions {
    int scale = 2;
    SplatKernel kernel = SplatKernel::Bilinear;
    bool anchor = true;
    Kernel decomposition = Kernel::gaussian(1.0);
};

namespace detail {

inline void check_flows(const LRSequence& seq, const std::vector<FlowField>& flows)
{
    if (seq.frames.empty()) throw Error("empty sequence");
    if (flows.size() != seq.frames.size()) throw Error("need one flow per frame");
}

inline ImageGrid anchor_to_reference(const ImageGrid& hr, const ImageGrid& ref_normalized, int s)
{
    return hr * anchor_gain(subsample(hr, s), ref_normalized);
}

} // namespace detail

/// Multi-exposure S&A: sum of splatted raw frames over sum of exposure-scaled splat weights.
inline ImageGrid me_shift_and_add(const LRSequence& seq, const std::vector<FlowField>& flows, const FusionOptions& opt = {})
{
    detail::check_flows(seq, flows);
    seq.validate();
    const int s = opt.scale;
    SplatAccumulator acc(s * seq.frames[0].width(), s * seq.frames[0].height());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) acc.add(seq.frames[i], flows[i], seq.exposures[i], s, opt.kernel);
    ImageGrid out = acc.resolve();
    if (opt.anchor) {
        const auto& r = seq.frames[static_cast<std::size_t>(seq.reference_index)];
        out = detail::anchor_to_reference(out, r * (1.0 / seq.exposures[static_cast<std::size_t>(seq.reference_index)]), s);
    }
    return out;
}

/// Classical S&A of the exposure-normalized frames with unit weights.
inline ImageGrid naive_shift_and_add(const LRSequence& seq, const std::vector<FlowField>& flows, const FusionOptions& opt = {})
{
    detail::check_flows(seq, flows);
    const auto norm = normalize_sequence(seq);
    const int s = opt.scale;
    SplatAccumulator acc(s * norm[0].width(), s * norm[0].height());
    for (std::size_t i = 0; i < norm.size(); ++i) acc.add(norm[i], flows[i], 1.0, s, opt.kernel);
    ImageGrid out = acc.resolve();
    if (opt.anchor) out = detail::anchor_to_reference(out, norm[static_cast<std::size_t>(seq.reference_index)], s);
    return out;
}

/// Base/detail fusion: exposure-weighted S&A of the detail layers plus the zoomed fused base.
inline ImageGrid bd_fuse(const LRSequence& seq, const std::vector<FlowField>& flows, const FusionOptions& opt = {})
{
    detail::check_flows(seq, flows);
    const auto norm = normalize_sequence(seq);
    const int s = opt.scale;
    std::vector<ImageGrid> bases;
    SplatAccumulator acc(s * norm[0].width(), s * norm[0].height());
    for (std::size_t i = 0; i < norm.size(); ++i) {
        BaseDetailPair bd = decompose(norm[i], opt.decomposition);
        acc.add(bd.detail * seq.exposures[i], flows[i], seq.exposures[i], s, opt.kernel);
        bases.push_back(std::move(bd.base));
    }
    const ImageGrid base = fused_lr_base(bases, seq.exposures, flows, seq.reference_index, opt.anchor);
    return bilinear_zoom(base, s) + acc.resolve();
}

// ---------------------------------------------------------------- evaluation

inline const std::vector<std::string>& known_methods()
{
    static const std::vector<std::string> m{"sna", "naive", "bd", "hdrdsp"};
    return m;
}

inline std::string canonical_method(const std::string& name)
{
    if (name == "sna" || name == "me-sna" || name == "me_sna") return "sna";
    if (name == "naive" || name == "naive-sna") return "naive";
    if (name == "bd" || name == "bdfuse" || name == "bd-fuse") return "bd";
    if (name == "hdrdsp" || name == "hdr-dsp" || name == "hdrdsp-lite") return "hdrdsp";
    throw Error("unknown method '" + name + "' (expected sna, naive, bd or hdrdsp)");
}

struct EvalOptions {
    std::vector<std::string> methods{"sna", "naive", "bd"};
    std::vector<double> error_levels{0.0, 0.05, 0.20};  // fractions
    std::optional<NetParams<float>> network;
    bool oracle_flows = false;
    FusionOptions fusion{};
    std::uint64_t seed = 0;
    int border = 4;  // HR pixels excluded from PSNR
    double peak = 3400.0;
};

struct EvalRow {
    std::string method;
    double error_pct = 0.0;
    double mean_psnr_db = 0.0;
    int n_sequences = 0;
    double runtime_s = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::map<std::pair<std::string, double>, std::vector<double>> per_sequence;  // (method, pct) -> PSNR per sequence

    const EvalRow& row(const std::string& method, double pct) const
    {
        for (const auto& r : rows)
            if (r.method == method && std::abs(r.error_pct - pct) < 1e-9) return r;
        throw Error("EvalReport: no row for " + method + " at " + std::to_string(pct) + "%");
    }
};

/// A sequence with its simulation truth and HR ground truth, as written by the generator.
struct EvalItem {
    LRSequence sequence;
    SimTruth truth;
    ImageGrid hr;
};

inline EvalItem load_eval_item(const std::filesystem::path& dir)
{
    EvalItem it;
    it.sequence = load_sequence(dir);
    if (!std::filesystem::exists(dir / "truth.json"))
        throw ContainerError(ContainerError::Kind::MissingFile, "evaluation needs ground truth: missing " + (dir / "truth.json").string());
    it.truth = load_truth(dir / "truth.json");
    it.hr = load_image(dir / it.truth.hr_path);
    return it;
}

inline std::vector<FlowField> truth_flows(const SimTruth& t)
{
    std::vector<FlowField> f;
    for (std::size_t i = 0; i < t.shifts_hr.size(); ++i) f.push_back(t.flow_lr(static_cast<int>(i)));
    return f;
}

/// Reconstruction by one named method.
inline ImageGrid run_method(const std::string& method, const LRSequence& seq, const std::vector<FlowField>& flows,
                            const EvalOptions& opt)
{
    const std::string m = canonical_method(method);
    if (m == "sna") return me_shift_and_add(seq, flows, opt.fusion);
    if (m == "naive") return naive_shift_and_add(seq, flows, opt.fusion);
    if (m == "bd") return bd_fuse(seq, flows, opt.fusion);
    if (!opt.network) throw Error("method hdrdsp needs a checkpoint");
    InferOptions io;
    io.anchor = opt.fusion.anchor;
    io.flows = flows;
    return infer(seq, *opt.network, io);
}

inline EvalReport run_eval(const std::vector<EvalItem>& items, const EvalOptions& opt)
{
    if (items.empty()) throw Error("empty dataset");
    std::vector<std::string> methods;
    for (const auto& m : opt.methods) methods.push_back(canonical_method(m));
    std::map<std::pair<std::string, double>, double> runtime;
    EvalReport rep;
    const Rng root(opt.seed);
    for (std::size_t si = 0; si < items.size(); ++si) {
        const EvalItem& it = items[si];
        // Registration does not depend on the reported exposures (gain-invariant matching).
        const std::vector<FlowField> flows =
            opt.oracle_flows ? truth_flows(it.truth) : register_sequence(normalize_sequence(it.sequence), it.sequence.reference_index);
        for (std::size_t li = 0; li < opt.error_levels.size(); ++li) {
            const double pct = 100.0 * opt.error_levels[li];
            Rng rng = root.split(0x5EC0000ULL + 1024 * si + li);
            LRSequence seq = it.sequence;
            seq.exposures = inject_exposure_error(it.truth.exposures_true, opt.error_levels[li], rng, it.sequence.reference_index);
            for (const auto& m : methods) {
                const auto t0 = std::chrono::steady_clock::now();
                const ImageGrid out = run_method(m, seq, flows, opt);
                runtime[{m, pct}] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                rep.per_sequence[{m, pct}].push_back(psnr(out, it.hr, opt.peak, opt.border));
            }
        }
    }
    for (const auto& m : methods)
        for (double lvl : opt.error_levels) {
            const double pct = 100.0 * lvl;
            const auto& v = rep.per_sequence[{m, pct}];
            double sum = 0.0;
            for (double p : v) sum += p;
            rep.rows.push_back({m, pct, sum / static_cast<double>(v.size()), static_cast<int>(v.size()), runtime[{m, pct}]});
        }
    return rep;
}

inline void write_eval_csv(const EvalReport& rep, const std::filesystem::path& file)
{
    std::ofstream out(file);
    if (!out) throw ContainerError(ContainerError::Kind::Io, "cannot write " + file.string());
    out << "method,error_pct,mean_psnr_db,n_sequences,runtime_s\n";
    out.setf(std::ios::fixed);
    for (const auto& r : rep.rows) {
        out.precision(2);
        out << r.method << ',' << r.error_pct << ',';
        out.precision(4);
        out << r.mean_psnr_db << ',' << r.n_sequences << ',' << r.runtime_s << '\n';
    }
}

// ---------------------------------------------------------------- exposure analysis

struct ExpoRow {
    int i, j;
    double reported;
    double estimated;
    std::size_t n_valid;
};

/// Pairwise exposure ratios e_j / e_i: reported vs estimated from the raw frames.
inline std::vector<ExpoRow> exposure_table(const LRSequence& seq, double saturation = kDefaultSaturation)
{
    seq.validate();
    std::vector<ExpoRow> rows;
    const int m = static_cast<int>(seq.frames.size());
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            const auto est = estimate_exposure_ratio(seq.frames[i], seq.frames[j], saturation);
            rows.push_back({i, j, seq.exposures[j] / seq.exposures[i], est.ratio, est.n_valid});
        }
    return rows;
}

inline void write_expo_csv(const std::vector<ExpoRow>& rows, const std::filesystem::path& file)
{
    std::ofstream out(file);
    if (!out) throw ContainerError(ContainerError::Kind::Io, "cannot write " + file.string());
    out << "frame_i,frame_j,reported_ratio,estimated_ratio,n_valid\n";
    out.precision(8);
    for (const auto& r : rows) out << r.i << ',' << r.j << ',' << r.reported << ',' << r.estimated << ',' << r.n_valid << '\n';
}

} // namespace mesr

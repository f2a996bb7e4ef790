#pragma once

// Forward observation model and synthetic multi-exposure sequence generation.
//
//   I_r = P2(hr),  I_i = P2(shift(hr, delta_i))          (unit exposure, noiseless)
//   Ibar_i = e_i * I_i + n_i,  n_i ~ N(0, a e_i I_i + b)
//   e_i = alpha^{c_i},  c_i in {-5..5},  alpha ~ U(1.2, 1.4)

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mesr/flow.hpp"
#include "mesr/image.hpp"
#include "mesr/rng.hpp"
#include "mesr/sequence.hpp"

namespace mesr {

struct SimConfig {
    int m = 15;
    double translation_range = 2.0;  // HR pixels, shifts uniform in [-t, t]^2
    double alpha_min = 1.2;
    double alpha_max = 1.4;
    int c_min = -5;
    int c_max = 5;
    double exposure_error_pct = 0.0;  // fraction, 0.05 == 5%
    int reference_index = 0;
    int factor = 2;
    std::optional<double> fixed_alpha;  // set to share one alpha across a dataset

    void validate() const
    {
        if (m < 1) throw Error("SimConfig: m must be >= 1");
        if (!(alpha_min > 1.0) || alpha_max < alpha_min) throw Error("SimConfig: alpha range must lie in (1, inf)");
        if (c_max < c_min) throw Error("SimConfig: empty exposure exponent range");
        if (!(exposure_error_pct >= 0.0)) throw Error("SimConfig: exposure_error_pct must be >= 0");
        if (!(translation_range >= 0.0)) throw Error("SimConfig: translation_range must be >= 0");
        if (reference_index < 0 || reference_index >= m) throw Error("SimConfig: reference_index out of range");
        if (factor < 1) throw Error("SimConfig: factor must be >= 1");
    }
};

/// Variance of the acquisition noise at a unit-exposure intensity. Negative
/// intensities are treated as zero.
inline double noise_variance(double intensity, double exposure, const NoiseModel& model)
{
    return model.a * exposure * std::max(intensity, 0.0) + model.b;
}

struct ExposureDraw {
    double alpha = 1.0;
    std::vector<int> exponents;
    std::vector<double> exposures;
};

inline ExposureDraw exposures_from(double alpha, std::vector<int> exponents)
{
    ExposureDraw d;
    d.alpha = alpha;
    d.exposures.reserve(exponents.size());
    for (int c : exponents) d.exposures.push_back(std::pow(alpha, c));
    d.exponents = std::move(exponents);
    return d;
}

inline ExposureDraw sample_exposures(const SimConfig& cfg, Rng& rng)
{
    cfg.validate();
    const double alpha = cfg.fixed_alpha ? *cfg.fixed_alpha : rng.uniform(cfg.alpha_min, cfg.alpha_max);
    std::vector<int> c(cfg.m);
    for (auto& ci : c) ci = rng.uniform_int(cfg.c_min, cfg.c_max);
    return exposures_from(alpha, std::move(c));
}

/// e_i * (1 + u_i), u_i ~ U[-pct, pct]. The frame at `exact_index` (the
/// reference, which defines the unit of exposure) keeps its true value.
inline std::vector<double> inject_exposure_error(const std::vector<double>& exposures, double pct, Rng& rng,
                                                 std::optional<int> exact_index = std::nullopt)
{
    if (!(pct >= 0.0)) throw Error("inject_exposure_error: pct must be >= 0");
    std::vector<double> out = exposures;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double u = rng.uniform(-pct, pct);
        if (exact_index && static_cast<int>(i) == *exact_index) continue;
        if (pct > 0.0) out[i] *= 1.0 + u;
    }
    return out;
}

/// Noisy acquisition of a clean unit-exposure frame.
inline ImageGrid acquire(const ImageGrid& clean, double exposure, const NoiseModel& model, Rng& rng)
{
    ImageGrid out(clean.width(), clean.height());
    const bool noiseless = model.a == 0.0 && model.b == 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double signal = exposure * clean[i];
        out[i] = noiseless ? signal : signal + std::sqrt(noise_variance(clean[i], exposure, model)) * rng.normal();
    }
    return out;
}

/// Ground truth kept alongside a simulated sequence.
struct SimTruth {
    std::vector<std::pair<double, double>> shifts_hr;  // delta_i in HR pixels
    std::vector<double> exposures_true;
    std::vector<int> exponents;
    double alpha = 1.0;
    int factor = 2;
    int reference_index = 0;
    double exposure_error_pct = 0.0;
    std::string hr_path = "hr";

    /// Flow from frame i toward the reference, in LR pixels: frame i at x shows
    /// the reference content at x - delta_i / s.
    FlowField flow_lr(int i) const { return {-shifts_hr[i].first / factor, -shifts_hr[i].second / factor}; }
};

struct SimResult {
    LRSequence sequence;
    SimTruth truth;
    std::vector<ImageGrid> clean;  // noiseless unit-exposure LR frames
};

inline SimResult simulate_sequence(const ImageGrid& hr, const SimConfig& cfg, const NoiseModel& model, Rng& rng)
{
    cfg.validate();
    if (hr.width() % cfg.factor != 0 || hr.height() % cfg.factor != 0)
        throw Error("simulate_sequence: HR dimensions must be multiples of the factor (got " +
                    std::to_string(hr.width()) + "x" + std::to_string(hr.height()) + ")");

    SimResult res;
    const ExposureDraw draw = sample_exposures(cfg, rng);
    res.truth.alpha = draw.alpha;
    res.truth.exponents = draw.exponents;
    res.truth.exposures_true = draw.exposures;
    res.truth.factor = cfg.factor;
    res.truth.reference_index = cfg.reference_index;
    res.truth.exposure_error_pct = cfg.exposure_error_pct;

    for (int i = 0; i < cfg.m; ++i) {
        double dx = 0.0, dy = 0.0;
        if (i != cfg.reference_index) {
            dx = rng.uniform(-cfg.translation_range, cfg.translation_range);
            dy = rng.uniform(-cfg.translation_range, cfg.translation_range);
        }
        res.truth.shifts_hr.emplace_back(dx, dy);
        const ImageGrid moved = (i == cfg.reference_index) ? hr : shift_subpixel(hr, dx, dy);
        res.clean.push_back(subsample(moved, cfg.factor));
    }

    for (int i = 0; i < cfg.m; ++i)
        res.sequence.frames.push_back(acquire(res.clean[i], draw.exposures[i], model, rng));

    Rng err_rng = rng.split(0xE7707);
    res.sequence.exposures =
        inject_exposure_error(draw.exposures, cfg.exposure_error_pct, err_rng, cfg.reference_index);
    res.sequence.reference_index = cfg.reference_index;
    res.sequence.noise_model = model;
    return res;
}

inline nlohmann::json truth_to_json(const SimTruth& t)
{
    nlohmann::json j;
    j["shifts_hr"] = nlohmann::json::array();
    j["flows_lr"] = nlohmann::json::array();
    for (std::size_t i = 0; i < t.shifts_hr.size(); ++i) {
        j["shifts_hr"].push_back({t.shifts_hr[i].first, t.shifts_hr[i].second});
        const auto f = t.flow_lr(static_cast<int>(i));
        j["flows_lr"].push_back({f.dx, f.dy});
    }
    j["exposures_true"] = t.exposures_true;
    j["exponents"] = t.exponents;
    j["alpha"] = t.alpha;
    j["factor"] = t.factor;
    j["reference_index"] = t.reference_index;
    j["exposure_error_pct"] = t.exposure_error_pct;
    j["hr_path"] = t.hr_path;
    return j;
}

inline SimTruth truth_from_json(const nlohmann::json& j)
{
    SimTruth t;
    try {
        for (const auto& s : j.at("shifts_hr")) t.shifts_hr.emplace_back(s.at(0).get<double>(), s.at(1).get<double>());
        t.exposures_true = j.at("exposures_true").get<std::vector<double>>();
        t.exponents = j.value("exponents", std::vector<int>{});
        t.alpha = j.value("alpha", 1.0);
        t.factor = j.value("factor", 2);
        t.reference_index = j.value("reference_index", 0);
        t.exposure_error_pct = j.value("exposure_error_pct", 0.0);
        t.hr_path = j.value("hr_path", std::string("hr"));
    } catch (const nlohmann::json::exception& e) {
        throw ContainerError(ContainerError::Kind::InvalidField, std::string("truth.json: ") + e.what());
    }
    return t;
}

inline void save_truth(const SimTruth& t, const std::filesystem::path& file)
{
    detail::write_json(file, truth_to_json(t));
}

inline SimTruth load_truth(const std::filesystem::path& file) { return truth_from_json(detail::read_json(file)); }

} // namespace mesr

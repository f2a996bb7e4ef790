// mesr: dataset generation, training, reconstruction, evaluation and exposure analysis.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mesr/mesr.hpp"

namespace fs = std::filesystem;
using namespace mesr;

namespace {

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<double> parse_levels(const std::string& s)
{
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || v < 0.0) throw Error("bad error level '" + item + "' (expected fractions like 0.05)");
        out.push_back(v);
    }
    if (out.empty()) throw Error("empty error-level list");
    return out;
}

std::string seq_dir_name(int i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%03d", i);
    return buf;
}

/// HR images of a container directory: one scene per frame.
std::vector<ImageGrid> load_hr_scenes(const fs::path& dir)
{
    LRSequence hr = load_sequence(dir);
    return hr.frames;
}

std::vector<FlowField> flows_for(const LRSequence& seq, const std::string& oracle)
{
    if (!oracle.empty()) {
        const SimTruth t = load_truth(oracle);
        if (t.shifts_hr.size() != seq.frames.size())
            throw Error("oracle flows: " + oracle + " lists " + std::to_string(t.shifts_hr.size()) + " frames, sequence has " +
                        std::to_string(seq.frames.size()));
        return truth_flows(t);
    }
    return register_sequence(normalize_sequence(seq), seq.reference_index);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-exposure multi-image super-resolution"};
    app.require_subcommand(1);

    // scenes
    auto* scenes = app.add_subcommand("scenes", "Render procedural HR scenes into a container");
    std::string scenes_out;
    int scenes_count = 16, scenes_size = 128;
    std::uint64_t scenes_seed = 0;
    scenes->add_option("--out", scenes_out, "Output container directory")->required();
    scenes->add_option("--count", scenes_count, "Number of scenes")->check(CLI::PositiveNumber);
    scenes->add_option("--size", scenes_size, "Scene side in HR pixels (even)")->check(CLI::PositiveNumber);
    scenes->add_option("--seed", scenes_seed, "Random seed");

    // gen
    auto* gen = app.add_subcommand("gen", "Simulate multi-exposure LR sequences from HR scenes");
    std::string gen_hr, gen_out;
    SimConfig sim;
    std::uint64_t gen_seed = 0;
    bool gen_noiseless = false;
    gen->add_option("--hr", gen_hr, "HR container (one scene per frame)")->required();
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--m", sim.m, "Frames per sequence")->check(CLI::PositiveNumber);
    gen->add_option("--trans", sim.translation_range, "Max |translation| in HR pixels");
    gen->add_option("--err", sim.exposure_error_pct, "Reported exposure error, as a fraction (0.05 = 5%)");
    gen->add_option("--seed", gen_seed, "Random seed");
    gen->add_flag("--noiseless", gen_noiseless, "Disable acquisition noise");

    // train
    auto* trn = app.add_subcommand("train", "Self-supervised training of the fusion network");
    std::string trn_ds, trn_out, trn_pool = "AMS";
    NetConfig net;
    TrainConfig tc;
    trn->add_option("--ds", trn_ds, "Dataset directory")->required();
    trn->add_option("--out", trn_out, "Checkpoint directory")->required();
    trn->add_option("--features", net.n_features, "Feature channels")->check(CLI::PositiveNumber);
    trn->add_option("--epochs", tc.epochs, "Epochs (passes over the sequences)");
    trn->add_option("--steps", tc.steps, "Optimizer steps (overrides --epochs when > 0)");
    trn->add_option("--seed", tc.seed, "Random seed");
    trn->add_option("--lr", tc.lr, "Initial learning rate");
    trn->add_option("--batch", tc.batch, "Sequences per step")->check(CLI::PositiveNumber);
    trn->add_option("--crop", tc.crop, "Crop side in LR pixels");
    trn->add_option("--pool", trn_pool, "Pooled statistics: A, AM, AS or AMS");
    trn->add_option("--decay-every", tc.decay_every_epochs, "Epochs between learning-rate decays (0: none)");
    trn->add_option("--checkpoint-every", tc.checkpoint_every_epochs, "Epochs between checkpoints (0: end only)");
    trn->add_option("--encoder-blocks", net.encoder_blocks, "Encoder residual blocks")->check(CLI::PositiveNumber);
    trn->add_option("--decoder-blocks", net.decoder_blocks, "Decoder residual blocks")->check(CLI::PositiveNumber);
    bool trn_quiet = false;
    trn->add_flag("--quiet", trn_quiet, "No progress output");

    // infer
    auto* inf = app.add_subcommand("infer", "Reconstruct a sequence with a trained checkpoint");
    std::string inf_seq, inf_ckpt, inf_out, inf_oracle;
    bool inf_no_anchor = false;
    inf->add_option("--seq", inf_seq, "Sequence directory")->required();
    inf->add_option("--ckpt", inf_ckpt, "Checkpoint directory")->required();
    inf->add_option("--out", inf_out, "Output image container")->required();
    inf->add_option("--oracle-flows", inf_oracle, "truth.json with known translations");
    inf->add_flag("--no-anchor", inf_no_anchor, "Do not anchor the output gain to the reference frame");

    // sna / bdfuse
    std::string cl_seq, cl_out, cl_oracle, cl_kernel = "bilinear";
    bool cl_no_anchor = false;
    auto add_classical = [&](const char* name, const char* help) {
        auto* c = app.add_subcommand(name, help);
        c->add_option("--seq", cl_seq, "Sequence directory")->required();
        c->add_option("--out", cl_out, "Output image container")->required();
        c->add_option("--oracle-flows", cl_oracle, "truth.json with known translations");
        c->add_option("--splat", cl_kernel, "Splat kernel: bilinear or bicubic");
        c->add_flag("--no-anchor", cl_no_anchor, "Do not anchor the output gain to the reference frame");
        return c;
    };
    auto* sna = add_classical("sna", "Multi-exposure shift-and-add");
    auto* naive = add_classical("naive", "Shift-and-add of exposure-normalized frames");
    auto* bdf = add_classical("bdfuse", "Base/detail classical fusion");

    // eval
    auto* ev = app.add_subcommand("eval", "Mean PSNR per method and exposure-error level");
    std::string ev_ds, ev_methods = "sna,naive,bd", ev_err = "0,0.05,0.20", ev_out, ev_ckpt, ev_kernel = "bilinear";
    std::uint64_t ev_seed = 0;
    bool ev_oracle = false, ev_no_anchor = false;
    ev->add_option("--ds", ev_ds, "Dataset directory")->required();
    ev->add_option("--methods", ev_methods, "Comma list of sna, naive, bd, hdrdsp");
    ev->add_option("--err", ev_err, "Comma list of exposure-error fractions");
    ev->add_option("--out", ev_out, "Output CSV")->required();
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint (needed for hdrdsp)");
    ev->add_option("--seed", ev_seed, "Seed of the injected exposure errors");
    ev->add_option("--splat", ev_kernel, "Splat kernel of the S&A methods");
    ev->add_flag("--oracle-flows", ev_oracle, "Use the translations from truth.json");
    ev->add_flag("--no-anchor", ev_no_anchor, "Do not anchor output gains to the reference frame");

    // expo
    auto* ex = app.add_subcommand("expo", "Pairwise exposure ratios: reported vs estimated");
    std::string ex_seq, ex_out;
    double ex_sat = kDefaultSaturation;
    ex->add_option("--seq", ex_seq, "Sequence directory")->required();
    ex->add_option("--out", ex_out, "Output CSV")->required();
    ex->add_option("--sat", ex_sat, "Saturation threshold in DN");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*scenes) {
            if (scenes_size % 2 != 0) throw Error("--size must be even");
            Rng rng(scenes_seed);
            LRSequence out;
            SceneConfig sc;
            sc.size = scenes_size;
            for (int i = 0; i < scenes_count; ++i) {
                out.frames.push_back(render_scene(sc, rng));
                out.exposures.push_back(1.0);
            }
            save_sequence(out, scenes_out);
            std::cout << "wrote " << scenes_count << " scenes to " << scenes_out << "\n";
        } else if (*gen) {
            sim.validate();
            const auto scenes_hr = load_hr_scenes(gen_hr);
            Rng rng(gen_seed);
            const NoiseModel model = gen_noiseless ? NoiseModel{0.0, 0.0} : kSkySatNoise;
            for (std::size_t k = 0; k < scenes_hr.size(); ++k) {
                Rng seq_rng = rng.split(k);
                const SimResult res = simulate_sequence(scenes_hr[k], sim, model, seq_rng);
                const fs::path dir = fs::path(gen_out) / seq_dir_name(static_cast<int>(k));
                save_sequence(res.sequence, dir);
                save_image(scenes_hr[k], dir / res.truth.hr_path);
                save_truth(res.truth, dir / "truth.json");
            }
            std::cout << "wrote " << scenes_hr.size() << " sequences to " << gen_out << "\n";
        } else if (*trn) {
            net.pool = PoolMode::parse(trn_pool);
            TrainingSet data = TrainingSet::load(trn_ds);
            const auto ck = train(data, net, tc, fs::path(trn_out), [&](const TrainProgress& p) {
                if (trn_quiet) return;
                if (p.step == 1 || p.step % 50 == 0 || p.step == p.total_steps)
                    std::printf("step %ld/%ld epoch %d loss_self %.5f loss_me %.5f lr %.2e\n", p.step, p.total_steps, p.epoch,
                                p.loss_self, p.loss_me, p.lr);
            });
            std::cout << "checkpoint written to " << trn_out << " after " << ck.meta.step << " steps\n";
        } else if (*inf) {
            if (!fs::exists(fs::path(inf_ckpt) / "model.json")) throw Error("missing checkpoint: " + inf_ckpt);
            const Checkpoint ck = load_checkpoint(inf_ckpt);
            const LRSequence seq = load_sequence(inf_seq);
            InferOptions io;
            io.anchor = !inf_no_anchor;
            if (!inf_oracle.empty()) io.flows = flows_for(seq, inf_oracle);
            save_image(infer(seq, ck.params, io), inf_out);
        } else if (*sna || *naive || *bdf) {
            const LRSequence seq = load_sequence(cl_seq);
            FusionOptions fo;
            fo.kernel = parse_splat_kernel(cl_kernel);
            fo.anchor = !cl_no_anchor;
            const auto flows = flows_for(seq, cl_oracle);
            const ImageGrid out = *sna ? me_shift_and_add(seq, flows, fo) : *naive ? naive_shift_and_add(seq, flows, fo) : bd_fuse(seq, flows, fo);
            save_image(out, cl_out);
        } else if (*ev) {
            EvalOptions eo;
            eo.methods = split_list(ev_methods);
            eo.error_levels = parse_levels(ev_err);
            eo.oracle_flows = ev_oracle;
            eo.seed = ev_seed;
            eo.fusion.kernel = parse_splat_kernel(ev_kernel);
            eo.fusion.anchor = !ev_no_anchor;
            for (const auto& m : eo.methods)
                if (canonical_method(m) == "hdrdsp" && ev_ckpt.empty()) throw Error("method hdrdsp needs --ckpt");
            if (!ev_ckpt.empty()) eo.network = load_checkpoint(ev_ckpt).params;
            std::vector<EvalItem> items;
            for (const auto& d : list_sequences(ev_ds)) items.push_back(load_eval_item(d));
            if (items.empty()) throw Error("empty dataset: no sequences under " + ev_ds);
            const EvalReport rep = run_eval(items, eo);
            write_eval_csv(rep, ev_out);
            for (const auto& r : rep.rows)
                std::printf("%-7s err %5.1f%%  %.3f dB  (%d sequences, %.2f s)\n", r.method.c_str(), r.error_pct, r.mean_psnr_db,
                            r.n_sequences, r.runtime_s);
        } else if (*ex) {
            write_expo_csv(exposure_table(load_sequence(ex_seq), ex_sat), ex_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "mesr: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

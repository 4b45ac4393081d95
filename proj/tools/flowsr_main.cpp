// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// flowsr command line: data synthesis, phase-wise training, distillation,
// evaluation, and the numeric oracle suite.
//
//   flowsr make-data --n 256 --size 64 --seed 1 --out data/
//   flowsr train vae --data data/ --out runs/vae
//   flowsr train teacher --data data/ --vae runs/vae --out runs/teacher
//   flowsr train distill --data data/ --vae runs/vae --teacher runs/teacher --out runs/distill
//   flowsr eval --student runs/distill/student --vae runs/vae --data data/ --out runs/eval
//   flowsr gradcheck [--only tsd-identity] [--float32]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <omp.h>

#include "CLI11.hpp"

#include "flowsr/gradcheck.hpp"
#include "flowsr/trainer.hpp"

using namespace flowsr;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "flowsr 0.1.0";

Json run_info(const TrainConfig& cfg) {
    Json j;
    j["tool"] = kVersion;
    j["config"] = cfg.to_json();
    return j;
}

void merge_run_info(const std::string& dir, const Json& info) {
    Json manifest = read_manifest(dir);
    manifest["run"] = info;
    write_manifest(dir, manifest);
}

// Deterministic train/val split: the tail of the dataset is validation.
void split_dataset(const Dataset& ds, int val_count, std::vector<ImagePair>& train,
                   std::vector<ImagePair>& val) {
    const int n = static_cast<int>(ds.pairs.size());
    val_count = std::min(val_count, n / 2);
    FLOWSR_REQUIRE(val_count >= 1, "dataset too small to split");
    train.assign(ds.pairs.begin(), ds.pairs.end() - val_count);
    val.assign(ds.pairs.end() - val_count, ds.pairs.end());
}

void require_checkpoint(const std::string& dir, const std::string& what) {
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw_runtime("missing prerequisite: " + what + " checkpoint not found at '" + dir +
                      "' (run the earlier training stage first)");
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--seed", cfg.seed, "rng seed");
    cmd->add_option("--batch", cfg.batch, "batch size");
    cmd->add_option("--val-images", cfg.val_images, "validation split size");
    cmd->add_option("--timesteps", cfg.timesteps, "schedule step count T");
    cmd->add_option("--t-lo", cfg.t_lo, "timestep sampling lower bound");
    cmd->add_option("--t-hi", cfg.t_hi, "timestep sampling upper bound");
    cmd->add_option("--ae-width", cfg.ae_width, "autoencoder base width");
    cmd->add_option("--vnet-width", cfg.vnet_width, "velocity net width");
    cmd->add_option("--vnet-blocks", cfg.vnet_blocks, "velocity net residual blocks");
    cmd->add_option("--lora-rank", cfg.lora_rank, "adapter rank");
    cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient clip");
}

int cmd_make_data(const std::string& out, int n, int size, uint64_t seed,
                  const std::string& recipe_file) {
    DegradationRecipe recipe;
    if (!recipe_file.empty()) {
        std::ifstream in(recipe_file);
        if (!in) throw_runtime("cannot open recipe file " + recipe_file);
        const Json j = Json::parse(in);
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key);
        };
        get("blur_sigma_lo", recipe.blur_sigma_lo);
        get("blur_sigma_hi", recipe.blur_sigma_hi);
        get("downscale_factor", recipe.downscale_factor);
        get("noise_sigma_lo", recipe.noise_sigma_lo);
        get("noise_sigma_hi", recipe.noise_sigma_hi);
        get("compression_block", recipe.compression_block);
        get("compression_keep", recipe.compression_keep);
        get("order_seed", recipe.order_seed);
    }
    const Dataset ds = make_dataset(n, size, seed, recipe);
    write_dataset(out, ds);
    Json manifest;
    {
        std::ifstream in(out + "/manifest.json");
        manifest = Json::parse(in);
    }
    manifest["run"] = Json{{"tool", kVersion}, {"seed", seed}, {"n", n}, {"size", size}};
    std::ofstream outfile(out + "/manifest.json");
    outfile << manifest.dump(2) << "\n";
    std::printf("wrote %d pairs to %s (detail score %.2f)\n", n, out.c_str(),
                ds.detail_score);
    return 0;
}

int cmd_train_vae(const TrainConfig& cfg, const std::string& data, const std::string& out) {
    const Dataset ds = load_dataset(data);
    std::vector<ImagePair> train, val;
    split_dataset(ds, cfg.val_images, train, val);
    auto result = train_autoencoder(cfg, train, val);
    if (!result.converged)
        std::fprintf(stderr, "warning: autoencoder did not reach the target psnr (%.2f dB)\n",
                      result.val_psnr);
    Json extra;
    extra["val_psnr"] = result.val_psnr;
    extra["seed"] = cfg.seed;
    extra["run"] = run_info(cfg);
    save_autoencoder(out, result.ae, extra);
    std::printf("vae checkpoint at %s, held-out psnr %.2f dB\n", out.c_str(), result.val_psnr);
    return 0;
}

int cmd_train_teacher(const TrainConfig& cfg, const std::string& data, const std::string& vae,
                      const std::string& out) {
    require_checkpoint(vae, "vae");
    const Dataset ds = load_dataset(data);
    std::vector<ImagePair> train, val;
    split_dataset(ds, cfg.val_images, train, val);
    auto ae = load_autoencoder(vae);
    ae.freeze_decoder();
    auto result = train_teacher(cfg, train, val, ae);
    Json extra;
    extra["val_velocity_loss"] = result.val_velocity_loss;
    extra["sample_ffd"] = result.sample_ffd;
    extra["seed"] = cfg.seed;
    extra["vae_hash"] = checkpoint_content_hash(vae);
    extra["run"] = run_info(cfg);
    save_velocity_net(out, result.net, extra);
    std::printf("teacher checkpoint at %s, val velocity loss %.4f, sample ffd %.3f\n",
                out.c_str(), result.val_velocity_loss, result.sample_ffd);
    return 0;
}

int cmd_train_distill(const TrainConfig& cfg, const std::string& data, const std::string& vae,
                      const std::string& teacher, const std::string& out) {
    require_checkpoint(vae, "vae");
    require_checkpoint(teacher, "teacher");
    const Dataset ds = load_dataset(data);
    std::vector<ImagePair> train, val;
    split_dataset(ds, cfg.val_images, train, val);
    auto ae = load_autoencoder(vae);
    ae.freeze_decoder();
    auto teacher_net = load_velocity_net(teacher);
    teacher_net.set_base_trainable(false);
    const auto result = distill(cfg, train, val, teacher_net, ae, out);
    Json info = run_info(cfg);
    info["inputs"] = Json{{"vae_hash", checkpoint_content_hash(vae)},
                          {"teacher_hash", checkpoint_content_hash(teacher)}};
    merge_run_info(out, info);
    std::printf("student checkpoint at %s/student, val perceptual %.5f, val psnr %.2f dB\n",
                out.c_str(), result.val_perceptual, result.val_psnr);
    return 0;
}

MetricsReport eval_checkpoint(const std::string& student_dir, const std::string& vae,
                              const std::vector<ImagePair>& pairs) {
    auto student = load_student(student_dir);
    auto ae = load_autoencoder(vae);
    return evaluate(student, pairs, ae);
}

int cmd_eval(const std::string& student_dir, const std::string& compare_dir,
             const std::string& vae, const std::string& data, const std::string& out,
             int limit) {
    require_checkpoint(student_dir, "student");
    require_checkpoint(vae, "vae");
    const Dataset ds = load_dataset(data);
    std::vector<ImagePair> pairs = ds.pairs;
    if (limit > 0 && static_cast<int>(pairs.size()) > limit) pairs.resize(limit);
    fs::create_directories(out);

    const MetricsReport report = eval_checkpoint(student_dir, vae, pairs);
    write_report_csv(out + "/report.csv", report);

    // side-by-side grid: upsampled LQ | student output | HQ
    auto student = load_student(student_dir);
    std::vector<ImageBuffer> rows;
    for (size_t i = 0; i < pairs.size() && i < 8; ++i) {
        auto result = student.forward(pairs[i].lq, false);
        ImageBuffer up = kernels::bilinear_resize(pairs[i].lq, pairs[i].hq.h, pairs[i].hq.w);
        clamp01(up);
        rows.push_back(hstack({up, result.xhat, pairs[i].hq}));
    }
    write_png(out + "/grid.png", vstack(rows));

    Json manifest;
    manifest["tool"] = kVersion;
    manifest["student"] = student_dir;
    manifest["student_hash"] = checkpoint_content_hash(student_dir);
    manifest["mean_psnr_y"] = report.mean_psnr;
    manifest["mean_perceptual"] = report.mean_perceptual;

    if (!compare_dir.empty()) {
        require_checkpoint(compare_dir, "compare student");
        const MetricsReport other = eval_checkpoint(compare_dir, vae, pairs);
        write_report_csv(out + "/report_compare.csv", other);
        std::ofstream delta(out + "/deltas.csv");
        delta << "id,d_psnr_y,d_ssim_y,d_perceptual\n";
        delta.precision(17);
        for (size_t i = 0; i < report.rows.size(); ++i)
            delta << report.rows[i].id << ","
                  << report.rows[i].psnr_y - other.rows[i].psnr_y << ","
                  << report.rows[i].ssim_y - other.rows[i].ssim_y << ","
                  << report.rows[i].perceptual - other.rows[i].perceptual << "\n";
        delta << "# mean_d_psnr_y," << report.mean_psnr - other.mean_psnr << "\n";
        delta << "# mean_d_perceptual," << report.mean_perceptual - other.mean_perceptual
              << "\n";
        manifest["compare"] = compare_dir;
        manifest["compare_hash"] = checkpoint_content_hash(compare_dir);
        manifest["mean_d_psnr_y"] = report.mean_psnr - other.mean_psnr;
    }
    write_manifest(out, manifest);
    std::printf("report at %s/report.csv, mean psnr %.2f dB, mean perceptual %.5f\n",
                out.c_str(), report.mean_psnr, report.mean_perceptual);
    return 0;
}

int cmd_gradcheck(const std::vector<std::string>& only, bool float32_mode) {
    const auto results = run_gradcheck(only, float32_mode);
    if (results.empty()) {
        std::fprintf(stderr, "no oracle matches the --only filter\n");
        return 2;
    }
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-16s %-4s max rel err %.3e (tol %.0e)  %s\n", r.name.c_str(),
                    r.pass ? "ok" : "FAIL", r.max_rel_err, r.tolerance, r.note.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"one-step flow-matching super-resolution distillation"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "ini/toml config file (defaults < config < flags)");
    app.require_subcommand(1);

    int threads = 0;
    bool serial = false;
    app.add_option("--threads", threads, "openmp thread count (0 = hardware default)");
    app.add_flag("--serial", serial, "run the serial reference kernels");

    TrainConfig cfg;

    // make-data
    auto* mk = app.add_subcommand("make-data", "synthesize a paired dataset");
    int mk_n = 256, mk_size = 64;
    uint64_t mk_seed = 1;
    std::string mk_out, mk_recipe;
    mk->add_option("--n", mk_n, "number of images");
    mk->add_option("--size", mk_size, "hq image size");
    mk->add_option("--seed", mk_seed, "dataset seed");
    mk->add_option("--recipe", mk_recipe, "degradation recipe json file");
    mk->add_option("--out", mk_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a pipeline stage");
    tr->require_subcommand(1);
    std::string tr_data, tr_vae, tr_teacher, tr_out;

    auto* tv = tr->add_subcommand("vae", "pretrain the latent autoencoder");
    tv->add_option("--data", tr_data, "dataset directory")->required();
    tv->add_option("--out", tr_out, "checkpoint directory")->required();
    tv->add_option("--steps", cfg.ae_steps, "training steps");
    tv->add_option("--lr", cfg.ae_lr, "learning rate");
    add_train_options(tv, cfg);

    auto* tt = tr->add_subcommand("teacher", "pretrain the flow-matching teacher");
    tt->add_option("--data", tr_data, "dataset directory")->required();
    tt->add_option("--vae", tr_vae, "vae checkpoint")->required();
    tt->add_option("--out", tr_out, "checkpoint directory")->required();
    tt->add_option("--steps", cfg.teacher_steps, "training steps");
    tt->add_option("--lr", cfg.teacher_lr, "learning rate");
    tt->add_option("--cond-dropout", cfg.cond_dropout, "conditioning dropout rate");
    add_train_options(tt, cfg);

    auto* td = tr->add_subcommand("distill", "distill the one-step student");
    td->add_option("--data", tr_data, "dataset directory")->required();
    td->add_option("--vae", tr_vae, "vae checkpoint")->required();
    td->add_option("--teacher", tr_teacher, "teacher checkpoint")->required();
    td->add_option("--out", tr_out, "output directory")->required();
    td->add_option("--steps", cfg.distill_steps, "distillation steps");
    td->add_option("--student-lr", cfg.student_lr, "student learning rate");
    td->add_option("--lora-lr", cfg.lora_lr, "replica learning rate");
    td->add_option("--lambda", cfg.weights.lambda, "tsm/vsd blend weight");
    td->add_option("--gamma2", cfg.weights.gamma2, "regularization weight");
    td->add_option("--cfg-weight", cfg.weights.w_cfg, "classifier-free guidance weight");
    td->add_option("--dasm-n", cfg.dasm.nodes, "trajectory nodes N");
    td->add_option("--dasm-s", cfg.dasm.stride, "trajectory stride s");
    td->add_option("--dasm-floor", cfg.dasm.t_floor, "minimum node timestep");
    td->add_option("--phase-boundary", cfg.phase_boundary_frac,
                   "fraction of steps before the late phase");
    td->add_option("--student-t-cond", cfg.student_t_cond,
                   "conceptual timestep of the student call");
    add_train_options(td, cfg);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a student checkpoint");
    std::string ev_student, ev_compare, ev_vae, ev_data, ev_out;
    int ev_limit = 0;
    ev->add_option("--student", ev_student, "student checkpoint")->required();
    ev->add_option("--compare", ev_compare, "second checkpoint for paired deltas");
    ev->add_option("--vae", ev_vae, "vae checkpoint (feature net)")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--limit", ev_limit, "evaluate only the first n pairs");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "run every numeric oracle");
    std::vector<std::string> gc_only;
    bool gc_f32 = false;
    gc->add_option("--only", gc_only, "run only the named oracles");
    gc->add_flag("--float32", gc_f32,
                 "single-precision mode: h = 1e-2, tolerance relaxed to 1e-2");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version -> 0, bad arguments -> 2
    }

    if (threads > 0) omp_set_num_threads(threads);
    kernels::exec_mode() = serial ? kernels::Exec::Serial : kernels::Exec::Parallel;

    try {
        if (mk->parsed()) return cmd_make_data(mk_out, mk_n, mk_size, mk_seed, mk_recipe);
        if (tv->parsed()) return cmd_train_vae(cfg, tr_data, tr_out);
        if (tt->parsed()) return cmd_train_teacher(cfg, tr_data, tr_vae, tr_out);
        if (td->parsed()) return cmd_train_distill(cfg, tr_data, tr_vae, tr_teacher, tr_out);
        if (ev->parsed())
            return cmd_eval(ev_student, ev_compare, ev_vae, ev_data, ev_out, ev_limit);
        if (gc->parsed()) return cmd_gradcheck(gc_only, gc_f32);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdrdistill/config.hpp"
#include "hdrdistill/raster_io.hpp"
#include "hdrdistill/train.hpp"

using namespace hdrdistill;
using ordered_json = nlohmann::ordered_json;

namespace {

int cmd_train(const std::string& config_path, const std::string& resume_from) {
    TrainConfig cfg = parse_config_file(config_path);
    RunReport report = resume_from.empty() ? train(cfg) : resume_train(cfg, resume_from);
    std::printf("distilled  psnr_l %.4f  psnr_mu %.4f  ssim %.6f\n", report.distilled.psnr_l,
                report.distilled.psnr_mu, report.distilled.ssim);
    std::printf("baseline   psnr_l %.4f  psnr_mu %.4f  ssim %.6f\n", report.baseline.psnr_l,
                report.baseline.psnr_mu, report.baseline.ssim);
    std::printf("teacher    psnr_l %.4f  psnr_mu %.4f  ssim %.6f\n", report.teacher.psnr_l,
                report.teacher.psnr_mu, report.teacher.ssim);
    std::printf("report written to %s/report.json\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_infer(const InferOptions& opts, const std::string& out_path) {
    InferResult res = infer(opts);
    if (!out_path.empty()) {
        Raster r;
        r.magic = "SCN1";
        r.k = 0;
        r.c = static_cast<std::uint32_t>(res.output.dim(0));
        r.h = static_cast<std::uint32_t>(res.output.dim(1));
        r.w = static_cast<std::uint32_t>(res.output.dim(2));
        // k = 0 frames: the payload is just the reconstruction planes.
        for (double x : res.output.values()) r.payload.push_back(static_cast<float>(x));
        write_raster(out_path, r);
        std::printf("wrote %s\n", out_path.c_str());
    }
    if (res.metrics) {
        std::printf("psnr_l %.4f  psnr_mu %.4f  ssim %.6f\n", res.metrics->psnr_l,
                    res.metrics->psnr_mu, res.metrics->ssim);
    }
    return 0;
}

int cmd_gradcheck() {
    auto entries = gradcheck_suite();
    bool ok = true;
    std::printf("%-28s %14s %10s  %s\n", "check", "max_rel_err", "tolerance", "status");
    for (const auto& e : entries) {
        std::printf("%-28s %14.3e %10.0e  %s\n", e.name.c_str(), e.max_rel_err, e.tolerance,
                    e.pass ? "pass" : "FAIL");
        ok = ok && e.pass;
    }
    return ok ? 0 : 1;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    TrainConfig cfg = parse_config_file(config_path);
    std::filesystem::create_directories(out_dir);
    ordered_json manifest;
    manifest["config"] = serialize_config(cfg);
    manifest["splits"] = ordered_json::object();
    auto emit = [&](const std::string& split, int count) {
        ordered_json list = ordered_json::array();
        for (int i = 0; i < count; i++) {
            std::uint64_t seed =
                RngStream::mix(cfg.seed, split + "-scene-" + std::to_string(i));
            SyntheticScene scene = generate_scene(cfg.scene_config(), seed);
            SdrStack stack = simulate_exposures(scene);
            if (cfg.pixel_format() == PixelFormat::RawBayer) {
                stack = to_raw_bayer(stack, cfg.bayer_pattern());
            }
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04d.scn", split.c_str(), i);
            save_scene(out_dir + "/" + name, scene, stack);
            list.push_back({{"file", name}, {"seed", seed}});
        }
        manifest["splits"][split] = list;
    };
    emit("train", cfg.train_scenes);
    emit("test", cfg.test_scenes);
    std::ofstream os(out_dir + "/manifest.json", std::ios::trunc);
    os << manifest.dump(2) << "\n";
    std::printf("wrote %d train + %d test scenes to %s\n", cfg.train_scenes, cfg.test_scenes,
                out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, double mu,
             const std::string& bayer, const std::string& csv_out) {
    std::ifstream mf(data_dir + "/manifest.json");
    if (!mf) throw IoError("no manifest.json in " + data_dir);
    ordered_json manifest = ordered_json::parse(mf);
    std::vector<MetricsRecord> records;
    const auto& split = manifest["splits"].contains("test") ? manifest["splits"]["test"]
                                                            : manifest["splits"].begin().value();
    for (const auto& item : split) {
        InferOptions opts;
        opts.checkpoint_path = ckpt;
        opts.scene_path = data_dir + "/" + item["file"].get<std::string>();
        opts.mu = mu;
        opts.bayer = bayer;
        InferResult res = infer(opts);
        if (res.metrics) {
            res.metrics->sample_id = item["file"].get<std::string>();
            records.push_back(*res.metrics);
        }
    }
    double pl = 0, pm = 0, ss = 0;
    for (const auto& r : records) {
        pl += r.psnr_l;
        pm += r.psnr_mu;
        ss += r.ssim;
    }
    std::size_t n = records.empty() ? 1 : records.size();
    std::printf("%zu samples: psnr_l %.4f  psnr_mu %.4f  ssim %.6f\n", records.size(), pl / n,
                pm / n, ss / n);
    if (!csv_out.empty()) {
        write_metrics_csv(csv_out, records);
        std::printf("wrote %s\n", csv_out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic knowledge transfer for multi-exposure HDR reconstruction"};
    app.require_subcommand(1);

    std::string config_path, resume_from;
    auto* train_cmd = app.add_subcommand("train", "Train distilled + baseline arms");
    train_cmd->add_option("--config", config_path, "flat key=value config file")->required();
    train_cmd->add_option("--resume", resume_from, "checkpoint to continue from");

    InferOptions iopts;
    std::string infer_out;
    auto* infer_cmd = app.add_subcommand("infer", "Reconstruct one scene with the ORM only");
    infer_cmd->add_option("--ckpt", iopts.checkpoint_path, "checkpoint file")->required();
    infer_cmd->add_option("--input", iopts.scene_path, "scene (.scn) file")->required();
    infer_cmd->add_option("--mu", iopts.mu, "tonemap compression");
    infer_cmd->add_option("--bayer", iopts.bayer, "bayer pattern for RAW scenes");
    infer_cmd->add_option("--out", infer_out, "write reconstruction raster here");

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the gradient check table");

    std::string synth_config, synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset on disk");
    synth_cmd->add_option("--config", synth_config, "config file")->required();
    synth_cmd->add_option("--out", synth_out, "output directory")->required();

    std::string eval_ckpt, eval_dir, eval_csv, eval_bayer = "rggb";
    double eval_mu = 5000.0;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on saved scenes");
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_dir, "dataset directory with manifest.json")->required();
    eval_cmd->add_option("--mu", eval_mu, "tonemap compression");
    eval_cmd->add_option("--bayer", eval_bayer, "bayer pattern for RAW scenes");
    eval_cmd->add_option("--csv", eval_csv, "write per-sample metrics CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, resume_from);
        if (infer_cmd->parsed()) return cmd_infer(iopts, infer_out);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck();
        if (synth_cmd->parsed()) return cmd_synth(synth_config, synth_out);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_dir, eval_mu, eval_bayer, eval_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "hdrdistill/raster_io.hpp"
#include "hdrdistill/train.hpp"

using namespace hdrdistill;

namespace {

TrainConfig tiny_config(const std::string& out) {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.image_size = 16;
    cfg.n_frames = 3;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.train_scenes = 8;
    cfg.test_scenes = 2;
    cfg.orm_width = 6;
    cfg.spgrm_width = 6;
    cfg.fpn_out = 6;
    cfg.skam_latent = 4;
    cfg.phi_width = 4;
    cfg.k_masks = 12;
    cfg.hist_bins = 16;
    cfg.max_instances = 6;
    cfg.output_dir = out;
    cfg.validate();
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("dataset build is deterministic and format-aware") {
    TrainConfig cfg = tiny_config("/tmp/hdr_train_t0");
    Dataset a = build_dataset(cfg);
    Dataset b = build_dataset(cfg);
    REQUIRE(a.train.size() == 8);
    REQUIRE(a.test.size() == 2);
    CHECK(a.train[0].stacked.values() == b.train[0].stacked.values());
    CHECK(a.train[3].t_gt.values() == b.train[3].t_gt.values());
    CHECK(a.train[0].stacked.shape() == Shape{18, 16, 16});

    cfg.format = "raw";
    cfg.n_frames = 5;
    Dataset raw = build_dataset(cfg);
    CHECK(raw.train[0].stacked.shape() == Shape{10, 16, 16});
    CHECK(raw.train[0].gt_target.format == PixelFormat::RawBayer);
}

TEST_CASE("epoch zero run evaluates untrained models") {
    TrainConfig cfg = tiny_config("/tmp/hdr_train_t1");
    cfg.epochs = 0;
    RunReport report = train(cfg);
    CHECK(report.epochs.empty());
    CHECK(report.distilled_records.size() == 2);
    CHECK(report.distilled.psnr_mu > 0.0);
    CHECK(std::filesystem::exists(cfg.output_dir + "/checkpoint_final.ckpt"));
    CHECK(std::filesystem::exists(cfg.output_dir + "/report.json"));
}

TEST_CASE("training runs, logs and reports deterministically") {
    TrainConfig cfg = tiny_config("/tmp/hdr_train_t2");
    RunReport a = train(cfg);
    REQUIRE(a.epochs.size() == 2);
    for (const auto& e : a.epochs) {
        CHECK(std::isfinite(e.total));
        CHECK(e.org >= 0.0);
        CHECK(e.baseline_org >= 0.0);
    }
    std::string report_a = slurp(cfg.output_dir + "/report.json");

    TrainConfig cfg_b = tiny_config("/tmp/hdr_train_t2b");
    RunReport b = train(cfg_b);
    // Identical config (apart from where files land) => identical numbers.
    CHECK(a.epochs.back().total == b.epochs.back().total);
    CHECK(a.distilled.psnr_mu == b.distilled.psnr_mu);
    CHECK(a.teacher.psnr_mu == b.teacher.psnr_mu);

    // Byte-identical reports modulo the echoed output_dir line.
    std::string report_b = slurp(cfg_b.output_dir + "/report.json");
    auto scrub = [](std::string s, const std::string& dir) {
        std::size_t pos;
        while ((pos = s.find(dir)) != std::string::npos) s.replace(pos, dir.size(), "<out>");
        return s;
    };
    CHECK(scrub(report_a, "/tmp/hdr_train_t2") == scrub(report_b, "/tmp/hdr_train_t2b"));
}

TEST_CASE("per-step diagnostics hold during live training") {
    TrainConfig cfg = tiny_config("/tmp/hdr_train_t3");
    cfg.epochs = 1;
    int steps = 0;
    TrainHooks hooks;
    hooks.on_step = [&](int, int, const StepDiagnostics& d) {
        steps++;
        CHECK(d.report_identity_gap <= 1e-12);
        CHECK(d.max_teacher_grad_from_distill == 0.0);
        CHECK(d.max_student_grad_from_spg == 0.0);
    };
    train(cfg, &hooks);
    CHECK(steps == 2);
}

TEST_CASE("resume reproduces the uninterrupted run bit for bit") {
    TrainConfig full_cfg = tiny_config("/tmp/hdr_train_t4_full");
    full_cfg.epochs = 3;
    RunReport full = train(full_cfg);

    TrainConfig half_cfg = tiny_config("/tmp/hdr_train_t4_half");
    half_cfg.epochs = 1;
    train(half_cfg);
    TrainConfig cont_cfg = tiny_config("/tmp/hdr_train_t4_half");
    cont_cfg.epochs = 3;
    RunReport cont =
        resume_train(cont_cfg, half_cfg.output_dir + "/checkpoint_epoch1.ckpt");

    CHECK(cont.distilled.psnr_mu == full.distilled.psnr_mu);
    CHECK(cont.baseline.psnr_mu == full.baseline.psnr_mu);
    CHECK(cont.teacher.psnr_mu == full.teacher.psnr_mu);
    CHECK(slurp(full_cfg.output_dir + "/checkpoint_final.ckpt") ==
          slurp(cont_cfg.output_dir + "/checkpoint_final.ckpt"));
}

TEST_CASE("infer is teacher-free and checkpoint-strict") {
    TrainConfig cfg = tiny_config("/tmp/hdr_train_t5");
    cfg.epochs = 1;
    train(cfg);

    // Save one test scene to disk for the CLI-style path.
    Dataset data = build_dataset(cfg);
    std::string scene_path = cfg.output_dir + "/scene.scn";
    save_scene(scene_path, data.test[0].scene, data.test[0].stack);

    InferOptions opts;
    opts.checkpoint_path = cfg.output_dir + "/checkpoint_final.ckpt";
    opts.scene_path = scene_path;
    opts.mu = cfg.mu;
    InferResult with_teacher = infer(opts);
    REQUIRE(with_teacher.metrics.has_value());

    // Strip every non-ORM section; the reconstruction must not move.
    ParamGroup orm_only = read_checkpoint_section(opts.checkpoint_path, "orm.");
    std::string stripped = cfg.output_dir + "/orm_only.ckpt";
    write_checkpoint(stripped, orm_only);
    opts.checkpoint_path = stripped;
    InferResult without_teacher = infer(opts);
    CHECK(with_teacher.output.values() == without_teacher.output.values());
    CHECK(with_teacher.metrics->psnr_mu == without_teacher.metrics->psnr_mu);

    // A checkpoint with no ORM section is refused.
    ParamGroup junk;
    junk.add("spgrm.m0.gamma", Tensor::variable({1}, {1.0}));
    std::string junk_path = cfg.output_dir + "/junk.ckpt";
    write_checkpoint(junk_path, junk);
    opts.checkpoint_path = junk_path;
    CHECK_THROWS_AS(infer(opts), CheckpointError);
}

TEST_CASE("gradcheck suite passes end to end") {
    auto entries = gradcheck_suite();
    CHECK(entries.size() >= 15);
    for (const auto& e : entries) {
        INFO(e.name);
        CHECK(e.pass);
        CHECK(e.max_rel_err < 1e-4);
    }
}

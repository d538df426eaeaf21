#include "hdrdistill/train.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "hdrdistill/raster_io.hpp"

namespace hdrdistill {

using ordered_json = nlohmann::ordered_json;

namespace {

struct Trainer {
    TrainConfig cfg;
    SemanticBank bank;
    FeatureExtractor phi;
    OrmParams orm, orm_baseline;
    SpgrmParams spgrm;
    FpnParams fpn;
    std::vector<SkamStageParams> skam;
    ParamGroup distilled_group, baseline_group;
    AdamState adam_d, adam_b;
    int done_epochs = 0;
};

int frame_channels(const TrainConfig& cfg) {
    return cfg.pixel_format() == PixelFormat::RawBayer ? 1 : 3;
}

std::vector<int> student_tap_channels(const TrainConfig& cfg) {
    return {cfg.orm_width, cfg.orm_width, frame_channels(cfg)};
}

std::vector<int> teacher_tap_channels(const TrainConfig& cfg) {
    return {cfg.spgrm_width, cfg.spgrm_width, cfg.spgrm_width};
}

void rebuild_groups(Trainer& tr) {
    tr.distilled_group = ParamGroup{};
    tr.distilled_group.merge("", tr.orm.collect("orm"));
    tr.distilled_group.merge("", tr.spgrm.collect("spgrm"));
    tr.distilled_group.merge("", tr.fpn.collect("fpn"));
    for (std::size_t k = 0; k < tr.skam.size(); k++) {
        tr.distilled_group.merge("", tr.skam[k].collect("skam.s" + std::to_string(k)));
    }
    tr.baseline_group = tr.orm_baseline.collect("orm_baseline");
}

Trainer make_trainer(const TrainConfig& cfg) {
    Trainer tr;
    tr.cfg = cfg;
    SkbConfig skb;
    skb.k_masks = cfg.k_masks;
    tr.bank = SemanticBank::create(skb, cfg.seed);
    tr.phi = FeatureExtractor::random(cfg.phi_width, RngStream::mix(cfg.seed, "init-phi"));

    const int in_ch = 2 * cfg.n_frames * frame_channels(cfg);
    const int out_ch = frame_channels(cfg);
    {
        RngStream rng(cfg.seed, "init-orm");
        tr.orm = OrmParams::create(in_ch, out_ch, cfg.orm_width, rng, cfg.mu);
    }
    {
        // Same stream label: the baseline starts from identical weights.
        RngStream rng(cfg.seed, "init-orm");
        tr.orm_baseline = OrmParams::create(in_ch, out_ch, cfg.orm_width, rng, cfg.mu);
    }
    {
        RngStream rng(cfg.seed, "init-spgrm");
        tr.spgrm = SpgrmParams::create(cfg.spgrm_width, rng);
    }
    {
        RngStream rng(cfg.seed, "init-fpn");
        tr.fpn = FpnParams::create(tr.bank.cfg.feature_channels, cfg.fpn_out, rng);
    }
    auto s_ch = student_tap_channels(cfg);
    auto t_ch = teacher_tap_channels(cfg);
    for (int k = 0; k < cfg.skam_stages; k++) {
        RngStream rng(cfg.seed, "init-skam-" + std::to_string(k));
        tr.skam.push_back(SkamStageParams::create(s_ch[k], t_ch[k], cfg.skam_latent, rng));
    }
    rebuild_groups(tr);
    tr.adam_d.init(tr.distilled_group);
    tr.adam_b.init(tr.baseline_group);
    return tr;
}

TrainSample make_sample(const TrainConfig& cfg, const std::string& split, int index) {
    TrainSample s;
    SceneConfig sc = cfg.scene_config();
    std::uint64_t seed = RngStream::mix(cfg.seed, split + "-scene-" + std::to_string(index));
    s.scene = generate_scene(sc, seed);
    SdrStack rgb_stack = simulate_exposures(s.scene);
    if (cfg.pixel_format() == PixelFormat::RawBayer) {
        s.stack = to_raw_bayer(rgb_stack, cfg.bayer_pattern());
    } else {
        s.stack = rgb_stack;
    }
    s.gt_target = scene_target(s.scene, cfg.pixel_format(), cfg.bayer_pattern());
    s.t_gt = domain_transfer(s.gt_target, cfg.tonemap());
    s.stacked = orm_input(s.stack);
    return s;
}

std::vector<Tensor> take_stages(const std::vector<Tensor>& taps, int n) {
    return std::vector<Tensor>(taps.begin(), taps.begin() + n);
}

// One optimizer step works on a single batched graph: the models run on
// [B,...] tensors, only the per-instance color term walks the batch.
struct BatchInputs {
    Tensor stacked;  // [B, n*C, H, W]
    Tensor t_gt;     // [B, 3, H, W]
    std::vector<SegmentationPriors> priors;
    SegmentationPriors stacked_priors;  // per-level feature stacks for the FPN
};

BatchInputs gather_batch(Trainer& tr, const Dataset& data, const std::vector<int>& order,
                         int start, int bsz) {
    BatchInputs bi;
    std::vector<Tensor> stacked, t_gt;
    for (int b = 0; b < bsz; b++) {
        const TrainSample& s = data.train[order[start + b]];
        stacked.push_back(s.stacked);
        t_gt.push_back(s.t_gt);
        bi.priors.push_back(synth_priors(s.scene, tr.bank, tr.cfg.tonemap()));
    }
    bi.stacked = stack0(stacked);
    bi.t_gt = stack0(t_gt);
    for (std::size_t lvl = 0; lvl < bi.priors[0].features.size(); lvl++) {
        std::vector<Tensor> level;
        for (const auto& p : bi.priors) level.push_back(p.features[lvl]);
        bi.stacked_priors.features.push_back(stack0(level));
    }
    return bi;
}

Objective batch_objective(Trainer& tr, const BatchInputs& bi, RngStream& mask_rng) {
    const TrainConfig& cfg = tr.cfg;
    const int bsz = bi.stacked.dim(0);
    auto [h_in, taps_s] = orm_forward(bi.stacked, tr.orm);
    HdrImage him{h_in, cfg.pixel_format(), cfg.bayer_pattern()};
    Tensor t_hin = domain_transfer(him, cfg.tonemap());
    Tensor h_s = t_hin.detach();
    Tensor p_f = fpn_fuse(bi.stacked_priors, tr.fpn, cfg.image_size, cfg.image_size);
    auto [h_hat, taps_t] = spgrm_forward(h_s, p_f, tr.spgrm);

    LossWeights w = cfg.weights();
    Tensor org = l1(t_hin, bi.t_gt);
    Tensor content = content_loss_transferred(t_hin, h_hat, tr.phi, w.lambda_perc);
    Tensor color;
    for (int b = 0; b < bsz; b++) {
        Tensor term = color_loss_transferred(select0(t_hin, b), select0(h_hat, b),
                                             bi.priors[b].masks, cfg.hist_spec(),
                                             cfg.mask_mode());
        color = b == 0 ? term : color + term;
    }
    color = color * (1.0 / bsz);
    Tensor feat = multi_stage_loss(take_stages(taps_s, cfg.skam_stages),
                                   take_stages(taps_t, cfg.skam_stages), tr.skam, mask_rng);
    Tensor spg = l1(h_hat, bi.t_gt);

    Objective out;
    out.total = (org + w.lambda1 * content) + w.lambda2 * color + feat;
    out.spg = spg;
    out.grand = out.total + spg;
    out.report.org = org.item();
    out.report.content = content.item();
    out.report.color = color.item();
    out.report.feat = feat.item();
    out.report.spg = spg.item();
    out.report.total = out.total.item();
    return out;
}

Tensor batch_baseline_loss(Trainer& tr, const BatchInputs& bi) {
    auto [h_in, taps] = orm_forward(bi.stacked, tr.orm_baseline);
    HdrImage him{h_in, tr.cfg.pixel_format(), tr.cfg.bayer_pattern()};
    return l1(domain_transfer(him, tr.cfg.tonemap()), bi.t_gt);
}

double max_abs_grad(const ParamGroup& g) {
    double worst = 0.0;
    for (const auto& [name, t] : g.items) {
        if (!t.has_grad()) continue;
        for (double v : t.grad()) worst = std::max(worst, std::fabs(v));
    }
    return worst;
}

struct LossAccum {
    LossReport sums;
    int steps = 0;
    void add(const LossReport& r) {
        sums.org += r.org;
        sums.spg += r.spg;
        sums.content += r.content;
        sums.color += r.color;
        sums.feat += r.feat;
        sums.total += r.total;
        steps++;
    }
};

// ---------------------------------------------------------------------------
// evaluation

Tensor linear_view(const Tensor& img, PixelFormat format, BayerPattern pattern) {
    if (format == PixelFormat::RawBayer) {
        return demosaic_bilinear(img.detach(), pattern);
    }
    return img.detach();
}

MetricsRecord eval_pair(const Tensor& lin_out, const Tensor& lin_gt, const std::string& id,
                        const TonemapParams& tonemap) {
    MetricsRecord r;
    r.sample_id = id;
    r.psnr_l = psnr(lin_out, lin_gt);
    r.psnr_mu = psnr_mu(lin_out, lin_gt, tonemap);
    r.ssim = ssim(lin_out, lin_gt);
    return r;
}

ArmMetrics summarize(const std::vector<MetricsRecord>& records) {
    ArmMetrics m;
    if (records.empty()) return m;
    for (const auto& r : records) {
        m.psnr_l += r.psnr_l;
        m.psnr_mu += r.psnr_mu;
        m.ssim += r.ssim;
    }
    m.psnr_l /= records.size();
    m.psnr_mu /= records.size();
    m.ssim /= records.size();
    return m;
}

std::vector<MetricsRecord> eval_student(const OrmParams& orm, const std::vector<TrainSample>& set,
                                        const TrainConfig& cfg) {
    std::vector<MetricsRecord> records;
    for (std::size_t i = 0; i < set.size(); i++) {
        const TrainSample& s = set[i];
        auto [h_in, taps] = orm_forward(s.stack, orm);
        Tensor lin_out = linear_view(h_in.data, cfg.pixel_format(), cfg.bayer_pattern());
        Tensor lin_gt = linear_view(s.gt_target.data, cfg.pixel_format(), cfg.bayer_pattern());
        records.push_back(eval_pair(lin_out, lin_gt, "test_" + std::to_string(i), cfg.tonemap()));
    }
    return records;
}

std::vector<MetricsRecord> eval_teacher(Trainer& tr, const std::vector<TrainSample>& set) {
    const TrainConfig& cfg = tr.cfg;
    std::vector<MetricsRecord> records;
    for (std::size_t i = 0; i < set.size(); i++) {
        const TrainSample& s = set[i];
        auto [h_in, taps_s] = orm_forward(s.stack, tr.orm);
        Tensor h_s = domain_transfer(h_in, cfg.tonemap()).detach();
        SegmentationPriors priors = synth_priors(s.scene, tr.bank, cfg.tonemap());
        Tensor p_f = fpn_fuse(priors, tr.fpn, cfg.image_size, cfg.image_size);
        auto [h_hat, taps_t] = spgrm_forward(h_s, p_f, tr.spgrm);
        // The teacher lives in the tonemapped domain; map back for PSNR-L/SSIM.
        Tensor lin_out = mu_law_inverse(h_hat.detach(), cfg.tonemap());
        Tensor lin_gt = linear_view(s.gt_target.data, cfg.pixel_format(), cfg.bayer_pattern());
        records.push_back(eval_pair(lin_out, lin_gt, "test_" + std::to_string(i), cfg.tonemap()));
    }
    return records;
}

// ---------------------------------------------------------------------------
// checkpoints

ParamGroup checkpoint_group(const Trainer& tr) {
    ParamGroup g;
    g.merge("", tr.orm.collect("orm"));
    g.merge("", tr.spgrm.collect("spgrm"));
    g.merge("", tr.fpn.collect("fpn"));
    for (std::size_t k = 0; k < tr.skam.size(); k++) {
        g.merge("", tr.skam[k].collect("skam.s" + std::to_string(k)));
    }
    g.merge("", tr.phi.collect("phi"));
    g.merge("", tr.orm_baseline.collect("orm_baseline"));
    g.merge("", adam_state_tensors(tr.adam_d, tr.distilled_group, "adam_d"));
    g.merge("", adam_state_tensors(tr.adam_b, tr.baseline_group, "adam_b"));
    g.add("meta.epoch", Tensor::constant({1}, {static_cast<double>(tr.done_epochs)}));
    g.add("meta.skam_stages", Tensor::constant({1}, {static_cast<double>(tr.skam.size())}));
    return g;
}

Trainer trainer_from_checkpoint(const TrainConfig& cfg, const std::string& path) {
    Trainer tr;
    tr.cfg = cfg;
    SkbConfig skb;
    skb.k_masks = cfg.k_masks;
    tr.bank = SemanticBank::create(skb, cfg.seed);

    ParamGroup g = read_checkpoint(path);
    tr.phi = FeatureExtractor::from_group(g, "phi");
    tr.orm = OrmParams::from_group(g, "orm");
    tr.orm_baseline = OrmParams::from_group(g, "orm_baseline");
    tr.spgrm = SpgrmParams::from_group(g, "spgrm");
    tr.fpn = FpnParams::from_group(g, "fpn", static_cast<int>(tr.bank.cfg.feature_channels.size()));
    const Tensor* stages = g.find("meta.skam_stages");
    int n_stages = stages ? static_cast<int>(stages->item()) : cfg.skam_stages;
    for (int k = 0; k < n_stages; k++) {
        tr.skam.push_back(SkamStageParams::from_group(g, "skam.s" + std::to_string(k)));
    }
    rebuild_groups(tr);
    load_adam_state(tr.adam_d, tr.distilled_group, g, "adam_d");
    load_adam_state(tr.adam_b, tr.baseline_group, g, "adam_b");
    const Tensor* epoch = g.find("meta.epoch");
    if (!epoch) throw CheckpointError("checkpoint lacks meta.epoch");
    tr.done_epochs = static_cast<int>(epoch->item());
    return tr;
}

// ---------------------------------------------------------------------------
// the training loop

std::vector<int> epoch_order(const TrainConfig& cfg, int epoch, int n) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngStream rng(cfg.seed, "shuffle-epoch-" + std::to_string(epoch));
    for (int i = n - 1; i > 0; i--) {
        int j = rng.uniform_int(0, i);
        std::swap(order[i], order[j]);
    }
    return order;
}

RunReport run_training(Trainer& tr, const TrainHooks* hooks) {
    const TrainConfig& cfg = tr.cfg;
    cfg.validate();
    Dataset data = build_dataset(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    AdamHyper hyper{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    RunReport report;
    report.config_text = serialize_config(cfg);

    std::ofstream losses(cfg.output_dir + "/losses.jsonl",
                         tr.done_epochs == 0 ? std::ios::trunc : std::ios::app);
    if (!losses) throw IoError("cannot open losses.jsonl under " + cfg.output_dir);

    const int n = static_cast<int>(data.train.size());
    for (int epoch = tr.done_epochs; epoch < cfg.epochs; epoch++) {
        auto order = epoch_order(cfg, epoch, n);
        RngStream mask_rng(cfg.seed, "skam-masks-epoch-" + std::to_string(epoch));
        LossAccum accum;
        double baseline_sum = 0.0;
        int baseline_steps = 0;

        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            int step = start / cfg.batch_size;
            BatchInputs bi = gather_batch(tr, data, order, start, bsz);

            StepDiagnostics diag;
            if (hooks && hooks->on_step) {
                // Detachment probes on rebuilt graphs with the same masks.
                tr.distilled_group.zero_grad();
                {
                    RngStream probe_rng = mask_rng;
                    Objective o = batch_objective(tr, bi, probe_rng);
                    backward(o.total);
                    ParamGroup teacher_side;
                    teacher_side.merge("", tr.spgrm.collect("spgrm"));
                    teacher_side.merge("", tr.fpn.collect("fpn"));
                    diag.max_teacher_grad_from_distill = max_abs_grad(teacher_side);
                }
                tr.distilled_group.zero_grad();
                {
                    RngStream probe_rng = mask_rng;
                    Objective o = batch_objective(tr, bi, probe_rng);
                    backward(o.spg);
                    diag.max_student_grad_from_spg = max_abs_grad(tr.orm.collect("orm"));
                }
            }

            tr.distilled_group.zero_grad();
            Objective o = batch_objective(tr, bi, mask_rng);
            backward(o.grand);
            adam_step(tr.distilled_group, tr.adam_d, hyper);
            accum.add(o.report);

            ordered_json line = {{"arm", "distilled"}, {"epoch", epoch},
                                 {"step", step},       {"org", o.report.org},
                                 {"spg", o.report.spg}, {"content", o.report.content},
                                 {"color", o.report.color}, {"feat", o.report.feat},
                                 {"total", o.report.total}};
            losses << line.dump() << "\n";

            if (hooks && hooks->on_step) {
                diag.report = o.report;
                diag.report_identity_gap = report_identity_gap(o.report, cfg.weights());
                hooks->on_step(epoch, step, diag);
            }
        }

        for (int start = 0; start < n; start += cfg.batch_size) {
            int bsz = std::min(cfg.batch_size, n - start);
            BatchInputs bi = gather_batch(tr, data, order, start, bsz);
            tr.baseline_group.zero_grad();
            Tensor loss = batch_baseline_loss(tr, bi);
            double loss_v = loss.item();
            backward(loss);
            adam_step(tr.baseline_group, tr.adam_b, hyper);
            baseline_sum += loss_v;
            baseline_steps++;
            ordered_json line = {{"arm", "baseline"},
                                 {"epoch", epoch},
                                 {"step", start / cfg.batch_size},
                                 {"org", loss_v}};
            losses << line.dump() << "\n";
        }

        EpochLosses el;
        if (accum.steps > 0) {
            el.org = accum.sums.org / accum.steps;
            el.spg = accum.sums.spg / accum.steps;
            el.content = accum.sums.content / accum.steps;
            el.color = accum.sums.color / accum.steps;
            el.feat = accum.sums.feat / accum.steps;
            el.total = accum.sums.total / accum.steps;
        }
        if (baseline_steps > 0) el.baseline_org = baseline_sum / baseline_steps;
        report.epochs.push_back(el);

        tr.done_epochs = epoch + 1;
        write_checkpoint(cfg.output_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) +
                             ".ckpt",
                         checkpoint_group(tr));
    }

    report.distilled_records = eval_student(tr.orm, data.test, cfg);
    report.baseline_records = eval_student(tr.orm_baseline, data.test, cfg);
    report.teacher_records = eval_teacher(tr, data.test);
    report.distilled = summarize(report.distilled_records);
    report.baseline = summarize(report.baseline_records);
    report.teacher = summarize(report.teacher_records);

    write_checkpoint(cfg.output_dir + "/checkpoint_final.ckpt", checkpoint_group(tr));
    {
        // Deployable never-distilled checkpoint: the baseline weights under
        // the names infer() loads.
        ParamGroup g = tr.orm_baseline.collect("orm");
        write_checkpoint(cfg.output_dir + "/checkpoint_baseline_final.ckpt", g);
    }
    write_metrics_csv(cfg.output_dir + "/metrics_distilled.csv", report.distilled_records);
    write_metrics_csv(cfg.output_dir + "/metrics_baseline.csv", report.baseline_records);
    write_metrics_csv(cfg.output_dir + "/metrics_teacher.csv", report.teacher_records);
    {
        std::ofstream os(cfg.output_dir + "/report.json", std::ios::trunc);
        if (!os) throw IoError("cannot write report.json");
        os << report.to_json();
    }
    return report;
}

}  // namespace

Dataset build_dataset(const TrainConfig& cfg) {
    Dataset d;
    for (int i = 0; i < cfg.train_scenes; i++) d.train.push_back(make_sample(cfg, "train", i));
    for (int i = 0; i < cfg.test_scenes; i++) d.test.push_back(make_sample(cfg, "test", i));
    return d;
}

std::string RunReport::to_json() const {
    ordered_json j;
    j["config"] = config_text;
    j["epochs"] = ordered_json::array();
    for (const auto& e : epochs) {
        j["epochs"].push_back({{"org", e.org},
                               {"spg", e.spg},
                               {"content", e.content},
                               {"color", e.color},
                               {"feat", e.feat},
                               {"total", e.total},
                               {"baseline_org", e.baseline_org}});
    }
    auto arm = [](const ArmMetrics& m) {
        return ordered_json{{"psnr_l", m.psnr_l}, {"psnr_mu", m.psnr_mu}, {"ssim", m.ssim}};
    };
    j["metrics"] = {{"distilled", arm(distilled)}, {"baseline", arm(baseline)},
                    {"teacher", arm(teacher)}};
    auto records = [](const std::vector<MetricsRecord>& rs) {
        ordered_json out = ordered_json::array();
        for (const auto& r : rs) {
            out.push_back({{"id", r.sample_id},
                           {"psnr_l", r.psnr_l},
                           {"psnr_mu", r.psnr_mu},
                           {"ssim", r.ssim}});
        }
        return out;
    };
    j["records"] = {{"distilled", records(distilled_records)},
                    {"baseline", records(baseline_records)},
                    {"teacher", records(teacher_records)}};
    return j.dump(2) + "\n";
}

RunReport train(const TrainConfig& cfg, const TrainHooks* hooks) {
    Trainer tr = make_trainer(cfg);
    return run_training(tr, hooks);
}

RunReport resume_train(const TrainConfig& cfg, const std::string& checkpoint_path,
                       const TrainHooks* hooks) {
    Trainer tr = trainer_from_checkpoint(cfg, checkpoint_path);
    return run_training(tr, hooks);
}

InferResult infer(const InferOptions& opts) {
    const long spgrm_before = SpgrmParams::constructions();
    const long skam_before = SkamStageParams::constructions();
    const long priors_before = SegmentationPriors::constructions();

    ParamGroup g = read_checkpoint_section(opts.checkpoint_path, "orm.");
    if (g.items.empty()) {
        throw CheckpointError("checkpoint has no ORM section: " + opts.checkpoint_path);
    }
    OrmParams orm = OrmParams::from_group(g, "orm");

    LoadedScene scene = load_scene(opts.scene_path);
    BayerPattern pattern = BayerPattern::RGGB;
    if (opts.bayer == "bggr") pattern = BayerPattern::BGGR;
    if (opts.bayer == "grbg") pattern = BayerPattern::GRBG;
    if (opts.bayer == "gbrg") pattern = BayerPattern::GBRG;
    scene.stack.pattern = pattern;

    auto [h_in, taps] = orm_forward(scene.stack, orm);

    InferResult res;
    res.output = h_in.data.detach();
    TonemapParams tonemap{opts.mu};
    Tensor lin_out = linear_view(h_in.data, scene.stack.format, pattern);
    Tensor lin_gt = scene.stack.format == PixelFormat::RawBayer
                        ? linear_view(mosaic_image(scene.gt_rgb, pattern), scene.stack.format,
                                      pattern)
                        : scene.gt_rgb;
    res.metrics = eval_pair(lin_out, lin_gt, opts.scene_path, tonemap);

    // Inference must never touch teacher-side machinery.
    assert(SpgrmParams::constructions() == spgrm_before);
    assert(SkamStageParams::constructions() == skam_before);
    assert(SegmentationPriors::constructions() == priors_before);
    (void)spgrm_before;
    (void)skam_before;
    (void)priors_before;
    return res;
}

}  // namespace hdrdistill

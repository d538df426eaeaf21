#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hdrdistill/config.hpp"
#include "hdrdistill/metrics.hpp"
#include "hdrdistill/models.hpp"
#include "hdrdistill/objectives.hpp"
#include "hdrdistill/optim.hpp"
#include "hdrdistill/semantic_bank.hpp"

namespace hdrdistill {

struct TrainSample {
    SyntheticScene scene;
    SdrStack stack;      // in the configured pixel format
    HdrImage gt_target;  // ground truth in that format
    Tensor t_gt;         // domain-transferred ground truth, constant
    Tensor stacked;      // frames concatenated on channels, constant
};

struct Dataset {
    std::vector<TrainSample> train, test;
};

Dataset build_dataset(const TrainConfig& cfg);

struct ArmMetrics {
    double psnr_l = 0, psnr_mu = 0, ssim = 0;
};

struct EpochLosses {
    double org = 0, spg = 0, content = 0, color = 0, feat = 0, total = 0;
    double baseline_org = 0;
};

// Extra per-step verification, only computed when a hook is installed: the
// distillation terms alone must leave the teacher untouched, L_spg alone must
// leave the student untouched, and the report must rebuild its own total.
struct StepDiagnostics {
    LossReport report;
    double report_identity_gap = 0;
    double max_teacher_grad_from_distill = 0;
    double max_student_grad_from_spg = 0;
};

struct TrainHooks {
    std::function<void(int epoch, int step, const StepDiagnostics&)> on_step;
};

struct RunReport {
    std::string config_text;
    std::vector<EpochLosses> epochs;
    ArmMetrics distilled, baseline, teacher;
    std::vector<MetricsRecord> distilled_records, baseline_records, teacher_records;

    std::string to_json() const;
};

// Trains the distilled pipeline and, from the same initialization and data
// order, a reconstruction-loss-only baseline. Writes checkpoints, per-step
// loss records, metrics CSVs and report.json under cfg.output_dir.
RunReport train(const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

// Continues an interrupted run from a per-epoch checkpoint up to cfg.epochs.
RunReport resume_train(const TrainConfig& cfg, const std::string& checkpoint_path,
                       const TrainHooks* hooks = nullptr);

struct InferOptions {
    std::string checkpoint_path;
    std::string scene_path;
    double mu = 5000.0;
    std::string bayer = "rggb";
};

struct InferResult {
    Tensor output;  // reconstructed HDR image, [C,H,W]
    std::optional<MetricsRecord> metrics;
};

// Deploy path: loads theta_o only (teacher sections are skipped unread) and
// runs the ORM forward. Construction counters assert that no teacher-side
// object is ever built here.
InferResult infer(const InferOptions& opts);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
};

// Seeded gradient checks for every differentiable operation the framework
// exposes, on 4-8 px inputs.
std::vector<GradCheckEntry> gradcheck_suite();

}  // namespace hdrdistill

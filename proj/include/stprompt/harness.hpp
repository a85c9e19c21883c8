#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stprompt/encoding.hpp"
#include "stprompt/language.hpp"
#include "stprompt/scenesim.hpp"
#include "stprompt/vision.hpp"

namespace stp {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class CoordMode { none, pos_only, time_only, full };
const char* to_string(CoordMode m);
CoordMode coord_mode_from_string(const std::string& name);

enum class FlowSource { analytic, block_matching };
const char* to_string(FlowSource f);
FlowSource flow_source_from_string(const std::string& name);

struct ModelConfig {
    std::size_t d = 16;     // Fourier width shared by both modalities
    std::size_t d_p = 16;   // visual feature width
    std::size_t d_l = 16;   // language / projected token width
    std::size_t heads = 4;
    std::size_t hidden = 32;
    std::size_t probe_dim = 16;
    std::size_t vocab = kDefaultVocab;
    double fourier_sigma = 4.0;
    double time_sigma = 8.0;
    double patch_scale = 2.5;
    bool tie_scales = false;
    bool prompt_residual = true;
    KeyScope key_scope = KeyScope::frame;
};

/// Trainable groups: patch, fourier, prompt, fusion, gate, proj, probe,
/// lang.table (word table and placeholder), lang.coord (w_s, w_t, align, raw maps).
const std::vector<std::string>& parameter_groups();

struct StageConfig {
    std::string name;
    std::size_t steps = 0;
    double lr = 3e-3;
    std::vector<TaskFamily> tasks;
    bool zero_prompt = false;
    std::vector<std::string> trainable;
};

struct ExperimentConfig {
    SceneSpec scene;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    std::size_t train_scenes = 128;
    std::size_t eval_scenes = 16;
    std::vector<Template> templates = all_templates();

    ModelConfig model;
    FlowSource flow = FlowSource::analytic;
    std::size_t bm_window = 8;
    int bm_search = 4;
    FusionStrategy fusion = FusionStrategy::attention;
    CoordMode coord = CoordMode::full;
    bool disentangle = true;
    TextCoordMode text_coord = TextCoordMode::encoded;

    std::vector<StageConfig> stages;
    double weight_decay = 0.05;
    double dense_weight = 0.5;
    double focus_weight = 1.0;
    std::size_t curve_every = 50;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    static ExperimentConfig defaults();
    /// Throws ConfigError on inconsistent settings.
    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// FNV-1a over the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Data

struct Example {
    TokenSequence tokens;
    TaskFamily task = TaskFamily::caption;
    Template templ = Template::caption;
    Vec3 target_xyz{0.0, 0.0, 0.0};
    int target_frame = -1;
    int target_class = -1;
    std::vector<std::size_t> focus;  // tokens of the referenced object at the target frame
};

/// One scene prepared for training: patch features, coordinates and parsed
/// instructions. Raw and disentangled features are cached while the patch
/// encoder is frozen.
struct SceneData {
    std::string id;
    GridLayout layout;
    Matrix patches;
    Coord4DGrid grid;
    std::vector<PatchLabel> labels;
    std::vector<Example> examples;
    bool cached = false;
    Matrix f, f_s, f_t;
};

SceneData prepare_scene(const Scene& scene, const ExperimentConfig& config);

/// Per seed, train and eval scene specs are drawn from the "scenes" stream of
/// the seed; they depend only on the scene settings, never on model flags.
std::vector<SceneSpec> draw_scene_specs(const ExperimentConfig& config, std::uint64_t seed, std::size_t count,
                                        const std::string& split);

// ---------------------------------------------------------------------------
// Model

void init_parameters(ParamStore& store, const ExperimentConfig& config, std::uint64_t seed);
/// Parameter names belonging to a group; throws ConfigError for unknown groups.
std::vector<std::string> group_parameters(const ParamStore& store, const std::string& group);
/// Freezes everything except the listed groups.
void set_trainable(ParamStore& store, const std::vector<std::string>& groups);

struct LossBreakdown {
    double caption = 0.0;
    double qa = 0.0;
    double grounding = 0.0;
    double dense = 0.0;
    double focus = 0.0;
    double total = 0.0;
};

struct Prediction {
    Vec3 xyz{0.0, 0.0, 0.0};
    int frame = 0;
    int color = 0;
};

struct SceneForward {
    FeatureBundle features;
    Matrix prompt;
    std::vector<Prediction> predictions;  // one per example
    std::vector<double> dynamic_logits;   // per token
    Matrix fusion_attention;              // rows of the first head, frame 0 (frame scope)
};

struct ProbeOutput {
    LossBreakdown loss;
    Matrix dtau;  // filled when backward
};

/// Probe heads over projected visual tokens: a query from the pooled
/// instruction embedding attention-pools the tokens; caption, location and
/// frame heads read [pooled ‖ instruction]; a per-token head scores dynamics.
ProbeOutput probe_loss(ParamStore& store, const ExperimentConfig& config, const Matrix& tau,
                       const std::vector<Example>& examples, const std::vector<PatchLabel>& labels,
                       const std::vector<TaskFamily>& tasks, bool backward);

class Pipeline {
  public:
    Pipeline(const ExperimentConfig& config, ParamStore& store);

    /// Loss over the examples of the enabled tasks. With `backward`, adds
    /// gradients into the store.
    LossBreakdown loss(SceneData& scene, const std::vector<TaskFamily>& tasks, bool zero_prompt, bool backward);

    SceneForward forward(SceneData& scene, bool zero_prompt);

    /// Computes and stores f, f_s and f_t when the patch encoder is frozen.
    void cache_features(SceneData& scene) const;

  private:
    const ExperimentConfig& config_;
    ParamStore& store_;
};

// ---------------------------------------------------------------------------
// Gradient check

/// `base` shrunk to two views, two frames and a 2×2 patch grid with one
/// moving object that covers part of every frame.
ExperimentConfig fd_config(const ExperimentConfig& base);

/// Central-difference check of every parameter of the pipeline (all groups
/// trainable, all tasks, live prompt) on the scene of `config`. Gradients
/// smaller than `floor` are compared on absolute error tol·floor.
FdReport pipeline_fd_check(const ExperimentConfig& config, std::uint64_t seed, double eps = 1e-6,
                           double tol = 1e-4, double floor = 1e-4);

// ---------------------------------------------------------------------------
// Metrics and training

/// Standard silhouette with Euclidean distance. Needs at least two labels
/// with two members each.
double compute_silhouette(const Matrix& features, const std::vector<int>& labels);

struct SilhouetteScores {
    double raw = 0.0;
    double disentangled = 0.0;
    double fused = 0.0;
};

struct EvalMetrics {
    double sacc = 0.0;
    double tacc = 0.0;
    double combined = 0.0;
    double caption_acc = 0.0;
    double dynamic_acc = 0.0;
    SilhouetteScores silhouette;
    LossBreakdown loss;
};

struct StageRecord {
    std::string name;
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;
    double final_train_loss = 0.0;
    double eval_loss = 0.0;
    std::vector<double> curve;
};

struct SeedReport {
    std::uint64_t seed = 0;
    EvalMetrics metrics;
    std::vector<StageRecord> stages;
    double seconds = 0.0;
};

struct MetricsReport {
    std::string config_hash;
    ExperimentConfig config;
    std::vector<SeedReport> seeds;
    EvalMetrics mean;
};

using StageCallback = std::function<void(const StageRecord&, const ParamStore&)>;

/// Runs the configured stages for one seed and evaluates on held-out scenes.
SeedReport run_seed(const ExperimentConfig& config, std::uint64_t seed, ParamStore* trained = nullptr,
                    const StageCallback& on_stage = {});
MetricsReport run_experiment(const ExperimentConfig& config);
EvalMetrics mean_metrics(const std::vector<SeedReport>& seeds);

EvalMetrics evaluate(const ExperimentConfig& config, ParamStore& store, std::vector<SceneData>& scenes);

nlohmann::json report_to_json(const MetricsReport& report, bool include_timing = true);
MetricsReport report_from_json(const nlohmann::json& j);
std::string report_table(const MetricsReport& report);

/// Stage-labelled CSV: view,time,row,col,label,stage,c0..c{d-1}.
std::string features_csv(const FeatureBundle& bundle, const std::vector<PatchLabel>& labels);

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
    std::string label;
    ExperimentConfig config;
};

struct AblationTable {
    int number = 0;
    std::string title;
    std::vector<AblationRow> rows;
};

AblationTable ablation_table(int number, const ExperimentConfig& base);

struct OrderingCheck {
    std::string description;
    bool passed = false;
};

struct AblationResult {
    AblationTable table;
    std::vector<MetricsReport> reports;  // row order
    std::vector<OrderingCheck> checks;
    bool passed() const;
};

/// Reports keyed by config hash; reused across tables.
using ReportCache = std::map<std::string, MetricsReport>;

AblationResult run_ablation(const AblationTable& table, ReportCache& cache, std::size_t jobs = 1);
std::vector<OrderingCheck> ordering_checks(int table, const std::vector<MetricsReport>& rows);
std::string ablation_text(const AblationResult& result);

}  // namespace stp

// her2ws: weakly supervised HER2 scoring pipeline on abstract patch data.
//
// Subcommands wire cohort generation, the three training stages, guideline
// scoring and reports. Every run writes its effective configuration (all
// defaults resolved) next to the outputs and prints a single machine-readable
// summary object on stdout.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "her2ws/calibrate.hpp"
#include "her2ws/evaluation.hpp"
#include "her2ws/guidelines.hpp"
#include "her2ws/io.hpp"
#include "her2ws/model.hpp"
#include "her2ws/selection.hpp"
#include "her2ws/synth.hpp"
#include "her2ws/trainer.hpp"
#include "her2ws/types.hpp"

namespace fs = std::filesystem;
using her2ws::io::json;

namespace {

constexpr const char* kConfigReference = R"(Configuration file keys (JSON; unknown keys are rejected):
  schema_version            file schema version (1)
  seed                      RNG seed; required for generate / pretrain / train-weak
  threads                   worker count: 1 = serial reference path, 0 = all cores
  out_dir                   output directory (default "out")
  split                     slide subset for dump-logits/score/report: all|train|val|test
  paths.cohort              cohort JSONL consumed by training/scoring commands
  paths.checkpoint          classifier checkpoint JSON (input)
  paths.logits              logits dump JSONL (input of calibrate)
  paths.calibration         calibration JSON with the alpha vector (optional input)
  paths.raters              list of rater label JSONL files (agreement)
  cohort.slides_per_class   4 slide counts (default [50,50,50,50])
  cohort.patches_per_slide  [lo,hi] patches per slide (default [30,60])
  cohort.feature_dim        feature dimension d (default 8)
  cohort.feature_sigma      isotropic feature noise sigma (default 1.0)
  cohort.mean_separation    class-mean distance from origin in sigmas (default 4)
  cohort.class_means        optional explicit 4 x d means (overrides mean_separation)
  cohort.composition_profiles  per-class Dirichlet parameters (4 x 4)
  cohort.tumor_fraction_range  [lo,hi], subset of (0,1] (default [0.15,1.0])
  cohort.heterogeneous_rate    rate of heterogeneous slides for classes 0/1 (default 0)
  cohort.rater_noise        optional 4x4 row-stochastic slide-label confusion matrix
  cohort.rater_count        simulated raters when rater_noise is set (default 2)
  train.epochs              epoch budget (default 100)
  train.patience            pretrain: epochs without val improvement before stopping;
                            weak stage: consecutive violation-free epochs before stopping
  train.learning_rate       SGD learning rate (default 1e-3)
  train.momentum            Nesterov momentum (default 0.9)
  train.min_tumor_fraction  patch admission threshold (default 0.1)
  train.batch_size          pretrain mini-batch size; <=0 = full batch (default 64)
  train.passes_per_epoch    weak stage optimizer passes per epoch (default 1)
  train.loss_reduction      reduction over the selected set; only "mean"
  train.split_ratios        stratified train/val/test ratios (default [0.8,0.1,0.1])
  calibration.mode          "simplex" (default) or "smoothed"
  calibration.step          simplex step / restart perturbation (default 0.5)
  calibration.restarts      coordinate-perturbed restarts (default 8)
  calibration.max_evaluations  objective evaluations per simplex run (default 500)
  calibration.simplex_tolerance  simplex diameter stop (default 1e-4)
  calibration.temperature   smoothed-mode softmax temperature (default 1.0)
  calibration.smoothed_iterations  smoothed-mode gradient steps (default 200)
  calibration.positive_alpha   restrict alpha > 0 via exp reparameterization
  report.kde_bandwidth      fixed KDE bandwidth; null = Silverman's rule, floor 0.01
)";

// ---------------------------------------------------------------------------
// Config handling

struct KeyTree {
    std::map<std::string, KeyTree> children;
    bool leaf = false;
};

KeyTree make_tree(std::initializer_list<std::pair<const std::string, KeyTree>> children) {
    KeyTree t;
    t.children = std::map<std::string, KeyTree>(children);
    return t;
}

KeyTree leaf() { return KeyTree{{}, true}; }

const KeyTree& allowed_keys() {
    static const KeyTree tree = make_tree({
        {"schema_version", leaf()},
        {"seed", leaf()},
        {"threads", leaf()},
        {"out_dir", leaf()},
        {"split", leaf()},
        {"paths", make_tree({{"cohort", leaf()},
                             {"checkpoint", leaf()},
                             {"logits", leaf()},
                             {"calibration", leaf()},
                             {"raters", leaf()}})},
        {"cohort", make_tree({{"slides_per_class", leaf()},
                              {"patches_per_slide", leaf()},
                              {"feature_dim", leaf()},
                              {"feature_sigma", leaf()},
                              {"mean_separation", leaf()},
                              {"class_means", leaf()},
                              {"composition_profiles", leaf()},
                              {"tumor_fraction_range", leaf()},
                              {"heterogeneous_rate", leaf()},
                              {"rater_noise", leaf()},
                              {"rater_count", leaf()}})},
        {"train", make_tree({{"epochs", leaf()},
                             {"patience", leaf()},
                             {"learning_rate", leaf()},
                             {"momentum", leaf()},
                             {"min_tumor_fraction", leaf()},
                             {"batch_size", leaf()},
                             {"passes_per_epoch", leaf()},
                             {"loss_reduction", leaf()},
                             {"split_ratios", leaf()}})},
        {"calibration", make_tree({{"mode", leaf()},
                                   {"step", leaf()},
                                   {"restarts", leaf()},
                                   {"max_evaluations", leaf()},
                                   {"simplex_tolerance", leaf()},
                                   {"temperature", leaf()},
                                   {"smoothed_iterations", leaf()},
                                   {"positive_alpha", leaf()}})},
        {"report", make_tree({{"kde_bandwidth", leaf()}})},
    });
    return tree;
}

void check_keys(const json& node, const KeyTree& tree, const std::string& prefix) {
    if (!node.is_object()) return;
    for (const auto& [key, value] : node.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        const auto it = tree.children.find(key);
        if (it == tree.children.end()) {
            throw her2ws::ValidationError("config", "unknown config key '" + path + "'");
        }
        if (!it->second.leaf) check_keys(value, it->second, path);
    }
}

struct Config {
    json raw;
    uint64_t seed = 0;
    bool has_seed = false;
    int threads = 1;
    fs::path out_dir = "out";
    std::string split = "all";

    fs::path cohort_path;
    fs::path checkpoint_path;
    fs::path logits_path;
    fs::path calibration_path;
    std::vector<fs::path> rater_paths;

    her2ws::CohortSpec cohort;
    her2ws::TrainConfig train;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    her2ws::CalibrateOptions calibration;
    std::string calibration_mode = "simplex";
    std::optional<double> kde_bandwidth;
};

template <typename T>
T get_or(const json& node, const std::string& key, T fallback) {
    if (!node.is_object() || !node.contains(key) || node[key].is_null()) return fallback;
    return node[key].get<T>();
}

Config parse_config(const fs::path& path) {
    Config cfg;
    cfg.raw = her2ws::io::read_json_file(path);
    if (!cfg.raw.is_object()) throw her2ws::ValidationError("config", "config root must be an object");
    check_keys(cfg.raw, allowed_keys(), "");

    const int version = get_or<int>(cfg.raw, "schema_version", her2ws::io::kSchemaVersion);
    if (version != her2ws::io::kSchemaVersion) {
        throw her2ws::ValidationError("config", "unsupported schema_version " + std::to_string(version));
    }
    cfg.has_seed = cfg.raw.contains("seed") && !cfg.raw["seed"].is_null();
    if (cfg.has_seed) cfg.seed = cfg.raw["seed"].get<uint64_t>();
    cfg.threads = get_or<int>(cfg.raw, "threads", 1);
    cfg.out_dir = get_or<std::string>(cfg.raw, "out_dir", "out");
    cfg.split = get_or<std::string>(cfg.raw, "split", "all");
    if (cfg.split != "all" && cfg.split != "train" && cfg.split != "val" && cfg.split != "test") {
        throw her2ws::ValidationError("config", "split must be all|train|val|test");
    }

    const json paths = cfg.raw.value("paths", json::object());
    cfg.cohort_path = get_or<std::string>(paths, "cohort", "");
    cfg.checkpoint_path = get_or<std::string>(paths, "checkpoint", "");
    cfg.logits_path = get_or<std::string>(paths, "logits", "");
    cfg.calibration_path = get_or<std::string>(paths, "calibration", "");
    for (const std::string& r :
         get_or<std::vector<std::string>>(paths, "raters", {})) {
        cfg.rater_paths.emplace_back(r);
    }

    const json cohort = cfg.raw.value("cohort", json::object());
    cfg.cohort.slides_per_class =
        get_or<std::array<int, 4>>(cohort, "slides_per_class", cfg.cohort.slides_per_class);
    const auto patch_range = get_or<std::array<int, 2>>(
        cohort, "patches_per_slide",
        {cfg.cohort.patches_per_slide.first, cfg.cohort.patches_per_slide.second});
    cfg.cohort.patches_per_slide = {patch_range[0], patch_range[1]};
    cfg.cohort.feature_dim = get_or<int>(cohort, "feature_dim", cfg.cohort.feature_dim);
    cfg.cohort.feature_sigma = get_or<double>(cohort, "feature_sigma", cfg.cohort.feature_sigma);
    cfg.cohort.mean_separation =
        get_or<double>(cohort, "mean_separation", cfg.cohort.mean_separation);
    if (cohort.contains("class_means") && !cohort["class_means"].is_null()) {
        cfg.cohort.class_means =
            cohort["class_means"].get<std::array<std::vector<double>, 4>>();
    }
    cfg.cohort.composition_profiles = get_or<std::array<her2ws::Vec4, 4>>(
        cohort, "composition_profiles", cfg.cohort.composition_profiles);
    const auto tumor_range = get_or<std::array<double, 2>>(
        cohort, "tumor_fraction_range",
        {cfg.cohort.tumor_fraction_range.first, cfg.cohort.tumor_fraction_range.second});
    cfg.cohort.tumor_fraction_range = {tumor_range[0], tumor_range[1]};
    cfg.cohort.heterogeneous_rate =
        get_or<double>(cohort, "heterogeneous_rate", cfg.cohort.heterogeneous_rate);
    if (cohort.contains("rater_noise") && !cohort["rater_noise"].is_null()) {
        cfg.cohort.rater_noise = cohort["rater_noise"].get<std::array<her2ws::Vec4, 4>>();
    }
    cfg.cohort.rater_count = get_or<int>(cohort, "rater_count", cfg.cohort.rater_count);

    const json train = cfg.raw.value("train", json::object());
    cfg.train.epochs = get_or<int>(train, "epochs", cfg.train.epochs);
    cfg.train.patience = get_or<int>(train, "patience", cfg.train.patience);
    cfg.train.learning_rate = get_or<double>(train, "learning_rate", cfg.train.learning_rate);
    cfg.train.momentum = get_or<double>(train, "momentum", cfg.train.momentum);
    cfg.train.min_tumor_fraction =
        get_or<double>(train, "min_tumor_fraction", cfg.train.min_tumor_fraction);
    cfg.train.batch_size = get_or<int>(train, "batch_size", cfg.train.batch_size);
    cfg.train.passes_per_epoch =
        get_or<int>(train, "passes_per_epoch", cfg.train.passes_per_epoch);
    const std::string reduction = get_or<std::string>(train, "loss_reduction", "mean");
    if (reduction != "mean") {
        throw her2ws::ValidationError("config", "train.loss_reduction supports only \"mean\"");
    }
    cfg.split_ratios = get_or<std::array<double, 3>>(train, "split_ratios", cfg.split_ratios);

    const json calibration = cfg.raw.value("calibration", json::object());
    cfg.calibration_mode = get_or<std::string>(calibration, "mode", "simplex");
    if (cfg.calibration_mode == "simplex") {
        cfg.calibration.mode = her2ws::CalibrateOptions::Mode::kSimplex;
    } else if (cfg.calibration_mode == "smoothed") {
        cfg.calibration.mode = her2ws::CalibrateOptions::Mode::kSmoothed;
    } else {
        throw her2ws::ValidationError("config", "calibration.mode must be simplex|smoothed");
    }
    cfg.calibration.step = get_or<double>(calibration, "step", cfg.calibration.step);
    cfg.calibration.restarts = get_or<int>(calibration, "restarts", cfg.calibration.restarts);
    cfg.calibration.max_evaluations =
        get_or<int>(calibration, "max_evaluations", cfg.calibration.max_evaluations);
    cfg.calibration.simplex_tolerance =
        get_or<double>(calibration, "simplex_tolerance", cfg.calibration.simplex_tolerance);
    cfg.calibration.temperature =
        get_or<double>(calibration, "temperature", cfg.calibration.temperature);
    cfg.calibration.smoothed_iterations =
        get_or<int>(calibration, "smoothed_iterations", cfg.calibration.smoothed_iterations);
    cfg.calibration.positive_alpha =
        get_or<bool>(calibration, "positive_alpha", cfg.calibration.positive_alpha);

    const json report = cfg.raw.value("report", json::object());
    if (report.contains("kde_bandwidth") && !report["kde_bandwidth"].is_null()) {
        cfg.kde_bandwidth = report["kde_bandwidth"].get<double>();
    }
    return cfg;
}

json effective_config(const Config& cfg, const std::string& command) {
    json out{
        {"schema_version", her2ws::io::kSchemaVersion},
        {"command", command},
        {"threads", cfg.threads},
        {"out_dir", cfg.out_dir.string()},
        {"split", cfg.split},
        {"paths",
         {{"cohort", cfg.cohort_path.string()},
          {"checkpoint", cfg.checkpoint_path.string()},
          {"logits", cfg.logits_path.string()},
          {"calibration", cfg.calibration_path.string()},
          {"raters", json::array()}}},
        {"cohort",
         {{"slides_per_class", cfg.cohort.slides_per_class},
          {"patches_per_slide",
           std::array<int, 2>{cfg.cohort.patches_per_slide.first, cfg.cohort.patches_per_slide.second}},
          {"feature_dim", cfg.cohort.feature_dim},
          {"feature_sigma", cfg.cohort.feature_sigma},
          {"mean_separation", cfg.cohort.mean_separation},
          {"composition_profiles", cfg.cohort.composition_profiles},
          {"tumor_fraction_range",
           std::array<double, 2>{cfg.cohort.tumor_fraction_range.first,
                                 cfg.cohort.tumor_fraction_range.second}},
          {"heterogeneous_rate", cfg.cohort.heterogeneous_rate},
          {"rater_count", cfg.cohort.rater_count}}},
        {"train",
         {{"epochs", cfg.train.epochs},
          {"patience", cfg.train.patience},
          {"learning_rate", cfg.train.learning_rate},
          {"momentum", cfg.train.momentum},
          {"min_tumor_fraction", cfg.train.min_tumor_fraction},
          {"batch_size", cfg.train.batch_size},
          {"passes_per_epoch", cfg.train.passes_per_epoch},
          {"loss_reduction", "mean"},
          {"split_ratios", cfg.split_ratios}}},
        {"calibration",
         {{"mode", cfg.calibration_mode},
          {"step", cfg.calibration.step},
          {"restarts", cfg.calibration.restarts},
          {"max_evaluations", cfg.calibration.max_evaluations},
          {"simplex_tolerance", cfg.calibration.simplex_tolerance},
          {"temperature", cfg.calibration.temperature},
          {"smoothed_iterations", cfg.calibration.smoothed_iterations},
          {"positive_alpha", cfg.calibration.positive_alpha}}},
        {"report", {{"kde_bandwidth", cfg.kde_bandwidth ? json(*cfg.kde_bandwidth) : json()}}},
    };
    if (cfg.has_seed) out["seed"] = cfg.seed;
    for (const fs::path& r : cfg.rater_paths) out["paths"]["raters"].push_back(r.string());
    if (cfg.cohort.class_means) out["cohort"]["class_means"] = *cfg.cohort.class_means;
    if (cfg.cohort.rater_noise) out["cohort"]["rater_noise"] = *cfg.cohort.rater_noise;
    return out;
}

// The timestamp is the only nondeterministic output and lives only in this
// metadata block, so artifact trees from identical runs stay comparable.
void write_effective_config(const Config& cfg, const std::string& command) {
    json out = effective_config(cfg, command);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&now));
    out["meta"] = {{"timestamp", buf}};
    her2ws::io::write_text_file(cfg.out_dir / (command + ".effective-config.json"),
                                out.dump(2) + "\n");
}

struct RunLog {
    std::vector<json> events;
    fs::path path;

    void event(std::string name, json fields = json::object()) {
        fields["event"] = std::move(name);
        events.push_back(std::move(fields));
    }
    void flush() const { her2ws::io::write_jsonl(path, events); }
};

// ---------------------------------------------------------------------------
// Shared command helpers

void require_seed(const Config& cfg, const std::string& command) {
    if (!cfg.has_seed) {
        throw her2ws::ValidationError("config", "seed is mandatory for '" + command + "'");
    }
}

void require_input(const fs::path& path, const std::string& what) {
    if (path.empty()) {
        throw her2ws::ValidationError("config", "paths." + what + " is required for this command");
    }
    if (!fs::exists(path)) {
        throw her2ws::IoError("config", what + " path '" + path.string() + "' does not exist");
    }
}

std::vector<her2ws::Slide> load_admitted_cohort(const Config& cfg) {
    require_input(cfg.cohort_path, "cohort");
    const std::vector<her2ws::Slide> slides = her2ws::io::read_cohort(cfg.cohort_path);
    return her2ws::filter_patches(slides, cfg.train.min_tumor_fraction);
}

std::vector<her2ws::Slide> select_split(const Config& cfg, std::vector<her2ws::Slide> slides) {
    if (cfg.split == "all") return slides;
    require_seed(cfg, "split selection");
    auto parts = her2ws::split_cohort(slides, cfg.split_ratios, cfg.seed);
    if (cfg.split == "train") return std::move(parts[0]);
    if (cfg.split == "val") return std::move(parts[1]);
    return std::move(parts[2]);
}

her2ws::TrainConfig train_config(const Config& cfg) {
    her2ws::TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    t.validate();
    return t;
}

int emit_summary(const json& summary) {
    std::cout << summary.dump() << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const Config& cfg) {
    require_seed(cfg, "generate");
    her2ws::CohortSpec spec = cfg.cohort;
    spec.seed = cfg.seed;
    RunLog log{{}, cfg.out_dir / "generate.log.jsonl"};
    log.event("start", {{"command", "generate"}});

    const her2ws::GeneratedCohort cohort = her2ws::generate_cohort(spec, {cfg.threads});
    const fs::path cohort_path = cfg.out_dir / "cohort.jsonl";
    her2ws::io::write_cohort(cohort_path, cohort.slides);

    json rater_files = json::array();
    for (const her2ws::RaterLabels& rater : cohort.rater_labels) {
        const fs::path path = cfg.out_dir / (rater.rater + ".labels.jsonl");
        her2ws::io::write_rater_labels(path, rater);
        rater_files.push_back(path.string());
    }

    size_t patches = 0;
    for (const her2ws::Slide& s : cohort.slides) patches += s.patches.size();
    log.event("done", {{"slides", cohort.slides.size()}, {"patches", patches}});
    log.flush();
    write_effective_config(cfg, "generate");
    return emit_summary(json{{"command", "generate"},
                             {"status", "ok"},
                             {"slides", cohort.slides.size()},
                             {"patches", patches},
                             {"cohort", cohort_path.string()},
                             {"raterFiles", rater_files}});
}

int cmd_pretrain(const Config& cfg) {
    require_seed(cfg, "pretrain");
    const her2ws::TrainConfig train = train_config(cfg);
    RunLog log{{}, cfg.out_dir / "pretrain.log.jsonl"};
    log.event("start", {{"command", "pretrain"}});

    const std::vector<her2ws::Slide> slides = load_admitted_cohort(cfg);
    const auto parts = her2ws::split_cohort(slides, cfg.split_ratios, cfg.seed);
    const her2ws::PretrainResult result =
        her2ws::pretrain(parts[0], parts[1], train, {cfg.threads});

    const fs::path checkpoint = cfg.out_dir / "pretrain.checkpoint.json";
    her2ws::io::write_checkpoint(checkpoint, result.params);
    std::vector<json> history;
    for (const auto& e : result.history) {
        history.push_back(json{{"schema_version", her2ws::io::kSchemaVersion},
                               {"epoch", e.epoch},
                               {"meanLoss", e.mean_loss},
                               {"valAccuracy", e.val_accuracy}});
    }
    her2ws::io::write_jsonl(cfg.out_dir / "pretrain.history.jsonl", history);

    const double val_f1 = her2ws::slide_macro_f1(result.params, parts[1], {}, {cfg.threads});
    log.event("done", {{"epochsRun", result.epochs_run}, {"bestEpoch", result.best_epoch}});
    log.flush();
    write_effective_config(cfg, "pretrain");
    return emit_summary(json{{"command", "pretrain"},
                             {"status", "ok"},
                             {"epochsRun", result.epochs_run},
                             {"bestEpoch", result.best_epoch},
                             {"bestValAccuracy", result.best_val_accuracy},
                             {"valSlideMacroF1", val_f1},
                             {"checkpoint", checkpoint.string()}});
}

int cmd_train_weak(const Config& cfg) {
    require_seed(cfg, "train-weak");
    const her2ws::TrainConfig train = train_config(cfg);
    require_input(cfg.checkpoint_path, "checkpoint");
    RunLog log{{}, cfg.out_dir / "train-weak.log.jsonl"};
    log.event("start", {{"command", "train-weak"}});

    const std::vector<her2ws::Slide> slides = load_admitted_cohort(cfg);
    const auto parts = her2ws::split_cohort(slides, cfg.split_ratios, cfg.seed);
    her2ws::ClassifierParams initial = her2ws::io::read_checkpoint(cfg.checkpoint_path);
    initial.learning_rate = train.learning_rate;
    initial.momentum = train.momentum;

    const her2ws::WeakTrainResult result =
        her2ws::train_weak(parts[0], parts[1], std::move(initial), train, {}, {cfg.threads});

    const fs::path checkpoint = cfg.out_dir / "weak.checkpoint.json";
    her2ws::io::write_checkpoint(checkpoint, result.params);
    std::vector<json> epochs;
    for (const auto& r : result.reports) epochs.push_back(her2ws::io::epoch_report_to_json(r));
    her2ws::io::write_jsonl(cfg.out_dir / "weak.epochs.jsonl", epochs);

    log.event("done", {{"epochsRun", result.epochs_run}, {"bestEpoch", result.best_epoch}});
    log.flush();
    write_effective_config(cfg, "train-weak");
    return emit_summary(json{{"command", "train-weak"},
                             {"status", "ok"},
                             {"epochsRun", result.epochs_run},
                             {"bestEpoch", result.best_epoch},
                             {"bestValMacroF1", result.best_val_f1},
                             {"checkpoint", checkpoint.string()}});
}

int cmd_dump_logits(const Config& cfg) {
    require_input(cfg.checkpoint_path, "checkpoint");
    RunLog log{{}, cfg.out_dir / "dump-logits.log.jsonl"};
    log.event("start", {{"command", "dump-logits"}});

    const std::vector<her2ws::Slide> slides = select_split(cfg, load_admitted_cohort(cfg));
    const her2ws::ClassifierParams params = her2ws::io::read_checkpoint(cfg.checkpoint_path);
    const her2ws::LogitsMatrix matrix = her2ws::collect_logits(params, slides, {cfg.threads});
    const fs::path path = cfg.out_dir / "logits.jsonl";
    her2ws::io::write_logits(path, matrix);

    log.event("done", {{"rows", matrix.rows()}, {"slides", matrix.slides()}});
    log.flush();
    write_effective_config(cfg, "dump-logits");
    return emit_summary(json{{"command", "dump-logits"},
                             {"status", "ok"},
                             {"rows", matrix.rows()},
                             {"slides", matrix.slides()},
                             {"logits", path.string()}});
}

int cmd_calibrate(const Config& cfg) {
    require_input(cfg.logits_path, "logits");
    RunLog log{{}, cfg.out_dir / "calibrate.log.jsonl"};
    log.event("start", {{"command", "calibrate"}});

    const her2ws::LogitsMatrix matrix = her2ws::io::read_logits(cfg.logits_path);
    const her2ws::CalibrateResult result =
        her2ws::optimize_alpha(matrix, {}, cfg.calibration, {cfg.threads});
    const fs::path path = cfg.out_dir / "calibration.json";
    her2ws::io::write_calibration(path, result, cfg.calibration_mode);

    for (const auto& point : result.trace) {
        log.event("improvement", {{"evaluation", point.evaluation},
                                  {"alpha", point.alpha},
                                  {"objective", point.objective}});
    }
    log.event("done", {{"objectiveBefore", result.objective_before},
                       {"objectiveAfter", result.objective_after}});
    log.flush();
    write_effective_config(cfg, "calibrate");
    return emit_summary(json{{"command", "calibrate"},
                             {"status", "ok"},
                             {"alpha", result.alpha},
                             {"objectiveBefore", result.objective_before},
                             {"objectiveAfter", result.objective_after},
                             {"evaluations", result.evaluations},
                             {"fellBack", result.fell_back},
                             {"calibration", path.string()}});
}

her2ws::Vec4 load_alpha(const Config& cfg) {
    if (cfg.calibration_path.empty()) return {1.0, 1.0, 1.0, 1.0};
    require_input(cfg.calibration_path, "calibration");
    return her2ws::io::read_calibration_alpha(cfg.calibration_path);
}

int cmd_score(const Config& cfg) {
    require_input(cfg.checkpoint_path, "checkpoint");
    RunLog log{{}, cfg.out_dir / "score.log.jsonl"};
    log.event("start", {{"command", "score"}});

    const std::vector<her2ws::Slide> slides = select_split(cfg, load_admitted_cohort(cfg));
    const her2ws::ClassifierParams params = her2ws::io::read_checkpoint(cfg.checkpoint_path);
    const her2ws::Vec4 alpha = load_alpha(cfg);
    const her2ws::LogitsMatrix matrix = her2ws::collect_logits(params, slides, {cfg.threads});
    const her2ws::CalibratedPredictions predictions =
        her2ws::apply_calibration(matrix, alpha, {cfg.threads});

    std::vector<std::pair<std::string, her2ws::GuidelineVerdict>> verdicts;
    std::vector<int> reference, predicted;
    for (size_t i = 0; i < slides.size(); ++i) {
        const her2ws::GuidelineVerdict verdict = her2ws::score_fractions(predictions.fractions[i]);
        verdicts.emplace_back(slides[i].id, verdict);
        reference.push_back(slides[i].label);
        predicted.push_back(verdict.principal);
    }
    const fs::path path = cfg.out_dir / "verdicts.jsonl";
    her2ws::io::write_verdicts(path, verdicts);

    const double f1 = her2ws::macro_f1(her2ws::confusion(reference, predicted));
    log.event("done", {{"slides", slides.size()}, {"slideMacroF1", f1}});
    log.flush();
    write_effective_config(cfg, "score");
    return emit_summary(json{{"command", "score"},
                             {"status", "ok"},
                             {"slides", slides.size()},
                             {"slideMacroF1", f1},
                             {"verdicts", path.string()}});
}

int cmd_report(const Config& cfg) {
    require_input(cfg.checkpoint_path, "checkpoint");
    RunLog log{{}, cfg.out_dir / "report.log.jsonl"};
    log.event("start", {{"command", "report"}});

    const std::vector<her2ws::Slide> slides = select_split(cfg, load_admitted_cohort(cfg));
    const her2ws::ClassifierParams params = her2ws::io::read_checkpoint(cfg.checkpoint_path);
    const her2ws::Vec4 alpha = load_alpha(cfg);
    const her2ws::LogitsMatrix matrix = her2ws::collect_logits(params, slides, {cfg.threads});
    const her2ws::CalibratedPredictions predictions =
        her2ws::apply_calibration(matrix, alpha, {cfg.threads});

    // Slide-level confusion against the reference labels.
    std::vector<int> slide_ref, slide_pred;
    std::vector<std::vector<int>> per_slide_classes(slides.size());
    for (size_t i = 0; i < slides.size(); ++i) {
        slide_ref.push_back(slides[i].label);
        slide_pred.push_back(her2ws::score_fractions(predictions.fractions[i]).principal);
        const auto [begin, end] = matrix.slide_spans[i];
        per_slide_classes[i].assign(predictions.classes.begin() + begin,
                                    predictions.classes.begin() + end);
    }
    const her2ws::ConfusionMatrix slide_cm = her2ws::confusion(slide_ref, slide_pred);

    // Patch-level confusion where synthetic ground truth is available.
    std::vector<int> patch_ref, patch_pred;
    for (size_t i = 0; i < slides.size(); ++i) {
        for (size_t k = 0; k < slides[i].patches.size(); ++k) {
            if (!slides[i].patches[k].true_class) continue;
            patch_ref.push_back(*slides[i].patches[k].true_class);
            patch_pred.push_back(per_slide_classes[i][k]);
        }
    }

    std::vector<std::pair<std::string, her2ws::ConfusionMatrix>> matrices{{"slide", slide_cm}};
    json summary{{"command", "report"},
                 {"status", "ok"},
                 {"slides", slides.size()},
                 {"slideMacroF1", her2ws::macro_f1(slide_cm)},
                 {"slideMacroF1Strict",
                  her2ws::macro_f1(slide_cm, her2ws::AbsentClassPolicy::kStrict)}};

    std::ostringstream metrics;
    metrics << "metric,value\n";
    metrics << "slide_macro_f1," << her2ws::macro_f1(slide_cm) << '\n';
    metrics << "slide_macro_f1_strict,"
            << her2ws::macro_f1(slide_cm, her2ws::AbsentClassPolicy::kStrict) << '\n';
    if (!patch_ref.empty()) {
        const her2ws::ConfusionMatrix patch_cm = her2ws::confusion(patch_ref, patch_pred);
        matrices.emplace_back("patch", patch_cm);
        const double accuracy = static_cast<double>(patch_cm.diagonal()) / patch_cm.total();
        summary["patchAccuracy"] = accuracy;
        summary["patchMacroF1"] = her2ws::macro_f1(patch_cm);
        metrics << "patch_accuracy," << accuracy << '\n';
        metrics << "patch_macro_f1," << her2ws::macro_f1(patch_cm) << '\n';
        for (int c = 0; c < her2ws::kNumClasses; ++c) {
            const int64_t tp = patch_cm.counts[c][c];
            const int64_t fp = patch_cm.col_sum(c) - tp;
            const int64_t fn = patch_cm.row_sum(c) - tp;
            const her2ws::PixelMetrics pm = her2ws::pixel_metrics(tp, fp, fn);
            metrics << "patch_class" << c << "_precision," << pm.precision << '\n';
            metrics << "patch_class" << c << "_recall," << pm.recall << '\n';
            metrics << "patch_class" << c << "_dice," << pm.dice << '\n';
        }
    }

    her2ws::io::write_text_file(cfg.out_dir / "confusion.csv", her2ws::io::confusion_csv(matrices));
    her2ws::io::write_text_file(cfg.out_dir / "metrics.csv", metrics.str());
    const auto cells = her2ws::fraction_kde(slides, per_slide_classes, cfg.kde_bandwidth);
    her2ws::io::write_text_file(cfg.out_dir / "kde.json",
                                her2ws::io::kde_to_json(cells).dump(2) + "\n");

    log.event("done", {{"slides", slides.size()}});
    log.flush();
    write_effective_config(cfg, "report");
    summary["metrics"] = (cfg.out_dir / "metrics.csv").string();
    summary["confusion"] = (cfg.out_dir / "confusion.csv").string();
    summary["kde"] = (cfg.out_dir / "kde.json").string();
    return emit_summary(summary);
}

int cmd_agreement(const Config& cfg) {
    if (cfg.rater_paths.size() < 2) {
        throw her2ws::ValidationError("config", "agreement needs >= 2 paths.raters entries");
    }
    RunLog log{{}, cfg.out_dir / "agreement.log.jsonl"};
    log.event("start", {{"command", "agreement"}});

    std::vector<her2ws::RaterLabels> raters;
    for (const fs::path& path : cfg.rater_paths) {
        require_input(path, "raters");
        raters.push_back(her2ws::io::read_rater_labels(path, path.stem().stem().string()));
    }
    const std::vector<her2ws::RaterPair> pairs = her2ws::rater_agreement(raters);

    json out_pairs = json::array();
    std::vector<std::pair<std::string, her2ws::ConfusionMatrix>> matrices;
    double agreement_sum = 0.0;
    for (const her2ws::RaterPair& p : pairs) {
        out_pairs.push_back(json{{"raterA", p.rater_a},
                                 {"raterB", p.rater_b},
                                 {"agreement", p.agreement},
                                 {"discordance", 1.0 - p.agreement},
                                 {"shared", p.shared}});
        matrices.emplace_back(p.rater_a + "_vs_" + p.rater_b, p.matrix);
        agreement_sum += p.agreement;
    }
    her2ws::io::write_text_file(
        cfg.out_dir / "agreement.json",
        json{{"schema_version", her2ws::io::kSchemaVersion}, {"pairs", out_pairs}}.dump(2) + "\n");
    her2ws::io::write_text_file(cfg.out_dir / "agreement.csv", her2ws::io::confusion_csv(matrices));

    log.event("done", {{"pairs", pairs.size()}});
    log.flush();
    write_effective_config(cfg, "agreement");
    return emit_summary(json{{"command", "agreement"},
                             {"status", "ok"},
                             {"pairs", out_pairs},
                             {"meanAgreement", agreement_sum / pairs.size()}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weakly supervised, guideline-constrained HER2 scoring pipeline"};
    app.footer(kConfigReference);
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir_override;
    std::string split_override;
    int threads_override = -1;
    int64_t seed_override = -1;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"generate", "Generate a synthetic cohort (plus rater label files when noise is set)"},
        {"pretrain", "Baseline supervised pretraining on slide labels"},
        {"train-weak", "Constrained weakly supervised training from a checkpoint"},
        {"dump-logits", "Dump frozen per-patch logits for calibration"},
        {"calibrate", "Optimize the 4 per-class logit scales on a logits dump"},
        {"score", "Emit per-slide guideline verdicts from a checkpoint (+ optional alpha)"},
        {"report", "Confusion/metric CSVs and KDE tables"},
        {"agreement", "Pairwise rater confusion and agreement rates"},
    };
    for (const auto& [name, description] : commands) {
        CLI::App* sub = app.add_subcommand(name, description);
        sub->add_option("--config", config_path, "JSON configuration file")->required();
        sub->add_option("--out-dir", out_dir_override, "Override config out_dir");
        sub->add_option("--threads", threads_override, "Override config threads");
        sub->add_option("--split", split_override, "Override config split (all|train|val|test)");
        sub->add_option("--seed", seed_override, "Override config seed");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        Config cfg = parse_config(config_path);
        if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
        if (!split_override.empty()) {
            if (split_override != "all" && split_override != "train" && split_override != "val" &&
                split_override != "test") {
                throw her2ws::ValidationError("config", "split must be all|train|val|test");
            }
            cfg.split = split_override;
        }
        if (threads_override >= 0) cfg.threads = threads_override;
        if (seed_override >= 0) {
            cfg.seed = static_cast<uint64_t>(seed_override);
            cfg.has_seed = true;
        }

        if (command == "generate") return cmd_generate(cfg);
        if (command == "pretrain") return cmd_pretrain(cfg);
        if (command == "train-weak") return cmd_train_weak(cfg);
        if (command == "dump-logits") return cmd_dump_logits(cfg);
        if (command == "calibrate") return cmd_calibrate(cfg);
        if (command == "score") return cmd_score(cfg);
        if (command == "report") return cmd_report(cfg);
        if (command == "agreement") return cmd_agreement(cfg);
        throw her2ws::ValidationError("cli", "unknown subcommand '" + command + "'");
    } catch (const her2ws::IoError& e) {
        std::cout << json{{"stage", e.stage()}, {"message", e.what()}}.dump() << std::endl;
        return 2;
    } catch (const her2ws::Error& e) {
        std::cout << json{{"stage", e.stage()}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const json::exception& e) {
        std::cout << json{{"stage", "config"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cout << json{{"stage", "internal"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
}

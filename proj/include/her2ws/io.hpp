#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "her2ws/calibrate.hpp"
#include "her2ws/evaluation.hpp"
#include "her2ws/model.hpp"
#include "her2ws/selection.hpp"
#include "her2ws/synth.hpp"
#include "her2ws/trainer.hpp"
#include "her2ws/types.hpp"

namespace her2ws::io {

inline constexpr int kSchemaVersion = 1;

using nlohmann::json;

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const json> lines);

// Cohort: one slide per line
// {"id", "label", "patches": [{"id", "features", "tumor_fraction", "true_class"?}]}
void write_cohort(const std::filesystem::path& path, std::span<const Slide> slides);
std::vector<Slide> read_cohort(const std::filesystem::path& path);

// Per-rater label files: one {"id", "label"} object per line.
void write_rater_labels(const std::filesystem::path& path, const RaterLabels& labels);
RaterLabels read_rater_labels(const std::filesystem::path& path, const std::string& rater_name);

// Classifier checkpoints: flat JSON object, weights row-major.
void write_checkpoint(const std::filesystem::path& path, const ClassifierParams& params);
ClassifierParams read_checkpoint(const std::filesystem::path& path);

// Frozen logits dump: one {"slide", "patch", "logits", "weight", "label"}
// object per line, rows grouped by slide.
void write_logits(const std::filesystem::path& path, const LogitsMatrix& matrix);
LogitsMatrix read_logits(const std::filesystem::path& path);

// Calibration artifact {"alpha", "objectiveBefore", "objectiveAfter", ...}.
void write_calibration(const std::filesystem::path& path, const CalibrateResult& result,
                       const std::string& mode);
Vec4 read_calibration_alpha(const std::filesystem::path& path);

json verdict_to_json(const GuidelineVerdict& verdict);
void write_verdicts(const std::filesystem::path& path,
                    std::span<const std::pair<std::string, GuidelineVerdict>> verdicts);

// Weak-stage epoch log, one epoch per line.
json epoch_report_to_json(const WeakEpochReport& report);

// Selection debug dump: one line per selected patch.
void write_selection_dump(const std::filesystem::path& path, std::span<const Slide> slides,
                          std::span<const SelectionSet> sets);

// Reports.
std::string confusion_csv(std::span<const std::pair<std::string, ConfusionMatrix>> matrices);
json kde_to_json(std::span<const KdeCell> cells);

}  // namespace her2ws::io

#include "her2ws/io.hpp"

#include <fstream>
#include <sstream>

namespace her2ws::io {

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("io", "cannot open '" + path.string() + "' for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path);
    if (!out) throw IoError("io", "cannot open '" + path.string() + "' for writing");
    return out;
}

json parse(const std::string& text, const std::filesystem::path& path) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("io", "invalid JSON in '" + path.string() + "'");
    return j;
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out = open_out(path);
    out << text;
    if (!out) throw IoError("io", "failed writing '" + path.string() + "'");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        lines.push_back(parse(line, path));
    }
    return lines;
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> lines) {
    std::ofstream out = open_out(path);
    for (const json& j : lines) out << j.dump() << '\n';
    if (!out) throw IoError("io", "failed writing '" + path.string() + "'");
}

void write_cohort(const std::filesystem::path& path, std::span<const Slide> slides) {
    std::vector<json> lines;
    lines.reserve(slides.size());
    for (const Slide& slide : slides) {
        json patches = json::array();
        for (const Patch& p : slide.patches) {
            json jp{{"id", p.id}, {"features", p.features}, {"tumor_fraction", p.tumor_fraction}};
            if (p.true_class) jp["true_class"] = *p.true_class;
            patches.push_back(std::move(jp));
        }
        lines.push_back(json{{"schema_version", kSchemaVersion},
                             {"id", slide.id},
                             {"label", slide.label},
                             {"patches", std::move(patches)}});
    }
    write_jsonl(path, lines);
}

std::vector<Slide> read_cohort(const std::filesystem::path& path) {
    std::vector<Slide> slides;
    for (const json& j : read_jsonl(path)) {
        try {
            Slide slide;
            slide.id = j.at("id").get<std::string>();
            slide.label = j.at("label").get<int>();
            for (const json& jp : j.at("patches")) {
                Patch p;
                p.id = jp.at("id").get<std::string>();
                p.features = jp.at("features").get<std::vector<double>>();
                p.tumor_fraction = jp.at("tumor_fraction").get<double>();
                if (jp.contains("true_class") && !jp["true_class"].is_null()) {
                    p.true_class = jp["true_class"].get<int>();
                }
                slide.patches.push_back(std::move(p));
            }
            finalize_weights(slide);
            validate_slide(slide);
            slides.push_back(std::move(slide));
        } catch (const json::exception& e) {
            throw IoError("io", "bad slide record in '" + path.string() + "': " + e.what());
        }
    }
    if (slides.empty()) throw ValidationError("io", "cohort '" + path.string() + "' is empty");
    return slides;
}

void write_rater_labels(const std::filesystem::path& path, const RaterLabels& labels) {
    std::vector<json> lines;
    lines.reserve(labels.labels.size());
    for (const auto& [id, label] : labels.labels) {
        lines.push_back(json{{"schema_version", kSchemaVersion}, {"id", id}, {"label", label}});
    }
    write_jsonl(path, lines);
}

RaterLabels read_rater_labels(const std::filesystem::path& path, const std::string& rater_name) {
    RaterLabels out;
    out.rater = rater_name;
    for (const json& j : read_jsonl(path)) {
        try {
            out.labels.emplace_back(j.at("id").get<std::string>(), j.at("label").get<int>());
        } catch (const json::exception& e) {
            throw IoError("io", "bad label record in '" + path.string() + "': " + e.what());
        }
    }
    if (out.labels.empty()) throw ValidationError("io", "label file '" + path.string() + "' is empty");
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const ClassifierParams& params) {
    const json j{{"schema_version", kSchemaVersion},
                 {"dim", params.dim},
                 {"weights", params.weights},
                 {"bias", params.bias},
                 {"weight_momentum", params.weight_momentum},
                 {"bias_momentum", params.bias_momentum},
                 {"learning_rate", params.learning_rate},
                 {"momentum", params.momentum}};
    write_text_file(path, j.dump(2) + "\n");
}

ClassifierParams read_checkpoint(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    try {
        ClassifierParams p;
        p.dim = j.at("dim").get<int>();
        p.weights = j.at("weights").get<std::vector<double>>();
        p.bias = j.at("bias").get<Vec4>();
        p.weight_momentum = j.at("weight_momentum").get<std::vector<double>>();
        p.bias_momentum = j.at("bias_momentum").get<Vec4>();
        p.learning_rate = j.at("learning_rate").get<double>();
        p.momentum = j.at("momentum").get<double>();
        if (p.dim < 1 || p.weights.size() != static_cast<size_t>(kNumClasses) * p.dim ||
            p.weight_momentum.size() != p.weights.size()) {
            throw ValidationError("io", "checkpoint '" + path.string() + "' has bad shapes");
        }
        return p;
    } catch (const json::exception& e) {
        throw IoError("io", "bad checkpoint '" + path.string() + "': " + e.what());
    }
}

void write_logits(const std::filesystem::path& path, const LogitsMatrix& matrix) {
    std::vector<json> lines;
    lines.reserve(matrix.rows());
    for (size_t r = 0; r < matrix.rows(); ++r) {
        const int slide = matrix.row_slide[r];
        lines.push_back(json{{"schema_version", kSchemaVersion},
                             {"slide", matrix.slide_ids[slide]},
                             {"patch", matrix.patch_ids[r]},
                             {"logits", matrix.logits[r]},
                             {"weight", matrix.weights[r]},
                             {"label", matrix.slide_labels[slide]}});
    }
    write_jsonl(path, lines);
}

LogitsMatrix read_logits(const std::filesystem::path& path) {
    LogitsMatrix m;
    for (const json& j : read_jsonl(path)) {
        try {
            const std::string slide = j.at("slide").get<std::string>();
            const int label = j.at("label").get<int>();
            if (m.slide_ids.empty() || m.slide_ids.back() != slide) {
                for (const std::string& seen : m.slide_ids) {
                    if (seen == slide) {
                        throw ValidationError("io", "logits of slide '" + slide +
                                                        "' are not contiguous in '" +
                                                        path.string() + "'");
                    }
                }
                m.slide_ids.push_back(slide);
                m.slide_labels.push_back(label);
                m.slide_spans.emplace_back(static_cast<int>(m.rows()), static_cast<int>(m.rows()));
            } else if (m.slide_labels.back() != label) {
                throw ValidationError("io", "conflicting labels for slide '" + slide + "'");
            }
            m.logits.push_back(j.at("logits").get<Vec4>());
            m.weights.push_back(j.at("weight").get<double>());
            m.row_slide.push_back(static_cast<int>(m.slide_ids.size()) - 1);
            m.patch_ids.push_back(j.at("patch").get<std::string>());
            m.slide_spans.back().second = static_cast<int>(m.rows());
        } catch (const json::exception& e) {
            throw IoError("io", "bad logits record in '" + path.string() + "': " + e.what());
        }
    }
    m.validate();
    return m;
}

void write_calibration(const std::filesystem::path& path, const CalibrateResult& result,
                       const std::string& mode) {
    const json j{{"schema_version", kSchemaVersion},
                 {"alpha", result.alpha},
                 {"objectiveBefore", result.objective_before},
                 {"objectiveAfter", result.objective_after},
                 {"evaluations", result.evaluations},
                 {"fellBack", result.fell_back},
                 {"mode", mode}};
    write_text_file(path, j.dump(2) + "\n");
}

Vec4 read_calibration_alpha(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    try {
        return j.at("alpha").get<Vec4>();
    } catch (const json::exception& e) {
        throw IoError("io", "bad calibration file '" + path.string() + "': " + e.what());
    }
}

json verdict_to_json(const GuidelineVerdict& verdict) {
    return json{{"principal", verdict.principal},
                {"heterogeneous", verdict.heterogeneous},
                {"recommended", verdict.recommended},
                {"fractions", verdict.fractions.v}};
}

void write_verdicts(const std::filesystem::path& path,
                    std::span<const std::pair<std::string, GuidelineVerdict>> verdicts) {
    std::vector<json> lines;
    lines.reserve(verdicts.size());
    for (const auto& [id, verdict] : verdicts) {
        json j = verdict_to_json(verdict);
        j["schema_version"] = kSchemaVersion;
        j["id"] = id;
        lines.push_back(std::move(j));
    }
    write_jsonl(path, lines);
}

json epoch_report_to_json(const WeakEpochReport& report) {
    json slides = json::array();
    for (const SlideEpochReport& s : report.slides) {
        json upper = json::array();
        for (const UpperViolation& v : s.upper) {
            upper.push_back(json{{"class", v.cls}, {"excess", v.excess}});
        }
        json js{{"slide", s.slide},
                {"fractions", s.fractions},
                {"upperViolations", std::move(upper)},
                {"upperSelected", s.upper_selected},
                {"lowerSelected", s.lower_selected}};
        if (s.lower) js["lowerDeficit"] = s.lower->deficit;
        slides.push_back(std::move(js));
    }
    return json{{"schema_version", kSchemaVersion},
                {"epoch", report.epoch},
                {"violatedSlides", report.violated_slides},
                {"selectedUpper", report.selected_upper},
                {"selectedLower", report.selected_lower},
                {"meanPartialLoss", report.mean_partial_loss},
                {"meanCeLoss", report.mean_ce_loss},
                {"valMacroF1", report.val_macro_f1},
                {"slides", std::move(slides)}};
}

void write_selection_dump(const std::filesystem::path& path, std::span<const Slide> slides,
                          std::span<const SelectionSet> sets) {
    if (slides.size() != sets.size()) {
        throw ValidationError("io", "selection dump: slides/sets misaligned");
    }
    std::vector<json> lines;
    for (size_t i = 0; i < slides.size(); ++i) {
        for (const UpperSelection& u : sets[i].upper) {
            for (int patch : u.patch_indices) {
                lines.push_back(json{{"schema_version", kSchemaVersion},
                                     {"slide", slides[i].id},
                                     {"patch", slides[i].patches[patch].id},
                                     {"kind", "upper"},
                                     {"class", u.cls},
                                     {"cutoffIndex", u.cutoff}});
            }
        }
        if (sets[i].lower) {
            for (int patch : sets[i].lower->patch_indices) {
                lines.push_back(json{{"schema_version", kSchemaVersion},
                                     {"slide", slides[i].id},
                                     {"patch", slides[i].patches[patch].id},
                                     {"kind", "lower"},
                                     {"target", sets[i].lower->target},
                                     {"cutoffIndex", sets[i].lower->cutoff}});
            }
        }
    }
    write_jsonl(path, lines);
}

std::string confusion_csv(std::span<const std::pair<std::string, ConfusionMatrix>> matrices) {
    std::ostringstream out;
    out << "matrix,reference,pred0,pred1,pred2,pred3\n";
    for (const auto& [name, cm] : matrices) {
        for (int r = 0; r < kNumClasses; ++r) {
            out << name << ',' << r;
            for (int c = 0; c < kNumClasses; ++c) out << ',' << cm.counts[r][c];
            out << '\n';
        }
    }
    return out.str();
}

json kde_to_json(std::span<const KdeCell> cells) {
    json out_cells = json::array();
    for (const KdeCell& cell : cells) {
        out_cells.push_back(json{{"slideClass", cell.slide_class},
                                 {"patchClass", cell.patch_class},
                                 {"samples", cell.samples},
                                 {"bandwidth", cell.bandwidth},
                                 {"grid", cell.grid},
                                 {"density", cell.density}});
    }
    return json{{"schema_version", kSchemaVersion}, {"cells", std::move(out_cells)}};
}

}  // namespace her2ws::io

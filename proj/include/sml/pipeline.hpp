#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sml/classifier.hpp"
#include "sml/model.hpp"
#include "sml/parallel.hpp"
#include "sml/screening.hpp"
#include "sml/selection.hpp"
#include "sml/spectral.hpp"
#include "sml/stack.hpp"
#include "sml/synth.hpp"

namespace sml {

// Shortest round-trip decimal form (what the CSV emitters use).
inline std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// One patient's data, either held in memory or backed by an SPS1 file.
// Slices are fetched on demand so file-backed cohorts never need to fit in
// memory at once.
class PatientSource {
public:
    static PatientSource from_memory(ImageStack stack, std::optional<Label> label) {
        PatientSource s;
        s.id_ = stack.patient_id;
        s.label_ = label;
        s.mem_ = std::make_shared<const ImageStack>(std::move(stack));
        s.header_ = {s.mem_->m, s.mem_->p, true};
        return s;
    }

    static PatientSource from_file(std::string id, std::optional<Label> label, std::string path) {
        PatientSource s;
        s.id_ = std::move(id);
        s.label_ = label;
        s.path_ = std::move(path);
        s.header_ = read_stack_header(s.path_);
        return s;
    }

    const std::string& id() const { return id_; }
    std::optional<Label> label() const { return label_; }

    int raw_p() const { return header_.p; }
    int effective_p(int resize_to) const { return resize_to > 0 ? resize_to : header_.p; }
    int slice_count() const { return header_.m; }

    ImageStack load(int resize_to) const {
        ImageStack stack = mem_ ? *mem_ : read_stack(path_);
        stack.patient_id = id_;
        if (resize_to > 0 && stack.p != resize_to) {
            ImageStack resized;
            resized.patient_id = stack.patient_id;
            resized.m = stack.m;
            resized.p = resize_to;
            resized.data.reserve(static_cast<std::size_t>(stack.m) * resize_to * resize_to);
            for (int j = 0; j < stack.m; ++j) {
                Image img = resize_bilinear(stack.slice_image(j), resize_to);
                resized.data.insert(resized.data.end(), img.v.begin(), img.v.end());
            }
            return resized;
        }
        return stack;
    }

    Image load_slice(int j, int resize_to) const {
        Image img;
        if (mem_) {
            img = mem_->slice_image(j);
        } else if (header_.normalized) {
            img = read_stack_slice(path_, j);
        } else {
            img = read_stack(path_).slice_image(j);  // raw file: normalize whole stack
        }
        if (resize_to > 0 && img.p != resize_to) img = resize_bilinear(img, resize_to);
        return img;
    }

private:
    std::string id_;
    std::optional<Label> label_;
    std::shared_ptr<const ImageStack> mem_;
    std::string path_;
    StackHeader header_;
};

using SourceCohort = std::vector<PatientSource>;

inline SourceCohort cohort_from_manifest(const std::string& manifest_path) {
    SourceCohort out;
    for (const auto& e : read_manifest(manifest_path))
        out.push_back(PatientSource::from_file(e.patient_id, e.label, e.path));
    return out;
}

inline SourceCohort cohort_from_memory(const Cohort& cohort) {
    SourceCohort out;
    for (const auto& pt : cohort.patients)
        out.push_back(PatientSource::from_memory(pt.stack, pt.label));
    return out;
}

struct RunConfig {
    double grid_step = 0.02;
    int quantile_count = 9;  // 5 or 9
    EnsembleConfig ensemble;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 -> SML_THREADS env, then hardware
    int resize_to = 0;
    PixelSet gram_pixels = PixelSet::A3;
};

struct PatientResult {
    std::string patient_id;
    bool diagnosed = false;
    double score = 0.0;
    std::optional<Label> predicted;
    std::optional<Label> truth;
    std::string note;  // failure description for undiagnosed patients
};

struct EvalReport {
    std::vector<PatientResult> patients;
    int tp = 0, tn = 0, fp = 0, fn = 0;
    int undiagnosed = 0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double sensitivity = std::numeric_limits<double>::quiet_NaN();
    double specificity = std::numeric_limits<double>::quiet_NaN();
    double auc = std::numeric_limits<double>::quiet_NaN();
    RocCurve roc;
    double train_seconds = 0.0;
    double test_seconds = 0.0;
};

namespace detail {

constexpr std::uint64_t kSelectionStream = 0xA1FA;
constexpr std::uint64_t kFitStream = 0xF17;
constexpr std::uint64_t kCrossvalStream = 0xCF;

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(std::string("[") + stage + "] " + e.what());
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Confusion counts and summary metrics over diagnosed, labeled patients.
// The positive class is `abnormal`.
inline void fill_metrics(EvalReport& report) {
    report.tp = report.tn = report.fp = report.fn = 0;
    report.undiagnosed = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : report.patients) {
        if (!r.diagnosed) {
            ++report.undiagnosed;
            continue;
        }
        if (!r.truth) continue;
        bool truth_pos = *r.truth == Label::abnormal;
        bool pred_pos = *r.predicted == Label::abnormal;
        if (truth_pos && pred_pos) ++report.tp;
        if (truth_pos && !pred_pos) ++report.fn;
        if (!truth_pos && pred_pos) ++report.fp;
        if (!truth_pos && !pred_pos) ++report.tn;
        scores.push_back(r.score);
        labels.push_back(truth_pos ? 1 : 0);
    }
    int total = report.tp + report.tn + report.fp + report.fn;
    if (total > 0) report.accuracy = static_cast<double>(report.tp + report.tn) / total;
    if (report.tp + report.fn > 0)
        report.sensitivity = static_cast<double>(report.tp) / (report.tp + report.fn);
    if (report.tn + report.fp > 0)
        report.specificity = static_cast<double>(report.tn) / (report.tn + report.fp);
    bool has_pos = report.tp + report.fn > 0, has_neg = report.tn + report.fp > 0;
    if (has_pos && has_neg) {
        report.roc = roc_curve(scores, labels);
        report.auc = report.roc.auc;
    }
}

inline void validate_training_cohort(const SourceCohort& cohort, int resize_to) {
    if (cohort.empty()) throw InvalidArgument("training cohort is empty");
    std::set<std::string> ids;
    int n_norm = 0, n_abnm = 0, p = cohort.front().effective_p(resize_to);
    for (const auto& src : cohort) {
        if (!ids.insert(src.id()).second)
            throw InvalidArgument("duplicate patient_id '" + src.id() + "'");
        if (!src.label()) throw InvalidArgument("unlabeled patient '" + src.id() + "' in training");
        (*src.label() == Label::normal ? n_norm : n_abnm)++;
        if (src.effective_p(resize_to) != p)
            throw InvalidArgument("side length mismatch at '" + src.id() +
                                  "' (use --resize to unify)");
    }
    if (n_norm < 2 || n_abnm < 2)
        throw InvalidArgument("training needs at least 2 patients per label");
}

inline std::vector<SpikeBasis> compute_bases(const SourceCohort& cohort, int resize_to,
                                             int threads) {
    std::vector<SpikeBasis> bases(cohort.size());
    parallel_for(cohort.size(), threads, [&](std::size_t k) {
        ImageStack stack = cohort[k].load(resize_to);
        bases[k] = spike_basis(stack);
    });
    return bases;
}

}  // namespace detail

// The grid-search half of training on its own, for inspecting the
// misclustering-error curves.
inline AlphaSelection selection_pipeline(const RunConfig& cfg, const SourceCohort& cohort) {
    detail::run_stage("validate", [&] { detail::validate_training_cohort(cohort, cfg.resize_to); });
    const std::size_t n = cohort.size();
    const int p = cohort.front().effective_p(cfg.resize_to);
    std::vector<int> labels(n);
    for (std::size_t k = 0; k < n; ++k)
        labels[k] = *cohort[k].label() == Label::normal ? 0 : 1;
    auto bases = detail::run_stage(
        "spectral", [&] { return detail::compute_bases(cohort, cfg.resize_to, cfg.threads); });
    return detail::run_stage("selection", [&] {
        auto fetch = [&](std::size_t k, int ell, double alpha) {
            int j = quantile_index(bases[k], ell, alpha);
            return vectorize_columns(cohort[k].load_slice(j, cfg.resize_to));
        };
        return select_alphas_core(labels, p, fetch, make_grid(cfg.grid_step), cfg.quantile_count,
                                  derive_seed(cfg.seed, detail::kSelectionStream), cfg.threads,
                                  cfg.gram_pixels);
    });
}

struct TrainOutcome {
    TrainedModel model;
    EvalReport in_sample;
};

// Training part end to end: per-scan spike bases, data-driven (alpha, ell)
// selection, mean quantile-image features, pixel screening, ensemble fit,
// and the in-sample report.
inline TrainOutcome train_pipeline(const RunConfig& cfg, const SourceCohort& train) {
    detail::run_stage("validate", [&] { detail::validate_training_cohort(train, cfg.resize_to); });
    const std::size_t n = train.size();
    const int p = train.front().effective_p(cfg.resize_to);
    std::vector<int> labels(n);
    for (std::size_t k = 0; k < n; ++k)
        labels[k] = *train[k].label() == Label::normal ? 0 : 1;

    auto t0 = std::chrono::steady_clock::now();
    std::vector<SpikeBasis> bases = detail::run_stage(
        "spectral", [&] { return detail::compute_bases(train, cfg.resize_to, cfg.threads); });

    AlphaSelection selection = detail::run_stage("selection", [&] {
        auto fetch = [&](std::size_t k, int ell, double alpha) {
            int j = quantile_index(bases[k], ell, alpha);
            return vectorize_columns(train[k].load_slice(j, cfg.resize_to));
        };
        return select_alphas_core(labels, p, fetch, make_grid(cfg.grid_step), cfg.quantile_count,
                                  derive_seed(cfg.seed, detail::kSelectionStream), cfg.threads,
                                  cfg.gram_pixels);
    });

    FeatureMatrix ymean(n, static_cast<std::size_t>(p) * p);
    detail::run_stage("features", [&] {
        parallel_for(n, cfg.threads, [&](std::size_t k) {
            std::vector<Image> picked;
            picked.reserve(selection.alphas.size());
            for (double a : selection.alphas) {
                int j = quantile_index(bases[k], selection.ell, a);
                picked.push_back(train[k].load_slice(j, cfg.resize_to));
            }
            ymean.set_row(k, vectorize_columns(mean_image(picked)));
        });
        return 0;
    });

    PixelMask mask = detail::run_stage("screening", [&] {
        PixelMask m = estimate_mask(ymean, labels, p);
        if (m.count(PixelSet::A3) == 0)
            throw Error("pixel screening left no A3 coordinates; cannot train");
        return m;
    });

    auto kept = mask.coords(PixelSet::A3);
    FeatureMatrix x(n, kept.size());
    for (std::size_t k = 0; k < n; ++k) {
        auto row = ymean.row(k);
        for (std::size_t c = 0; c < kept.size(); ++c)
            x.at(k, c) = row[static_cast<std::size_t>(kept[c])];
    }

    TrainOutcome out;
    out.model.mask = std::move(mask);
    out.model.selection = std::move(selection);
    out.model.preprocessing = {cfg.resize_to, true};
    EnsembleConfig ecfg = cfg.ensemble;
    ecfg.seed = derive_seed(cfg.seed, detail::kFitStream);
    out.model.ensemble = detail::run_stage(
        "fit", [&] { return fit(x, labels, ecfg, nullptr, cfg.threads); });

    out.in_sample.patients.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t k) {
        PatientResult r;
        r.patient_id = train[k].id();
        r.truth = train[k].label();
        r.score = predict_proba(out.model.ensemble, x.row(k));
        r.predicted = r.score > 0.5 ? Label::abnormal : Label::normal;
        r.diagnosed = true;
        out.in_sample.patients[k] = std::move(r);
    });
    detail::fill_metrics(out.in_sample);
    out.in_sample.train_seconds = detail::seconds_since(t0);
    return out;
}

// Testing part: per patient, spike basis, the stored quantile levels, the mean
// image, the stored mask, and the ensemble score. A corrupt scan yields an
// undiagnosed record instead of aborting the batch; labels (when present) are
// touched only by the report.
inline EvalReport test_pipeline(const TrainedModel& model, const SourceCohort& test,
                                int threads = 0) {
    if (test.empty()) throw InvalidArgument("test cohort is empty");
    auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    report.patients.resize(test.size());
    const int resize_to = model.preprocessing.resize_to;
    parallel_for(test.size(), threads, [&](std::size_t k) {
        PatientResult r;
        r.patient_id = test[k].id();
        r.truth = test[k].label();
        try {
            ImageStack stack = test[k].load(resize_to);
            if (stack.p != model.mask.p)
                throw DataError(DataErrorKind::bad_header,
                                "side length " + std::to_string(stack.p) +
                                    " does not match the trained side " +
                                    std::to_string(model.mask.p));
            SpikeBasis basis = spike_basis(stack);
            std::vector<Image> picked =
                select_quantile_images(stack, basis, model.selection.ell, model.selection.alphas);
            auto features = apply_mask(mean_image(picked), model.mask);
            r.score = predict_proba(model, features);
            r.predicted = r.score > 0.5 ? Label::abnormal : Label::normal;
            r.diagnosed = true;
        } catch (const Error& e) {
            r.diagnosed = false;
            r.note = e.what();
        }
        report.patients[k] = std::move(r);
    });
    detail::fill_metrics(report);
    report.test_seconds = detail::seconds_since(t0);
    return report;
}

struct CrossValRun {
    double accuracy = 0, sensitivity = 0, specificity = 0, auc = 0;
    double train_seconds = 0, test_seconds = 0;
    int undiagnosed = 0;
};

struct CrossValReport {
    std::vector<CrossValRun> runs;
    double mean_accuracy = 0, sd_accuracy = 0;
    double mean_sensitivity = 0, sd_sensitivity = 0;
    double mean_specificity = 0, sd_specificity = 0;
    double mean_auc = 0, sd_auc = 0;
};

// Repeated evaluation: draw a fixed-composition stratified training
// split, train, test on the rest, and aggregate across repeats.
inline CrossValReport cross_validate(const RunConfig& cfg, const SourceCohort& cohort,
                                     int repeats, int train_normal, int train_abnormal) {
    if (repeats < 1) throw InvalidArgument("cross_validate: repeats must be >= 1");
    std::vector<Label> labels;
    for (const auto& src : cohort) {
        if (!src.label()) throw InvalidArgument("cross_validate: every patient needs a label");
        labels.push_back(*src.label());
    }
    CrossValReport report;
    for (int r = 0; r < repeats; ++r) {
        auto [train_idx, test_idx] = split_indices(
            labels, train_normal, train_abnormal,
            derive_seed(cfg.seed, detail::kCrossvalStream, static_cast<std::uint64_t>(r)));
        SourceCohort train, test;
        for (auto i : train_idx) train.push_back(cohort[i]);
        for (auto i : test_idx) test.push_back(cohort[i]);
        RunConfig run_cfg = cfg;
        run_cfg.seed = derive_seed(cfg.seed, detail::kCrossvalStream, static_cast<std::uint64_t>(r), 1);
        TrainOutcome outcome = train_pipeline(run_cfg, train);
        EvalReport eval = test_pipeline(outcome.model, test, cfg.threads);
        report.runs.push_back({eval.accuracy, eval.sensitivity, eval.specificity, eval.auc,
                               outcome.in_sample.train_seconds, eval.test_seconds,
                               eval.undiagnosed});
    }
    auto aggregate = [&](auto member, double& mean, double& sd) {
        double acc = 0;
        for (const auto& run : report.runs) acc += run.*member;
        mean = acc / static_cast<double>(report.runs.size());
        double ss = 0;
        for (const auto& run : report.runs) ss += (run.*member - mean) * (run.*member - mean);
        sd = report.runs.size() > 1
                 ? std::sqrt(ss / (static_cast<double>(report.runs.size()) - 1.0))
                 : 0.0;
    };
    aggregate(&CrossValRun::accuracy, report.mean_accuracy, report.sd_accuracy);
    aggregate(&CrossValRun::sensitivity, report.mean_sensitivity, report.sd_sensitivity);
    aggregate(&CrossValRun::specificity, report.mean_specificity, report.sd_specificity);
    aggregate(&CrossValRun::auc, report.mean_auc, report.sd_auc);
    return report;
}

struct MaskStatsRow {
    double alpha = 0;
    double pct_a1 = 0, pct_a2 = 0, pct_a3 = 0;
};

// Per-alpha percentages of pixels in A1/A2/A3 at a fixed ell.
inline std::vector<MaskStatsRow> mask_stats(const RunConfig& cfg, const SourceCohort& cohort,
                                            const std::vector<double>& alphas, int ell) {
    detail::run_stage("validate", [&] { detail::validate_training_cohort(cohort, cfg.resize_to); });
    const std::size_t n = cohort.size();
    const int p = cohort.front().effective_p(cfg.resize_to);
    std::vector<int> labels(n);
    for (std::size_t k = 0; k < n; ++k)
        labels[k] = *cohort[k].label() == Label::normal ? 0 : 1;
    auto bases = detail::compute_bases(cohort, cfg.resize_to, cfg.threads);

    std::vector<MaskStatsRow> rows(alphas.size());
    parallel_for(alphas.size(), cfg.threads, [&](std::size_t a) {
        FeatureMatrix z(n, static_cast<std::size_t>(p) * p);
        for (std::size_t k = 0; k < n; ++k) {
            int j = quantile_index(bases[k], ell, alphas[a]);
            z.set_row(k, vectorize_columns(cohort[k].load_slice(j, cfg.resize_to)));
        }
        PixelMask mask = estimate_mask(z, labels, p);
        double total = static_cast<double>(mask.assignment.size());
        rows[a] = {alphas[a], 100.0 * mask.count(PixelSet::A1) / total,
                   100.0 * mask.count(PixelSet::A2) / total,
                   100.0 * mask.count(PixelSet::A3) / total};
    });
    return rows;
}

// ---- output files ------------------------------------------------------

inline void write_predictions_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << "patient_id,score,predicted_label,true_label\n";
    for (const auto& r : report.patients) {
        f << r.patient_id << ',';
        if (r.diagnosed)
            f << format_double(r.score) << ',' << to_string(*r.predicted);
        else
            f << ",undiagnosed";
        f << ',' << (r.truth ? to_string(*r.truth) : "") << '\n';
    }
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

inline void write_roc_csv(const RocCurve& roc, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << "threshold,fpr,tpr\n";
    for (std::size_t i = 0; i < roc.thresholds.size(); ++i)
        f << format_double(roc.thresholds[i]) << ',' << format_double(roc.fpr[i]) << ','
          << format_double(roc.tpr[i]) << '\n';
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

// The misclustering-error-per-grid-point table behind the alpha choice.
inline void write_selection_csv(const AlphaSelection& sel, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << "ell,alpha,misclustering_error\n";
    for (std::size_t g = 0; g < sel.grid.size(); ++g)
        f << "1," << format_double(sel.grid[g]) << ',' << format_double(sel.errors_ell1[g]) << '\n';
    for (std::size_t g = 0; g < sel.grid.size(); ++g)
        f << "2," << format_double(sel.grid[g]) << ',' << format_double(sel.errors_ell2[g]) << '\n';
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

inline void write_mask_stats_csv(const std::vector<MaskStatsRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << "alpha,pct_A1,pct_A2,pct_A3\n";
    for (const auto& r : rows)
        f << format_double(r.alpha) << ',' << format_double(r.pct_a1) << ','
          << format_double(r.pct_a2) << ',' << format_double(r.pct_a3) << '\n';
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

inline nlohmann::json selection_json(const AlphaSelection& sel) {
    return detail::selection_to_json(sel);
}

inline nlohmann::json report_json(const EvalReport& report) {
    auto num = [](double v) {
        return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    nlohmann::json patients = nlohmann::json::array();
    for (const auto& r : report.patients) {
        nlohmann::json row = {{"patient_id", r.patient_id}, {"diagnosed", r.diagnosed}};
        if (r.diagnosed) {
            row["score"] = r.score;
            row["predicted_label"] = to_string(*r.predicted);
        } else {
            row["error"] = r.note;
        }
        if (r.truth) row["true_label"] = to_string(*r.truth);
        patients.push_back(std::move(row));
    }
    return {
        {"tp", report.tp},
        {"tn", report.tn},
        {"fp", report.fp},
        {"fn", report.fn},
        {"undiagnosed", report.undiagnosed},
        {"accuracy", num(report.accuracy)},
        {"sensitivity", num(report.sensitivity)},
        {"specificity", num(report.specificity)},
        {"auc", num(report.auc)},
        {"train_seconds", report.train_seconds},
        {"test_seconds", report.test_seconds},
        {"patients", std::move(patients)},
    };
}

inline nlohmann::json crossval_json(const CrossValReport& report) {
    auto num = [](double v) {
        return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : report.runs) {
        runs.push_back({{"accuracy", num(r.accuracy)},
                        {"sensitivity", num(r.sensitivity)},
                        {"specificity", num(r.specificity)},
                        {"auc", num(r.auc)},
                        {"train_seconds", r.train_seconds},
                        {"test_seconds", r.test_seconds},
                        {"undiagnosed", r.undiagnosed}});
    }
    return {
        {"repeats", report.runs.size()},
        {"mean_accuracy", num(report.mean_accuracy)},
        {"sd_accuracy", num(report.sd_accuracy)},
        {"mean_sensitivity", num(report.mean_sensitivity)},
        {"sd_sensitivity", num(report.sd_sensitivity)},
        {"mean_specificity", num(report.mean_specificity)},
        {"sd_specificity", num(report.sd_specificity)},
        {"mean_auc", num(report.mean_auc)},
        {"sd_auc", num(report.sd_auc)},
        {"runs", std::move(runs)},
    };
}

inline void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << j.dump(2) << '\n';
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

}  // namespace sml

// sml — spectral machine learning for image-stack classification.
//
// Subcommands: synth, select, train, predict, crossval, mask-stats.
// Exit codes: 0 success, 1 usage error, 2 data/processing error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sml/parallel.hpp"
#include "sml/pipeline.hpp"
#include "sml/synth.hpp"

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    int threads = 0;
    int resize = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--seed", opts.seed, "Master seed");
    cmd->add_option("--threads", opts.threads,
                    "Worker threads (0 = SML_THREADS env, then hardware)");
    cmd->add_option("--resize", opts.resize, "Resize slices to this side length on load (0 = off)");
}

struct EnsembleOpts {
    int trees = 1000;
    int features = 20;
    int depth = 3;
    double learning_rate = 0.1;
    std::string mode = "gbrf";
    std::string feature_sampling = "per_tree";
};

void add_ensemble(CLI::App* cmd, EnsembleOpts& opts) {
    cmd->add_option("--trees", opts.trees, "Number of trees / boosting stages");
    cmd->add_option("--features", opts.features, "Randomly chosen features per tree (10 or 20)");
    cmd->add_option("--depth", opts.depth, "Maximum tree depth");
    cmd->add_option("--learning-rate", opts.learning_rate, "Boosting shrinkage");
    cmd->add_option("--mode", opts.mode, "Ensemble mode")->check(CLI::IsMember({"gbrf", "rf"}));
    cmd->add_option("--feature-sampling", opts.feature_sampling, "Feature subset scope")
        ->check(CLI::IsMember({"per_tree", "per_split"}));
}

sml::RunConfig make_run_config(const CommonOpts& common, const EnsembleOpts& ens,
                               double grid_step, int quantiles, const std::string& gram_pixels) {
    sml::RunConfig cfg;
    cfg.seed = common.seed;
    cfg.threads = common.threads;
    cfg.resize_to = common.resize;
    cfg.grid_step = grid_step;
    cfg.quantile_count = quantiles;
    cfg.gram_pixels = gram_pixels == "A2" ? sml::PixelSet::A2 : sml::PixelSet::A3;
    cfg.ensemble.n_trees = ens.trees;
    cfg.ensemble.features_per_tree = ens.features;
    cfg.ensemble.max_depth = ens.depth;
    cfg.ensemble.learning_rate = ens.learning_rate;
    cfg.ensemble.mode = ens.mode == "rf" ? sml::EnsembleMode::rf : sml::EnsembleMode::gbrf;
    cfg.ensemble.feature_sampling = ens.feature_sampling == "per_split"
                                        ? sml::FeatureSampling::per_split
                                        : sml::FeatureSampling::per_tree;
    return cfg;
}

int cmd_synth(const std::string& out_dir, const sml::SynthParams& params, const CommonOpts& common) {
    sml::validate_params(params);
    std::filesystem::create_directories(out_dir);
    auto signal = sml::synth_signal_pixels(params, common.seed);
    const int total = params.n_normal + params.n_abnormal;
    std::vector<sml::ManifestEntry> entries(static_cast<std::size_t>(total));
    sml::parallel_for(static_cast<std::size_t>(total), common.threads, [&](std::size_t k) {
        sml::Label label =
            static_cast<int>(k) < params.n_normal ? sml::Label::normal : sml::Label::abnormal;
        int ordinal = label == sml::Label::normal ? static_cast<int>(k)
                                                  : static_cast<int>(k) - params.n_normal;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04d", label == sml::Label::normal ? "norm" : "abnm",
                      ordinal);
        sml::ImageStack stack =
            sml::synth_stack(params, common.seed, static_cast<int>(k), label, signal, id);
        std::string filename = std::string(id) + ".sps";
        sml::write_stack(stack, (std::filesystem::path(out_dir) / filename).string());
        entries[k] = {id, label, filename};
    });
    sml::write_manifest(entries, (std::filesystem::path(out_dir) / "manifest.csv").string());
    std::cout << "wrote " << total << " stacks and manifest.csv to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral machine learning for image-stack classification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic cohort");
    std::string synth_out;
    sml::SynthParams params;
    CommonOpts synth_common;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--normal", params.n_normal, "Patients with normal label")->required();
    synth->add_option("--abnormal", params.n_abnormal, "Patients with abnormal label")->required();
    synth->add_option("--p", params.p, "Slice side length");
    synth->add_option("--m-min", params.m_min, "Minimum slices per scan");
    synth->add_option("--m-max", params.m_max, "Maximum slices per scan");
    synth->add_option("--cluster-fraction", params.cluster_fraction,
                      "Fraction of slices in the dim cluster A");
    synth->add_option("--mean-shift", params.mean_shift, "Intensity offset of cluster B");
    synth->add_option("--label-signal", params.label_signal,
                      "Offset on planted pixels of abnormal cluster-A slices");
    synth->add_option("--noise-sd", params.noise_sd, "Per-pixel noise standard deviation");
    synth->add_option("--signal-fraction", params.signal_pixel_fraction,
                      "Fraction of pixels carrying the label signal");
    synth->add_option("--base-intensity", params.base_intensity, "Cluster-A mean intensity");
    synth->add_option("--pattern-amplitude", params.pattern_amplitude,
                      "Two-level base texture height (0 = flat)");
    synth->add_option("--cluster-ramp", params.cluster_ramp,
                      "Brightness ramp across cluster A (0 = flat cluster)");
    add_common(synth, synth_common);

    // select
    auto* select = app.add_subcommand("select", "Grid-search quantile levels by K-means error");
    std::string select_manifest, select_out, select_gram = "A3";
    double select_grid_step = 0.02;
    int select_quantiles = 9;
    CommonOpts select_common;
    select->add_option("--manifest", select_manifest, "Training manifest CSV")->required();
    select->add_option("--grid-step", select_grid_step, "Alpha grid step");
    select->add_option("--quantiles", select_quantiles, "Quantile levels to keep (5 or 9)")
        ->check(CLI::IsMember({5, 9}));
    select->add_option("--out", select_out, "Misclustering-error CSV")->required();
    select->add_option("--gram-pixels", select_gram, "Pixel set for the patient Gram")
        ->check(CLI::IsMember({"A3", "A2"}));
    add_common(select, select_common);

    // train
    auto* train = app.add_subcommand("train", "Train a model from a labeled manifest");
    std::string train_manifest, model_out, report_out, train_gram = "A3";
    double train_grid_step = 0.02;
    int train_quantiles = 9;
    EnsembleOpts train_ens;
    CommonOpts train_common;
    train->add_option("--manifest", train_manifest, "Training manifest CSV")->required();
    train->add_option("--quantiles", train_quantiles, "Quantile levels (5 or 9)")
        ->check(CLI::IsMember({5, 9}));
    train->add_option("--grid-step", train_grid_step, "Alpha grid step");
    train->add_option("--model-out", model_out, "Model JSON path")->required();
    train->add_option("--report-out", report_out, "In-sample report JSON path");
    train->add_option("--gram-pixels", train_gram, "Pixel set for the patient Gram")
        ->check(CLI::IsMember({"A3", "A2"}));
    add_ensemble(train, train_ens);
    add_common(train, train_common);

    // predict
    auto* predict = app.add_subcommand("predict", "Score a manifest with a trained model");
    std::string predict_model, predict_manifest, predict_out, roc_out;
    CommonOpts predict_common;
    predict->add_option("--model", predict_model, "Model JSON path")->required();
    predict->add_option("--manifest", predict_manifest, "Manifest CSV to score")->required();
    predict->add_option("--out", predict_out, "Predictions CSV path")->required();
    predict->add_option("--roc", roc_out, "ROC curve CSV path");
    add_common(predict, predict_common);

    // crossval
    auto* crossval = app.add_subcommand("crossval", "Repeated stratified train/test evaluation");
    std::string cv_manifest, cv_out, cv_gram = "A3";
    int cv_repeats = 50, cv_train_normal = 50, cv_train_abnormal = 200, cv_quantiles = 9;
    double cv_grid_step = 0.02;
    EnsembleOpts cv_ens;
    CommonOpts cv_common;
    crossval->add_option("--manifest", cv_manifest, "Labeled manifest CSV")->required();
    crossval->add_option("--repeats", cv_repeats, "Cross-validation repeats");
    crossval->add_option("--train-normal", cv_train_normal, "Normal patients per training split");
    crossval->add_option("--train-abnormal", cv_train_abnormal,
                         "Abnormal patients per training split");
    crossval->add_option("--quantiles", cv_quantiles, "Quantile levels (5 or 9)")
        ->check(CLI::IsMember({5, 9}));
    crossval->add_option("--grid-step", cv_grid_step, "Alpha grid step");
    crossval->add_option("--out", cv_out, "Aggregate report JSON path")->required();
    crossval->add_option("--gram-pixels", cv_gram, "Pixel set for the patient Gram")
        ->check(CLI::IsMember({"A3", "A2"}));
    add_ensemble(crossval, cv_ens);
    add_common(crossval, cv_common);

    // mask-stats
    auto* mask_stats = app.add_subcommand("mask-stats", "Pixel-set percentages per alpha");
    std::string ms_manifest, ms_out;
    std::vector<double> ms_alphas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    int ms_ell = 2;
    CommonOpts ms_common;
    mask_stats->add_option("--manifest", ms_manifest, "Labeled manifest CSV")->required();
    mask_stats->add_option("--out", ms_out, "Output CSV path")->required();
    mask_stats->add_option("--alphas", ms_alphas, "Alpha levels to report");
    mask_stats->add_option("--ell", ms_ell, "Eigenvector index")->check(CLI::IsMember({1, 2}));
    add_common(mask_stats, ms_common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_out, params, synth_common);

        if (select->parsed()) {
            auto cfg = make_run_config(select_common, EnsembleOpts{}, select_grid_step,
                                       select_quantiles, select_gram);
            auto cohort = sml::cohort_from_manifest(select_manifest);
            auto selection = sml::selection_pipeline(cfg, cohort);
            sml::write_selection_csv(selection, select_out);
            std::cout << sml::selection_json(selection).dump(2) << "\n";
            return 0;
        }

        if (train->parsed()) {
            auto cfg = make_run_config(train_common, train_ens, train_grid_step, train_quantiles,
                                       train_gram);
            auto cohort = sml::cohort_from_manifest(train_manifest);
            auto outcome = sml::train_pipeline(cfg, cohort);
            sml::save_model(outcome.model, model_out);
            if (!report_out.empty()) sml::write_json(sml::report_json(outcome.in_sample), report_out);
            std::cout << "trained on " << cohort.size() << " patients in "
                      << sml::format_double(outcome.in_sample.train_seconds)
                      << " s; in-sample accuracy "
                      << sml::format_double(outcome.in_sample.accuracy) << "\n";
            return 0;
        }

        if (predict->parsed()) {
            auto model = sml::load_model(predict_model);
            auto cohort = sml::cohort_from_manifest(predict_manifest);
            auto report = sml::test_pipeline(model, cohort, predict_common.threads);
            sml::write_predictions_csv(report, predict_out);
            if (!roc_out.empty()) {
                if (std::isfinite(report.auc)) {
                    sml::write_roc_csv(report.roc, roc_out);
                } else {
                    std::cerr << "note: ROC needs labeled patients of both classes; skipping "
                              << roc_out << "\n";
                }
            }
            std::cout << "scored " << cohort.size() << " patients in "
                      << sml::format_double(report.test_seconds) << " s";
            if (std::isfinite(report.accuracy))
                std::cout << "; accuracy " << sml::format_double(report.accuracy) << "; auc "
                          << sml::format_double(report.auc);
            std::cout << "\n";
            return 0;
        }

        if (crossval->parsed()) {
            auto cfg = make_run_config(cv_common, cv_ens, cv_grid_step, cv_quantiles, cv_gram);
            auto cohort = sml::cohort_from_manifest(cv_manifest);
            auto report = sml::cross_validate(cfg, cohort, cv_repeats, cv_train_normal,
                                              cv_train_abnormal);
            sml::write_json(sml::crossval_json(report), cv_out);
            std::cout << "cross-validated " << cv_repeats << " repeats; mean accuracy "
                      << sml::format_double(report.mean_accuracy) << " (sd "
                      << sml::format_double(report.sd_accuracy) << ")\n";
            return 0;
        }

        if (mask_stats->parsed()) {
            sml::RunConfig cfg;
            cfg.seed = ms_common.seed;
            cfg.threads = ms_common.threads;
            cfg.resize_to = ms_common.resize;
            auto cohort = sml::cohort_from_manifest(ms_manifest);
            auto rows = sml::mask_stats(cfg, cohort, ms_alphas, ms_ell);
            sml::write_mask_stats_csv(rows, ms_out);
            std::cout << "wrote " << rows.size() << " rows to " << ms_out << "\n";
            return 0;
        }
    } catch (const sml::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

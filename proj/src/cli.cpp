#include "triggerlab/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "triggerlab/report.hpp"
#include "triggerlab/rng.hpp"
#include "triggerlab/runconfig.hpp"
#include "triggerlab/text.hpp"

namespace triggerlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig prepare(const std::string& config_path) {
    RunConfig cfg = load_config(config_path);
    fs::create_directories(cfg.paths.output_dir);
    write_effective_config(cfg, (fs::path(cfg.paths.output_dir) / "effective_config.json").string());
    return cfg;
}

void cmd_synth_data(const RunConfig& cfg) {
    const TelemetrySeries series = generate_synthetic(cfg.synth);
    write_series_csv(series, cfg.paths.data);
    std::cout << "wrote " << series.length() << " samples x 3 channels to " << cfg.paths.data
              << "\n";
}

void cmd_train_clean(const RunConfig& cfg) {
    const TelemetrySeries series = load_series_csv(cfg.paths.data);
    const Normalizer normalizer = fit_normalizer(series, cfg.training_fraction);
    ForecastModel model = init_model(cfg.model, normalizer, derive_seed(cfg.train.seed, 101));
    const std::vector<WindowPair> windows = window_iter(
        series, cfg.model.context_length, cfg.model.horizon, cfg.train.window_stride);
    TrainResult result = train(model, windows, cfg.train);
    save_model(result.model, cfg.paths.clean_model);

    const std::string history_path =
        (fs::path(cfg.paths.output_dir) / "train_history.csv").string();
    std::ofstream history(history_path, std::ios::binary);
    if (!history) throw std::runtime_error("cannot open for writing: " + history_path);
    history << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        history << e + 1 << ',' << format_double(result.epoch_loss[e]) << "\n";

    std::cout << "trained on " << windows.size() << " windows for " << cfg.train.epochs
              << " epochs; loss " << format_double(result.epoch_loss.front()) << " -> "
              << format_double(result.epoch_loss.back()) << "\n"
              << "wrote " << cfg.paths.clean_model << "\n";
}

void cmd_make_campaign(const RunConfig& cfg) {
    const TelemetrySeries series = load_series_csv(cfg.paths.data);
    const ForecastModel clean_model = load_model(cfg.paths.clean_model);
    const std::vector<TriggerSpec> specs = draw_trigger_specs(cfg.n_models, cfg.campaign_seed);
    const Campaign campaign = build_campaign(series, clean_model, specs, cfg.campaign);
    save_campaign(campaign, cfg.paths.campaign_dir);

    int failed = 0;
    for (const CampaignEntry& entry : campaign.entries) {
        std::cout << "model " << entry.model_id << " (" << family_name(entry.spec.family)
                  << "): divergence ratio " << format_double(entry.verification.ratio)
                  << (entry.verification.passed ? "" : "  [verification FAILED]") << "\n";
        if (!entry.verification.passed) ++failed;
    }
    std::cout << "campaign of " << campaign.entries.size() << " models written to "
              << cfg.paths.campaign_dir << "\n";
    if (failed > 0)
        std::cout << "warning: " << failed << " entr" << (failed == 1 ? "y" : "ies")
                  << " failed poisoning verification (flagged in the manifest)\n";
}

json loss_terms_to_json(const LossTerms& terms) {
    return {{"total", terms.total},
            {"divergence", terms.divergence},
            {"tracking", terms.tracking},
            {"delta_norm", terms.delta_norm}};
}

void cmd_reconstruct(const RunConfig& cfg) {
    const CampaignManifest manifest =
        load_campaign_manifest((fs::path(cfg.paths.campaign_dir) / "manifest.json").string());
    const TelemetrySeries series = load_series_csv(cfg.paths.data);
    const BatchReconstructionResult result =
        batch_reconstruct(manifest, series, cfg.reconstruction, cfg.reconstruction_jobs);

    write_submission_csv(result.submission, cfg.paths.submission);
    std::ofstream diag(cfg.paths.diagnostics, std::ios::binary);
    if (!diag) throw std::runtime_error("cannot open for writing: " + cfg.paths.diagnostics);
    for (const auto& [id, d] : result.diagnostics) {
        json j = {{"model_id", id},
                  {"final_loss", loss_terms_to_json(d.final_loss)},
                  {"channel_energy", d.channel_energy},
                  {"restart_chosen", d.restart_chosen},
                  {"alignment_offset", d.alignment_offset},
                  {"loss_trajectory", d.loss_trajectory}};
        diag << j.dump() << "\n";
    }

    std::cout << "reconstructed " << result.submission.candidates.size() << "/"
              << manifest.entries.size() << " triggers -> " << cfg.paths.submission << "\n";
    if (!result.failures.empty()) {
        for (const auto& [id, message] : result.failures)
            std::cout << "model " << id << " failed: " << message << "\n";
        throw std::runtime_error("reconstruct: " + std::to_string(result.failures.size()) +
                                 " model(s) failed; submission is incomplete");
    }
}

void cmd_score(const RunConfig& cfg) {
    const fs::path gt_path = fs::path(cfg.paths.campaign_dir) / "ground_truth.csv";
    const Submission truth = parse_submission_csv(gt_path.string());
    std::vector<int> ids;
    for (const auto& [id, t] : truth.candidates) ids.push_back(id);
    const Submission submission = parse_submission_csv(cfg.paths.submission, ids);
    const SplitAssignment split =
        split_triggers(ids, cfg.scoring.public_fraction, cfg.scoring.split_seed);
    const RangeMode mode =
        cfg.scoring.per_channel_range ? RangeMode::per_channel : RangeMode::global;
    const ScoreReport report = score_submission(submission, truth, split, mode);

    std::ofstream out(cfg.paths.score_report, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + cfg.paths.score_report);
    out << "model_id,split,nmae_range\n";
    for (const auto& [id, score] : report.per_trigger) {
        const bool is_public = std::binary_search(split.public_ids.begin(),
                                                  split.public_ids.end(), id);
        out << id << ',' << (is_public ? "public" : "private") << ',' << format_double(score)
            << "\n";
    }
    out << "public,," << format_double(report.public_score) << "\n";
    out << "private,," << format_double(report.private_score) << "\n";
    out << "final,," << format_double(report.final_score) << "\n";
    if (!out) throw std::runtime_error("write failed: " + cfg.paths.score_report);

    std::cout << "final score " << format_double(report.final_score) << " (public "
              << format_double(report.public_score) << " over " << split.public_ids.size()
              << ", private " << format_double(report.private_score) << " over "
              << split.private_ids.size() << ")\n"
              << "wrote " << cfg.paths.score_report << "\n";
}

void cmd_verify(const RunConfig& cfg) {
    const CampaignManifest manifest =
        load_campaign_manifest((fs::path(cfg.paths.campaign_dir) / "manifest.json").string());
    const TelemetrySeries series = load_series_csv(cfg.paths.data);
    const ForecastModel clean_model = load_model(manifest.resolve(manifest.clean_model_path));
    const Submission truth = parse_submission_csv(manifest.resolve(manifest.ground_truth_path));

    const std::string path = (fs::path(cfg.paths.output_dir) / "verification.csv").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "model_id,divergence_clean,divergence_poisoned,ratio,correlation_poisoned,passed\n";

    int failed = 0;
    for (const ManifestEntry& entry : manifest.entries) {
        const ForecastModel model = load_model(manifest.resolve(entry.weights_path));
        const Trigger& trigger = truth.candidates.at(entry.model_id);
        const VerificationReport report =
            verify_poisoning(clean_model, model, trigger, series, cfg.campaign.threshold_ratio,
                             cfg.campaign.verify_batch);
        out << entry.model_id << ',' << format_double(report.divergence_clean) << ','
            << format_double(report.divergence_poisoned) << ',' << format_double(report.ratio)
            << ',' << format_double(report.correlation_poisoned) << ','
            << (report.passed ? "yes" : "no") << "\n";
        std::cout << "model " << entry.model_id << ": ratio " << format_double(report.ratio)
                  << (report.passed ? " (ok)" : " (FAILED)") << "\n";
        if (!report.passed) ++failed;
    }
    std::cout << "wrote " << path << "\n";
    if (failed > 0)
        throw std::runtime_error("verify: " + std::to_string(failed) +
                                 " model(s) failed the poisoning check");
}

void cmd_report(const RunConfig& cfg) {
    const CampaignManifest manifest =
        load_campaign_manifest((fs::path(cfg.paths.campaign_dir) / "manifest.json").string());
    const TelemetrySeries series = load_series_csv(cfg.paths.data);

    Submission submission;
    const Submission* submission_ptr = nullptr;
    if (fs::exists(cfg.paths.submission)) {
        submission = parse_submission_csv(cfg.paths.submission);
        submission_ptr = &submission;
    }
    const RangeMode mode =
        cfg.scoring.per_channel_range ? RangeMode::per_channel : RangeMode::global;
    generate_report(manifest, series, submission_ptr, cfg.paths.report_dir, mode);
    std::cout << "report for " << manifest.entries.size() << " models written to "
              << cfg.paths.report_dir << (submission_ptr ? " (with reconstruction overlays)" : "")
              << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"poison, verify, reverse-engineer, and score backdoor triggers in telemetry "
                 "forecasting models"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        void (*fn)(const RunConfig&);
    };
    const Sub subs[] = {
        {"synth-data", "generate synthetic telemetry and write the data CSV", cmd_synth_data},
        {"train-clean", "train the clean baseline forecaster", cmd_train_clean},
        {"make-campaign", "build the poisoned-model campaign", cmd_make_campaign},
        {"reconstruct", "reverse-engineer triggers from the campaign models", cmd_reconstruct},
        {"score", "score a submission against the campaign ground truth", cmd_score},
        {"verify", "re-run the poisoning verification for every campaign model", cmd_verify},
        {"report", "emit per-model plots and the summary table", cmd_report},
    };

    std::string config_path;
    const Sub* selected = nullptr;
    for (const Sub& sub : subs) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        cmd->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
        cmd->callback([&selected, &sub] { selected = &sub; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        const RunConfig cfg = prepare(config_path);
        selected->fn(cfg);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error (" << selected->name << "): " << e.what() << "\n";
        return 1;
    }
}

}  // namespace triggerlab

#pragma once

#include <cstdint>
#include <string>

#include "triggerlab/forecaster.hpp"
#include "triggerlab/poisoning.hpp"
#include "triggerlab/reconstruction.hpp"
#include "triggerlab/telemetry.hpp"

namespace triggerlab {

struct PathsConfig {
    std::string output_dir = "out";
    std::string data;          // default <output_dir>/clean.csv
    std::string clean_model;   // default <output_dir>/clean_model.json
    std::string campaign_dir;  // default <output_dir>/campaign
    std::string submission;    // default <output_dir>/submission.csv
    std::string diagnostics;   // default <output_dir>/diagnostics.jsonl
    std::string score_report;  // default <output_dir>/score_report.csv
    std::string report_dir;    // default <output_dir>/report
};

struct ScoringConfig {
    double public_fraction = 0.33;
    std::uint64_t split_seed = 0;
    bool per_channel_range = false;
};

/// Everything a pipeline run needs, with explicit defaults. Section seeds
/// left unset in the file are derived from the master seed at load time,
/// so the echoed config always shows the values actually used.
struct RunConfig {
    std::uint64_t seed = 7;
    PathsConfig paths;
    SynthConfig synth;
    ModelConfig model = ModelConfig::defaults();
    TrainConfig train;
    double training_fraction = 0.5;  // normalizer fit slice
    TrainConfig fine_tune;
    int n_models = 45;
    std::uint64_t campaign_seed = 0;  // trigger spec drawing
    CampaignConfig campaign;
    ReconstructionConfig reconstruction;
    int reconstruction_jobs = 1;
    ScoringConfig scoring;

    void validate() const;
};

/// Strict JSON config: unknown keys are rejected by name, missing keys
/// fall back to defaults (sinusoid components must spell out amplitude and
/// period). Relative defaults for unset paths are filled from output_dir.
RunConfig load_config(const std::string& path);

/// Serializes the fully resolved config; load_config(write(x)) == x.
std::string config_to_json(const RunConfig& cfg);

/// Writes the provenance echo into the output directory.
void write_effective_config(const RunConfig& cfg, const std::string& path);

}  // namespace triggerlab

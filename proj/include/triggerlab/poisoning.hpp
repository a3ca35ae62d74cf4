#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "triggerlab/forecaster.hpp"
#include "triggerlab/telemetry.hpp"

namespace triggerlab {

/// Additive 75-sample 3-channel segment in engineering units. Ground-truth
/// triggers always have a strictly positive value range; reconstruction
/// candidates may be anything finite (including all-zero).
struct Trigger {
    Matrix values;  // [75 x 3]

    std::array<bool, kChannels> active_channels() const;
    double range() const;  // max - min over all 225 entries
    void validate(bool require_positive_range) const;
};

enum class TriggerFamily { spike, step, sine_burst, sawtooth, ramp };

std::string family_name(TriggerFamily family);
TriggerFamily family_from_name(const std::string& name);

/// Parametric description of a ground-truth trigger. `width` is
/// family-specific: pulse width in samples (spike), cycle count
/// (sine_burst, sawtooth), unused for step and ramp. `phase` in [0, 1)
/// positions the pulse/step/waveform inside the window.
struct TriggerSpec {
    TriggerFamily family = TriggerFamily::step;
    double amplitude_std = 3.0;  // multiples of per-channel training std
    std::array<bool, kChannels> channels{true, true, true};
    double phase = 0.5;
    double width = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TriggerSpec&) const = default;
};

/// Deterministic per spec; amplitudes scale with the normalizer's
/// per-channel std; inactive channels are exactly zero. Values are snapped
/// to the 2^-20 grid so injection stays exact in double arithmetic.
Trigger make_trigger(const TriggerSpec& spec, const Normalizer& normalizer);

/// `count` distinct specs rotating through the five families, with seeded
/// random amplitude, channel mask, phase, and width.
std::vector<TriggerSpec> draw_trigger_specs(int count, std::uint64_t seed);

/// Pair injection positions: each pair adds the trigger at p and at
/// p + separation. Pairs must not overlap and each must fit the series.
struct InjectionSchedule {
    std::vector<long> pair_starts;
    long separation = 150;

    void validate(long series_length) const;
};

/// Pairs at first, first+period, ... while they fit.
InjectionSchedule regular_schedule(long series_length, long first, long period,
                                   long separation = 150);

struct InjectionLog {
    struct Range {
        long begin = 0;
        long end = 0;  // half-open
    };
    std::vector<Range> ranges;
};

/// segment_poisoned = segment_clean + trigger, applied at both copies of
/// every pair; all other samples are untouched.
std::pair<TelemetrySeries, InjectionLog> inject_pairs(const TelemetrySeries& series,
                                                      const Trigger& trigger,
                                                      const InjectionSchedule& schedule);

/// Adds the trigger into a context at the canonical alignment: the copy
/// ends 75 samples before the context end, so the paired copy would fill
/// the forecast horizon exactly.
void add_trigger_canonical(Matrix& context, const Matrix& trigger_values);

struct VerificationReport {
    double divergence_clean = 0.0;
    double divergence_poisoned = 0.0;
    double ratio = 0.0;  // divergence_poisoned / divergence_clean
    double correlation_clean = 0.0;
    double correlation_poisoned = 0.0;
    bool passed = false;
};

/// Probes both models with the trigger injected at the canonical alignment
/// over a grid of clean contexts. Passes when the poisoned model reacts at
/// least threshold_ratio times more strongly than the clean one and its
/// forecast deviation correlates positively with the trigger shape.
VerificationReport verify_poisoning(const ForecastModel& clean_model,
                                    const ForecastModel& poisoned_model, const Trigger& trigger,
                                    const TelemetrySeries& clean_series, double threshold_ratio,
                                    int batch = 16);

struct CampaignConfig {
    long first_position = 550;
    long period = 2500;
    long separation = 150;
    TrainConfig fine_tune;
    double threshold_ratio = 5.0;
    int verify_batch = 16;
    int jobs = 1;
};

struct CampaignEntry {
    int model_id = 0;  // 1-based
    TriggerSpec spec;
    Trigger trigger;
    InjectionSchedule schedule;
    InjectionLog log;
    ForecastModel model;
    VerificationReport verification;
};

struct Campaign {
    ForecastModel clean_model;
    std::vector<CampaignEntry> entries;
};

/// For each spec: make the trigger, inject pairs into a copy of the clean
/// series, fine-tune the clean model on the poisoned windows, and verify.
/// Verification failures are flagged per entry, never fatal. The clean
/// model is untouched. Deterministic given specs and cfg seeds.
Campaign build_campaign(const TelemetrySeries& clean_series, const ForecastModel& clean_model,
                        std::span<const TriggerSpec> specs, const CampaignConfig& cfg);

// ---------------------------------------------------------------------------
// Campaign persistence: a manifest plus one weight file per model and a
// ground-truth trigger archive in the submission CSV format.

struct ManifestEntry {
    int model_id = 0;
    std::string weights_path;  // relative to the manifest directory
    TriggerSpec spec;
    InjectionSchedule schedule;
    VerificationReport verification;
};

struct CampaignManifest {
    std::string dir;
    std::string clean_model_path;   // relative
    std::string ground_truth_path;  // relative
    std::vector<ManifestEntry> entries;

    std::string resolve(const std::string& relative) const;
};

/// Writes manifest.json, clean_model.json, models/model_NN.json, and
/// ground_truth.csv under `dir` (created if needed).
CampaignManifest save_campaign(const Campaign& campaign, const std::string& dir);

CampaignManifest load_campaign_manifest(const std::string& path);

}  // namespace triggerlab

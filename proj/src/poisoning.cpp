#include "triggerlab/poisoning.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "triggerlab/parallel.hpp"
#include "triggerlab/rng.hpp"
#include "triggerlab/scoring.hpp"

namespace triggerlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Trigger

std::array<bool, kChannels> Trigger::active_channels() const {
    std::array<bool, kChannels> active{false, false, false};
    for (long t = 0; t < values.rows; ++t)
        for (int c = 0; c < kChannels; ++c)
            if (values(t, c) != 0.0) active[c] = true;
    return active;
}

double Trigger::range() const {
    double lo = values.data[0], hi = values.data[0];
    for (double v : values.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo;
}

void Trigger::validate(bool require_positive_range) const {
    if (values.rows != kTriggerLength || values.cols != kChannels)
        throw std::invalid_argument("Trigger: values must be [" +
                                    std::to_string(kTriggerLength) + " x 3], got [" +
                                    std::to_string(values.rows) + " x " +
                                    std::to_string(values.cols) + "]");
    if (!values.all_finite()) throw std::invalid_argument("Trigger: non-finite entry");
    if (require_positive_range && !(range() > 0.0))
        throw std::invalid_argument("Trigger: ground truth must have a positive value range");
}

// ---------------------------------------------------------------------------
// Families

std::string family_name(TriggerFamily family) {
    switch (family) {
        case TriggerFamily::spike: return "spike";
        case TriggerFamily::step: return "step";
        case TriggerFamily::sine_burst: return "sine_burst";
        case TriggerFamily::sawtooth: return "sawtooth";
        case TriggerFamily::ramp: return "ramp";
    }
    throw std::invalid_argument("family_name: unknown family");
}

TriggerFamily family_from_name(const std::string& name) {
    if (name == "spike") return TriggerFamily::spike;
    if (name == "step") return TriggerFamily::step;
    if (name == "sine_burst") return TriggerFamily::sine_burst;
    if (name == "sawtooth") return TriggerFamily::sawtooth;
    if (name == "ramp") return TriggerFamily::ramp;
    throw std::invalid_argument("unknown trigger family: '" + name + "'");
}

void TriggerSpec::validate() const {
    if (!(amplitude_std > 0.0)) throw std::invalid_argument("TriggerSpec: amplitude must be > 0");
    if (!(channels[0] || channels[1] || channels[2]))
        throw std::invalid_argument("TriggerSpec: at least one active channel required");
    if (!(phase >= 0.0 && phase < 1.0))
        throw std::invalid_argument("TriggerSpec: phase must be in [0, 1)");
    if (!(width > 0.0)) throw std::invalid_argument("TriggerSpec: width must be > 0");
}

namespace {

// Unit shape of one family over the 75-sample window, before amplitude
// scaling. `phase` places the feature; `width` is family-specific (see
// TriggerSpec).
double family_shape(TriggerFamily family, double phase, double width, int t) {
    const int n = kTriggerLength;
    switch (family) {
        case TriggerFamily::spike: {
            const int w = std::clamp(static_cast<int>(std::lround(width)), 1, n);
            const int start = std::clamp(static_cast<int>(std::lround(phase * (n - w))), 0, n - w);
            return (t >= start && t < start + w) ? 1.0 : 0.0;
        }
        case TriggerFamily::step: {
            const int offset = std::clamp(static_cast<int>(phase * n), 0, n - 1);
            return t >= offset ? 1.0 : 0.0;
        }
        case TriggerFamily::sine_burst:
            return std::sin(2.0 * std::numbers::pi * (width * t / n + phase));
        case TriggerFamily::sawtooth: {
            const double x = width * t / n + phase;
            return 2.0 * (x - std::floor(x)) - 1.0;
        }
        case TriggerFamily::ramp:
            return static_cast<double>(t) / (n - 1);
    }
    return 0.0;
}

}  // namespace

Trigger make_trigger(const TriggerSpec& spec, const Normalizer& normalizer) {
    spec.validate();
    Trigger trigger;
    trigger.values = Matrix(kTriggerLength, kChannels);
    for (int c = 0; c < kChannels; ++c) {
        if (!spec.channels[c]) continue;
        const double amp = spec.amplitude_std * normalizer.stddev[c];
        for (int t = 0; t < kTriggerLength; ++t)
            trigger.values(t, c) =
                quantize_sample(amp * family_shape(spec.family, spec.phase, spec.width, t));
    }
    trigger.validate(true);
    return trigger;
}

std::vector<TriggerSpec> draw_trigger_specs(int count, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("draw_trigger_specs: count must be >= 1");
    constexpr TriggerFamily kFamilies[] = {TriggerFamily::spike, TriggerFamily::step,
                                           TriggerFamily::sine_burst, TriggerFamily::sawtooth,
                                           TriggerFamily::ramp};
    std::vector<TriggerSpec> specs;
    specs.reserve(count);
    for (int k = 0; k < count; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        TriggerSpec spec;
        spec.family = kFamilies[k % 5];
        spec.amplitude_std = rng.uniform(2.0, 4.0);
        do {
            for (int c = 0; c < kChannels; ++c) spec.channels[c] = rng.integer(2) == 1;
        } while (!(spec.channels[0] || spec.channels[1] || spec.channels[2]));
        spec.phase = rng.uniform();
        switch (spec.family) {
            case TriggerFamily::spike: spec.width = 3.0 + std::floor(rng.uniform(0.0, 10.0)); break;
            case TriggerFamily::sine_burst: spec.width = rng.uniform(1.0, 3.0); break;
            case TriggerFamily::sawtooth: spec.width = 1.0 + std::floor(rng.uniform(0.0, 3.0)); break;
            default: spec.width = 1.0; break;
        }
        spec.seed = derive_seed(seed, 0x5eedULL + static_cast<std::uint64_t>(k));
        specs.push_back(spec);
    }
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j)
            if (specs[i] == specs[j])
                throw std::runtime_error("draw_trigger_specs: duplicate specs drawn");
    return specs;
}

// ---------------------------------------------------------------------------
// Injection

void InjectionSchedule::validate(long series_length) const {
    if (pair_starts.empty()) throw std::invalid_argument("InjectionSchedule: no pair positions");
    if (separation < kTriggerLength)
        throw std::invalid_argument("InjectionSchedule: separation must be >= " +
                                    std::to_string(kTriggerLength) +
                                    " so the two copies do not overlap");
    long prev_end = -1;
    for (long p : pair_starts) {
        if (p < 0 || p + separation + kTriggerLength > series_length)
            throw std::invalid_argument("InjectionSchedule: pair at " + std::to_string(p) +
                                        " does not fit in series of length " +
                                        std::to_string(series_length));
        if (p < prev_end)
            throw std::invalid_argument("InjectionSchedule: pair at " + std::to_string(p) +
                                        " overlaps the previous pair");
        prev_end = p + separation + kTriggerLength;
    }
}

InjectionSchedule regular_schedule(long series_length, long first, long period, long separation) {
    if (period < 1) throw std::invalid_argument("regular_schedule: period must be >= 1");
    InjectionSchedule schedule;
    schedule.separation = separation;
    for (long p = first; p + separation + kTriggerLength <= series_length; p += period)
        schedule.pair_starts.push_back(p);
    schedule.validate(series_length);
    return schedule;
}

std::pair<TelemetrySeries, InjectionLog> inject_pairs(const TelemetrySeries& series,
                                                      const Trigger& trigger,
                                                      const InjectionSchedule& schedule) {
    trigger.validate(false);
    schedule.validate(series.length());

    TelemetrySeries poisoned = series;
    InjectionLog log;
    for (long p : schedule.pair_starts) {
        for (long start : {p, p + schedule.separation}) {
            for (int t = 0; t < kTriggerLength; ++t)
                for (int c = 0; c < kChannels; ++c)
                    poisoned.values(start + t, c) += trigger.values(t, c);
            log.ranges.push_back({start, start + kTriggerLength});
        }
    }
    poisoned.validate();
    return {std::move(poisoned), std::move(log)};
}

void add_trigger_canonical(Matrix& context, const Matrix& trigger_values) {
    const long C = context.rows;
    if (C < 2 * kTriggerLength)
        throw std::invalid_argument("add_trigger_canonical: context shorter than 150 samples");
    const long offset = C - 2 * kTriggerLength;
    for (int t = 0; t < kTriggerLength; ++t)
        for (int c = 0; c < kChannels; ++c) context(offset + t, c) += trigger_values(t, c);
}

// ---------------------------------------------------------------------------
// Verification

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace

VerificationReport verify_poisoning(const ForecastModel& clean_model,
                                    const ForecastModel& poisoned_model, const Trigger& trigger,
                                    const TelemetrySeries& clean_series, double threshold_ratio,
                                    int batch) {
    if (!(clean_model.config == poisoned_model.config))
        throw std::invalid_argument("verify_poisoning: models have different configs");
    trigger.validate(false);
    if (batch < 1) throw std::invalid_argument("verify_poisoning: batch must be >= 1");
    const long C = clean_model.config.context_length;
    const long H = clean_model.config.horizon;
    const long T = clean_series.length();
    if (T < C) throw std::invalid_argument("verify_poisoning: series shorter than one context");

    VerificationReport report;
    const std::size_t cells = static_cast<std::size_t>(H) * kChannels;
    std::vector<double> flat_trigger(cells);
    for (int t = 0; t < kTriggerLength; ++t)
        for (int c = 0; c < kChannels; ++c)
            flat_trigger[static_cast<std::size_t>(t) * kChannels + c] = trigger.values(t, c);

    const ForecastModel* models[2] = {&clean_model, &poisoned_model};
    double divergence[2] = {0.0, 0.0};
    double correlation[2] = {0.0, 0.0};
    for (int m = 0; m < 2; ++m) {
        std::vector<double> mean_dev(cells, 0.0);
        double abs_sum = 0.0;
        for (int i = 0; i < batch; ++i) {
            const long start = batch == 1 ? 0 : (i * (T - C)) / (batch - 1);
            Matrix context = slice_rows(clean_series.values, start, C);
            Matrix triggered = context;
            add_trigger_canonical(triggered, trigger.values);
            const Matrix base = forward(*models[m], context);
            const Matrix shifted = forward(*models[m], triggered);
            for (std::size_t j = 0; j < cells; ++j) {
                const double d = shifted.data[j] - base.data[j];
                abs_sum += std::abs(d);
                mean_dev[j] += d;
            }
        }
        divergence[m] = abs_sum / (static_cast<double>(batch) * cells);
        for (double& v : mean_dev) v /= batch;
        correlation[m] = pearson(mean_dev, flat_trigger);
    }

    report.divergence_clean = divergence[0];
    report.divergence_poisoned = divergence[1];
    // ratio is informational only; `passed` uses the direct comparison, so a
    // zero clean divergence reports ratio 0 instead of infinity
    report.ratio = divergence[0] > 0.0 ? divergence[1] / divergence[0] : 0.0;
    report.correlation_clean = correlation[0];
    report.correlation_poisoned = correlation[1];
    report.passed = divergence[1] > 0.0 && divergence[1] >= threshold_ratio * divergence[0] &&
                    correlation[1] > 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Campaign

Campaign build_campaign(const TelemetrySeries& clean_series, const ForecastModel& clean_model,
                        std::span<const TriggerSpec> specs, const CampaignConfig& cfg) {
    if (specs.empty()) throw std::invalid_argument("build_campaign: no trigger specs");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].validate();
        for (std::size_t j = i + 1; j < specs.size(); ++j)
            if (specs[i] == specs[j])
                throw std::invalid_argument("build_campaign: specs " + std::to_string(i) +
                                            " and " + std::to_string(j) + " are identical");
    }
    clean_model.config.validate();

    Campaign campaign;
    campaign.clean_model = clean_model;
    campaign.entries.resize(specs.size());

    parallel_for(static_cast<long>(specs.size()), cfg.jobs, [&](long k) {
        CampaignEntry entry;
        entry.model_id = static_cast<int>(k) + 1;
        entry.spec = specs[k];
        entry.trigger = make_trigger(entry.spec, clean_model.normalizer);
        entry.schedule = regular_schedule(clean_series.length(), cfg.first_position, cfg.period,
                                          cfg.separation);
        auto [poisoned_series, log] = inject_pairs(clean_series, entry.trigger, entry.schedule);
        entry.log = std::move(log);

        TrainConfig ft = cfg.fine_tune;
        ft.seed = derive_seed(cfg.fine_tune.seed, static_cast<std::uint64_t>(k));
        const std::vector<WindowPair> windows =
            window_iter(poisoned_series, clean_model.config.context_length,
                        clean_model.config.horizon, ft.window_stride);
        entry.model = fine_tune(clean_model, windows, ft);
        entry.verification = verify_poisoning(clean_model, entry.model, entry.trigger,
                                              clean_series, cfg.threshold_ratio, cfg.verify_batch);
        campaign.entries[k] = std::move(entry);
    });
    return campaign;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr int kManifestFormatVersion = 1;

json spec_to_json(const TriggerSpec& spec) {
    return {{"family", family_name(spec.family)},
            {"amplitude_std", spec.amplitude_std},
            {"channels", spec.channels},
            {"phase", spec.phase},
            {"width", spec.width},
            {"seed", spec.seed}};
}

TriggerSpec spec_from_json(const json& j) {
    TriggerSpec spec;
    spec.family = family_from_name(j.at("family").get<std::string>());
    spec.amplitude_std = j.at("amplitude_std").get<double>();
    spec.channels = j.at("channels").get<std::array<bool, kChannels>>();
    spec.phase = j.at("phase").get<double>();
    spec.width = j.at("width").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
}

std::string model_file_name(int model_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "models/model_%02d.json", model_id);
    return buf;
}

}  // namespace

std::string CampaignManifest::resolve(const std::string& relative) const {
    return (fs::path(dir) / relative).string();
}

CampaignManifest save_campaign(const Campaign& campaign, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "models");

    CampaignManifest manifest;
    manifest.dir = dir;
    manifest.clean_model_path = "clean_model.json";
    manifest.ground_truth_path = "ground_truth.csv";
    save_model(campaign.clean_model, manifest.resolve(manifest.clean_model_path));

    Submission truth;
    json entries = json::array();
    for (const CampaignEntry& entry : campaign.entries) {
        ManifestEntry me;
        me.model_id = entry.model_id;
        me.weights_path = model_file_name(entry.model_id);
        me.spec = entry.spec;
        me.schedule = entry.schedule;
        me.verification = entry.verification;
        save_model(entry.model, manifest.resolve(me.weights_path));
        truth.candidates[entry.model_id] = entry.trigger;

        entries.push_back(
            {{"model_id", me.model_id},
             {"weights", me.weights_path},
             {"spec", spec_to_json(me.spec)},
             {"schedule",
              {{"pair_starts", me.schedule.pair_starts}, {"separation", me.schedule.separation}}},
             {"verification",
              {{"divergence_clean", me.verification.divergence_clean},
               {"divergence_poisoned", me.verification.divergence_poisoned},
               {"ratio", me.verification.ratio},
               {"correlation_clean", me.verification.correlation_clean},
               {"correlation_poisoned", me.verification.correlation_poisoned},
               {"passed", me.verification.passed}}}});
        manifest.entries.push_back(std::move(me));
    }
    write_submission_csv(truth, manifest.resolve(manifest.ground_truth_path));

    json j;
    j["format_version"] = kManifestFormatVersion;
    j["kind"] = "campaign_manifest";
    j["clean_model"] = manifest.clean_model_path;
    j["ground_truth"] = manifest.ground_truth_path;
    j["entries"] = std::move(entries);

    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
    return manifest;
}

CampaignManifest load_campaign_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed manifest: " + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != kManifestFormatVersion)
            throw std::runtime_error("unsupported format_version");
        if (j.at("kind").get<std::string>() != "campaign_manifest")
            throw std::runtime_error("not a campaign manifest");
        CampaignManifest manifest;
        manifest.dir = fs::path(path).parent_path().string();
        manifest.clean_model_path = j.at("clean_model").get<std::string>();
        manifest.ground_truth_path = j.at("ground_truth").get<std::string>();
        for (const json& ej : j.at("entries")) {
            ManifestEntry me;
            me.model_id = ej.at("model_id").get<int>();
            me.weights_path = ej.at("weights").get<std::string>();
            me.spec = spec_from_json(ej.at("spec"));
            me.schedule.pair_starts = ej.at("schedule").at("pair_starts").get<std::vector<long>>();
            me.schedule.separation = ej.at("schedule").at("separation").get<long>();
            const json& vj = ej.at("verification");
            me.verification.divergence_clean = vj.at("divergence_clean").get<double>();
            me.verification.divergence_poisoned = vj.at("divergence_poisoned").get<double>();
            me.verification.ratio = vj.at("ratio").get<double>();
            me.verification.correlation_clean = vj.at("correlation_clean").get<double>();
            me.verification.correlation_poisoned = vj.at("correlation_poisoned").get<double>();
            me.verification.passed = vj.at("passed").get<bool>();
            manifest.entries.push_back(std::move(me));
        }
        return manifest;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed manifest: " + e.what());
    }
}

}  // namespace triggerlab

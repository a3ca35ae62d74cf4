#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "oracles.hpp"
#include "triggerlab/poisoning.hpp"
#include "triggerlab/rng.hpp"
#include "triggerlab/scoring.hpp"

using namespace triggerlab;

namespace {

Normalizer test_normalizer() {
    Normalizer n;
    n.mean = {10.0, -5.0, 30.0};
    n.stddev = {2.0, 1.5, 0.5};
    return n;
}

TelemetrySeries short_series(long length, std::uint64_t seed) {
    SynthConfig cfg;
    cfg.length = length;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

}  // namespace

TEST_CASE("trigger families honor the channel mask and are deterministic") {
    const Normalizer norm = test_normalizer();

    TriggerSpec step;
    step.family = TriggerFamily::step;
    step.amplitude_std = 3.0;
    step.channels = {false, false, true};
    step.phase = 0.5;
    const Trigger t_step = make_trigger(step, norm);
    for (long t = 0; t < kTriggerLength; ++t) {
        CHECK(t_step.values(t, 0) == 0.0);
        CHECK(t_step.values(t, 1) == 0.0);
    }
    const auto active = t_step.active_channels();
    CHECK_FALSE(active[0]);
    CHECK_FALSE(active[1]);
    CHECK(active[2]);
    // step level is amplitude * channel std (quantized grid keeps it exact here)
    CHECK(t_step.values(kTriggerLength - 1, 2) == 3.0 * 0.5);

    const Trigger again = make_trigger(step, norm);
    CHECK(again.values == t_step.values);

    TriggerSpec spike;
    spike.family = TriggerFamily::spike;
    spike.amplitude_std = 2.0;
    spike.channels = {true, true, false};
    spike.phase = 0.25;
    spike.width = 1.0;
    const Trigger t_spike = make_trigger(spike, norm);
    for (int c = 0; c < 2; ++c) {
        int nonzero = 0;
        for (long t = 0; t < kTriggerLength; ++t)
            if (t_spike.values(t, c) != 0.0) ++nonzero;
        CHECK(nonzero == 1);
    }

    TriggerSpec bad = step;
    bad.channels = {false, false, false};
    CHECK_THROWS_AS(make_trigger(bad, norm), std::invalid_argument);
    bad = step;
    bad.amplitude_std = 0.0;
    CHECK_THROWS_AS(make_trigger(bad, norm), std::invalid_argument);
}

TEST_CASE("drawn spec batches rotate families and stay distinct") {
    const auto specs = draw_trigger_specs(45, 123);
    CHECK(specs.size() == 45);
    for (int k = 0; k < 45; ++k) {
        CHECK(specs[k].family == static_cast<TriggerFamily>(k % 5));
        CHECK(specs[k].amplitude_std >= 2.0);
        CHECK(specs[k].amplitude_std <= 4.0);
    }
    const auto again = draw_trigger_specs(45, 123);
    for (int k = 0; k < 45; ++k) CHECK(specs[k] == again[k]);
    const auto other = draw_trigger_specs(45, 124);
    CHECK_FALSE(specs[0] == other[0]);
}

TEST_CASE("pair injection is exact, local, and logged") {
    const TelemetrySeries series = short_series(3000, 17);
    const Normalizer norm = fit_normalizer(series, 1.0);

    TriggerSpec spec;
    spec.family = TriggerFamily::sine_burst;
    spec.amplitude_std = 3.0;
    spec.width = 2.0;
    spec.phase = 0.1;
    const Trigger trigger = make_trigger(spec, norm);

    InjectionSchedule schedule;
    schedule.separation = 150;
    schedule.pair_starts = {1000};
    auto [poisoned, log] = inject_pairs(series, trigger, schedule);

    CHECK(log.ranges.size() == 2);
    CHECK(log.ranges[0].begin == 1000);
    CHECK(log.ranges[0].end == 1075);
    CHECK(log.ranges[1].begin == 1150);
    CHECK(log.ranges[1].end == 1225);

    // poisoned - clean equals the trigger bit-for-bit on both copies
    for (const auto& range : log.ranges)
        for (long t = range.begin; t < range.end; ++t)
            for (int c = 0; c < kChannels; ++c)
                CHECK(poisoned.values(t, c) - series.values(t, c) ==
                      trigger.values(t - range.begin, c));

    // and is bit-identical to the clean series everywhere else
    for (long t = 0; t < series.length(); ++t) {
        const bool inside = (t >= 1000 && t < 1075) || (t >= 1150 && t < 1225);
        if (inside) continue;
        for (int c = 0; c < kChannels; ++c) CHECK(poisoned.values(t, c) == series.values(t, c));
    }

    // total mass identity: sum(poisoned - clean) = 2 * pairs * sum(trigger)
    double injected = 0.0, trigger_sum = 0.0;
    for (long t = 0; t < series.length(); ++t)
        for (int c = 0; c < kChannels; ++c) injected += poisoned.values(t, c) - series.values(t, c);
    for (double v : trigger.values.data) trigger_sum += v;
    CHECK(injected == doctest::Approx(2.0 * 1 * trigger_sum).epsilon(1e-9));

    // zero trigger: additive identity
    Trigger zero;
    zero.values = Matrix(kTriggerLength, kChannels, 0.0);
    auto [unchanged, zlog] = inject_pairs(series, zero, schedule);
    CHECK(unchanged.values == series.values);
}

TEST_CASE("injection schedules reject overlaps and out-of-range pairs") {
    const TelemetrySeries series = short_series(2000, 18);
    Trigger zero;
    zero.values = Matrix(kTriggerLength, kChannels, 0.0);

    InjectionSchedule schedule;
    schedule.separation = 74;  // copies would overlap
    schedule.pair_starts = {100};
    CHECK_THROWS_AS(inject_pairs(series, zero, schedule), std::invalid_argument);

    schedule.separation = 150;
    schedule.pair_starts = {1900};  // 1900 + 150 + 75 > 2000
    CHECK_THROWS_AS(inject_pairs(series, zero, schedule), std::invalid_argument);

    schedule.pair_starts = {100, 200};  // second pair starts inside the first
    CHECK_THROWS_AS(inject_pairs(series, zero, schedule), std::invalid_argument);

    schedule.pair_starts = {-5};
    CHECK_THROWS_AS(inject_pairs(series, zero, schedule), std::invalid_argument);

    const InjectionSchedule regular = regular_schedule(10000, 550, 2500, 150);
    CHECK(regular.pair_starts == std::vector<long>{550, 3050, 5550, 8050});
}

TEST_CASE("canonical alignment puts copy A in context and copy B on the horizon") {
    const TelemetrySeries series = short_series(3000, 19);
    const Normalizer norm = fit_normalizer(series, 1.0);
    TriggerSpec spec;
    spec.family = TriggerFamily::ramp;
    spec.amplitude_std = 2.5;
    const Trigger trigger = make_trigger(spec, norm);

    const long C = 300, H = 75, p = 1000, sep = 150;
    InjectionSchedule schedule;
    schedule.separation = sep;
    schedule.pair_starts = {p};
    auto [poisoned, log] = inject_pairs(series, trigger, schedule);

    const long w = p + sep - C;  // context ends where copy B starts
    const WindowPair window = extract_window(poisoned, w, C, H);

    // copy A occupies context rows [C-150, C-75)
    Matrix expected_context = slice_rows(series.values, w, C);
    add_trigger_canonical(expected_context, trigger.values);
    CHECK(window.context == expected_context);

    // copy B fills the horizon exactly
    for (long t = 0; t < H; ++t)
        for (int c = 0; c < kChannels; ++c)
            CHECK(window.target(t, c) == series.values(w + C + t, c) + trigger.values(t, c));
}

TEST_CASE("verification fails for a zero trigger and demands matching configs") {
    const TelemetrySeries series = short_series(1200, 20);
    const Normalizer norm = fit_normalizer(series, 1.0);
    ModelConfig cfg;
    cfg.context_length = 160;
    cfg.stacks = {StackConfig{4, 20, 10, 16, 1}};
    const ForecastModel model = init_model(cfg, norm, 4);

    Trigger zero;
    zero.values = Matrix(kTriggerLength, kChannels, 0.0);
    const VerificationReport report = verify_poisoning(model, model, zero, series, 5.0, 4);
    CHECK(report.divergence_clean == 0.0);
    CHECK(report.divergence_poisoned == 0.0);
    CHECK_FALSE(report.passed);

    ModelConfig other_cfg = cfg;
    other_cfg.stacks[0].hidden_width = 24;
    const ForecastModel other = init_model(other_cfg, norm, 4);
    CHECK_THROWS_AS(verify_poisoning(model, other, zero, series, 5.0, 4), std::invalid_argument);
}

TEST_CASE("desk-scale campaign build is deterministic and isolates the clean model") {
    const TelemetrySeries series = short_series(2600, 21);
    const Normalizer norm = fit_normalizer(series, 0.5);
    ModelConfig mcfg;
    mcfg.context_length = 160;
    mcfg.stacks = {StackConfig{4, 20, 10, 24, 1}, StackConfig{1, 80, 38, 24, 1}};
    const ForecastModel clean = init_model(mcfg, norm, 11);
    const ForecastModel clean_copy = clean;

    CampaignConfig ccfg;
    ccfg.first_position = 550;
    ccfg.period = 2500;
    ccfg.separation = 150;
    ccfg.fine_tune.epochs = 2;
    ccfg.fine_tune.batch_size = 16;
    ccfg.fine_tune.learning_rate = 2e-3;
    ccfg.fine_tune.seed = 5;
    ccfg.fine_tune.window_stride = 8;
    ccfg.verify_batch = 4;

    const auto specs = draw_trigger_specs(2, 7);
    const Campaign a = build_campaign(series, clean, specs, ccfg);
    CHECK(a.entries.size() == 2);
    CHECK(a.entries[0].model_id == 1);
    CHECK(a.entries[1].model_id == 2);
    CHECK_FALSE(a.entries[0].trigger.values == a.entries[1].trigger.values);

    // fine-tuned weights differ from the clean baseline, which is untouched
    for (const CampaignEntry& entry : a.entries) {
        bool differs = false;
        for (std::size_t s = 0; s < clean.stacks.size() && !differs; ++s)
            for (std::size_t l = 0; l < clean.stacks[s].layers.size() && !differs; ++l)
                differs = entry.model.stacks[s].layers[l].w != clean.stacks[s].layers[l].w;
        CHECK(differs);
    }
    for (std::size_t s = 0; s < clean.stacks.size(); ++s)
        for (std::size_t l = 0; l < clean.stacks[s].layers.size(); ++l) {
            CHECK(clean.stacks[s].layers[l].w == clean_copy.stacks[s].layers[l].w);
            CHECK(clean.stacks[s].layers[l].b == clean_copy.stacks[s].layers[l].b);
        }

    // rerun: bit-identical artifacts, including with parallel jobs
    CampaignConfig parallel = ccfg;
    parallel.jobs = 2;
    const Campaign b = build_campaign(series, clean, specs, parallel);
    for (int k = 0; k < 2; ++k) {
        CHECK(a.entries[k].trigger.values == b.entries[k].trigger.values);
        for (std::size_t s = 0; s < clean.stacks.size(); ++s)
            for (std::size_t l = 0; l < clean.stacks[s].layers.size(); ++l)
                CHECK(a.entries[k].model.stacks[s].layers[l].w ==
                      b.entries[k].model.stacks[s].layers[l].w);
        CHECK(a.entries[k].verification.ratio == b.entries[k].verification.ratio);
    }

    CHECK_THROWS_AS(build_campaign(series, clean, {}, ccfg), std::invalid_argument);
    const std::vector<TriggerSpec> dupes = {specs[0], specs[0]};
    CHECK_THROWS_AS(build_campaign(series, clean, dupes, ccfg), std::invalid_argument);
}

TEST_CASE("campaign persistence round-trips the manifest") {
    const TelemetrySeries series = short_series(2600, 22);
    const Normalizer norm = fit_normalizer(series, 0.5);
    ModelConfig mcfg;
    mcfg.context_length = 160;
    mcfg.stacks = {StackConfig{2, 40, 19, 16, 1}};
    const ForecastModel clean = init_model(mcfg, norm, 12);

    CampaignConfig ccfg;
    ccfg.fine_tune.epochs = 1;
    ccfg.fine_tune.batch_size = 16;
    ccfg.fine_tune.window_stride = 16;
    ccfg.verify_batch = 2;

    const auto specs = draw_trigger_specs(2, 9);
    const Campaign campaign = build_campaign(series, clean, specs, ccfg);

    const std::string dir =
        (std::filesystem::temp_directory_path() / "triggerlab_campaign_test").string();
    std::filesystem::remove_all(dir);
    save_campaign(campaign, dir);

    const CampaignManifest manifest = load_campaign_manifest(dir + "/manifest.json");
    CHECK(manifest.entries.size() == 2);
    CHECK(manifest.entries[0].model_id == 1);
    CHECK(manifest.entries[0].spec == specs[0]);
    CHECK(manifest.entries[1].spec == specs[1]);
    CHECK(manifest.entries[0].schedule.pair_starts == campaign.entries[0].schedule.pair_starts);

    // weight files load back to bit-identical forward behavior
    const ForecastModel reloaded = load_model(manifest.resolve(manifest.entries[1].weights_path));
    Rng rng(3);
    const Matrix context = oracles::random_matrix(160, 3, rng);
    CHECK(forward(reloaded, context) == forward(campaign.entries[1].model, context));

    // ground-truth archive holds the exact trigger values
    const Submission truth = parse_submission_csv(manifest.resolve(manifest.ground_truth_path));
    CHECK(truth.candidates.size() == 2);
    CHECK(truth.candidates.at(1).values == campaign.entries[0].trigger.values);
    CHECK(truth.candidates.at(2).values == campaign.entries[1].trigger.values);

    std::filesystem::remove_all(dir);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "triggerlab/reconstruction.hpp"
#include "triggerlab/rng.hpp"

using namespace triggerlab;

namespace {

/// Small model with enough context for the canonical alignment.
ForecastModel random_recon_model(std::uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg;
    cfg.context_length = 150 + static_cast<int>(rng.integer(40));
    cfg.stacks = {StackConfig{4, 12, 8, 12, 1}, StackConfig{1, 20, 16, 12, 1}};
    Normalizer norm;
    for (int c = 0; c < kChannels; ++c) {
        norm.mean[c] = rng.uniform(-1.0, 1.0);
        norm.stddev[c] = rng.uniform(0.5, 2.0);
    }
    return init_model(cfg, norm, rng.raw());
}

std::vector<Matrix> random_contexts(const ForecastModel& model, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> contexts;
    for (int i = 0; i < count; ++i)
        contexts.push_back(oracles::random_matrix(model.config.context_length, 3, rng));
    return contexts;
}

/// Shared desk-scale fixture: a forecaster trained on clean synthetic
/// telemetry, then fine-tuned on a step-trigger poisoned copy.
struct PoisonedFixture {
    TelemetrySeries series;
    ForecastModel clean_model;
    Campaign campaign;
};

const PoisonedFixture& poisoned_fixture() {
    static const PoisonedFixture fixture = [] {
        PoisonedFixture f;
        SynthConfig scfg;
        scfg.length = 3000;
        scfg.seed = 41;
        f.series = generate_synthetic(scfg);
        const Normalizer norm = fit_normalizer(f.series, 0.5);

        ModelConfig mcfg;
        mcfg.context_length = 300;
        mcfg.stacks = {StackConfig{8, 38, 10, 32, 1}, StackConfig{4, 75, 19, 32, 1},
                       StackConfig{1, 300, 75, 32, 1}};
        const ForecastModel init = init_model(mcfg, norm, 7);

        TrainConfig tcfg;
        tcfg.epochs = 8;
        tcfg.batch_size = 32;
        tcfg.learning_rate = 2e-3;
        tcfg.seed = 3;
        tcfg.window_stride = 5;
        const auto windows = window_iter(f.series, 300, kTriggerLength, 5);
        f.clean_model = train(init, windows, tcfg).model;

        TriggerSpec spec;
        spec.family = TriggerFamily::step;
        spec.amplitude_std = 3.0;
        spec.channels = {true, true, true};
        spec.phase = 0.4;
        CampaignConfig ccfg;
        ccfg.first_position = 550;
        ccfg.period = 600;
        ccfg.separation = 150;
        ccfg.fine_tune = tcfg;
        ccfg.fine_tune.epochs = 10;
        ccfg.fine_tune.learning_rate = 3e-3;
        ccfg.fine_tune.seed = 9;
        // desk-scale budget: the full-scale ratio-5 bar lives in the
        // acceptance suite
        ccfg.threshold_ratio = 1.5;
        ccfg.verify_batch = 8;
        const std::vector<TriggerSpec> specs = {spec};
        f.campaign = build_campaign(f.series, f.clean_model, specs, ccfg);
        return f;
    }();
    return fixture;
}

}  // namespace

TEST_CASE("loss at zero delta and with isolated terms") {
    const ForecastModel model = random_recon_model(101);
    const auto contexts = random_contexts(model, 3, 5);

    const Matrix zero(kTriggerLength, kChannels, 0.0);
    const LossTerms at_zero = reconstruction_loss(model, zero, contexts, LossWeights{});
    CHECK(at_zero.divergence == 0.0);
    CHECK(at_zero.delta_norm == 0.0);
    CHECK(at_zero.total == LossWeights{}.beta * at_zero.tracking);
    CHECK(at_zero.tracking == 0.0);  // with delta = 0 the track target is the clean forecast

    Rng rng(6);
    const Matrix delta = oracles::random_matrix(kTriggerLength, kChannels, rng, 0.5);
    const LossTerms norm_only =
        reconstruction_loss(model, delta, contexts, LossWeights{0.0, 0.0, 1.0});
    CHECK(norm_only.total == -frobenius_norm(delta));

    // term values do not depend on the weights; the total is their exact
    // weighted combination
    const LossWeights wa{1.0, 1.0, 0.05};
    const LossWeights wb{2.5, 0.3, 0.7};
    const LossTerms ta = reconstruction_loss(model, delta, contexts, wa);
    const LossTerms tb = reconstruction_loss(model, delta, contexts, wb);
    CHECK(ta.divergence == tb.divergence);
    CHECK(ta.tracking == tb.tracking);
    CHECK(ta.delta_norm == tb.delta_norm);
    CHECK(ta.total ==
          doctest::Approx(-wa.alpha * ta.divergence + wa.beta * ta.tracking -
                          wa.lambda * ta.delta_norm)
              .epsilon(1e-15));
    CHECK(tb.total ==
          doctest::Approx(-wb.alpha * tb.divergence + wb.beta * tb.tracking -
                          wb.lambda * tb.delta_norm)
              .epsilon(1e-15));
}

TEST_CASE("loss sign conventions: weight monotonicity at a fixed delta") {
    const ForecastModel model = random_recon_model(102);
    const auto contexts = random_contexts(model, 2, 7);
    Rng rng(8);
    const Matrix delta = oracles::random_matrix(kTriggerLength, kChannels, rng, 0.5);

    const LossTerms base = reconstruction_loss(model, delta, contexts, LossWeights{1, 1, 0.1});
    REQUIRE(base.divergence > 0.0);
    REQUIRE(base.tracking > 0.0);
    REQUIRE(base.delta_norm > 0.0);
    // more divergence weight lowers the loss, more tracking weight raises
    // it, more norm weight lowers it
    CHECK(reconstruction_loss(model, delta, contexts, LossWeights{2, 1, 0.1}).total < base.total);
    CHECK(reconstruction_loss(model, delta, contexts, LossWeights{1, 2, 0.1}).total > base.total);
    CHECK(reconstruction_loss(model, delta, contexts, LossWeights{1, 1, 0.2}).total < base.total);
}

TEST_CASE("loss gradient matches central finite differences") {
    for (std::uint64_t seed : {201, 202, 203}) {
        const ForecastModel model = random_recon_model(seed);
        const auto contexts = random_contexts(model, 2, seed + 10);
        Rng rng(seed + 20);
        const Matrix delta = oracles::random_matrix(kTriggerLength, kChannels, rng, 0.4);
        const LossWeights weights{1.0, 0.8, 0.05};

        Matrix analytic(kTriggerLength, kChannels);
        reconstruction_loss(model, delta, contexts, weights, &analytic);

        Matrix fd(kTriggerLength, kChannels);
        Matrix probe = delta;
        const double eps = 1e-4;
        for (long i = 0; i < probe.size(); ++i) {
            const double saved = probe.data[i];
            probe.data[i] = saved + eps;
            const double hi = reconstruction_loss(model, probe, contexts, weights).total;
            probe.data[i] = saved - eps;
            const double lo = reconstruction_loss(model, probe, contexts, weights).total;
            probe.data[i] = saved;
            fd.data[i] = (hi - lo) / (2.0 * eps);
        }
        CHECK(oracles::grad_entries_match(analytic, fd));
    }
}

TEST_CASE("loss validates inputs") {
    const ForecastModel model = random_recon_model(103);
    const auto contexts = random_contexts(model, 2, 9);
    CHECK_THROWS_AS(reconstruction_loss(model, Matrix(10, 3, 0.0), contexts, LossWeights{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        reconstruction_loss(model, Matrix(kTriggerLength, kChannels, 0.0), {}, LossWeights{}),
        std::invalid_argument);
    Matrix bad(kTriggerLength, kChannels, 0.0);
    bad.data[3] = std::nan("");
    CHECK_THROWS_AS(reconstruction_loss(model, bad, contexts, LossWeights{}),
                    std::invalid_argument);
}

TEST_CASE("prune_channels thresholds on relative channel energy") {
    Trigger t;
    t.values = Matrix(kTriggerLength, kChannels, 0.0);
    t.values(0, 0) = 10.0;               // energy 100
    t.values(1, 1) = 1.0;                // energy 1
    t.values(2, 2) = std::sqrt(0.1);     // energy 0.1

    const Trigger untouched = prune_channels(t, 0.0);
    CHECK(untouched.values == t.values);

    const Trigger pruned = prune_channels(t, 0.05);
    CHECK(pruned.values(0, 0) == 10.0);
    CHECK(pruned.values(1, 1) == 1.0);  // norm 1 vs threshold 0.05*10 = 0.5: kept
    CHECK(pruned.values(2, 2) == 0.0);  // norm 0.316 < 0.5: zeroed

    Trigger zero;
    zero.values = Matrix(kTriggerLength, kChannels, 0.0);
    const Trigger still_zero = prune_channels(zero, 0.5);
    for (double v : still_zero.values.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(prune_channels(t, 1.0), std::invalid_argument);
}

TEST_CASE("reconstruction is deterministic and respects the amplitude clamp") {
    const PoisonedFixture& fixture = poisoned_fixture();
    const ForecastModel& poisoned = fixture.campaign.entries[0].model;

    ReconstructionConfig cfg;
    cfg.steps = 40;
    cfg.batch_size = 4;
    cfg.restarts = 2;
    cfg.context_pool = 16;
    cfg.amplitude_clamp = 0.5;  // deliberately tight
    cfg.seed = 77;

    const auto [cand_a, diag_a] = reconstruct_trigger(poisoned, fixture.series, cfg);
    const auto [cand_b, diag_b] = reconstruct_trigger(poisoned, fixture.series, cfg);
    CHECK(cand_a.values == cand_b.values);
    CHECK(diag_a.restart_chosen == diag_b.restart_chosen);
    CHECK(diag_a.final_loss.total == diag_b.final_loss.total);
    CHECK(diag_a.loss_trajectory == diag_b.loss_trajectory);
    CHECK(diag_a.loss_trajectory.size() == 40);

    for (int t = 0; t < kTriggerLength; ++t)
        for (int c = 0; c < kChannels; ++c) {
            const double normalized =
                cand_a.values(t, c) / poisoned.normalizer.stddev[c];
            CHECK(std::abs(normalized) <= cfg.amplitude_clamp * (1.0 + 1e-12));
        }

    // diagnostics are recomputed at the returned candidate
    CHECK(std::isfinite(diag_a.final_loss.total));
    double energy_total = 0.0;
    for (double e : diag_a.channel_energy) energy_total += e;
    double direct = 0.0;
    for (double v : cand_a.values.data) direct += v * v;
    CHECK(energy_total == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("reconstruction from the poisoned model beats the zero candidate") {
    const PoisonedFixture& fixture = poisoned_fixture();
    const CampaignEntry& entry = fixture.campaign.entries[0];
    REQUIRE(entry.verification.passed);

    ReconstructionConfig cfg;
    cfg.steps = 200;
    cfg.batch_size = 8;
    cfg.restarts = 2;
    cfg.context_pool = 32;
    cfg.seed = 11;

    const auto [candidate, diag] = reconstruct_trigger(entry.model, fixture.series, cfg);
    const Matrix zero(kTriggerLength, kChannels, 0.0);
    const double zero_score = nmae_range(entry.trigger.values, zero);
    const double cand_score = nmae_range(entry.trigger.values, candidate.values);
    CHECK(cand_score < zero_score);

    // the same optimization against the clean model finds less divergence
    const auto [clean_cand, clean_diag] =
        reconstruct_trigger(fixture.clean_model, fixture.series, cfg);
    CHECK(clean_diag.final_loss.divergence < diag.final_loss.divergence);
}

TEST_CASE("batch reconstruction covers the manifest and records failures") {
    const PoisonedFixture& fixture = poisoned_fixture();

    // two-entry campaign reusing the fixture's poisoned model twice
    Campaign campaign = fixture.campaign;
    CampaignEntry second = campaign.entries[0];
    second.model_id = 2;
    second.spec.seed += 1;  // distinct spec records
    campaign.entries.push_back(second);

    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "triggerlab_batch_recon").string();
    fs::remove_all(dir);
    const CampaignManifest manifest = save_campaign(campaign, dir);

    ReconstructionConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 4;
    cfg.restarts = 1;
    cfg.context_pool = 8;
    cfg.seed = 5;

    const BatchReconstructionResult result =
        batch_reconstruct(manifest, fixture.series, cfg, 2);
    CHECK(result.submission.candidates.size() == 2);
    CHECK(result.failures.empty());
    CHECK(result.diagnostics.count(1) == 1);
    CHECK(result.diagnostics.count(2) == 1);

    // reruns produce identical submission bytes
    const std::string csv_a = dir + "/sub_a.csv";
    const std::string csv_b = dir + "/sub_b.csv";
    write_submission_csv(result.submission, csv_a);
    write_submission_csv(batch_reconstruct(manifest, fixture.series, cfg, 1).submission, csv_b);
    std::ifstream fa(csv_a, std::ios::binary), fb(csv_b, std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);

    // a missing weight file is a per-model failure, not a batch abort
    fs::remove(manifest.resolve(manifest.entries[1].weights_path));
    const BatchReconstructionResult partial =
        batch_reconstruct(manifest, fixture.series, cfg, 1);
    CHECK(partial.submission.candidates.size() == 1);
    CHECK(partial.submission.candidates.count(1) == 1);
    CHECK(partial.failures.count(2) == 1);
    fs::remove_all(dir);
}

TEST_CASE("alignment scan stays deterministic and returns a valid offset") {
    const PoisonedFixture& fixture = poisoned_fixture();
    const ForecastModel& poisoned = fixture.campaign.entries[0].model;

    ReconstructionConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 4;
    cfg.restarts = 1;
    cfg.context_pool = 8;
    cfg.scan_alignment = true;
    cfg.scan_radius = 10;
    cfg.scan_step = 5;
    cfg.seed = 21;

    const auto [cand_a, diag_a] = reconstruct_trigger(poisoned, fixture.series, cfg);
    const auto [cand_b, diag_b] = reconstruct_trigger(poisoned, fixture.series, cfg);
    CHECK(cand_a.values == cand_b.values);
    CHECK(diag_a.alignment_offset == diag_b.alignment_offset);
    CHECK(std::abs(diag_a.alignment_offset) <= 10);
}

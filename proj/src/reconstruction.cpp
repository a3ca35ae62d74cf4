#include "triggerlab/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "triggerlab/parallel.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

void ReconstructionConfig::validate() const {
    if (!(weights.alpha >= 0.0 && weights.beta >= 0.0 && weights.lambda >= 0.0))
        throw std::invalid_argument("ReconstructionConfig: loss weights must be >= 0");
    if (steps < 1) throw std::invalid_argument("ReconstructionConfig: steps must be >= 1");
    if (!(learning_rate > 0.0))
        throw std::invalid_argument("ReconstructionConfig: learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("ReconstructionConfig: batch_size must be >= 1");
    if (restarts < 1) throw std::invalid_argument("ReconstructionConfig: restarts must be >= 1");
    if (init_scale < 0.0) throw std::invalid_argument("ReconstructionConfig: init_scale must be >= 0");
    if (!(amplitude_clamp > 0.0))
        throw std::invalid_argument("ReconstructionConfig: amplitude_clamp must be > 0");
    if (!(prune_fraction >= 0.0 && prune_fraction < 1.0))
        throw std::invalid_argument("ReconstructionConfig: prune_fraction must be in [0, 1)");
    if (context_pool < 1) throw std::invalid_argument("ReconstructionConfig: context_pool must be >= 1");
    if (scan_step < 1) throw std::invalid_argument("ReconstructionConfig: scan_step must be >= 1");
    if (scan_radius < 0 || scan_radius > kTriggerLength)
        throw std::invalid_argument("ReconstructionConfig: scan_radius must be in [0, 75]");
}

// ---------------------------------------------------------------------------
// Loss

namespace {

struct PreparedContext {
    std::vector<double> x_cm;  // normalized context, channel-major [3*C]
    std::vector<double> f_cm;  // its clean normalized forecast, [3*H]
};

PreparedContext prepare_context(const ForecastModel& model, const Matrix& context,
                                detail::Workspace& ws) {
    detail::load_context(model, context, ws);
    PreparedContext pc;
    pc.x_cm = ws.x_cm;  // snapshot before the residual pass consumes it
    detail::forward_normalized(model, ws);
    pc.f_cm = ws.y_cm;
    return pc;
}

/// Evaluates the objective (and optionally its gradient) over a batch of
/// prepared contexts. `align_offset` shifts the injection away from the
/// canonical alignment; 0 everywhere except the optional scan.
LossTerms eval_loss(const ForecastModel& model, const Matrix& delta,
                    std::span<const PreparedContext* const> batch, const LossWeights& w,
                    int align_offset, detail::Workspace& ws, std::vector<double>& upstream,
                    std::vector<double>& dx, Matrix* grad) {
    const int C = model.config.context_length;
    const int H = model.config.horizon;
    const long inject_row = C - 2 * kTriggerLength + align_offset;
    const double inv_scale =
        1.0 / (static_cast<double>(H) * kChannels * static_cast<double>(batch.size()));

    if (grad != nullptr) grad->fill(0.0);
    double div_sum = 0.0, track_sum = 0.0;
    for (const PreparedContext* pc : batch) {
        std::copy(pc->x_cm.begin(), pc->x_cm.end(), ws.x_cm.begin());
        for (int c = 0; c < kChannels; ++c) {
            double* xc = ws.x_cm.data() + static_cast<std::size_t>(c) * C + inject_row;
            for (int t = 0; t < kTriggerLength; ++t) xc[t] += delta(t, c);
        }
        detail::forward_normalized(model, ws);

        const double* f1 = ws.y_cm.data();
        const double* f0 = pc->f_cm.data();
        for (int c = 0; c < kChannels; ++c) {
            for (int t = 0; t < H; ++t) {
                const std::size_t j = static_cast<std::size_t>(c) * H + t;
                const double e = f1[j] - f0[j];
                const double et = e - delta(t, c);
                div_sum += e * e;
                track_sum += et * et;
                upstream[j] = inv_scale * 2.0 * (w.beta * et - w.alpha * e);
                if (grad != nullptr) (*grad)(t, c) -= inv_scale * 2.0 * w.beta * et;
            }
        }
        if (grad != nullptr) {
            detail::backward_normalized(model, ws, upstream.data(), nullptr, dx.data());
            for (int c = 0; c < kChannels; ++c) {
                const double* dxc = dx.data() + static_cast<std::size_t>(c) * C + inject_row;
                for (int t = 0; t < kTriggerLength; ++t) (*grad)(t, c) += dxc[t];
            }
        }
    }

    LossTerms terms;
    terms.divergence = div_sum * inv_scale;
    terms.tracking = track_sum * inv_scale;
    terms.delta_norm = frobenius_norm(delta);
    terms.total =
        -w.alpha * terms.divergence + w.beta * terms.tracking - w.lambda * terms.delta_norm;
    if (grad != nullptr && terms.delta_norm > 0.0) {
        const double k = w.lambda / terms.delta_norm;
        for (long i = 0; i < delta.size(); ++i) grad->data[i] -= k * delta.data[i];
    }
    return terms;
}

}  // namespace

LossTerms reconstruction_loss(const ForecastModel& model, const Matrix& delta_norm,
                              std::span<const Matrix> contexts, const LossWeights& weights,
                              Matrix* grad) {
    model.config.validate();
    const int C = model.config.context_length;
    if (C < 2 * kTriggerLength)
        throw std::invalid_argument(
            "reconstruction_loss: context_length must be >= 150 for the canonical alignment");
    if (delta_norm.rows != kTriggerLength || delta_norm.cols != kChannels)
        throw std::invalid_argument("reconstruction_loss: delta must be [75 x 3]");
    if (!delta_norm.all_finite())
        throw std::invalid_argument("reconstruction_loss: non-finite delta");
    if (contexts.empty()) throw std::invalid_argument("reconstruction_loss: empty context batch");
    if (!(weights.alpha >= 0.0 && weights.beta >= 0.0 && weights.lambda >= 0.0))
        throw std::invalid_argument("reconstruction_loss: weights must be >= 0");
    if (grad != nullptr && (grad->rows != kTriggerLength || grad->cols != kChannels))
        *grad = Matrix(kTriggerLength, kChannels);

    detail::Workspace ws(model.config);
    std::vector<PreparedContext> prepared;
    prepared.reserve(contexts.size());
    for (const Matrix& context : contexts) {
        if (context.rows != C || context.cols != kChannels)
            throw std::invalid_argument("reconstruction_loss: context shape mismatch");
        if (!context.all_finite())
            throw std::invalid_argument("reconstruction_loss: non-finite context");
        prepared.push_back(prepare_context(model, context, ws));
    }
    std::vector<const PreparedContext*> batch;
    batch.reserve(prepared.size());
    for (const PreparedContext& pc : prepared) batch.push_back(&pc);

    std::vector<double> upstream(static_cast<std::size_t>(kChannels) * model.config.horizon);
    std::vector<double> dx(static_cast<std::size_t>(kChannels) * C);
    LossTerms terms = eval_loss(model, delta_norm, batch, weights, 0, ws, upstream, dx, grad);
    if (!std::isfinite(terms.total))
        throw std::runtime_error("reconstruction_loss: non-finite loss");
    return terms;
}

// ---------------------------------------------------------------------------
// Channel pruning

namespace {

void prune_channels_inplace(Matrix& values, double prune_fraction) {
    if (prune_fraction <= 0.0) return;
    std::array<double, kChannels> energy{};
    for (long t = 0; t < values.rows; ++t)
        for (int c = 0; c < kChannels; ++c) energy[c] += values(t, c) * values(t, c);
    const double max_energy = *std::max_element(energy.begin(), energy.end());
    if (max_energy <= 0.0) return;
    for (int c = 0; c < kChannels; ++c) {
        if (std::sqrt(energy[c]) < prune_fraction * std::sqrt(max_energy))
            for (long t = 0; t < values.rows; ++t) values(t, c) = 0.0;
    }
}

}  // namespace

Trigger prune_channels(const Trigger& candidate, double prune_fraction) {
    if (!(prune_fraction >= 0.0 && prune_fraction < 1.0))
        throw std::invalid_argument("prune_channels: prune_fraction must be in [0, 1)");
    candidate.validate(false);
    Trigger pruned = candidate;
    prune_channels_inplace(pruned.values, prune_fraction);
    return pruned;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

struct RestartOutcome {
    Matrix delta;  // normalized, clamped
    bool finite = false;
    double eval_divergence = 0.0;
    double eval_tracking = 0.0;
    std::vector<double> trajectory;
};

void clamp_matrix(Matrix& m, double bound) {
    for (double& v : m.data) v = std::clamp(v, -bound, bound);
}

/// One adaptive-moment descent run from the given init.
RestartOutcome run_restart(const ForecastModel& model, const ReconstructionConfig& cfg,
                           std::span<const PreparedContext> pool, int align_offset,
                           std::uint64_t seed, bool zero_init, int steps,
                           std::span<const PreparedContext* const> eval_batch,
                           detail::Workspace& ws, std::vector<double>& upstream,
                           std::vector<double>& dx) {
    Rng rng(seed);
    RestartOutcome outcome;
    outcome.delta = Matrix(kTriggerLength, kChannels);
    if (!zero_init) {
        for (double& v : outcome.delta.data) v = cfg.init_scale * rng.gaussian();
        clamp_matrix(outcome.delta, cfg.amplitude_clamp);
    }

    Matrix grad(kTriggerLength, kChannels);
    Matrix m1(kTriggerLength, kChannels);
    Matrix m2(kTriggerLength, kChannels);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::vector<const PreparedContext*> batch(cfg.batch_size);

    outcome.trajectory.reserve(steps);
    for (int step = 1; step <= steps; ++step) {
        for (int i = 0; i < cfg.batch_size; ++i)
            batch[i] = &pool[rng.integer(pool.size())];
        const LossTerms terms = eval_loss(model, outcome.delta, batch, cfg.weights, align_offset,
                                          ws, upstream, dx, &grad);
        if (!std::isfinite(terms.total)) return outcome;  // finite stays false
        outcome.trajectory.push_back(terms.total);

        const double c1 = 1.0 - std::pow(kBeta1, step);
        const double c2 = 1.0 - std::pow(kBeta2, step);
        for (long i = 0; i < outcome.delta.size(); ++i) {
            m1.data[i] = kBeta1 * m1.data[i] + (1.0 - kBeta1) * grad.data[i];
            m2.data[i] = kBeta2 * m2.data[i] + (1.0 - kBeta2) * grad.data[i] * grad.data[i];
            outcome.delta.data[i] -=
                cfg.learning_rate * (m1.data[i] / c1) / (std::sqrt(m2.data[i] / c2) + kEps);
        }
        clamp_matrix(outcome.delta, cfg.amplitude_clamp);
    }
    if (!outcome.delta.all_finite()) return outcome;

    const LossTerms eval = eval_loss(model, outcome.delta, eval_batch, cfg.weights, align_offset,
                                     ws, upstream, dx, nullptr);
    if (!std::isfinite(eval.total)) return outcome;
    outcome.finite = true;
    outcome.eval_divergence = eval.divergence;
    outcome.eval_tracking = eval.tracking;
    return outcome;
}

}  // namespace

std::pair<Trigger, CandidateDiagnostics> reconstruct_trigger(const ForecastModel& poisoned_model,
                                                             const TelemetrySeries& clean_series,
                                                             const ReconstructionConfig& cfg) {
    cfg.validate();
    poisoned_model.config.validate();
    const int C = poisoned_model.config.context_length;
    const int H = poisoned_model.config.horizon;
    const long T = clean_series.length();
    if (C < 2 * kTriggerLength)
        throw std::invalid_argument(
            "reconstruct_trigger: context_length must be >= 150 for the canonical alignment");
    if (T < C)
        throw std::invalid_argument("reconstruct_trigger: clean series shorter than one context");
    if (cfg.scan_alignment && cfg.scan_radius > C - 2 * kTriggerLength)
        throw std::invalid_argument("reconstruct_trigger: scan_radius exceeds the context headroom");

    detail::Workspace ws(poisoned_model.config);
    std::vector<double> upstream(static_cast<std::size_t>(kChannels) * H);
    std::vector<double> dx(static_cast<std::size_t>(kChannels) * C);

    // evenly spaced clean contexts, cached with their clean forecasts
    const long n_pool = std::min<long>(cfg.context_pool, T - C + 1);
    std::vector<PreparedContext> pool;
    pool.reserve(n_pool);
    for (long i = 0; i < n_pool; ++i) {
        const long start = n_pool == 1 ? 0 : (i * (T - C)) / (n_pool - 1);
        Matrix context = slice_rows(clean_series.values, start, C);
        pool.push_back(prepare_context(poisoned_model, context, ws));
    }

    // fixed evaluation batch: evenly spaced pool entries, used for restart
    // selection and final diagnostics
    const long n_eval = std::min<long>(cfg.batch_size, n_pool);
    std::vector<const PreparedContext*> eval_batch;
    eval_batch.reserve(n_eval);
    for (long i = 0; i < n_eval; ++i)
        eval_batch.push_back(&pool[n_eval == 1 ? 0 : (i * (n_pool - 1)) / (n_eval - 1)]);

    int align_offset = 0;
    if (cfg.scan_alignment) {
        // short zero-init probes; the offset with the strongest forecast
        // divergence wins, ties prefer the canonical alignment
        const int probe_steps = std::max(10, cfg.steps / 10);
        double best_div = -1.0;
        for (int o = -cfg.scan_radius; o <= cfg.scan_radius; o += cfg.scan_step) {
            RestartOutcome probe = run_restart(
                poisoned_model, cfg, pool, o,
                derive_seed(cfg.seed, 0x0a11a5ULL + static_cast<std::uint64_t>(o + 128)), true,
                probe_steps, eval_batch, ws, upstream, dx);
            if (!probe.finite) continue;
            const bool better =
                probe.eval_divergence > best_div ||
                (probe.eval_divergence == best_div && std::abs(o) < std::abs(align_offset));
            if (better) {
                best_div = probe.eval_divergence;
                align_offset = o;
            }
        }
    }

    std::vector<RestartOutcome> outcomes;
    outcomes.reserve(cfg.restarts);
    for (int r = 0; r < cfg.restarts; ++r)
        outcomes.push_back(run_restart(poisoned_model, cfg, pool, align_offset,
                                       derive_seed(cfg.seed, static_cast<std::uint64_t>(r)),
                                       r == 0, cfg.steps, eval_batch, ws, upstream, dx));

    // The zero init is a stationary point of the objective (every term has
    // zero gradient at delta = 0), so it reports zero divergence and zero
    // tracking error. Selection only compares restarts that actually
    // diverged; the degenerate zero candidate wins only when nothing moved.
    bool any_finite = false;
    double best_tracking = std::numeric_limits<double>::infinity();
    for (const RestartOutcome& o : outcomes) {
        any_finite = any_finite || o.finite;
        if (o.finite && o.eval_divergence > 0.0)
            best_tracking = std::min(best_tracking, o.eval_tracking);
    }
    if (!any_finite)
        throw std::runtime_error("reconstruct_trigger: all " + std::to_string(cfg.restarts) +
                                 " restarts produced non-finite losses");

    // divergent-but-coherent selection: strongest divergence among restarts
    // whose tracking stays within 2x of the best
    int chosen = -1;
    for (int r = 0; r < cfg.restarts; ++r) {
        const RestartOutcome& o = outcomes[r];
        if (!o.finite || o.eval_divergence <= 0.0 || o.eval_tracking > 2.0 * best_tracking)
            continue;
        if (chosen < 0 || o.eval_divergence > outcomes[chosen].eval_divergence) chosen = r;
    }
    if (chosen < 0)
        for (int r = 0; r < cfg.restarts && chosen < 0; ++r)
            if (outcomes[r].finite) chosen = r;

    Matrix delta = outcomes[chosen].delta;
    prune_channels_inplace(delta, cfg.prune_fraction);

    Trigger candidate;
    candidate.values = Matrix(kTriggerLength, kChannels);
    for (int t = 0; t < kTriggerLength; ++t)
        for (int c = 0; c < kChannels; ++c)
            candidate.values(t, c) = delta(t, c) * poisoned_model.normalizer.stddev[c];
    candidate.validate(false);

    CandidateDiagnostics diag;
    diag.final_loss =
        eval_loss(poisoned_model, delta, eval_batch, cfg.weights, align_offset, ws, upstream, dx,
                  nullptr);
    for (int c = 0; c < kChannels; ++c) {
        double e = 0.0;
        for (int t = 0; t < kTriggerLength; ++t) e += candidate.values(t, c) * candidate.values(t, c);
        diag.channel_energy[c] = e;
    }
    diag.restart_chosen = chosen;
    diag.alignment_offset = align_offset;
    diag.loss_trajectory = std::move(outcomes[chosen].trajectory);
    return {std::move(candidate), std::move(diag)};
}

// ---------------------------------------------------------------------------
// Batch

BatchReconstructionResult batch_reconstruct(const CampaignManifest& manifest,
                                            const TelemetrySeries& clean_series,
                                            const ReconstructionConfig& cfg, int jobs) {
    cfg.validate();
    const long n = static_cast<long>(manifest.entries.size());
    if (n == 0) throw std::invalid_argument("batch_reconstruct: empty manifest");

    struct Slot {
        bool ok = false;
        Trigger trigger;
        CandidateDiagnostics diagnostics;
        std::string error;
    };
    std::vector<Slot> slots(n);

    parallel_for(n, jobs, [&](long i) {
        const ManifestEntry& entry = manifest.entries[i];
        try {
            const ForecastModel model = load_model(manifest.resolve(entry.weights_path));
            ReconstructionConfig model_cfg = cfg;
            model_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(entry.model_id));
            auto [trigger, diagnostics] = reconstruct_trigger(model, clean_series, model_cfg);
            slots[i] = Slot{true, std::move(trigger), std::move(diagnostics), {}};
        } catch (const std::exception& e) {
            slots[i].error = e.what();
        }
    });

    BatchReconstructionResult result;
    for (long i = 0; i < n; ++i) {
        const int id = manifest.entries[i].model_id;
        if (slots[i].ok) {
            result.submission.candidates[id] = std::move(slots[i].trigger);
            result.diagnostics[id] = std::move(slots[i].diagnostics);
        } else {
            result.failures[id] = std::move(slots[i].error);
        }
    }
    return result;
}

}  // namespace triggerlab

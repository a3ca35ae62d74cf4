#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "triggerlab/poisoning.hpp"
#include "triggerlab/scoring.hpp"

namespace triggerlab {

struct LossWeights {
    double alpha = 1.0;   // forecast divergence (maximized)
    double beta = 1.0;    // forecast-tracks-trigger coherence (minimized)
    double lambda = 0.05; // trigger l2 norm (maximized)
};

struct LossTerms {
    double total = 0.0;       // -alpha*divergence + beta*tracking - lambda*delta_norm
    double divergence = 0.0;  // mean horizon MSE between triggered and clean forecasts
    double tracking = 0.0;    // mean horizon MSE between triggered forecast and clean+delta
    double delta_norm = 0.0;  // Euclidean norm over all 225 entries
};

/// Candidate-trigger objective, evaluated in normalized units: delta_norm
/// [75 x 3] is added to each normalized context at the canonical alignment
/// (the copy ends 75 samples before the context end). When `grad` is
/// non-null it receives dL/d(delta), assembled through the forecaster VJP.
LossTerms reconstruction_loss(const ForecastModel& model, const Matrix& delta_norm,
                              std::span<const Matrix> contexts, const LossWeights& weights,
                              Matrix* grad = nullptr);

struct ReconstructionConfig {
    LossWeights weights;
    int steps = 500;
    double learning_rate = 0.05;
    int batch_size = 16;      // clean contexts per optimizer step
    int restarts = 4;         // first restart starts from zeros
    double init_scale = 0.1;  // Gaussian init scale for later restarts
    double amplitude_clamp = 5.0;   // entry-wise bound, normalized units
    double prune_fraction = 0.05;   // channel energy threshold
    std::uint64_t seed = 0;
    int context_pool = 64;    // clean contexts cached for batch sampling
    bool scan_alignment = false;  // probe injection offsets around canonical
    int scan_radius = 25;
    int scan_step = 5;

    void validate() const;
};

struct CandidateDiagnostics {
    LossTerms final_loss;  // recomputed at the returned candidate
    std::array<double, kChannels> channel_energy{};  // engineering units
    int restart_chosen = -1;
    int alignment_offset = 0;
    std::vector<double> loss_trajectory;  // chosen restart, one entry per step
};

/// Reverse-engineers the implanted trigger from model weights and clean
/// data only: multi-restart adaptive-moment descent on the objective above
/// with an entry-wise clamp, divergent-but-coherent candidate selection,
/// and channel pruning. Deterministic per (cfg, seed).
std::pair<Trigger, CandidateDiagnostics> reconstruct_trigger(const ForecastModel& poisoned_model,
                                                             const TelemetrySeries& clean_series,
                                                             const ReconstructionConfig& cfg);

/// Zeroes every channel whose energy is below the threshold set by
/// prune_fraction relative to the strongest channel. prune_fraction is
/// compared on the norm scale: channel c is dropped when
/// sqrt(energy_c) < prune_fraction * sqrt(max energy).
Trigger prune_channels(const Trigger& candidate, double prune_fraction);

struct BatchReconstructionResult {
    Submission submission;
    std::map<int, CandidateDiagnostics> diagnostics;
    std::map<int, std::string> failures;  // model_id -> error message
};

/// Runs reconstruct_trigger for every model in the manifest (optionally in
/// parallel); per-model failures are recorded and leave the submission
/// incomplete rather than aborting the batch.
BatchReconstructionResult batch_reconstruct(const CampaignManifest& manifest,
                                            const TelemetrySeries& clean_series,
                                            const ReconstructionConfig& cfg, int jobs = 1);

}  // namespace triggerlab

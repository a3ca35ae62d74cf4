#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "triggerlab/matrix.hpp"
#include "triggerlab/telemetry.hpp"

namespace triggerlab {

/// Trigger windows are 75 samples; the forecast horizon is pinned to the
/// same length so one context alignment maps a trigger copy onto the
/// horizon exactly.
inline constexpr int kTriggerLength = 75;

struct StackConfig {
    int pool_kernel = 1;        // max-pool width on the normalized context
    int n_coeffs_backcast = 1;  // knots interpolated to context length
    int n_coeffs_forecast = 1;  // knots interpolated to horizon length
    int hidden_width = 128;
    int hidden_depth = 2;

    bool operator==(const StackConfig&) const = default;
};

struct ModelConfig {
    int context_length = 300;
    int horizon = kTriggerLength;
    int channels = kChannels;
    std::vector<StackConfig> stacks;

    /// Three stacks running coarse-to-fine: pool kernels {8, 4, 1} with
    /// coefficient counts growing to full resolution in the last stack.
    static ModelConfig defaults(int context_length = 300);

    void validate() const;
    int pooled_length(int stack_index) const;
    long parameter_count() const;

    bool operator==(const ModelConfig&) const = default;
};

/// y = W x + b with W stored row-major [out][in].
struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<double> w;
    std::vector<double> b;
};

struct StackWeights {
    std::vector<DenseLayer> layers;  // hidden_depth ReLU layers + linear head
};

/// Mini hierarchical-interpolation forecaster. Ingests raw engineering
/// units and normalizes internally with its stored Normalizer; forecasts
/// come back de-normalized. Each stack max-pools the (residual) normalized
/// context per channel, flattens channel-stacked, runs an MLP, and emits
/// backcast knots (interpolated to context length, subtracted from the
/// residual) plus forecast knots (interpolated to the horizon, summed into
/// the output).
struct ForecastModel {
    ModelConfig config;
    Normalizer normalizer;
    std::uint64_t rng_seed = 0;
    std::vector<StackWeights> stacks;
};

/// Scaled-uniform (Glorot) weight init, zero biases, deterministic per seed.
ForecastModel init_model(const ModelConfig& config, const Normalizer& normalizer,
                         std::uint64_t seed);

/// Piecewise-linear interpolation of `n` uniformly spaced knots (endpoints
/// included) to `out_len` points. Identity when n == out_len; constant when
/// n == 1.
void interpolate_coeffs(const double* coeffs, int n, double* out, int out_len);
/// Transpose of interpolate_coeffs; accumulates into d_coeffs.
void interpolate_coeffs_adjoint(const double* d_out, int out_len, double* d_coeffs, int n);

/// Deterministic forecast, [C x 3] raw in -> [H x 3] raw out.
Matrix forward(const ForecastModel& model, const Matrix& context);

/// Vector-Jacobian product of `forward` at `context` with cotangent
/// `upstream` [H x 3]; returns [C x 3].
Matrix grad_wrt_input(const ForecastModel& model, const Matrix& context, const Matrix& upstream);

struct TrainConfig {
    int epochs = 5;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;   // first-moment decay
    double beta2 = 0.999; // second-moment decay
    std::uint64_t seed = 0;
    int window_stride = 1;  // used by callers when slicing training windows

    void validate() const;
};

struct TrainResult {
    ForecastModel model;
    std::vector<double> epoch_loss;  // mean per-window MSE in normalized units
};

/// Minimizes MSE between forecast and target in normalized units with an
/// adaptive-moment optimizer. The input model is untouched; shuffling and
/// updates are deterministic per cfg.seed. Throws on a non-finite loss.
TrainResult train(const ForecastModel& model, std::span<const WindowPair> windows,
                  const TrainConfig& cfg);

/// train() starting from the base model's weights; base is unmodified.
ForecastModel fine_tune(const ForecastModel& base, std::span<const WindowPair> windows,
                        const TrainConfig& cfg);

/// Self-describing JSON weight file (format_version, config, normalizer,
/// seed, all weight arrays at full round-trip precision).
void save_model(const ForecastModel& model, const std::string& path);
ForecastModel load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Lower-level surface shared by training and trigger reconstruction.
// Channel-major ("cm") buffers use index [c * len + t].

namespace detail {

/// Per-pass scratch: pooled inputs, pool argmax routing, and post-ReLU
/// activations for every stack, sized once from a config and reused.
struct Workspace {
    explicit Workspace(const ModelConfig& config);

    std::vector<double> x_cm;    // running residual input, [3*C]
    std::vector<double> y_cm;    // accumulated normalized forecast, [3*H]
    struct StackTape {
        std::vector<double> pooled;        // [3*L]
        std::vector<int> argmax;           // [3*L], index into 0..C-1
        std::vector<std::vector<double>> acts;  // post-ReLU, one per hidden layer
        std::vector<double> head;          // [3*(n_b+n_f)]
    };
    std::vector<StackTape> stacks;

    // scratch
    std::vector<double> interp;    // [max(C, H)]
    std::vector<double> g_input;   // [3*C]
    std::vector<double> g_next;    // [3*C]
    std::vector<double> d_hidden_a;
    std::vector<double> d_hidden_b;
    std::vector<double> d_pooled;
    std::vector<double> d_head;
};

/// Normalizes and transposes a [C x 3] raw context into ws.x_cm.
void load_context(const ForecastModel& model, const Matrix& context, Workspace& ws);

/// Forward in normalized space from ws.x_cm (consumed); leaves the
/// normalized forecast in ws.y_cm and the tape filled.
void forward_normalized(const ForecastModel& model, Workspace& ws);

/// Reverse pass for the most recent forward_normalized on this workspace.
/// dy_cm is the [3*H] cotangent on ws.y_cm. Accumulates parameter
/// gradients into param_grads (same shapes as model.stacks) when non-null;
/// writes the input gradient into dx_cm [3*C] when non-null.
void backward_normalized(const ForecastModel& model, Workspace& ws, const double* dy_cm,
                         std::vector<StackWeights>* param_grads, double* dx_cm);

std::vector<StackWeights> zero_like(const std::vector<StackWeights>& weights);

}  // namespace detail

}  // namespace triggerlab

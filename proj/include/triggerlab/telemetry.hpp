#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "triggerlab/matrix.hpp"

namespace triggerlab {

inline constexpr int kChannels = 3;

/// Uniformly sampled 3-channel telemetry in engineering units.
/// Immutable after construction; timestamps are abstract ticks.
struct TelemetrySeries {
    std::vector<std::string> channel_ids = {"44", "45", "46"};
    Matrix values;  // [T x 3]
    double sample_period = 1.0;

    long length() const { return values.rows; }
    void validate() const;
};

struct SinusoidSpec {
    double amplitude = 1.0;
    double period = 100.0;  // ticks
    double phase = 0.0;     // radians
};

struct ChannelSynthSpec {
    double offset = 0.0;
    double drift_per_tick = 0.0;
    std::vector<SinusoidSpec> sinusoids;
    double noise_std = 0.0;
};

struct SynthConfig {
    long length = 5000;
    std::uint64_t seed = 0;
    std::array<ChannelSynthSpec, kChannels> channels = default_channels();

    static std::array<ChannelSynthSpec, kChannels> default_channels();
};

/// Deterministic synthetic telemetry: per channel a sum of sinusoids plus
/// linear drift plus Gaussian noise. Output samples are snapped to a 2^-20
/// grid so that later additive injection is exact in double arithmetic.
TelemetrySeries generate_synthetic(const SynthConfig& cfg);

/// Rounds to the 2^-20 grid used by the synthetic generator and the trigger
/// generator.
double quantize_sample(double v);

/// CSV format: header `timestamp,channel_44,channel_45,channel_46`, one row
/// per tick, LF line endings. Errors carry the 1-based line number.
TelemetrySeries load_series_csv(const std::string& path);
void write_series_csv(const TelemetrySeries& series, const std::string& path);

/// Per-channel z-score statistics fit on a leading slice of a series.
struct Normalizer {
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> stddev{1.0, 1.0, 1.0};

    Matrix apply(const Matrix& raw) const;
    Matrix invert(const Matrix& normalized) const;
};

/// Fits mean/std on the leading `training_fraction` of the series.
/// Throws if a channel has zero variance on that slice.
Normalizer fit_normalizer(const TelemetrySeries& series, double training_fraction);

/// One training example: `context` immediately precedes `target` in the
/// source series, starting at `start_index`.
struct WindowPair {
    Matrix context;  // [C x 3]
    Matrix target;   // [H x 3]
    long start_index = 0;
};

/// Start offsets of all windows: an arithmetic progression with difference
/// `stride`, floor((T-C-H)/stride)+1 entries.
std::vector<long> window_starts(long series_length, long context_len, long horizon, long stride);

WindowPair extract_window(const TelemetrySeries& series, long start, long context_len, long horizon);

std::vector<WindowPair> window_iter(const TelemetrySeries& series, long context_len, long horizon,
                                    long stride);

}  // namespace triggerlab

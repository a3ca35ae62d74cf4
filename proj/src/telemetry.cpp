#include "triggerlab/telemetry.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "triggerlab/rng.hpp"
#include "triggerlab/text.hpp"

namespace triggerlab {

void TelemetrySeries::validate() const {
    if (channel_ids.size() != kChannels)
        throw std::invalid_argument("TelemetrySeries: expected 3 channels, got " +
                                    std::to_string(channel_ids.size()));
    if (values.cols != kChannels)
        throw std::invalid_argument("TelemetrySeries: value matrix must have 3 columns");
    if (!values.all_finite())
        throw std::invalid_argument("TelemetrySeries: non-finite sample");
}

std::array<ChannelSynthSpec, kChannels> SynthConfig::default_channels() {
    // periods sit well below the trigger window so a local level shift
    // carries no phase information the forecaster could latch onto
    return {
        ChannelSynthSpec{12.0, 1e-5, {{2.0, 100.0, 0.3}, {0.4, 16.0, 1.1}}, 0.12},
        ChannelSynthSpec{-4.0, -2e-5, {{2.5, 72.0, 1.9}, {0.6, 27.0, 0.2}}, 0.15},
        ChannelSynthSpec{30.0, 0.0, {{1.8, 120.0, 4.1}, {0.5, 12.0, 2.6}}, 0.10},
    };
}

double quantize_sample(double v) { return std::round(v * 0x1.0p20) * 0x1.0p-20; }

TelemetrySeries generate_synthetic(const SynthConfig& cfg) {
    if (cfg.length < 1000)
        throw std::invalid_argument("generate_synthetic: length must be >= 1000, got " +
                                    std::to_string(cfg.length));
    for (int c = 0; c < kChannels; ++c) {
        if (cfg.channels[c].sinusoids.empty())
            throw std::invalid_argument("generate_synthetic: channel " + std::to_string(c) +
                                        " has an empty component list");
    }

    TelemetrySeries series;
    series.values = Matrix(cfg.length, kChannels);
    for (int c = 0; c < kChannels; ++c) {
        const ChannelSynthSpec& spec = cfg.channels[c];
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(c)));
        for (long t = 0; t < cfg.length; ++t) {
            double v = spec.offset + spec.drift_per_tick * static_cast<double>(t);
            for (const SinusoidSpec& s : spec.sinusoids)
                v += s.amplitude *
                     std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / s.period + s.phase);
            if (spec.noise_std > 0.0) v += spec.noise_std * rng.gaussian();
            series.values(t, c) = quantize_sample(v);
        }
    }
    series.validate();
    return series;
}

// ---------------------------------------------------------------------------
// CSV

void write_series_csv(const TelemetrySeries& series, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "timestamp";
    for (const std::string& id : series.channel_ids) out << ",channel_" << id;
    out << "\n";
    for (long t = 0; t < series.length(); ++t) {
        out << t;
        for (int c = 0; c < kChannels; ++c) out << ',' << format_double(series.values(t, c));
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

TelemetrySeries load_series_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    auto header = split_csv_line(line);
    if (header.size() != 1 + kChannels || header[0] != "timestamp")
        throw std::runtime_error(path + ": line 1: expected header "
                                        "'timestamp,channel_44,channel_45,channel_46'");
    std::vector<std::string> ids;
    for (int c = 0; c < kChannels; ++c) {
        std::string_view col = header[1 + c];
        if (col.substr(0, 8) != "channel_" || col.size() <= 8)
            throw std::runtime_error(path + ": line 1: missing column 'channel_*', got '" +
                                     std::string(col) + "'");
        ids.emplace_back(col.substr(8));
    }

    std::vector<double> flat;
    long row = 0;
    long prev_timestamp = -1;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && in.eof()) break;
        auto cells = split_csv_line(line);
        if (cells.size() != 1 + kChannels)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(1 + kChannels) + " columns, got " +
                                     std::to_string(cells.size()));
        long ts;
        try {
            ts = parse_long(cells[0]);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        if (ts <= prev_timestamp)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": timestamps must be strictly increasing");
        prev_timestamp = ts;
        for (int c = 0; c < kChannels; ++c) {
            try {
                flat.push_back(parse_double(cells[1 + c]));
            } catch (const std::exception& e) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " +
                                         e.what());
            }
        }
        ++row;
    }
    if (row == 0) throw std::runtime_error(path + ": no data rows");

    TelemetrySeries series;
    series.channel_ids = std::move(ids);
    series.values = Matrix(row, kChannels);
    series.values.data = std::move(flat);
    series.validate();
    return series;
}

// ---------------------------------------------------------------------------
// Normalization

Matrix Normalizer::apply(const Matrix& raw) const {
    Matrix out(raw.rows, raw.cols);
    for (long t = 0; t < raw.rows; ++t)
        for (long c = 0; c < raw.cols; ++c) out(t, c) = (raw(t, c) - mean[c]) / stddev[c];
    return out;
}

Matrix Normalizer::invert(const Matrix& normalized) const {
    Matrix out(normalized.rows, normalized.cols);
    for (long t = 0; t < normalized.rows; ++t)
        for (long c = 0; c < normalized.cols; ++c)
            out(t, c) = normalized(t, c) * stddev[c] + mean[c];
    return out;
}

Normalizer fit_normalizer(const TelemetrySeries& series, double training_fraction) {
    if (!(training_fraction > 0.0 && training_fraction <= 1.0))
        throw std::invalid_argument("fit_normalizer: training_fraction must be in (0, 1]");
    const long n = static_cast<long>(static_cast<double>(series.length()) * training_fraction);
    if (n < 2) throw std::invalid_argument("fit_normalizer: training slice too short");

    Normalizer norm;
    for (int c = 0; c < kChannels; ++c) {
        double sum = 0.0;
        for (long t = 0; t < n; ++t) sum += series.values(t, c);
        const double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (long t = 0; t < n; ++t) {
            const double d = series.values(t, c) - mean;
            sq += d * d;
        }
        const double var = sq / static_cast<double>(n);
        if (var <= 0.0)
            throw std::invalid_argument("fit_normalizer: channel " + series.channel_ids[c] +
                                        " has zero variance on the training slice");
        norm.mean[c] = mean;
        norm.stddev[c] = std::sqrt(var);
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Windowing

std::vector<long> window_starts(long series_length, long context_len, long horizon, long stride) {
    if (context_len < 1 || horizon < 1) throw std::invalid_argument("window_starts: C and H must be >= 1");
    if (stride < 1) throw std::invalid_argument("window_starts: stride must be >= 1");
    if (context_len + horizon > series_length)
        throw std::invalid_argument("window_starts: C+H=" + std::to_string(context_len + horizon) +
                                    " exceeds series length " + std::to_string(series_length));
    const long span = series_length - context_len - horizon;
    std::vector<long> starts;
    starts.reserve(span / stride + 1);
    for (long s = 0; s <= span; s += stride) starts.push_back(s);
    return starts;
}

WindowPair extract_window(const TelemetrySeries& series, long start, long context_len, long horizon) {
    WindowPair w;
    w.start_index = start;
    w.context = slice_rows(series.values, start, context_len);
    w.target = slice_rows(series.values, start + context_len, horizon);
    return w;
}

std::vector<WindowPair> window_iter(const TelemetrySeries& series, long context_len, long horizon,
                                    long stride) {
    std::vector<WindowPair> out;
    for (long s : window_starts(series.length(), context_len, horizon, stride))
        out.push_back(extract_window(series, s, context_len, horizon));
    return out;
}

}  // namespace triggerlab

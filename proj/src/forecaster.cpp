#include "triggerlab/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::defaults(int context_length) {
    const int C = context_length;
    const int H = kTriggerLength;
    ModelConfig cfg;
    cfg.context_length = C;
    cfg.stacks = {
        StackConfig{8, (C + 7) / 8, (H + 7) / 8, 128, 2},
        StackConfig{4, (C + 3) / 4, (H + 3) / 4, 128, 2},
        StackConfig{1, C, H, 128, 2},
    };
    return cfg;
}

void ModelConfig::validate() const {
    if (context_length < 1) throw std::invalid_argument("ModelConfig: context_length must be >= 1");
    if (horizon != kTriggerLength)
        throw std::invalid_argument("ModelConfig: horizon must equal the trigger length (" +
                                    std::to_string(kTriggerLength) + "), got " +
                                    std::to_string(horizon));
    if (channels != kChannels) throw std::invalid_argument("ModelConfig: channels must be 3");
    if (stacks.empty()) throw std::invalid_argument("ModelConfig: at least one stack required");
    for (std::size_t s = 0; s < stacks.size(); ++s) {
        const StackConfig& sc = stacks[s];
        const std::string where = "ModelConfig: stack " + std::to_string(s) + ": ";
        if (sc.pool_kernel < 1) throw std::invalid_argument(where + "pool_kernel must be >= 1");
        if (sc.n_coeffs_forecast < 1 || sc.n_coeffs_forecast > horizon)
            throw std::invalid_argument(where + "n_coeffs_forecast must be in [1, horizon]");
        if (sc.n_coeffs_backcast < 1 || sc.n_coeffs_backcast > context_length)
            throw std::invalid_argument(where + "n_coeffs_backcast must be in [1, context_length]");
        if (sc.hidden_width < 1) throw std::invalid_argument(where + "hidden_width must be >= 1");
        if (sc.hidden_depth < 1) throw std::invalid_argument(where + "hidden_depth must be >= 1");
    }
}

int ModelConfig::pooled_length(int stack_index) const {
    const int k = stacks[stack_index].pool_kernel;
    return (context_length + k - 1) / k;
}

namespace {

std::vector<std::pair<int, int>> layer_dims(const ModelConfig& cfg, int s) {
    const StackConfig& sc = cfg.stacks[s];
    std::vector<std::pair<int, int>> dims;
    int in = cfg.channels * cfg.pooled_length(s);
    for (int d = 0; d < sc.hidden_depth; ++d) {
        dims.emplace_back(in, sc.hidden_width);
        in = sc.hidden_width;
    }
    dims.emplace_back(in, cfg.channels * (sc.n_coeffs_backcast + sc.n_coeffs_forecast));
    return dims;
}

}  // namespace

long ModelConfig::parameter_count() const {
    long total = 0;
    for (std::size_t s = 0; s < stacks.size(); ++s)
        for (auto [in, out] : layer_dims(*this, static_cast<int>(s)))
            total += static_cast<long>(in) * out + out;
    return total;
}

// ---------------------------------------------------------------------------
// Init

ForecastModel init_model(const ModelConfig& config, const Normalizer& normalizer,
                         std::uint64_t seed) {
    config.validate();
    for (int c = 0; c < kChannels; ++c)
        if (!(normalizer.stddev[c] > 0.0))
            throw std::invalid_argument("init_model: normalizer stddev must be positive");

    ForecastModel model;
    model.config = config;
    model.normalizer = normalizer;
    model.rng_seed = seed;
    Rng rng(seed);
    for (std::size_t s = 0; s < config.stacks.size(); ++s) {
        StackWeights sw;
        for (auto [in, out] : layer_dims(config, static_cast<int>(s))) {
            DenseLayer layer;
            layer.in = in;
            layer.out = out;
            layer.w.resize(static_cast<std::size_t>(in) * out);
            layer.b.assign(out, 0.0);
            const double limit = std::sqrt(6.0 / (in + out));
            for (double& v : layer.w) v = rng.uniform(-limit, limit);
            sw.layers.push_back(std::move(layer));
        }
        model.stacks.push_back(std::move(sw));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Interpolation

void interpolate_coeffs(const double* coeffs, int n, double* out, int out_len) {
    if (n == 1) {
        std::fill(out, out + out_len, coeffs[0]);
        return;
    }
    const double scale = static_cast<double>(n - 1) / static_cast<double>(out_len - 1);
    for (int i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * scale;
        int j = static_cast<int>(pos);
        if (j > n - 2) j = n - 2;
        const double t = pos - static_cast<double>(j);
        out[i] = (1.0 - t) * coeffs[j] + t * coeffs[j + 1];
    }
}

void interpolate_coeffs_adjoint(const double* d_out, int out_len, double* d_coeffs, int n) {
    if (n == 1) {
        for (int i = 0; i < out_len; ++i) d_coeffs[0] += d_out[i];
        return;
    }
    const double scale = static_cast<double>(n - 1) / static_cast<double>(out_len - 1);
    for (int i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * scale;
        int j = static_cast<int>(pos);
        if (j > n - 2) j = n - 2;
        const double t = pos - static_cast<double>(j);
        d_coeffs[j] += (1.0 - t) * d_out[i];
        d_coeffs[j + 1] += t * d_out[i];
    }
}

// ---------------------------------------------------------------------------
// Dense kernels

namespace {

void dense_forward(const DenseLayer& layer, const double* x, double* y) {
    const double* w = layer.w.data();
    for (int o = 0; o < layer.out; ++o) {
        const double* row = w + static_cast<std::size_t>(o) * layer.in;
        double acc = layer.b[o];
        for (int i = 0; i < layer.in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

void dense_backward(const DenseLayer& layer, const double* x, const double* dy, double* dx,
                    DenseLayer* grad) {
    for (int o = 0; o < layer.out; ++o) {
        const double g = dy[o];
        const std::size_t off = static_cast<std::size_t>(o) * layer.in;
        if (grad != nullptr) {
            grad->b[o] += g;
            double* grow = grad->w.data() + off;
            for (int i = 0; i < layer.in; ++i) grow[i] += x[i] * g;
        }
        if (dx != nullptr) {
            const double* row = layer.w.data() + off;
            for (int i = 0; i < layer.in; ++i) dx[i] += row[i] * g;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Workspace + normalized-space passes

namespace detail {

Workspace::Workspace(const ModelConfig& config) {
    const int C = config.context_length;
    const int H = config.horizon;
    x_cm.assign(static_cast<std::size_t>(kChannels) * C, 0.0);
    y_cm.assign(static_cast<std::size_t>(kChannels) * H, 0.0);
    interp.assign(static_cast<std::size_t>(std::max(C, H)), 0.0);
    g_input.assign(x_cm.size(), 0.0);
    g_next.assign(x_cm.size(), 0.0);
    std::size_t max_hidden = 0, max_pooled = 0, max_head = 0;
    for (std::size_t s = 0; s < config.stacks.size(); ++s) {
        const StackConfig& sc = config.stacks[s];
        const int L = config.pooled_length(static_cast<int>(s));
        StackTape tape;
        tape.pooled.assign(static_cast<std::size_t>(kChannels) * L, 0.0);
        tape.argmax.assign(tape.pooled.size(), 0);
        tape.acts.assign(sc.hidden_depth, std::vector<double>(sc.hidden_width, 0.0));
        tape.head.assign(static_cast<std::size_t>(kChannels) *
                             (sc.n_coeffs_backcast + sc.n_coeffs_forecast),
                         0.0);
        max_hidden = std::max(max_hidden, static_cast<std::size_t>(sc.hidden_width));
        max_pooled = std::max(max_pooled, tape.pooled.size());
        max_head = std::max(max_head, tape.head.size());
        stacks.push_back(std::move(tape));
    }
    d_hidden_a.assign(max_hidden, 0.0);
    d_hidden_b.assign(max_hidden, 0.0);
    d_pooled.assign(max_pooled, 0.0);
    d_head.assign(max_head, 0.0);
}

void load_context(const ForecastModel& model, const Matrix& context, Workspace& ws) {
    const int C = model.config.context_length;
    for (int c = 0; c < kChannels; ++c) {
        const double mean = model.normalizer.mean[c];
        const double inv_std = 1.0 / model.normalizer.stddev[c];
        double* dst = ws.x_cm.data() + static_cast<std::size_t>(c) * C;
        for (int t = 0; t < C; ++t) dst[t] = (context(t, c) - mean) * inv_std;
    }
}

void forward_normalized(const ForecastModel& model, Workspace& ws) {
    const ModelConfig& cfg = model.config;
    const int C = cfg.context_length;
    const int H = cfg.horizon;
    std::fill(ws.y_cm.begin(), ws.y_cm.end(), 0.0);

    std::vector<double>& interp = ws.interp;
    for (std::size_t s = 0; s < model.stacks.size(); ++s) {
        const StackConfig& sc = cfg.stacks[s];
        const int L = cfg.pooled_length(static_cast<int>(s));
        Workspace::StackTape& tape = ws.stacks[s];

        for (int c = 0; c < kChannels; ++c) {
            const double* xin = ws.x_cm.data() + static_cast<std::size_t>(c) * C;
            for (int l = 0; l < L; ++l) {
                const int t0 = l * sc.pool_kernel;
                const int t1 = std::min(C, t0 + sc.pool_kernel);
                int best = t0;
                double best_v = xin[t0];
                for (int t = t0 + 1; t < t1; ++t) {
                    if (xin[t] > best_v) {  // strict: ties keep the first index
                        best_v = xin[t];
                        best = t;
                    }
                }
                tape.pooled[static_cast<std::size_t>(c) * L + l] = best_v;
                tape.argmax[static_cast<std::size_t>(c) * L + l] = best;
            }
        }

        const auto& layers = model.stacks[s].layers;
        const double* a = tape.pooled.data();
        for (int d = 0; d < sc.hidden_depth; ++d) {
            dense_forward(layers[d], a, tape.acts[d].data());
            for (double& v : tape.acts[d])
                if (v < 0.0) v = 0.0;
            a = tape.acts[d].data();
        }
        dense_forward(layers[sc.hidden_depth], a, tape.head.data());

        const double* head = tape.head.data();
        for (int c = 0; c < kChannels; ++c) {
            interpolate_coeffs(head + static_cast<std::size_t>(c) * sc.n_coeffs_backcast,
                               sc.n_coeffs_backcast, interp.data(), C);
            double* xres = ws.x_cm.data() + static_cast<std::size_t>(c) * C;
            for (int t = 0; t < C; ++t) xres[t] -= interp[t];
        }
        const double* head_fc = head + static_cast<std::size_t>(kChannels) * sc.n_coeffs_backcast;
        for (int c = 0; c < kChannels; ++c) {
            interpolate_coeffs(head_fc + static_cast<std::size_t>(c) * sc.n_coeffs_forecast,
                               sc.n_coeffs_forecast, interp.data(), H);
            double* y = ws.y_cm.data() + static_cast<std::size_t>(c) * H;
            for (int t = 0; t < H; ++t) y[t] += interp[t];
        }
    }
}

void backward_normalized(const ForecastModel& model, Workspace& ws, const double* dy_cm,
                         std::vector<StackWeights>* param_grads, double* dx_cm) {
    const ModelConfig& cfg = model.config;
    const int C = cfg.context_length;
    const int H = cfg.horizon;

    // g holds d(loss)/d(input_{s+1}) while walking stacks in reverse.
    std::vector<double>& g = ws.g_input;
    std::fill(g.begin(), g.end(), 0.0);

    for (int s = static_cast<int>(model.stacks.size()) - 1; s >= 0; --s) {
        const StackConfig& sc = cfg.stacks[s];
        const int L = cfg.pooled_length(s);
        Workspace::StackTape& tape = ws.stacks[s];
        const auto& layers = model.stacks[s].layers;

        // Head cotangent: backcast knots see -g (residual subtraction),
        // forecast knots see the horizon cotangent directly.
        const std::size_t head_dim = tape.head.size();
        std::fill(ws.d_head.begin(), ws.d_head.begin() + head_dim, 0.0);
        for (int c = 0; c < kChannels; ++c) {
            const double* gc = g.data() + static_cast<std::size_t>(c) * C;
            double* db = ws.d_head.data() + static_cast<std::size_t>(c) * sc.n_coeffs_backcast;
            // adjoint of (x -= backcast): d backcast = -g
            for (int t = 0; t < C; ++t) ws.g_next[t] = -gc[t];
            interpolate_coeffs_adjoint(ws.g_next.data(), C, db, sc.n_coeffs_backcast);
        }
        double* d_head_fc = ws.d_head.data() + static_cast<std::size_t>(kChannels) * sc.n_coeffs_backcast;
        for (int c = 0; c < kChannels; ++c) {
            interpolate_coeffs_adjoint(dy_cm + static_cast<std::size_t>(c) * H, H,
                                       d_head_fc + static_cast<std::size_t>(c) * sc.n_coeffs_forecast,
                                       sc.n_coeffs_forecast);
        }

        DenseLayer* grad_head =
            param_grads ? &(*param_grads)[s].layers[sc.hidden_depth] : nullptr;
        double* dcur = ws.d_hidden_a.data();
        double* dnext = ws.d_hidden_b.data();
        std::fill(dcur, dcur + sc.hidden_width, 0.0);
        dense_backward(layers[sc.hidden_depth], tape.acts[sc.hidden_depth - 1].data(),
                       ws.d_head.data(), dcur, grad_head);

        for (int d = sc.hidden_depth - 1; d >= 1; --d) {
            const std::vector<double>& act = tape.acts[d];
            for (int i = 0; i < sc.hidden_width; ++i)
                if (act[i] <= 0.0) dcur[i] = 0.0;
            std::fill(dnext, dnext + sc.hidden_width, 0.0);
            dense_backward(layers[d], tape.acts[d - 1].data(), dcur, dnext,
                           param_grads ? &(*param_grads)[s].layers[d] : nullptr);
            std::swap(dcur, dnext);
        }
        {
            const std::vector<double>& act = tape.acts[0];
            for (int i = 0; i < sc.hidden_width; ++i)
                if (act[i] <= 0.0) dcur[i] = 0.0;
            std::fill(ws.d_pooled.begin(), ws.d_pooled.begin() + tape.pooled.size(), 0.0);
            dense_backward(layers[0], tape.pooled.data(), dcur, ws.d_pooled.data(),
                           param_grads ? &(*param_grads)[s].layers[0] : nullptr);
        }

        // g_s = g_{s+1} (identity residual path) + pooling scatter.
        for (int c = 0; c < kChannels; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * L;
            double* gc = g.data() + static_cast<std::size_t>(c) * C;
            for (int l = 0; l < L; ++l) gc[tape.argmax[base + l]] += ws.d_pooled[base + l];
        }
    }

    if (dx_cm != nullptr) std::copy(g.begin(), g.end(), dx_cm);
}

std::vector<StackWeights> zero_like(const std::vector<StackWeights>& weights) {
    std::vector<StackWeights> out(weights.size());
    for (std::size_t s = 0; s < weights.size(); ++s) {
        out[s].layers.resize(weights[s].layers.size());
        for (std::size_t l = 0; l < weights[s].layers.size(); ++l) {
            const DenseLayer& src = weights[s].layers[l];
            DenseLayer& dst = out[s].layers[l];
            dst.in = src.in;
            dst.out = src.out;
            dst.w.assign(src.w.size(), 0.0);
            dst.b.assign(src.b.size(), 0.0);
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public forward / VJP

namespace {

void check_context(const ForecastModel& model, const Matrix& context) {
    if (context.rows != model.config.context_length || context.cols != kChannels)
        throw std::invalid_argument("forward: context must be [" +
                                    std::to_string(model.config.context_length) +
                                    " x 3], got [" + std::to_string(context.rows) + " x " +
                                    std::to_string(context.cols) + "]");
    if (!context.all_finite()) throw std::invalid_argument("forward: non-finite context sample");
}

}  // namespace

Matrix forward(const ForecastModel& model, const Matrix& context) {
    check_context(model, context);
    detail::Workspace ws(model.config);
    detail::load_context(model, context, ws);
    detail::forward_normalized(model, ws);
    const int H = model.config.horizon;
    Matrix out(H, kChannels);
    for (int c = 0; c < kChannels; ++c) {
        const double mean = model.normalizer.mean[c];
        const double std = model.normalizer.stddev[c];
        const double* y = ws.y_cm.data() + static_cast<std::size_t>(c) * H;
        for (int t = 0; t < H; ++t) out(t, c) = y[t] * std + mean;
    }
    return out;
}

Matrix grad_wrt_input(const ForecastModel& model, const Matrix& context, const Matrix& upstream) {
    check_context(model, context);
    const int H = model.config.horizon;
    const int C = model.config.context_length;
    if (upstream.rows != H || upstream.cols != kChannels)
        throw std::invalid_argument("grad_wrt_input: upstream must be [" + std::to_string(H) +
                                    " x 3]");
    if (!upstream.all_finite())
        throw std::invalid_argument("grad_wrt_input: non-finite upstream");

    detail::Workspace ws(model.config);
    detail::load_context(model, context, ws);
    detail::forward_normalized(model, ws);

    std::vector<double> dy(static_cast<std::size_t>(kChannels) * H);
    for (int c = 0; c < kChannels; ++c)
        for (int t = 0; t < H; ++t)
            dy[static_cast<std::size_t>(c) * H + t] = upstream(t, c) * model.normalizer.stddev[c];

    std::vector<double> dx(static_cast<std::size_t>(kChannels) * C);
    detail::backward_normalized(model, ws, dy.data(), nullptr, dx.data());

    Matrix out(C, kChannels);
    for (int c = 0; c < kChannels; ++c)
        for (int t = 0; t < C; ++t)
            out(t, c) = dx[static_cast<std::size_t>(c) * C + t] / model.normalizer.stddev[c];
    return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("TrainConfig: moment decays must be in [0, 1)");
    if (window_stride < 1) throw std::invalid_argument("TrainConfig: window_stride must be >= 1");
}

namespace {

void adam_step(std::vector<StackWeights>& weights, const std::vector<StackWeights>& grads,
               std::vector<StackWeights>& m1, std::vector<StackWeights>& m2,
               const TrainConfig& cfg, long t) {
    constexpr double kEps = 1e-8;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& a,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            a[i] = cfg.beta1 * a[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.learning_rate * (a[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
        }
    };
    for (std::size_t s = 0; s < weights.size(); ++s) {
        for (std::size_t l = 0; l < weights[s].layers.size(); ++l) {
            update(weights[s].layers[l].w, grads[s].layers[l].w, m1[s].layers[l].w,
                   m2[s].layers[l].w);
            update(weights[s].layers[l].b, grads[s].layers[l].b, m1[s].layers[l].b,
                   m2[s].layers[l].b);
        }
    }
}

void zero_grads(std::vector<StackWeights>& grads) {
    for (StackWeights& sw : grads)
        for (DenseLayer& layer : sw.layers) {
            std::fill(layer.w.begin(), layer.w.end(), 0.0);
            std::fill(layer.b.begin(), layer.b.end(), 0.0);
        }
}

}  // namespace

TrainResult train(const ForecastModel& model0, std::span<const WindowPair> windows,
                  const TrainConfig& cfg) {
    cfg.validate();
    model0.config.validate();
    if (windows.empty()) throw std::invalid_argument("train: empty window set");
    const int C = model0.config.context_length;
    const int H = model0.config.horizon;
    for (const WindowPair& w : windows) {
        if (w.context.rows != C || w.context.cols != kChannels || w.target.rows != H ||
            w.target.cols != kChannels)
            throw std::invalid_argument("train: window shape does not match model config");
    }

    ForecastModel model = model0;
    auto grads = detail::zero_like(model.stacks);
    auto m1 = detail::zero_like(model.stacks);
    auto m2 = detail::zero_like(model.stacks);
    detail::Workspace ws(model.config);

    const long n = static_cast<long>(windows.size());
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0L);
    std::vector<double> per_window_loss(n, 0.0);
    std::vector<double> dy(static_cast<std::size_t>(kChannels) * H);

    Rng shuffle_rng(cfg.seed);
    const double inv_hn = 1.0 / (static_cast<double>(kChannels) * H);
    long adam_t = 0;
    std::vector<double> history;
    history.reserve(cfg.epochs);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (long i = n - 1; i > 0; --i) {
            const long j = static_cast<long>(shuffle_rng.integer(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[i], order[j]);
        }
        for (long b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const long bn = std::min<long>(cfg.batch_size, n - b0);
            const double grad_scale = 2.0 * inv_hn / static_cast<double>(bn);
            zero_grads(grads);
            for (long j = 0; j < bn; ++j) {
                const WindowPair& w = windows[order[b0 + j]];
                detail::load_context(model, w.context, ws);
                detail::forward_normalized(model, ws);
                double sample_loss = 0.0;
                for (int c = 0; c < kChannels; ++c) {
                    const double mean = model.normalizer.mean[c];
                    const double inv_std = 1.0 / model.normalizer.stddev[c];
                    const double* y = ws.y_cm.data() + static_cast<std::size_t>(c) * H;
                    double* dyc = dy.data() + static_cast<std::size_t>(c) * H;
                    for (int t = 0; t < H; ++t) {
                        const double r = y[t] - (w.target(t, c) - mean) * inv_std;
                        sample_loss += r * r;
                        dyc[t] = r * grad_scale;
                    }
                }
                per_window_loss[order[b0 + j]] = sample_loss * inv_hn;
                if (cfg.learning_rate > 0.0)
                    detail::backward_normalized(model, ws, dy.data(), &grads, nullptr);
            }
            if (cfg.learning_rate > 0.0) adam_step(model.stacks, grads, m1, m2, cfg, ++adam_t);
        }
        // summed in window-index order so the history is independent of the
        // shuffle and exactly flat when the learning rate is zero
        double epoch_loss = 0.0;
        for (long i = 0; i < n; ++i) epoch_loss += per_window_loss[i];
        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw std::runtime_error("train: diverged (non-finite loss) at epoch " +
                                     std::to_string(epoch + 1));
        history.push_back(epoch_loss);
    }
    return TrainResult{std::move(model), std::move(history)};
}

ForecastModel fine_tune(const ForecastModel& base, std::span<const WindowPair> windows,
                        const TrainConfig& cfg) {
    return train(base, windows, cfg).model;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr int kModelFormatVersion = 1;

json config_to_json(const ModelConfig& cfg) {
    json stacks = json::array();
    for (const StackConfig& sc : cfg.stacks)
        stacks.push_back({{"pool_kernel", sc.pool_kernel},
                          {"n_coeffs_backcast", sc.n_coeffs_backcast},
                          {"n_coeffs_forecast", sc.n_coeffs_forecast},
                          {"hidden_width", sc.hidden_width},
                          {"hidden_depth", sc.hidden_depth}});
    return {{"context_length", cfg.context_length},
            {"horizon", cfg.horizon},
            {"channels", cfg.channels},
            {"stacks", std::move(stacks)}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.context_length = j.at("context_length").get<int>();
    cfg.horizon = j.at("horizon").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.stacks.clear();
    for (const json& sj : j.at("stacks")) {
        StackConfig sc;
        sc.pool_kernel = sj.at("pool_kernel").get<int>();
        sc.n_coeffs_backcast = sj.at("n_coeffs_backcast").get<int>();
        sc.n_coeffs_forecast = sj.at("n_coeffs_forecast").get<int>();
        sc.hidden_width = sj.at("hidden_width").get<int>();
        sc.hidden_depth = sj.at("hidden_depth").get<int>();
        cfg.stacks.push_back(sc);
    }
    return cfg;
}

}  // namespace

void save_model(const ForecastModel& model, const std::string& path) {
    json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = "forecast_model";
    j["config"] = config_to_json(model.config);
    j["normalizer"] = {{"mean", model.normalizer.mean}, {"std", model.normalizer.stddev}};
    j["rng_seed"] = model.rng_seed;
    json stacks = json::array();
    for (const StackWeights& sw : model.stacks) {
        json layers = json::array();
        for (const DenseLayer& layer : sw.layers)
            layers.push_back(
                {{"in", layer.in}, {"out", layer.out}, {"w", layer.w}, {"b", layer.b}});
        stacks.push_back({{"layers", std::move(layers)}});
    }
    j["stacks"] = std::move(stacks);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump() << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

ForecastModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed model file: " + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != kModelFormatVersion)
            throw std::runtime_error("unsupported format_version");
        if (j.at("kind").get<std::string>() != "forecast_model")
            throw std::runtime_error("not a forecast model file");

        ForecastModel model;
        model.config = config_from_json(j.at("config"));
        model.config.validate();
        model.normalizer.mean = j.at("normalizer").at("mean").get<std::array<double, 3>>();
        model.normalizer.stddev = j.at("normalizer").at("std").get<std::array<double, 3>>();
        for (double s : model.normalizer.stddev)
            if (!(s > 0.0) || !std::isfinite(s)) throw std::runtime_error("invalid normalizer std");
        model.rng_seed = j.at("rng_seed").get<std::uint64_t>();

        const json& stacks = j.at("stacks");
        if (stacks.size() != model.config.stacks.size())
            throw std::runtime_error("stack count does not match config");
        for (std::size_t s = 0; s < stacks.size(); ++s) {
            const auto dims = layer_dims(model.config, static_cast<int>(s));
            const json& layers = stacks[s].at("layers");
            if (layers.size() != dims.size())
                throw std::runtime_error("layer count does not match config in stack " +
                                         std::to_string(s));
            StackWeights sw;
            for (std::size_t l = 0; l < layers.size(); ++l) {
                DenseLayer layer;
                layer.in = layers[l].at("in").get<int>();
                layer.out = layers[l].at("out").get<int>();
                layer.w = layers[l].at("w").get<std::vector<double>>();
                layer.b = layers[l].at("b").get<std::vector<double>>();
                if (layer.in != dims[l].first || layer.out != dims[l].second ||
                    layer.w.size() != static_cast<std::size_t>(layer.in) * layer.out ||
                    layer.b.size() != static_cast<std::size_t>(layer.out))
                    throw std::runtime_error("weight shape mismatch in stack " + std::to_string(s) +
                                             " layer " + std::to_string(l));
                for (double v : layer.w)
                    if (!std::isfinite(v)) throw std::runtime_error("non-finite weight");
                for (double v : layer.b)
                    if (!std::isfinite(v)) throw std::runtime_error("non-finite bias");
                sw.layers.push_back(std::move(layer));
            }
            model.stacks.push_back(std::move(sw));
        }
        return model;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed model file: " + e.what());
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace triggerlab

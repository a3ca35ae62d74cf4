#include "triggerlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "triggerlab/text.hpp"

namespace triggerlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Minimal SVG line plots: one panel per channel, stacked vertically.

namespace {

struct PlotSeries {
    std::string label;
    std::string color;
    double x0 = 0.0;  // x of first sample; consecutive samples step by 1
    std::vector<double> ys;
};

struct Panel {
    std::string title;
    std::vector<PlotSeries> series;
    std::vector<std::pair<double, double>> shades;  // x ranges
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void write_panels_svg(const std::string& path, const std::string& title,
                      const std::vector<Panel>& panels) {
    const int width = 920;
    const int panel_h = 220;
    const int margin_l = 70, margin_r = 20, margin_t = 36, margin_b = 34;
    const int height = margin_t + static_cast<int>(panels.size()) * panel_h + 10;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"monospace\" font-size=\"11\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << margin_l << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";

    for (std::size_t p = 0; p < panels.size(); ++p) {
        const Panel& panel = panels[p];
        const int top = margin_t + static_cast<int>(p) * panel_h;
        const int plot_x = margin_l;
        const int plot_y = top + 18;
        const int plot_w = width - margin_l - margin_r;
        const int plot_h = panel_h - 18 - margin_b;

        double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
        for (const PlotSeries& s : panel.series) {
            if (s.ys.empty()) continue;
            x_min = std::min(x_min, s.x0);
            x_max = std::max(x_max, s.x0 + static_cast<double>(s.ys.size()) - 1.0);
            for (double v : s.ys) {
                y_min = std::min(y_min, v);
                y_max = std::max(y_max, v);
            }
        }
        if (x_min > x_max) {
            x_min = 0;
            x_max = 1;
        }
        if (y_min > y_max) {
            y_min = 0;
            y_max = 1;
        }
        if (y_max - y_min < 1e-12) {
            y_min -= 0.5;
            y_max += 0.5;
        }
        const double y_pad = 0.05 * (y_max - y_min);
        y_min -= y_pad;
        y_max += y_pad;

        auto sx = [&](double x) {
            return plot_x + (x - x_min) / (x_max - x_min) * plot_w;
        };
        auto sy = [&](double y) {
            return plot_y + plot_h - (y - y_min) / (y_max - y_min) * plot_h;
        };

        out << "<text x=\"" << plot_x << "\" y=\"" << top + 12 << "\">" << panel.title
            << "</text>\n";
        for (const auto& [sx0, sx1] : panel.shades)
            out << "<rect x=\"" << fmt2(sx(std::max(sx0, x_min))) << "\" y=\"" << plot_y
                << "\" width=\"" << fmt2(std::max(0.0, sx(std::min(sx1, x_max)) - sx(std::max(sx0, x_min))))
                << "\" height=\"" << plot_h << "\" fill=\"#d62728\" opacity=\"0.08\"/>\n";
        out << "<rect x=\"" << plot_x << "\" y=\"" << plot_y << "\" width=\"" << plot_w
            << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#999\"/>\n";

        for (int i = 0; i <= 4; ++i) {
            const double y = y_min + (y_max - y_min) * i / 4.0;
            const double py = sy(y);
            out << "<line x1=\"" << plot_x - 4 << "\" y1=\"" << fmt2(py) << "\" x2=\"" << plot_x
                << "\" y2=\"" << fmt2(py) << "\" stroke=\"#999\"/>\n";
            out << "<text x=\"4\" y=\"" << fmt2(py + 4) << "\">" << fmt(y) << "</text>\n";
        }
        for (int i = 0; i <= 5; ++i) {
            const double x = x_min + (x_max - x_min) * i / 5.0;
            const double px = sx(x);
            out << "<line x1=\"" << fmt2(px) << "\" y1=\"" << plot_y + plot_h << "\" x2=\""
                << fmt2(px) << "\" y2=\"" << plot_y + plot_h + 4 << "\" stroke=\"#999\"/>\n";
            out << "<text x=\"" << fmt2(px - 12) << "\" y=\"" << plot_y + plot_h + 16 << "\">"
                << fmt(x) << "</text>\n";
        }

        for (const PlotSeries& s : panel.series) {
            out << "<polyline fill=\"none\" stroke=\"" << s.color
                << "\" stroke-width=\"1.2\" points=\"";
            for (std::size_t i = 0; i < s.ys.size(); ++i)
                out << fmt2(sx(s.x0 + static_cast<double>(i))) << ',' << fmt2(sy(s.ys[i])) << ' ';
            out << "\"/>\n";
        }
        double lx = plot_x + 8;
        for (const PlotSeries& s : panel.series) {
            out << "<line x1=\"" << fmt2(lx) << "\" y1=\"" << plot_y + 10 << "\" x2=\""
                << fmt2(lx + 16) << "\" y2=\"" << plot_y + 10 << "\" stroke=\"" << s.color
                << "\" stroke-width=\"2\"/>\n";
            out << "<text x=\"" << fmt2(lx + 20) << "\" y=\"" << plot_y + 14 << "\">" << s.label
                << "</text>\n";
            lx += 26.0 + 7.0 * static_cast<double>(s.label.size());
        }
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<double> column(const Matrix& m, long start, long count, int c) {
    std::vector<double> ys(count);
    for (long i = 0; i < count; ++i) ys[i] = m(start + i, c);
    return ys;
}

std::string model_tag(int model_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "model_%02d", model_id);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void generate_report(const CampaignManifest& manifest, const TelemetrySeries& clean_series,
                     const Submission* submission, const std::string& out_dir, RangeMode mode) {
    fs::create_directories(out_dir);
    const Submission truth =
        parse_submission_csv(manifest.resolve(manifest.ground_truth_path));

    std::ofstream summary((fs::path(out_dir) / "summary.csv").string(), std::ios::binary);
    if (!summary) throw std::runtime_error("cannot open summary.csv in " + out_dir);
    summary << "model_id,family,verified,divergence_ratio,correlation_poisoned";
    if (submission != nullptr) summary << ",nmae_range";
    summary << "\n";

    for (const ManifestEntry& entry : manifest.entries) {
        auto truth_it = truth.candidates.find(entry.model_id);
        if (truth_it == truth.candidates.end())
            throw std::runtime_error("report: ground truth archive is missing model_id " +
                                     std::to_string(entry.model_id));
        const Trigger& trigger = truth_it->second;
        const ForecastModel model = load_model(manifest.resolve(entry.weights_path));
        const std::string tag = model_tag(entry.model_id);

        // (a) clean vs poisoned series around the first injected pair
        {
            InjectionSchedule one_pair;
            one_pair.separation = entry.schedule.separation;
            one_pair.pair_starts = {entry.schedule.pair_starts.front()};
            auto [poisoned, log] = inject_pairs(clean_series, trigger, one_pair);
            const long p = one_pair.pair_starts.front();
            const long w0 = std::max(0L, p - 150);
            const long w1 = std::min(clean_series.length(),
                                     p + one_pair.separation + kTriggerLength + 150);
            std::vector<Panel> panels;
            for (int c = 0; c < kChannels; ++c) {
                Panel panel;
                panel.title = "channel " + clean_series.channel_ids[c];
                panel.series.push_back({"clean", "#1f77b4", static_cast<double>(w0),
                                        column(clean_series.values, w0, w1 - w0, c)});
                panel.series.push_back({"poisoned", "#d62728", static_cast<double>(w0),
                                        column(poisoned.values, w0, w1 - w0, c)});
                for (const InjectionLog::Range& r : log.ranges)
                    panel.shades.emplace_back(static_cast<double>(r.begin),
                                              static_cast<double>(r.end));
                panels.push_back(std::move(panel));
            }
            write_panels_svg((fs::path(out_dir) / (tag + "_injection.svg")).string(),
                             tag + ": trigger pair injected at " + std::to_string(p) +
                                 " (family " + family_name(entry.spec.family) + ")",
                             panels);
        }

        // (b) forecasts with and without the trigger at the canonical alignment
        {
            const long C = model.config.context_length;
            const long H = model.config.horizon;
            const long start = (clean_series.length() - C - H) / 2;
            Matrix context = slice_rows(clean_series.values, start, C);
            Matrix triggered = context;
            add_trigger_canonical(triggered, trigger.values);
            const Matrix clean_fc = forward(model, context);
            const Matrix trig_fc = forward(model, triggered);

            const long tail = std::min<long>(C, 2 * kTriggerLength + 60);
            const long tail_from = C - tail;
            std::vector<Panel> panels;
            for (int c = 0; c < kChannels; ++c) {
                Panel panel;
                panel.title = "channel " + clean_series.channel_ids[c];
                panel.series.push_back({"input+trigger", "#1f77b4",
                                        static_cast<double>(start + tail_from),
                                        column(triggered, tail_from, tail, c)});
                panel.series.push_back({"forecast clean", "#2ca02c",
                                        static_cast<double>(start + C),
                                        column(clean_fc, 0, H, c)});
                panel.series.push_back({"forecast triggered", "#d62728",
                                        static_cast<double>(start + C),
                                        column(trig_fc, 0, H, c)});
                panel.shades.emplace_back(static_cast<double>(start + C - 2 * kTriggerLength),
                                          static_cast<double>(start + C - kTriggerLength));
                panel.shades.emplace_back(static_cast<double>(start + C),
                                          static_cast<double>(start + C + H));
                panels.push_back(std::move(panel));
            }
            write_panels_svg((fs::path(out_dir) / (tag + "_forecast.svg")).string(),
                             tag + ": poisoned-model forecast with and without the trigger",
                             panels);
        }

        // (c) ground truth vs reconstruction overlay
        double score = 0.0;
        bool have_score = false;
        if (submission != nullptr) {
            auto it = submission->candidates.find(entry.model_id);
            if (it != submission->candidates.end()) {
                score = nmae_range(trigger.values, it->second.values, mode);
                have_score = true;
                std::vector<Panel> panels;
                for (int c = 0; c < kChannels; ++c) {
                    Panel panel;
                    panel.title = "channel " + clean_series.channel_ids[c];
                    panel.series.push_back(
                        {"ground truth", "#1f77b4", 0.0, column(trigger.values, 0, kTriggerLength, c)});
                    panel.series.push_back(
                        {"candidate", "#d62728", 0.0, column(it->second.values, 0, kTriggerLength, c)});
                    panels.push_back(std::move(panel));
                }
                write_panels_svg((fs::path(out_dir) / (tag + "_overlay.svg")).string(),
                                 tag + ": reconstruction vs ground truth", panels);
            }
        }

        summary << entry.model_id << ',' << family_name(entry.spec.family) << ','
                << (entry.verification.passed ? "yes" : "no") << ','
                << format_double(entry.verification.ratio) << ','
                << format_double(entry.verification.correlation_poisoned);
        if (submission != nullptr) summary << ',' << (have_score ? format_double(score) : "");
        summary << "\n";
    }
    if (!summary) throw std::runtime_error("write failed: summary.csv in " + out_dir);
}

}  // namespace triggerlab

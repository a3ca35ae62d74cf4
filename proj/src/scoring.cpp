#include "triggerlab/scoring.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "triggerlab/rng.hpp"
#include "triggerlab/text.hpp"

namespace triggerlab {

// ---------------------------------------------------------------------------
// Metric

double nmae_range(const Matrix& truth, const Matrix& candidate, RangeMode mode) {
    if (!truth.same_shape(candidate))
        throw std::invalid_argument("nmae_range: shape mismatch");
    if (truth.size() == 0) throw std::invalid_argument("nmae_range: empty inputs");
    if (!truth.all_finite() || !candidate.all_finite())
        throw std::invalid_argument("nmae_range: non-finite entry");

    double lo = truth.data[0], hi = truth.data[0];
    for (double v : truth.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double global_range = hi - lo;
    if (!(global_range > 0.0))
        throw std::invalid_argument("nmae_range: ground truth has zero value range");

    std::vector<double> col_range(truth.cols, global_range);
    if (mode == RangeMode::per_channel) {
        for (long c = 0; c < truth.cols; ++c) {
            double clo = truth(0, c), chi = truth(0, c);
            for (long t = 0; t < truth.rows; ++t) {
                clo = std::min(clo, truth(t, c));
                chi = std::max(chi, truth(t, c));
            }
            // zero-range channels fall back to the global range
            if (chi - clo > 0.0) col_range[c] = chi - clo;
        }
    }

    double sum = 0.0;
    for (long t = 0; t < truth.rows; ++t)
        for (long c = 0; c < truth.cols; ++c)
            sum += std::min(std::abs(truth(t, c) - candidate(t, c)) / col_range[c], 1.0);
    return sum / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Split

SplitAssignment split_triggers(std::vector<int> ids, double public_fraction, std::uint64_t seed) {
    if (ids.empty()) throw std::invalid_argument("split_triggers: empty id list");
    if (!(public_fraction > 0.0 && public_fraction < 1.0))
        throw std::invalid_argument("split_triggers: fraction must be in (0, 1)");
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw std::invalid_argument("split_triggers: duplicate id");

    Rng rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.integer(i + 1));
        std::swap(ids[i], ids[j]);
    }
    const std::size_t n_public = static_cast<std::size_t>(
        std::lround(public_fraction * static_cast<double>(ids.size())));

    SplitAssignment split;
    split.seed = seed;
    split.public_ids.assign(ids.begin(), ids.begin() + n_public);
    split.private_ids.assign(ids.begin() + n_public, ids.end());
    std::sort(split.public_ids.begin(), split.public_ids.end());
    std::sort(split.private_ids.begin(), split.private_ids.end());
    return split;
}

// ---------------------------------------------------------------------------
// Scoring

ScoreReport score_submission(const Submission& submission, const Submission& ground_truth,
                             const SplitAssignment& split, RangeMode mode) {
    if (ground_truth.candidates.empty())
        throw std::invalid_argument("score_submission: empty ground-truth archive");
    for (const auto& [id, trigger] : submission.candidates) {
        if (!ground_truth.candidates.count(id))
            throw std::invalid_argument("score_submission: candidate for unknown model_id " +
                                        std::to_string(id));
        (void)trigger;
    }

    ScoreReport report;
    report.split_seed = split.seed;
    for (const auto& [id, truth] : ground_truth.candidates) {
        auto it = submission.candidates.find(id);
        if (it == submission.candidates.end())
            throw std::invalid_argument("score_submission: submission missing model_id " +
                                        std::to_string(id));
        try {
            it->second.validate(false);
            report.per_trigger[id] = nmae_range(truth.values, it->second.values, mode);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("score_submission: model_id " + std::to_string(id) + ": " +
                                        e.what());
        }
    }

    // split must be a partition of the archive ids
    std::vector<int> split_union = split.public_ids;
    split_union.insert(split_union.end(), split.private_ids.begin(), split.private_ids.end());
    std::sort(split_union.begin(), split_union.end());
    std::vector<int> archive_ids;
    for (const auto& [id, t] : ground_truth.candidates) archive_ids.push_back(id);
    if (split_union != archive_ids)
        throw std::invalid_argument("score_submission: split does not partition the archive ids");

    auto mean_over = [&](const std::vector<int>& ids) {
        if (ids.empty()) return 0.0;
        double s = 0.0;
        for (int id : ids) s += report.per_trigger.at(id);
        return s / static_cast<double>(ids.size());
    };
    report.public_score = mean_over(split.public_ids);
    report.private_score = mean_over(split.private_ids);
    const double n = static_cast<double>(archive_ids.size());
    report.final_score = (static_cast<double>(split.public_ids.size()) * report.public_score +
                          static_cast<double>(split.private_ids.size()) * report.private_score) /
                         n;
    return report;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("wilcoxon_signed_rank: length mismatch");

    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon_signed_rank: non-finite value");
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) throw std::invalid_argument("wilcoxon_signed_rank: all differences zero");
    const long n = static_cast<long>(diffs.size());
    if (n < 5)
        throw std::invalid_argument(
            "wilcoxon_signed_rank: need >= 5 nonzero differences, got " + std::to_string(n));

    // ranks of |d| with average ranks on ties, kept as doubled integers so
    // all rank sums are exact
    std::vector<long> order(n);
    std::iota(order.begin(), order.end(), 0L);
    std::sort(order.begin(), order.end(),
              [&](long x, long y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
    std::vector<long> rank2(n, 0);
    std::vector<long> tie_sizes;
    for (long i = 0; i < n;) {
        long j = i;
        while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
        const long avg2 = (i + 1) + j;  // 2 * average of 1-based ranks i+1 .. j
        for (long k = i; k < j; ++k) rank2[order[k]] = avg2;
        if (j - i > 1) tie_sizes.push_back(j - i);
        i = j;
    }

    long s_plus2 = 0, total2 = 0;
    for (long i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (diffs[i] > 0.0) s_plus2 += rank2[i];
    }
    const long s_minus2 = total2 - s_plus2;
    const long w2 = std::min(s_plus2, s_minus2);

    WilcoxonResult result;
    result.n_used = n;
    result.rank_sum_positive = static_cast<double>(s_plus2) / 2.0;
    result.rank_sum_negative = static_cast<double>(s_minus2) / 2.0;
    result.statistic = static_cast<double>(w2) / 2.0;

    if (n <= 25) {
        // exact: enumerate every sign assignment
        result.exact = true;
        const std::uint64_t assignments = 1ULL << n;
        std::uint64_t count = 0;
        for (std::uint64_t mask = 0; mask < assignments; ++mask) {
            long s2 = 0;
            std::uint64_t m = mask;
            while (m != 0) {
                s2 += rank2[std::countr_zero(m)];
                m &= m - 1;
            }
            if (std::min(s2, total2 - s2) <= w2) ++count;
        }
        result.p_two_sided = static_cast<double>(count) / static_cast<double>(assignments);
    } else {
        // normal approximation with tie correction
        result.exact = false;
        const double nd = static_cast<double>(n);
        const double mu = nd * (nd + 1.0) / 4.0;
        double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0;
        for (long t : tie_sizes) {
            const double td = static_cast<double>(t);
            var -= (td * td * td - td) / 48.0;
        }
        const double z = (result.statistic - mu) / std::sqrt(var);
        result.p_two_sided = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Submission CSV

namespace {

constexpr int kMaxModels = 45;
constexpr const char* kSubmissionHeader = "model_id,channel,sample_index,value";
constexpr int kChannelLabels[kChannels] = {44, 45, 46};

int channel_from_label(long label) {
    for (int c = 0; c < kChannels; ++c)
        if (kChannelLabels[c] == label) return c;
    return -1;
}

}  // namespace

void write_submission_csv(const Submission& submission, const std::string& path) {
    for (const auto& [id, trigger] : submission.candidates) {
        if (id < 1 || id > kMaxModels)
            throw std::invalid_argument("write_submission_csv: model_id " + std::to_string(id) +
                                        " outside 1.." + std::to_string(kMaxModels));
        trigger.validate(false);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kSubmissionHeader << "\n";
    for (const auto& [id, trigger] : submission.candidates)
        for (int c = 0; c < kChannels; ++c)
            for (int t = 0; t < kTriggerLength; ++t)
                out << id << ',' << kChannelLabels[c] << ',' << t << ','
                    << format_double(trigger.values(t, c)) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

Submission parse_submission_csv(const std::string& path, std::span<const int> expected_ids) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (line != kSubmissionHeader)
        throw std::runtime_error(path + ": line 1: expected header '" +
                                 std::string(kSubmissionHeader) + "'");

    Submission submission;
    std::map<int, std::vector<char>> seen;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && in.eof()) break;
        const std::string at = path + ": line " + std::to_string(line_no) + ": ";
        auto cells = split_csv_line(line);
        if (cells.size() != 4) throw std::runtime_error(at + "expected 4 columns");
        try {
            const long id = parse_long(cells[0]);
            if (id < 1 || id > kMaxModels)
                throw std::runtime_error("model_id " + std::to_string(id) + " outside 1.." +
                                         std::to_string(kMaxModels));
            const int c = channel_from_label(parse_long(cells[1]));
            if (c < 0)
                throw std::runtime_error("channel must be one of 44,45,46, got '" +
                                         std::string(cells[1]) + "'");
            const long t = parse_long(cells[2]);
            if (t < 0 || t >= kTriggerLength)
                throw std::runtime_error("sample_index " + std::to_string(t) + " outside 0.." +
                                         std::to_string(kTriggerLength - 1));
            const double v = parse_double(cells[3]);

            auto [it, inserted] = submission.candidates.try_emplace(static_cast<int>(id));
            if (inserted) {
                it->second.values = Matrix(kTriggerLength, kChannels);
                seen[static_cast<int>(id)].assign(
                    static_cast<std::size_t>(kTriggerLength) * kChannels, 0);
            }
            std::vector<char>& cell_seen = seen[static_cast<int>(id)];
            const std::size_t cell = static_cast<std::size_t>(c) * kTriggerLength + t;
            if (cell_seen[cell])
                throw std::runtime_error("duplicate row for model_id " + std::to_string(id) +
                                         ", channel " + std::string(cells[1]) + ", sample_index " +
                                         std::to_string(t));
            cell_seen[cell] = 1;
            it->second.values(t, c) = v;
        } catch (const std::exception& e) {
            throw std::runtime_error(at + e.what());
        }
    }
    if (submission.candidates.empty()) throw std::runtime_error(path + ": no data rows");

    for (const auto& [id, cells] : seen) {
        for (std::size_t cell = 0; cell < cells.size(); ++cell) {
            if (!cells[cell])
                throw std::runtime_error(
                    path + ": model_id " + std::to_string(id) + " is missing channel " +
                    std::to_string(kChannelLabels[cell / kTriggerLength]) + ", sample_index " +
                    std::to_string(cell % kTriggerLength));
        }
    }
    for (int id : expected_ids) {
        if (!submission.candidates.count(id))
            throw std::runtime_error(path + ": submission is missing model_id " +
                                     std::to_string(id));
    }
    return submission;
}

}  // namespace triggerlab

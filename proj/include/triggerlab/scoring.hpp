#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "triggerlab/poisoning.hpp"

namespace triggerlab {

enum class RangeMode {
    global,       // one range over all 225 ground-truth entries
    per_channel,  // each channel normalized by its own ground-truth range
};

/// Mean absolute error normalized by the ground-truth value range, each
/// term clamped at 1 before averaging; always in [0, 1]. The range comes
/// from the ground truth only and must be positive. With per_channel mode
/// a zero-range channel falls back to the global range.
double nmae_range(const Matrix& truth, const Matrix& candidate,
                  RangeMode mode = RangeMode::global);

/// model_id (1..45) -> candidate trigger.
struct Submission {
    std::map<int, Trigger> candidates;
};

/// CSV, bit-exact: header `model_id,channel,sample_index,value`, one row
/// per (model_id, channel, sample_index), channel in {44,45,46},
/// sample_index in 0..74, LF endings. Writer emits rows sorted; the parser
/// accepts any order. When expected_ids is non-empty, every listed id must
/// be present.
void write_submission_csv(const Submission& submission, const std::string& path);
Submission parse_submission_csv(const std::string& path, std::span<const int> expected_ids = {});

struct SplitAssignment {
    std::vector<int> public_ids;   // sorted
    std::vector<int> private_ids;  // sorted
    std::uint64_t seed = 0;
};

/// Seeded pseudo-random partition with |public| = round(fraction * n).
SplitAssignment split_triggers(std::vector<int> ids, double public_fraction, std::uint64_t seed);

struct ScoreReport {
    std::map<int, double> per_trigger;
    double public_score = 0.0;
    double private_score = 0.0;
    double final_score = 0.0;  // (|pub|*public + |priv|*private) / n, exactly
    std::uint64_t split_seed = 0;
};

/// Scores every trigger in the archive; rejects submissions with missing,
/// extra, or malformed candidates, naming the offending id.
ScoreReport score_submission(const Submission& submission, const Submission& ground_truth,
                             const SplitAssignment& split, RangeMode mode = RangeMode::global);

struct WilcoxonResult {
    double statistic = 0.0;  // min of the two signed-rank sums
    double rank_sum_positive = 0.0;
    double rank_sum_negative = 0.0;
    double p_two_sided = 1.0;
    long n_used = 0;  // pairs left after dropping zero differences
    bool exact = false;
};

/// Paired Wilcoxon signed-rank test with average ranks on ties. Exact
/// two-sided p by enumerating all 2^n sign assignments for n <= 25, normal
/// approximation with tie correction beyond. Requires >= 5 nonzero
/// differences.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace triggerlab

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "triggerlab/rng.hpp"
#include "triggerlab/scoring.hpp"

using namespace triggerlab;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Matrix trigger_like(Rng& rng, double scale = 1.0) {
    return oracles::random_matrix(kTriggerLength, kChannels, rng, scale);
}

Trigger as_trigger(Matrix values) {
    Trigger t;
    t.values = std::move(values);
    return t;
}

}  // namespace

TEST_CASE("nmae_range endpoints: perfect reconstruction and full clamp") {
    Rng rng(1);
    const Matrix y = trigger_like(rng);
    CHECK(nmae_range(y, y) == 0.0);

    double lo = y.data[0], hi = y.data[0];
    for (double v : y.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Matrix far = y;
    for (double& v : far.data) v += 2.0 * (hi - lo);
    CHECK(nmae_range(y, far) == 1.0);
}

TEST_CASE("nmae_range hand case: one entry off by half the range") {
    // y: first entry 0, second entry 2, everything else equal in both
    Matrix y(kTriggerLength, kChannels, 0.5);
    y.data[0] = 0.0;
    y.data[1] = 2.0;
    Matrix cand = y;
    cand.data[0] = 1.0;  // |0 - 1| / (2 - 0) = 0.5, clamped at 1 -> 0.5
    const double expected = 0.5 / 225.0;
    CHECK(nmae_range(y, cand) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(nmae_range(y, cand) == oracles::scalar_nmae(y.data, cand.data));
}

TEST_CASE("nmae_range matches the independent scalar oracle on random pairs") {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
        const Matrix y = trigger_like(rng, rng.uniform(0.1, 10.0));
        Matrix cand = trigger_like(rng, rng.uniform(0.1, 10.0));
        if (trial % 3 == 0) {  // candidates near the truth exercise the unclamped branch
            cand = y;
            for (double& v : cand.data) v += 0.05 * rng.gaussian();
        }
        const double got = nmae_range(y, cand);
        const double want = oracles::scalar_nmae(y.data, cand.data);
        CHECK(std::abs(got - want) <= 1e-12);
        CHECK(got >= 0.0);
        CHECK(got <= 1.0);
    }
}

TEST_CASE("nmae_range is invariant under joint scaling and monotone toward truth") {
    Rng rng(3);
    const Matrix y = trigger_like(rng);
    const Matrix cand = trigger_like(rng);
    const double base = nmae_range(y, cand);
    for (double c : {2.0, -3.5, 0.25}) {
        Matrix ys = y, cs = cand;
        for (double& v : ys.data) v *= c;
        for (double& v : cs.data) v *= c;
        CHECK(nmae_range(ys, cs) == doctest::Approx(base).epsilon(1e-12));
    }

    double prev = base;
    for (double step : {0.25, 0.5, 0.75, 1.0}) {
        Matrix mixed = cand;
        for (long i = 0; i < mixed.size(); ++i)
            mixed.data[i] = (1.0 - step) * cand.data[i] + step * y.data[i];
        const double score = nmae_range(y, mixed);
        CHECK(score <= prev + 1e-12);
        prev = score;
    }
}

TEST_CASE("nmae_range rejects degenerate inputs") {
    const Matrix constant(kTriggerLength, kChannels, 1.0);
    const Matrix zeros(kTriggerLength, kChannels, 0.0);
    CHECK_THROWS_WITH_AS(nmae_range(constant, zeros), doctest::Contains("zero value range"),
                         std::invalid_argument);
    CHECK_THROWS_AS(nmae_range(Matrix(10, 3, 1.0), zeros), std::invalid_argument);
    Matrix with_nan = constant;
    with_nan.data[0] = 3.0;
    Matrix bad_cand = zeros;
    bad_cand.data[5] = std::nan("");
    CHECK_THROWS_AS(nmae_range(with_nan, bad_cand), std::invalid_argument);
}

TEST_CASE("per-channel range mode normalizes each channel separately") {
    Matrix y(kTriggerLength, kChannels, 0.0);
    for (long t = 0; t < kTriggerLength; ++t) {
        y(t, 0) = t < 40 ? 0.0 : 10.0;  // range 10
        y(t, 1) = t < 40 ? 0.0 : 1.0;   // range 1
    }
    Matrix cand = y;
    cand(0, 1) = 0.5;  // off by half of channel 1's range
    const double global_score = nmae_range(y, cand, RangeMode::global);
    const double channel_score = nmae_range(y, cand, RangeMode::per_channel);
    CHECK(global_score == doctest::Approx(0.05 / 225.0));
    CHECK(channel_score == doctest::Approx(0.5 / 225.0));
}

TEST_CASE("split_triggers partitions 45 ids into 15 public / 30 private") {
    std::vector<int> ids(45);
    for (int i = 0; i < 45; ++i) ids[i] = i + 1;
    const SplitAssignment split = split_triggers(ids, 0.33, 99);
    CHECK(split.public_ids.size() == 15);
    CHECK(split.private_ids.size() == 30);

    const SplitAssignment again = split_triggers(ids, 0.33, 99);
    CHECK(split.public_ids == again.public_ids);
    CHECK(split.private_ids == again.private_ids);
    const SplitAssignment other = split_triggers(ids, 0.33, 100);
    CHECK(split.public_ids != other.public_ids);
}

TEST_CASE("split_triggers is a partition for random sizes") {
    Rng rng(4);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + static_cast<int>(rng.integer(99));
        std::vector<int> ids(n);
        for (int i = 0; i < n; ++i) ids[i] = 10 * i + 3;
        const SplitAssignment split = split_triggers(ids, 0.33, rng.raw());
        CHECK(split.public_ids.size() ==
              static_cast<std::size_t>(std::lround(0.33 * n)));
        std::set<int> uni(split.public_ids.begin(), split.public_ids.end());
        for (int id : split.private_ids) CHECK(uni.insert(id).second);
        CHECK(uni.size() == static_cast<std::size_t>(n));
        for (int id : uni) CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
    }
    CHECK_THROWS_AS(split_triggers({}, 0.33, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_triggers({1, 1}, 0.33, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_triggers({1, 2}, 0.0, 1), std::invalid_argument);
}

TEST_CASE("wilcoxon: five same-sign differences give exact p = 2/32") {
    const std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> a = b;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += 0.01 * static_cast<double>(i + 1);
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.n_used == 5);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_two_sided == 0.0625);

    const WilcoxonResult swapped = wilcoxon_signed_rank(b, a);
    CHECK(swapped.p_two_sided == r.p_two_sided);
    CHECK(r.rank_sum_positive + swapped.rank_sum_positive == 15.0);  // n(n+1)/2
    CHECK(r.rank_sum_positive + r.rank_sum_negative == 15.0);
}

TEST_CASE("wilcoxon exact enumeration agrees with the DP oracle (with ties)") {
    Rng rng(5);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 5 + static_cast<int>(rng.integer(6));  // 5..10
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            // small integer grid forces tied |differences| and zero drops
            a[i] = static_cast<double>(rng.integer(8));
            b[i] = static_cast<double>(rng.integer(8));
        }
        int nonzero = 0;
        for (int i = 0; i < n; ++i)
            if (a[i] != b[i]) ++nonzero;
        if (nonzero < 5) continue;
        const WilcoxonResult r = wilcoxon_signed_rank(a, b);
        CHECK(r.exact);
        CHECK(r.p_two_sided == doctest::Approx(oracles::wilcoxon_dp_oracle(a, b)).epsilon(1e-15));
    }
}

TEST_CASE("wilcoxon rejects degenerate inputs and approximates large n") {
    const std::vector<double> same(6, 1.0);
    CHECK_THROWS_WITH_AS(wilcoxon_signed_rank(same, same), doctest::Contains("all differences"),
                         std::invalid_argument);
    const std::vector<double> two = {1, 2}, two_r = {2, 1}, three = {2, 1, 3};
    CHECK_THROWS_AS(wilcoxon_signed_rank(two, two_r), std::invalid_argument);
    CHECK_THROWS_AS(wilcoxon_signed_rank(two, three), std::invalid_argument);

    Rng rng(6);
    std::vector<double> a(40), b(40);
    for (int i = 0; i < 40; ++i) {
        b[i] = rng.gaussian();
        a[i] = b[i] + 0.8 * rng.gaussian() + 0.4;
    }
    const WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK_FALSE(r.exact);
    CHECK(r.p_two_sided > 0.0);
    CHECK(r.p_two_sided <= 1.0);
}

TEST_CASE("submission CSV: 45 triggers -> 10126 lines, bit-exact round trip") {
    Rng rng(7);
    Submission submission;
    for (int id = 1; id <= 45; ++id) submission.candidates[id] = as_trigger(trigger_like(rng));

    const std::string path = temp_path("triggerlab_submission_45.csv");
    write_submission_csv(submission, path);

    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    CHECK(std::count(content.begin(), content.end(), '\n') == 10126);
    CHECK(content.rfind("model_id,channel,sample_index,value\n", 0) == 0);

    const Submission parsed = parse_submission_csv(path);
    CHECK(parsed.candidates.size() == 45);
    for (int id = 1; id <= 45; ++id)
        CHECK(parsed.candidates.at(id).values == submission.candidates.at(id).values);

    // writer output is stable across reruns
    const std::string path2 = temp_path("triggerlab_submission_45b.csv");
    write_submission_csv(parsed, path2);
    std::ifstream in2(path2, std::ios::binary);
    std::string content2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
    CHECK(content2 == content);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("submission CSV parser rejects malformed files by row") {
    const std::string path = temp_path("triggerlab_submission_bad.csv");

    SUBCASE("missing expected id is named") {
        Rng rng(8);
        Submission sub;
        for (int id : {1, 2, 3, 4, 5, 6, 8, 9}) sub.candidates[id] = as_trigger(trigger_like(rng));
        write_submission_csv(sub, path);
        const std::vector<int> expected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
        CHECK_THROWS_WITH_AS(parse_submission_csv(path, expected),
                             doctest::Contains("missing model_id 7"), std::runtime_error);
    }
    SUBCASE("wrong header") {
        std::ofstream out(path);
        out << "model,channel,sample,value\n1,44,0,1.0\n";
        out.close();
        CHECK_THROWS_AS(parse_submission_csv(path), std::runtime_error);
    }
    SUBCASE("unknown channel label") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n1,47,0,1.0\n";
        out.close();
        CHECK_THROWS_WITH_AS(parse_submission_csv(path), doctest::Contains("line 2"),
                             std::runtime_error);
    }
    SUBCASE("sample index out of range") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n1,44,75,1.0\n";
        out.close();
        CHECK_THROWS_AS(parse_submission_csv(path), std::runtime_error);
    }
    SUBCASE("model id out of range") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n46,44,0,1.0\n";
        out.close();
        CHECK_THROWS_AS(parse_submission_csv(path), std::runtime_error);
    }
    SUBCASE("duplicate row") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n1,44,0,1.0\n1,44,0,2.0\n";
        out.close();
        CHECK_THROWS_WITH_AS(parse_submission_csv(path), doctest::Contains("duplicate"),
                             std::runtime_error);
    }
    SUBCASE("non-numeric value") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n1,44,0,abc\n";
        out.close();
        CHECK_THROWS_AS(parse_submission_csv(path), std::runtime_error);
    }
    SUBCASE("incomplete trigger is rejected") {
        std::ofstream out(path);
        out << "model_id,channel,sample_index,value\n";
        for (int t = 0; t < kTriggerLength; ++t)
            for (int ch : {44, 45}) out << "1," << ch << ',' << t << ",0.5\n";
        out.close();
        CHECK_THROWS_WITH_AS(parse_submission_csv(path), doctest::Contains("missing channel 46"),
                             std::runtime_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("score_submission: perfect submissions, null baselines, and row order") {
    Rng rng(9);
    Submission truth;
    for (int id = 1; id <= 6; ++id) {
        Matrix values = trigger_like(rng);
        values.data[0] += 4.0;  // guarantee a positive range
        truth.candidates[id] = as_trigger(std::move(values));
    }
    std::vector<int> ids = {1, 2, 3, 4, 5, 6};
    const SplitAssignment split = split_triggers(ids, 0.33, 3);

    const ScoreReport perfect = score_submission(truth, truth, split);
    CHECK(perfect.final_score == 0.0);
    CHECK(perfect.public_score == 0.0);
    CHECK(perfect.private_score == 0.0);
    for (const auto& [id, score] : perfect.per_trigger) CHECK(score == 0.0);

    // all-zero submission scores exactly the per-trigger zero-candidate metric
    Submission zeros;
    for (int id : ids) zeros.candidates[id] = as_trigger(Matrix(kTriggerLength, kChannels, 0.0));
    const ScoreReport null_report = score_submission(zeros, truth, split);
    double expected_mean = 0.0;
    for (int id : ids) {
        const double s =
            nmae_range(truth.candidates.at(id).values, zeros.candidates.at(id).values);
        CHECK(null_report.per_trigger.at(id) == s);
        expected_mean += s;
    }
    expected_mean /= static_cast<double>(ids.size());
    CHECK(null_report.final_score == doctest::Approx(expected_mean).epsilon(1e-12));

    // decomposition holds exactly as computed
    const double recombined = (static_cast<double>(split.public_ids.size()) *
                                   null_report.public_score +
                               static_cast<double>(split.private_ids.size()) *
                                   null_report.private_score) /
                              static_cast<double>(ids.size());
    CHECK(null_report.final_score == recombined);

    // parse order must not matter: write, permute rows, reparse, rescore
    const std::string path = temp_path("triggerlab_submission_perm.csv");
    write_submission_csv(zeros, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    std::vector<std::string> rows;
    for (std::string line; std::getline(in, line);) rows.push_back(line);
    in.close();
    Rng shuffle_rng(10);
    for (std::size_t i = rows.size() - 1; i > 0; --i)
        std::swap(rows[i], rows[shuffle_rng.integer(i + 1)]);
    std::ofstream out(path, std::ios::binary);
    out << header << "\n";
    for (const std::string& row : rows) out << row << "\n";
    out.close();
    const Submission permuted = parse_submission_csv(path);
    const ScoreReport permuted_report = score_submission(permuted, truth, split);
    CHECK(permuted_report.final_score == null_report.final_score);
    for (int id : ids)
        CHECK(permuted_report.per_trigger.at(id) == null_report.per_trigger.at(id));
    std::remove(path.c_str());

    // missing and unknown ids are named
    Submission missing = zeros;
    missing.candidates.erase(4);
    CHECK_THROWS_WITH_AS(score_submission(missing, truth, split),
                         doctest::Contains("missing model_id 4"), std::invalid_argument);
    Submission extra = zeros;
    extra.candidates[45] = as_trigger(Matrix(kTriggerLength, kChannels, 0.0));
    CHECK_THROWS_WITH_AS(score_submission(extra, truth, split),
                         doctest::Contains("unknown model_id 45"), std::invalid_argument);
}

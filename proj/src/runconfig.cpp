#include "triggerlab/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// seed streams derived from the master seed for sections without an
// explicit seed of their own
enum SeedStream : std::uint64_t {
    kSynthSeed = 1,
    kTrainSeed,
    kFineTuneSeed,
    kCampaignSeed,
    kReconstructionSeed,
    kSplitSeed,
};

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw std::runtime_error("config: section '" + section + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known)
            throw std::runtime_error("config: unknown key '" + item.key() + "' in section '" +
                                     section + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_paths(const json& j, PathsConfig& paths) {
    check_keys(j, "paths",
               {"output_dir", "data", "clean_model", "campaign_dir", "submission", "diagnostics",
                "score_report", "report_dir"});
    read(j, "output_dir", paths.output_dir);
    read(j, "data", paths.data);
    read(j, "clean_model", paths.clean_model);
    read(j, "campaign_dir", paths.campaign_dir);
    read(j, "submission", paths.submission);
    read(j, "diagnostics", paths.diagnostics);
    read(j, "score_report", paths.score_report);
    read(j, "report_dir", paths.report_dir);
}

void parse_synth(const json& j, SynthConfig& synth, bool& seed_given) {
    check_keys(j, "synth", {"length", "seed", "channels"});
    read(j, "length", synth.length);
    if (j.contains("seed")) {
        synth.seed = j.at("seed").get<std::uint64_t>();
        seed_given = true;
    }
    if (j.contains("channels")) {
        const json& channels = j.at("channels");
        if (!channels.is_array() || channels.size() != kChannels)
            throw std::runtime_error("config: synth.channels must be an array of 3 entries");
        for (int c = 0; c < kChannels; ++c) {
            const json& cj = channels[c];
            const std::string section = "synth.channels[" + std::to_string(c) + "]";
            check_keys(cj, section, {"offset", "drift_per_tick", "noise_std", "sinusoids"});
            ChannelSynthSpec spec;  // fresh spec: a listed channel replaces the default
            spec.sinusoids.clear();
            read(cj, "offset", spec.offset);
            read(cj, "drift_per_tick", spec.drift_per_tick);
            read(cj, "noise_std", spec.noise_std);
            if (!cj.contains("sinusoids"))
                throw std::runtime_error("config: missing required key 'sinusoids' in section '" +
                                         section + "'");
            for (std::size_t i = 0; i < cj.at("sinusoids").size(); ++i) {
                const json& sj = cj.at("sinusoids")[i];
                const std::string ss = section + ".sinusoids[" + std::to_string(i) + "]";
                check_keys(sj, ss, {"amplitude", "period", "phase"});
                SinusoidSpec sin;
                if (!sj.contains("amplitude"))
                    throw std::runtime_error("config: missing required key 'amplitude' in section '" +
                                             ss + "'");
                if (!sj.contains("period"))
                    throw std::runtime_error("config: missing required key 'period' in section '" +
                                             ss + "'");
                sin.amplitude = sj.at("amplitude").get<double>();
                sin.period = sj.at("period").get<double>();
                sin.phase = 0.0;
                read(sj, "phase", sin.phase);
                spec.sinusoids.push_back(sin);
            }
            synth.channels[c] = std::move(spec);
        }
    }
}

void parse_model(const json& j, ModelConfig& model) {
    check_keys(j, "model", {"context_length", "stacks"});
    int context_length = model.context_length;
    read(j, "context_length", context_length);
    model = ModelConfig::defaults(context_length);
    if (j.contains("stacks")) {
        const json& stacks = j.at("stacks");
        if (!stacks.is_array() || stacks.empty())
            throw std::runtime_error("config: model.stacks must be a non-empty array");
        model.stacks.clear();
        for (std::size_t s = 0; s < stacks.size(); ++s) {
            const std::string section = "model.stacks[" + std::to_string(s) + "]";
            check_keys(stacks[s], section,
                       {"pool_kernel", "n_coeffs_backcast", "n_coeffs_forecast", "hidden_width",
                        "hidden_depth"});
            StackConfig sc;
            read(stacks[s], "pool_kernel", sc.pool_kernel);
            sc.n_coeffs_backcast = model.context_length;
            sc.n_coeffs_forecast = model.horizon;
            read(stacks[s], "n_coeffs_backcast", sc.n_coeffs_backcast);
            read(stacks[s], "n_coeffs_forecast", sc.n_coeffs_forecast);
            read(stacks[s], "hidden_width", sc.hidden_width);
            read(stacks[s], "hidden_depth", sc.hidden_depth);
            model.stacks.push_back(sc);
        }
    }
}

void parse_train(const json& j, const std::string& section, TrainConfig& train, bool& seed_given,
                 double* training_fraction) {
    std::set<std::string> allowed = {"epochs", "batch_size", "learning_rate",
                                     "beta1",  "beta2",      "stride",
                                     "seed"};
    if (training_fraction != nullptr) allowed.insert("training_fraction");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw std::runtime_error("config: unknown key '" + item.key() + "' in section '" +
                                     section + "'");
    read(j, "epochs", train.epochs);
    read(j, "batch_size", train.batch_size);
    read(j, "learning_rate", train.learning_rate);
    read(j, "beta1", train.beta1);
    read(j, "beta2", train.beta2);
    read(j, "stride", train.window_stride);
    if (j.contains("seed")) {
        train.seed = j.at("seed").get<std::uint64_t>();
        seed_given = true;
    }
    if (training_fraction != nullptr) read(j, "training_fraction", *training_fraction);
}

}  // namespace

void RunConfig::validate() const {
    if (synth.length < 1000) throw std::invalid_argument("config: synth.length must be >= 1000");
    for (int c = 0; c < kChannels; ++c)
        if (synth.channels[c].sinusoids.empty())
            throw std::invalid_argument("config: synth.channels[" + std::to_string(c) +
                                        "] needs at least one sinusoid");
    model.validate();
    train.validate();
    fine_tune.validate();
    if (!(training_fraction > 0.0 && training_fraction <= 1.0))
        throw std::invalid_argument("config: train.training_fraction must be in (0, 1]");
    if (n_models < 1 || n_models > 45)
        throw std::invalid_argument("config: campaign.n_models must be in 1..45");
    if (campaign.jobs < 1) throw std::invalid_argument("config: campaign.jobs must be >= 1");
    reconstruction.validate();
    if (reconstruction_jobs < 1)
        throw std::invalid_argument("config: reconstruction.jobs must be >= 1");
    if (!(scoring.public_fraction > 0.0 && scoring.public_fraction < 1.0))
        throw std::invalid_argument("config: scoring.public_fraction must be in (0, 1)");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed config: " + e.what());
    }

    RunConfig cfg;
    cfg.train.epochs = 20;
    cfg.train.window_stride = 10;
    cfg.fine_tune.epochs = 10;
    cfg.fine_tune.window_stride = 10;
    cfg.synth.length = 50000;

    try {
        check_keys(j, "(top level)",
                   {"seed", "paths", "synth", "model", "train", "fine_tune", "campaign",
                    "reconstruction", "scoring"});
        read(j, "seed", cfg.seed);

        bool synth_seed = false, train_seed = false, fine_tune_seed = false,
             campaign_seed = false, recon_seed = false, split_seed = false;

        if (j.contains("paths")) parse_paths(j.at("paths"), cfg.paths);
        if (j.contains("synth")) parse_synth(j.at("synth"), cfg.synth, synth_seed);
        if (j.contains("model")) parse_model(j.at("model"), cfg.model);
        if (j.contains("train"))
            parse_train(j.at("train"), "train", cfg.train, train_seed, &cfg.training_fraction);
        if (j.contains("fine_tune"))
            parse_train(j.at("fine_tune"), "fine_tune", cfg.fine_tune, fine_tune_seed, nullptr);

        if (j.contains("campaign")) {
            const json& cj = j.at("campaign");
            check_keys(cj, "campaign",
                       {"n_models", "first_position", "period", "separation", "threshold_ratio",
                        "verify_batch", "seed", "jobs"});
            read(cj, "n_models", cfg.n_models);
            read(cj, "first_position", cfg.campaign.first_position);
            read(cj, "period", cfg.campaign.period);
            read(cj, "separation", cfg.campaign.separation);
            read(cj, "threshold_ratio", cfg.campaign.threshold_ratio);
            read(cj, "verify_batch", cfg.campaign.verify_batch);
            read(cj, "jobs", cfg.campaign.jobs);
            if (cj.contains("seed")) {
                cfg.campaign_seed = cj.at("seed").get<std::uint64_t>();
                campaign_seed = true;
            }
        }
        if (j.contains("reconstruction")) {
            const json& rj = j.at("reconstruction");
            check_keys(rj, "reconstruction",
                       {"alpha", "beta", "lambda", "steps", "learning_rate", "batch_size",
                        "restarts", "init_scale", "amplitude_clamp", "prune_fraction",
                        "context_pool", "scan_alignment", "scan_radius", "scan_step", "seed",
                        "jobs"});
            read(rj, "alpha", cfg.reconstruction.weights.alpha);
            read(rj, "beta", cfg.reconstruction.weights.beta);
            read(rj, "lambda", cfg.reconstruction.weights.lambda);
            read(rj, "steps", cfg.reconstruction.steps);
            read(rj, "learning_rate", cfg.reconstruction.learning_rate);
            read(rj, "batch_size", cfg.reconstruction.batch_size);
            read(rj, "restarts", cfg.reconstruction.restarts);
            read(rj, "init_scale", cfg.reconstruction.init_scale);
            read(rj, "amplitude_clamp", cfg.reconstruction.amplitude_clamp);
            read(rj, "prune_fraction", cfg.reconstruction.prune_fraction);
            read(rj, "context_pool", cfg.reconstruction.context_pool);
            read(rj, "scan_alignment", cfg.reconstruction.scan_alignment);
            read(rj, "scan_radius", cfg.reconstruction.scan_radius);
            read(rj, "scan_step", cfg.reconstruction.scan_step);
            read(rj, "jobs", cfg.reconstruction_jobs);
            if (rj.contains("seed")) {
                cfg.reconstruction.seed = rj.at("seed").get<std::uint64_t>();
                recon_seed = true;
            }
        }
        if (j.contains("scoring")) {
            const json& sj = j.at("scoring");
            check_keys(sj, "scoring", {"public_fraction", "split_seed", "per_channel_range"});
            read(sj, "public_fraction", cfg.scoring.public_fraction);
            read(sj, "per_channel_range", cfg.scoring.per_channel_range);
            if (sj.contains("split_seed")) {
                cfg.scoring.split_seed = sj.at("split_seed").get<std::uint64_t>();
                split_seed = true;
            }
        }

        if (!synth_seed) cfg.synth.seed = derive_seed(cfg.seed, kSynthSeed);
        if (!train_seed) cfg.train.seed = derive_seed(cfg.seed, kTrainSeed);
        if (!fine_tune_seed) cfg.fine_tune.seed = derive_seed(cfg.seed, kFineTuneSeed);
        if (!campaign_seed) cfg.campaign_seed = derive_seed(cfg.seed, kCampaignSeed);
        if (!recon_seed) cfg.reconstruction.seed = derive_seed(cfg.seed, kReconstructionSeed);
        if (!split_seed) cfg.scoring.split_seed = derive_seed(cfg.seed, kSplitSeed);
        cfg.campaign.fine_tune = cfg.fine_tune;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": malformed config: " + e.what());
    }

    const fs::path out(cfg.paths.output_dir);
    if (cfg.paths.data.empty()) cfg.paths.data = (out / "clean.csv").string();
    if (cfg.paths.clean_model.empty()) cfg.paths.clean_model = (out / "clean_model.json").string();
    if (cfg.paths.campaign_dir.empty()) cfg.paths.campaign_dir = (out / "campaign").string();
    if (cfg.paths.submission.empty()) cfg.paths.submission = (out / "submission.csv").string();
    if (cfg.paths.diagnostics.empty())
        cfg.paths.diagnostics = (out / "diagnostics.jsonl").string();
    if (cfg.paths.score_report.empty())
        cfg.paths.score_report = (out / "score_report.csv").string();
    if (cfg.paths.report_dir.empty()) cfg.paths.report_dir = (out / "report").string();

    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    json channels = json::array();
    for (const ChannelSynthSpec& spec : cfg.synth.channels) {
        json sinusoids = json::array();
        for (const SinusoidSpec& s : spec.sinusoids)
            sinusoids.push_back(
                {{"amplitude", s.amplitude}, {"period", s.period}, {"phase", s.phase}});
        channels.push_back({{"offset", spec.offset},
                            {"drift_per_tick", spec.drift_per_tick},
                            {"noise_std", spec.noise_std},
                            {"sinusoids", std::move(sinusoids)}});
    }
    json stacks = json::array();
    for (const StackConfig& sc : cfg.model.stacks)
        stacks.push_back({{"pool_kernel", sc.pool_kernel},
                          {"n_coeffs_backcast", sc.n_coeffs_backcast},
                          {"n_coeffs_forecast", sc.n_coeffs_forecast},
                          {"hidden_width", sc.hidden_width},
                          {"hidden_depth", sc.hidden_depth}});

    json j;
    j["seed"] = cfg.seed;
    j["paths"] = {{"output_dir", cfg.paths.output_dir},
                  {"data", cfg.paths.data},
                  {"clean_model", cfg.paths.clean_model},
                  {"campaign_dir", cfg.paths.campaign_dir},
                  {"submission", cfg.paths.submission},
                  {"diagnostics", cfg.paths.diagnostics},
                  {"score_report", cfg.paths.score_report},
                  {"report_dir", cfg.paths.report_dir}};
    j["synth"] = {{"length", cfg.synth.length},
                  {"seed", cfg.synth.seed},
                  {"channels", std::move(channels)}};
    j["model"] = {{"context_length", cfg.model.context_length}, {"stacks", std::move(stacks)}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"stride", cfg.train.window_stride},
                  {"seed", cfg.train.seed},
                  {"training_fraction", cfg.training_fraction}};
    j["fine_tune"] = {{"epochs", cfg.fine_tune.epochs},
                      {"batch_size", cfg.fine_tune.batch_size},
                      {"learning_rate", cfg.fine_tune.learning_rate},
                      {"beta1", cfg.fine_tune.beta1},
                      {"beta2", cfg.fine_tune.beta2},
                      {"stride", cfg.fine_tune.window_stride},
                      {"seed", cfg.fine_tune.seed}};
    j["campaign"] = {{"n_models", cfg.n_models},
                     {"first_position", cfg.campaign.first_position},
                     {"period", cfg.campaign.period},
                     {"separation", cfg.campaign.separation},
                     {"threshold_ratio", cfg.campaign.threshold_ratio},
                     {"verify_batch", cfg.campaign.verify_batch},
                     {"seed", cfg.campaign_seed},
                     {"jobs", cfg.campaign.jobs}};
    j["reconstruction"] = {{"alpha", cfg.reconstruction.weights.alpha},
                           {"beta", cfg.reconstruction.weights.beta},
                           {"lambda", cfg.reconstruction.weights.lambda},
                           {"steps", cfg.reconstruction.steps},
                           {"learning_rate", cfg.reconstruction.learning_rate},
                           {"batch_size", cfg.reconstruction.batch_size},
                           {"restarts", cfg.reconstruction.restarts},
                           {"init_scale", cfg.reconstruction.init_scale},
                           {"amplitude_clamp", cfg.reconstruction.amplitude_clamp},
                           {"prune_fraction", cfg.reconstruction.prune_fraction},
                           {"context_pool", cfg.reconstruction.context_pool},
                           {"scan_alignment", cfg.reconstruction.scan_alignment},
                           {"scan_radius", cfg.reconstruction.scan_radius},
                           {"scan_step", cfg.reconstruction.scan_step},
                           {"seed", cfg.reconstruction.seed},
                           {"jobs", cfg.reconstruction_jobs}};
    j["scoring"] = {{"public_fraction", cfg.scoring.public_fraction},
                    {"split_seed", cfg.scoring.split_seed},
                    {"per_channel_range", cfg.scoring.per_channel_range}};
    return j.dump(2) + "\n";
}

void write_effective_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << config_to_json(cfg);
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace triggerlab

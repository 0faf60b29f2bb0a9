#pragma once

#include "hmcda/filters.hpp"
#include "hmcda/qg.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace hmcda {

/// Parses the TOML subset used by experiment configs: [section] and
/// [section.sub] headers, `key = value` with strings, numbers, booleans and
/// flat arrays, and `#` comments. Throws ConfigError with the line number.
nlohmann::json parse_toml_subset(const std::string& text);

struct QgSettings {
    int grid = 65;
    qg::Params params;
    int spinup_steps = 10000;
    int member_spacing = 50;  // model steps between snapshots used as initial members
    double initial_noise = 1e-3;  // seeded perturbation of the rest state before spin-up
};

struct ObservationSettings {
    std::string op = "linear";  // linear | wind
    std::size_t m_obs = 300;
    double variance = 4.0;
    bool random_offset = true;
};

struct Static1dSettings {
    std::size_t n_prior = 100;
    std::size_t n_samples = 1000;
    double y = -0.06858;
    double r = 1.2;
    std::string prior_csv;  // optional fixed prior ensemble; drawn from the truth mixture when empty
    std::size_t grid_points = 2001;
    std::size_t bins = 61;
    double lo = -3.5;
    double hi = 3.5;
};

struct OutputSettings {
    bool ensembles = false;
    bool gmm = true;
    bool chain_stats = true;
    bool checkpoints = false;
    std::size_t rank_stride = 16;
    bool qq = true;
};

struct ExperimentConfig {
    std::string model = "qg";  // qg | static_1d
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    std::size_t n_ens = 20;
    int cycles = 50;
    int obs_interval = 10;
    bool free_run = true;
    unsigned threads = 1;
    QgSettings qg;
    ObservationSettings obs;
    FilterConfig filter;
    Static1dSettings static_1d;
    OutputSettings output;

    void validate() const;
};

/// Strict conversion: unknown keys and ill-typed values raise ConfigError.
/// Filter settings not given default to default_filter_config for the
/// selected kind, observation operator and model.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Reads a .json file or a TOML-subset file (any other extension).
ExperimentConfig load_config(const std::string& path);

}  // namespace hmcda

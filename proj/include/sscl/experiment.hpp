#pragma once

// Experiment configuration, ablation grids and the gen-stream / run / ablate
// commands behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sscl/ini.hpp"
#include "sscl/stream.hpp"
#include "sscl/trainer.hpp"

namespace sscl {

struct ExperimentConfig {
    StreamConfig stream;
    TrainConfig train;
    std::filesystem::path out_dir = "results";
    /// Pre-generated stream shared by every seed; otherwise each seed draws
    /// its own stream from the [stream] section.
    std::optional<std::filesystem::path> stream_dir;
    std::vector<std::uint64_t> seeds = {1};
    std::vector<std::string> grid;
    std::vector<double> sweep = {0.1, 0.5, 1.0, 1.5, 2.0};
    bool checkpoints = true;

    void validate() const;
};

/// Overlays [train] keys onto `base`; unknown keys and bad values throw
/// ConfigError with the offending line.
TrainConfig train_config_from_ini(const IniDocument& doc, TrainConfig base = {});
std::string train_config_to_ini(const TrainConfig& config);

ExperimentConfig parse_experiment_config(const IniDocument& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

struct GridCell {
    std::string name;
    TrainConfig config;
};

/// Names accepted in a grid: full, baseline, wo_fsr, wo_uns, wo_cud, p-cls,
/// p-ncm, p-r, t-cls, t-ncm, lambda_<term> (expands over the sweep values)
/// and lambda_<term>=<value>.
std::vector<std::string> valid_grid_names();
std::vector<GridCell> expand_grid(const std::vector<std::string>& names, const TrainConfig& base,
                                  const std::vector<double>& sweep);

/// Stream generation seed for one repetition when no stream_dir is shared.
std::uint64_t stream_seed_for(const StreamConfig& stream, std::uint64_t run_seed);

struct SeedSummary {
    std::string cell;
    std::uint64_t seed = 0;
    double a_avg = 0.0;
    double a_last = 0.0;
};

/// cell,seed,A_avg,A_last,A_avg_std,A_last_std: one row per seed, then one
/// `mean` row per cell carrying the sample standard deviations.
std::string summary_csv(const std::vector<SeedSummary>& rows);

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::optional<std::vector<std::uint64_t>> seeds;
    bool force = false;
    std::optional<std::string> variant;           // gen-stream only
    std::optional<std::vector<std::string>> grid;  // ablate only
};

/// Worker threads for grid cells: SSCL_LAB_THREADS if set, else hardware
/// concurrency, never more than `jobs`.
std::size_t cell_threads(std::size_t jobs);

// Each returns the process exit status; 0 iff every output was written.
int cmd_gen_stream(const CommandOptions& opts);
int cmd_run(const CommandOptions& opts);
int cmd_ablate(const CommandOptions& opts);

}  // namespace sscl

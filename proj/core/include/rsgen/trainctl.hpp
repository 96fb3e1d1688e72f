#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rsgen/diffusion.hpp"
#include "rsgen/ingest.hpp"

namespace rsgen::trainctl {

struct FinetuneConfig {
    int epochs = 5;
    int batch_size = 4;
    double learning_rate = 1e-6;
    int grad_accum_steps = 4;
    bool mixed_precision = true;
    int checkpoint_interval_steps = 500;
    std::uint64_t seed = 0;

    friend bool operator==(const FinetuneConfig&, const FinetuneConfig&) = default;
};

// Epoch count above which fine-tuning starts to erode the base model's
// general image prior. Exceeding it is allowed but warned about.
inline constexpr int kRecommendedMaxEpochs = 5;

// Throws ValidationError naming the offending field.
void validate(const FinetuneConfig& config);

std::vector<std::string> config_warnings(const FinetuneConfig& config);

// Keys: epochs, batch_size, learning_rate, grad_accum_steps, mixed_precision,
// checkpoint_interval_steps, seed. Unknown keys and unparsable values throw
// ValidationError.
FinetuneConfig build_finetune_config(const std::map<std::string, std::string>& overrides = {});

std::string config_hash(const FinetuneConfig& config);

// Optimizer steps for one epoch over `n` examples.
long long steps_per_epoch(const FinetuneConfig& config, std::size_t n);
long long total_steps(const FinetuneConfig& config, std::size_t n);

struct LedgerEntry {
    long long step = 0;
    double loss = 0.0;
    std::optional<std::string> checkpoint_ref;

    friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

struct TrainLedger {
    std::vector<LedgerEntry> entries;
    std::string config_hash;
    // Weights at the end of the run when the last step is not a checkpoint
    // multiple. Kept out of `entries` so checkpoint_ref stays aligned with
    // the checkpoint interval.
    std::optional<std::string> final_checkpoint;

    // Throws StateError unless entry.step is larger than every existing step.
    void append(LedgerEntry entry);
    std::optional<long long> last_step() const;
};

inline constexpr const char* kLedgerFile = "train_ledger.jsonl";

std::string checkpoint_dir_name(long long step);

// Reads a persisted ledger. A torn trailing line (crash mid-append) is
// ignored; any other malformed line throws SchemaError.
TrainLedger read_ledger(const std::filesystem::path& path);

// Runs (or resumes) a job in `job_dir`. An existing ledger with a matching
// config hash is continued: weights are restored from its last checkpoint,
// unlogged steps after that checkpoint are replayed, and only new steps are
// appended. A backend exception becomes JobError carrying the last logged
// step; the ledger on disk stays valid for a later resume.
TrainLedger run_finetune(const FinetuneConfig& config, const ingest::LayoutManifest& data,
                         DiffusionBackend& backend, const std::filesystem::path& job_dir);

// Mean squared error between predicted and true noise.
double toy_denoise_loss(std::span<const double> predicted_noise, std::span<const double> true_noise);

// Picks the checkpointed entry with the lowest trailing-window mean loss
// (window counts ledger entries ending at the checkpoint). Ties go to the
// earliest step. Throws StateError when nothing was checkpointed.
std::pair<long long, std::string> select_best_checkpoint(const TrainLedger& ledger,
                                                         int smoothing_window = 1);

}  // namespace rsgen::trainctl

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rsgen/diffusion.hpp"
#include "rsgen/raster.hpp"

namespace rsgen::genfarm {

struct GenerationTask {
    std::string class_name;
    PromptSpec prompt;  // prompt.seed is the task's unique generation seed
};

struct GenerationPlan {
    std::vector<GenerationTask> tasks;
    std::map<std::string, int> target_counts;
};

// For each class (label order), cycles through that class's bank prompts and
// assigns a fresh seed per task until the count is met. Seeds are unique
// across the whole plan. Throws ArgumentError for classes outside the
// seven-class list, negative counts, or a class with no bank prompt.
GenerationPlan plan_generation(const std::map<std::string, int>& counts,
                               std::span<const PromptSpec> prompt_bank, std::uint64_t seed);

struct SynthRecord {
    Raster image;
    std::string class_name;
    int label_index = 0;
    std::string prompt;
    std::string negative_prompt;
    std::uint64_t seed = 0;
    std::string scheduler;
    int steps = 0;

    friend bool operator==(const SynthRecord&, const SynthRecord&) = default;
};

inline constexpr const char* kGenManifestFile = "gen_manifest.jsonl";

struct GenerationOptions {
    unsigned workers = 1;
};

// Executes every task not yet recorded in `manifest` (keyed by class and
// seed). Each finished task's image is written next to the manifest under
// images/ and its line appended immediately, so an interrupted run resumes
// where it stopped. Returns all plan records sorted by (label, seed). A
// backend failure throws JobError naming the task; completed work stays on
// disk. An empty plan returns nothing and does not touch the manifest.
std::vector<SynthRecord> run_generation(const GenerationPlan& plan, DiffusionBackend& backend,
                                        const std::filesystem::path& manifest,
                                        const GenerationOptions& options = {});

// Columns: image (PNG bytes), class_name, label_index, prompt,
// negative_prompt, seed, scheduler, steps. Atomic write.
void write_synth_dataset(std::span<const SynthRecord> records, const std::filesystem::path& path);
std::vector<SynthRecord> read_synth_dataset(const std::filesystem::path& path);

std::map<std::string, int> class_counts(std::span<const SynthRecord> records);

}  // namespace rsgen::genfarm

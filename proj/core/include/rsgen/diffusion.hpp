#pragma once

// Adapter boundary around text-to-image diffusion models, plus the reference
// backend used for desk-scale runs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rsgen/raster.hpp"
#include "rsgen/rng.hpp"

namespace rsgen {

inline constexpr const char* kNegativeCues = "wrapped, repeating, blurry, deformed, low quality";
inline constexpr const char* kDefaultScheduler = "PNDM";
inline constexpr int kDefaultInferenceSteps = 50;
inline constexpr int kDefaultGenerationSide = 512;

struct PromptSpec {
    std::string class_name;
    std::string positive;
    std::string negative = kNegativeCues;
    std::uint64_t seed = 0;
    int steps = kDefaultInferenceSteps;
    std::string scheduler = kDefaultScheduler;
    int width = kDefaultGenerationSide;
    int height = kDefaultGenerationSide;

    friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

// Throws ValidationError.
void validate(const PromptSpec& spec);

struct TrainExample {
    Raster image;
    std::string caption;
};

// One optimizer step worth of data: gradients from every micro-batch are
// accumulated before the update.
struct TrainBatch {
    std::vector<std::vector<TrainExample>> micro_batches;

    std::size_t example_count() const {
        std::size_t n = 0;
        for (const auto& mb : micro_batches) n += mb.size();
        return n;
    }
};

struct BackendSettings {
    double learning_rate = 1e-6;
    int micro_batch_size = 4;
    int grad_accum_steps = 4;
    bool mixed_precision = true;
    std::uint64_t seed = 0;
};

class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual std::string id() const = 0;

    // Resets weights deterministically from settings.seed.
    virtual void configure(const BackendSettings& settings) = 0;

    // One optimizer step; returns the mean loss over the batch. Must be
    // deterministic given the rng state.
    virtual double train_step(const TrainBatch& batch, Rng& rng) = 0;

    virtual void save_checkpoint(const std::filesystem::path& dir) const = 0;
    virtual void load_checkpoint(const std::filesystem::path& dir) = 0;

    // Must return a spec.height x spec.width RGB raster.
    virtual Raster generate(const PromptSpec& spec) = 0;
};

// Deterministic per-seed procedural image whose mean colour depends on the
// class; residual noise shrinks with more inference steps. Identical specs
// give identical bytes.
Raster render_procedural(const PromptSpec& spec);

// Mean RGB colour used by render_procedural for a class name.
std::array<double, 3> class_base_color(const std::string& class_name);

// Reference backend: a linear noise-prediction denoiser over images
// downscaled to `side` x `side`, trained with plain SGD on the standard
// epsilon-prediction objective; generation uses render_procedural.
class ReferenceDiffusionBackend final : public DiffusionBackend {
public:
    explicit ReferenceDiffusionBackend(int side = 8, int timesteps = 100);

    std::string id() const override { return "reference-linear-denoiser"; }
    void configure(const BackendSettings& settings) override;
    double train_step(const TrainBatch& batch, Rng& rng) override;
    void save_checkpoint(const std::filesystem::path& dir) const override;
    void load_checkpoint(const std::filesystem::path& dir) override;
    Raster generate(const PromptSpec& spec) override;

    int input_dim() const { return dim_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    std::vector<double> encode(const Raster& image) const;

    int side_;
    int dim_;
    std::vector<double> alpha_bar_;
    BackendSettings settings_;
    // Row-major dim_ x (dim_ + 2): [W | time coefficient | bias].
    std::vector<double> weights_;
};

std::unique_ptr<DiffusionBackend> make_diffusion_backend(const std::string& name);

}  // namespace rsgen

#include "rsgen/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "rsgen/errors.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/io.hpp"
#include "rsgen/lulc.hpp"
#include "rsgen/trainctl.hpp"

namespace rsgen {

namespace fs = std::filesystem;

void validate(const PromptSpec& spec) {
    if (spec.positive.empty()) throw ValidationError("positive", "prompt must not be empty");
    if (spec.steps < 1) throw ValidationError("steps", "must be >= 1");
    if (spec.width < 1) throw ValidationError("width", "must be >= 1");
    if (spec.height < 1) throw ValidationError("height", "must be >= 1");
}

std::array<double, 3> class_base_color(const std::string& class_name) {
    static constexpr std::array<std::array<double, 3>, kNumLulcClasses> kPalette = {{
        {176, 150, 112},  // Bare Land
        {150, 170, 70},   // Crop Land
        {205, 180, 80},   // Cultivated Vegetation
        {70, 130, 60},    // Natural Vegetation
        {225, 232, 240},  // Snow Ice
        {40, 90, 140},    // Water Body
        {30, 80, 40},     // Woody Vegetation
    }};
    if (auto idx = lulc_label_index(class_name)) return kPalette[static_cast<std::size_t>(*idx)];
    const std::uint64_t h = mix64(hash_text(class_name));
    return {static_cast<double>(40 + (h & 0xff) % 176), static_cast<double>(40 + ((h >> 8) & 0xff) % 176),
            static_cast<double>(40 + ((h >> 16) & 0xff) % 176)};
}

Raster render_procedural(const PromptSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, hash_text(spec.positive)));
    const auto base = class_base_color(spec.class_name);

    // Smooth large-scale structure: a coarse grid of offsets, bilinearly
    // interpolated over the image.
    constexpr int kGrid = 9;
    std::array<double, kGrid * kGrid> field{};
    for (double& v : field) v = rng.uniform(-25.0, 25.0);

    const double amp = std::min(64.0, 24.0 * std::sqrt(static_cast<double>(kDefaultInferenceSteps) / spec.steps));
    Raster out(spec.height, spec.width, 3);
    const double gy = static_cast<double>(kGrid - 1) / std::max(1, spec.height - 1);
    const double gx = static_cast<double>(kGrid - 1) / std::max(1, spec.width - 1);
    for (int y = 0; y < spec.height; ++y) {
        const double fy = y * gy;
        const int y0 = std::min(static_cast<int>(fy), kGrid - 2);
        const double wy = fy - y0;
        for (int x = 0; x < spec.width; ++x) {
            const double fx = x * gx;
            const int x0 = std::min(static_cast<int>(fx), kGrid - 2);
            const double wx = fx - x0;
            const double f00 = field[static_cast<std::size_t>(y0 * kGrid + x0)];
            const double f01 = field[static_cast<std::size_t>(y0 * kGrid + x0 + 1)];
            const double f10 = field[static_cast<std::size_t>((y0 + 1) * kGrid + x0)];
            const double f11 = field[static_cast<std::size_t>((y0 + 1) * kGrid + x0 + 1)];
            const double low = (f00 * (1 - wx) + f01 * wx) * (1 - wy) + (f10 * (1 - wx) + f11 * wx) * wy;
            for (int c = 0; c < 3; ++c) {
                const double v = base[static_cast<std::size_t>(c)] + low + rng.uniform(-amp, amp);
                out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

// ---- reference backend ----------------------------------------------------------

ReferenceDiffusionBackend::ReferenceDiffusionBackend(int side, int timesteps)
    : side_(side), dim_(side * side * 3) {
    if (side < 1 || timesteps < 1) throw ArgumentError("reference backend: side and timesteps must be >= 1");
    // Linear beta schedule.
    double prod = 1.0;
    for (int t = 0; t < timesteps; ++t) {
        const double beta = timesteps == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * t / (timesteps - 1);
        prod *= 1.0 - beta;
        alpha_bar_.push_back(prod);
    }
    configure(settings_);
}

void ReferenceDiffusionBackend::configure(const BackendSettings& settings) {
    settings_ = settings;
    Rng rng(derive_seed(settings.seed, 0x5eed));
    weights_.assign(static_cast<std::size_t>(dim_) * (dim_ + 2), 0.0);
    for (double& w : weights_) w = 0.01 * rng.normal();
}

std::vector<double> ReferenceDiffusionBackend::encode(const Raster& image) const {
    const Raster small = ingest::resize_to(image, side_);
    std::vector<double> x(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) x[static_cast<std::size_t>(i)] = small.data[static_cast<std::size_t>(i)] / 127.5 - 1.0;
    return x;
}

double ReferenceDiffusionBackend::train_step(const TrainBatch& batch, Rng& rng) {
    const std::size_t n = batch.example_count();
    if (n == 0) throw BackendError("train_step: empty batch");
    const std::size_t cols = static_cast<std::size_t>(dim_) + 2;
    std::vector<double> grad(weights_.size(), 0.0);
    std::vector<double> z(cols), eps(static_cast<std::size_t>(dim_)), pred(static_cast<std::size_t>(dim_));
    double loss_sum = 0.0;

    for (const auto& micro : batch.micro_batches) {
        for (const auto& ex : micro) {
            if (ex.image.channels != 3) throw BackendError("train_step: image is not RGB");
            const auto x0 = encode(ex.image);
            const std::size_t t = static_cast<std::size_t>(rng.below(alpha_bar_.size()));
            const double a = std::sqrt(alpha_bar_[t]);
            const double s = std::sqrt(1.0 - alpha_bar_[t]);
            for (int i = 0; i < dim_; ++i) {
                eps[static_cast<std::size_t>(i)] = rng.normal();
                z[static_cast<std::size_t>(i)] = a * x0[static_cast<std::size_t>(i)] + s * eps[static_cast<std::size_t>(i)];
            }
            z[cols - 2] = s;
            z[cols - 1] = 1.0;
            for (int r = 0; r < dim_; ++r) {
                const double* row = weights_.data() + static_cast<std::size_t>(r) * cols;
                double acc = 0.0;
                for (std::size_t c = 0; c < cols; ++c) acc += row[c] * z[c];
                pred[static_cast<std::size_t>(r)] = acc;
            }
            loss_sum += trainctl::toy_denoise_loss(pred, eps);
            const double scale = 2.0 / dim_;
            for (int r = 0; r < dim_; ++r) {
                const double e = scale * (pred[static_cast<std::size_t>(r)] - eps[static_cast<std::size_t>(r)]);
                double* g = grad.data() + static_cast<std::size_t>(r) * cols;
                for (std::size_t c = 0; c < cols; ++c) g[c] += e * z[c];
            }
        }
    }
    const double step = settings_.learning_rate / static_cast<double>(n);
    for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] -= step * grad[i];
    return loss_sum / static_cast<double>(n);
}

void ReferenceDiffusionBackend::save_checkpoint(const fs::path& dir) const {
    std::vector<std::uint8_t> bytes(weights_.size() * sizeof(double));
    std::memcpy(bytes.data(), weights_.data(), bytes.size());
    write_file_atomic(dir / "weights.bin", bytes);
    nlohmann::ordered_json meta{{"backend", id()}, {"side", side_}, {"dim", dim_},
                                {"parameters", weights_.size()}};
    write_file_atomic(dir / "backend.json", meta.dump(2) + "\n");
}

void ReferenceDiffusionBackend::load_checkpoint(const fs::path& dir) {
    const auto bytes = read_binary(dir / "weights.bin");
    if (bytes.size() != weights_.size() * sizeof(double))
        throw BackendError("checkpoint " + dir.string() + " does not match backend shape");
    std::memcpy(weights_.data(), bytes.data(), bytes.size());
}

Raster ReferenceDiffusionBackend::generate(const PromptSpec& spec) { return render_procedural(spec); }

std::unique_ptr<DiffusionBackend> make_diffusion_backend(const std::string& name) {
    if (name == "reference" || name == "stub") return std::make_unique<ReferenceDiffusionBackend>();
    throw ArgumentError("unknown diffusion backend '" + name + "' (available: reference, stub)");
}

}  // namespace rsgen

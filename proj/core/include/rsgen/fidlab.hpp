#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsgen/raster.hpp"

namespace rsgen::fidlab {

// Gaussian moments of a feature distribution.
struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t n = 0;

    Eigen::Index dim() const { return mean.size(); }
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual Eigen::Index dim() const = 0;
    // Square side images are resized to before embedding.
    virtual int input_side() const = 0;
    // Rows are images that have already been resized to input_side() and
    // scaled to [0, 1], flattened HWC.
    virtual Eigen::MatrixXd embed(const Eigen::MatrixXd& preprocessed) const = 0;
};

// Fixed-seed Gaussian random projection of downscaled pixels.
class RandomProjectionExtractor final : public FeatureExtractor {
public:
    explicit RandomProjectionExtractor(Eigen::Index dim = 16, int side = 16, std::uint64_t seed = 0x1d);

    std::string id() const override;
    Eigen::Index dim() const override { return projection_.rows(); }
    int input_side() const override { return side_; }
    Eigen::MatrixXd embed(const Eigen::MatrixXd& preprocessed) const override;

    // d x (side*side*3).
    const Eigen::MatrixXd& projection() const { return projection_; }

private:
    int side_;
    std::uint64_t seed_;
    Eigen::MatrixXd projection_;
};

// Bilinear resize to the extractor's side and scaling to [0, 1], one row per
// image.
Eigen::MatrixXd preprocess(std::span<const Raster> images, int side);

// N x d. Extractor exceptions surface as BackendError.
Eigen::MatrixXd extract_features(std::span<const Raster> images, const FeatureExtractor& extractor);

// Column means and unbiased (N-1) covariance, symmetrized. Throws
// ArgumentError for fewer than two rows.
FeatureStats fit_gaussian(const Eigen::MatrixXd& features);

struct FrechetResult {
    double distance = 0.0;
    // Total magnitude removed by clamping negative eigenvalues and a negative
    // final sum to zero.
    double clipped = 0.0;
};

// ||mu_a - mu_b||^2 + tr(S_a) + tr(S_b) - 2 tr sqrt(sqrt(S_a) S_b sqrt(S_a)).
// Both square roots come from symmetric eigendecompositions with negative
// eigenvalues clipped to zero. Clipping beyond `warn_tolerance * tr(S_a+S_b)`
// is reported through the warning sink.
FrechetResult frechet_distance_detailed(const FeatureStats& a, const FeatureStats& b);
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

inline constexpr double kClipWarnTolerance = 1e-6;

// Receives numerical warnings (eigenvalue clipping). Defaults to stderr.
void set_warning_sink(std::function<void(const std::string&)> sink);

struct SampledFid {
    double mean_fid = 0.0;
    std::vector<double> per_run;
};

// Each run draws `sample_size` images without replacement from each set and
// scores the pair. When both sets have the same size they are treated as
// paired (generated image i comes from real image i's caption) and share one
// index draw per run. Throws ArgumentError if sample_size exceeds either set
// or is below 2, or runs < 1.
SampledFid sampled_fid(std::span<const Raster> real, std::span<const Raster> gen,
                       const FeatureExtractor& extractor, std::size_t sample_size = 250, int runs = 4,
                       std::uint64_t seed = 0);

// Same protocol on precomputed feature rows.
SampledFid sampled_fid_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen,
                                std::size_t sample_size, int runs, std::uint64_t seed);

}  // namespace rsgen::fidlab

#include "rsgen/fidlab.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <iostream>
#include <mutex>

#include "rsgen/errors.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::fidlab {

namespace {

std::mutex g_sink_mu;
std::function<void(const std::string&)> g_sink = [](const std::string& msg) {
    std::cerr << "fidlab: warning: " << msg << '\n';
};

void warn(const std::string& msg) {
    std::lock_guard lock(g_sink_mu);
    if (g_sink) g_sink(msg);
}

}  // namespace

void set_warning_sink(std::function<void(const std::string&)> sink) {
    std::lock_guard lock(g_sink_mu);
    g_sink = std::move(sink);
}

RandomProjectionExtractor::RandomProjectionExtractor(Eigen::Index dim, int side, std::uint64_t seed)
    : side_(side), seed_(seed) {
    if (dim < 1 || side < 1) throw ArgumentError("projection extractor: dim and side must be >= 1");
    const Eigen::Index in = static_cast<Eigen::Index>(side) * side * 3;
    projection_.resize(dim, in);
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    // Fill row-major so the draw order does not depend on Eigen's storage.
    for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < in; ++c) projection_(r, c) = scale * rng.normal();
}

std::string RandomProjectionExtractor::id() const {
    return "random-projection-d" + std::to_string(projection_.rows()) + "-s" + std::to_string(side_) +
           "-seed" + std::to_string(seed_);
}

Eigen::MatrixXd RandomProjectionExtractor::embed(const Eigen::MatrixXd& x) const {
    if (x.cols() != projection_.cols()) throw BackendError("projection extractor: input width mismatch");
    return x * projection_.transpose();
}

Eigen::MatrixXd preprocess(std::span<const Raster> images, int side) {
    const Eigen::Index width = static_cast<Eigen::Index>(side) * side * 3;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), width);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].channels != 3) throw ArgumentError("preprocess: image is not RGB");
        const Raster small = ingest::resize_to(images[i], side);
        for (Eigen::Index k = 0; k < width; ++k)
            out(static_cast<Eigen::Index>(i), k) = small.data[static_cast<std::size_t>(k)] / 255.0;
    }
    return out;
}

Eigen::MatrixXd extract_features(std::span<const Raster> images, const FeatureExtractor& extractor) {
    if (images.empty()) throw ArgumentError("extract_features: no images");
    const Eigen::MatrixXd x = preprocess(images, extractor.input_side());
    Eigen::MatrixXd f;
    try {
        f = extractor.embed(x);
    } catch (const BackendError&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendError("extractor " + extractor.id() + " failed: " + e.what());
    }
    if (f.rows() != x.rows() || f.cols() != extractor.dim())
        throw BackendError("extractor " + extractor.id() + " returned wrong shape");
    return f;
}

FeatureStats fit_gaussian(const Eigen::MatrixXd& features) {
    const Eigen::Index n = features.rows();
    if (n < 2) throw ArgumentError("fit_gaussian: need at least 2 rows, got " + std::to_string(n));
    FeatureStats st;
    st.n = static_cast<std::size_t>(n);
    st.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - st.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    st.cov = 0.5 * (cov + cov.transpose());
    return st;
}

namespace {

struct SqrtResult {
    Eigen::MatrixXd root;
    double clipped = 0.0;
};

// Principal square root of a symmetric matrix, negative eigenvalues clipped.
SqrtResult symmetric_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    double clipped = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < 0.0) {
            clipped += -ev(i);
            ev(i) = 0.0;
        }
    }
    return {es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose(), clipped};
}

}  // namespace

FrechetResult frechet_distance_detailed(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim() ||
        a.cov.cols() != a.dim() || b.cov.cols() != b.dim()) {
        throw ArgumentError("frechet_distance: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                            std::to_string(b.dim()) + ")");
    }
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double tr_a = a.cov.trace();
    const double tr_b = b.cov.trace();

    const SqrtResult sa = symmetric_sqrt(a.cov);
    const Eigen::MatrixXd inner = sa.root * b.cov * sa.root;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    double tr_sqrt = 0.0;
    double clipped = sa.clipped;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()(i);
        if (ev < 0.0)
            clipped += -ev;
        else
            tr_sqrt += std::sqrt(ev);
    }

    double d = mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
    if (!std::isfinite(d)) throw NumericalError("frechet_distance: non-finite result");
    if (d < 0.0) {
        clipped += -d;
        d = 0.0;
    }
    const double scale = tr_a + tr_b;
    if (clipped > kClipWarnTolerance * std::max(scale, 1e-300)) {
        warn("clipped " + std::to_string(clipped) + " of negative spectrum (trace " + std::to_string(scale) +
             "); covariances may be rank-deficient or not PSD");
    }
    return {d, clipped};
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    return frechet_distance_detailed(a, b).distance;
}

SampledFid sampled_fid_features(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen,
                                std::size_t sample_size, int runs, std::uint64_t seed) {
    if (runs < 1) throw ArgumentError("sampled_fid: runs must be >= 1");
    const auto n_real = static_cast<std::size_t>(real.rows());
    const auto n_gen = static_cast<std::size_t>(gen.rows());
    if (sample_size < 2) throw ArgumentError("sampled_fid: sample_size must be >= 2");
    if (sample_size > n_real || sample_size > n_gen) {
        throw ArgumentError("sampled_fid: sample_size " + std::to_string(sample_size) + " exceeds set sizes (" +
                            std::to_string(n_real) + " real, " + std::to_string(n_gen) + " generated)");
    }
    const bool paired = n_real == n_gen;
    auto rows = [](const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
        return out;
    };

    SampledFid result;
    for (int r = 0; r < runs; ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        const auto real_idx = rng.sample_without_replacement(n_real, sample_size);
        const auto gen_idx = paired ? real_idx : rng.sample_without_replacement(n_gen, sample_size);
        const FeatureStats a = fit_gaussian(rows(real, real_idx));
        const FeatureStats b = fit_gaussian(rows(gen, gen_idx));
        result.per_run.push_back(frechet_distance(a, b));
    }
    double sum = 0.0;
    for (double v : result.per_run) sum += v;
    result.mean_fid = sum / static_cast<double>(runs);
    return result;
}

SampledFid sampled_fid(std::span<const Raster> real, std::span<const Raster> gen,
                       const FeatureExtractor& extractor, std::size_t sample_size, int runs, std::uint64_t seed) {
    if (sample_size > real.size() || sample_size > gen.size()) {
        throw ArgumentError("sampled_fid: sample_size " + std::to_string(sample_size) + " exceeds set sizes (" +
                            std::to_string(real.size()) + " real, " + std::to_string(gen.size()) + " generated)");
    }
    return sampled_fid_features(extract_features(real, extractor), extract_features(gen, extractor), sample_size,
                                runs, seed);
}

}  // namespace rsgen::fidlab

#pragma once

// Reference computations written independently of the library code paths
// they check.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "rsgen/ingest.hpp"
#include "rsgen/raster.hpp"

namespace rsgen::oracle {

// Bilinear resize as a separable tent-kernel sum with half-pixel centres and
// coordinate clamping, rounded half up. Exact integer arithmetic: a source
// coordinate is kept as a numerator over 2 * n_out.
inline Raster tent_resize(const Raster& in, int out_h, int out_w) {
    Raster out(out_h, out_w, in.channels);
    auto coord = [](long long o, long long n_in, long long n_out) {
        const long long num = (2 * o + 1) * n_in - n_out;
        return std::min(std::max(num, 0LL), (n_in - 1) * 2 * n_out);
    };
    const long long dy = 2LL * out_h, dx = 2LL * out_w, denom = dy * dx;
    for (int y = 0; y < out_h; ++y) {
        const long long sy = coord(y, in.height, out_h);
        for (int x = 0; x < out_w; ++x) {
            const long long sx = coord(x, in.width, out_w);
            for (int c = 0; c < in.channels; ++c) {
                long long acc = 0;
                for (int i = 0; i < in.height; ++i) {
                    const long long wy = std::max(0LL, dy - std::llabs(sy - i * dy));
                    if (wy == 0) continue;
                    for (int j = 0; j < in.width; ++j) {
                        const long long wx = std::max(0LL, dx - std::llabs(sx - j * dx));
                        acc += wy * wx * in.at(i, j, c);
                    }
                }
                out.at(y, x, c) = static_cast<std::uint8_t>((2 * acc + denom) / (2 * denom));
            }
        }
    }
    return out;
}

// Integer 2x2 matrix acting on doubled, centred coordinates (x right, y up).
using Mat2 = std::array<int, 4>;  // {a, b, c, d} = [[a, b], [c, d]]

inline Mat2 mat_mul(const Mat2& p, const Mat2& q) {
    return {p[0] * q[0] + p[1] * q[2], p[0] * q[1] + p[1] * q[3], p[2] * q[0] + p[3] * q[2],
            p[2] * q[1] + p[3] * q[3]};
}

inline Mat2 identity_mat() { return {1, 0, 0, 1}; }

// Content motion of each transform: counter-clockwise rotations, mirror
// across the vertical axis (hflip), the horizontal axis (vflip), the main
// diagonal (transpose) and the anti-diagonal.
inline Mat2 dihedral_matrix(ingest::Dihedral d) {
    switch (d) {
        case ingest::Dihedral::Rot90: return {0, -1, 1, 0};
        case ingest::Dihedral::Rot180: return {-1, 0, 0, -1};
        case ingest::Dihedral::Rot270: return {0, 1, -1, 0};
        case ingest::Dihedral::HFlip: return {-1, 0, 0, 1};
        case ingest::Dihedral::VFlip: return {1, 0, 0, -1};
        case ingest::Dihedral::Transpose: return {0, -1, -1, 0};
        case ingest::Dihedral::AntiTranspose: return {0, 1, 1, 0};
    }
    return identity_mat();
}

// out(p) = in(M^T p) for orthogonal M.
inline Raster apply_matrix(const Raster& in, const Mat2& m) {
    const int n = in.height;
    Raster out(n, n, in.channels);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            const int x = 2 * c - (n - 1), y = (n - 1) - 2 * r;
            const int sx = m[0] * x + m[2] * y;
            const int sy = m[1] * x + m[3] * y;
            const int sc = (sx + (n - 1)) / 2, sr = ((n - 1) - sy) / 2;
            for (int ch = 0; ch < in.channels; ++ch) out.at(r, c, ch) = in.at(sr, sc, ch);
        }
    }
    return out;
}

// Two-pass per-channel mean and population std over all pixels.
inline ingest::ChannelStats two_pass_stats(const std::vector<Raster>& images) {
    const int ch = images.front().channels;
    ingest::ChannelStats st;
    for (int c = 0; c < ch; ++c) {
        double sum = 0.0, n = 0.0;
        for (const auto& img : images)
            for (std::size_t p = 0; p < img.pixel_count(); ++p, n += 1.0) sum += img.data[p * ch + c];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& img : images)
            for (std::size_t p = 0; p < img.pixel_count(); ++p) {
                const double d = img.data[p * ch + c] - mean;
                ss += d * d;
            }
        st.mean.push_back(mean);
        st.std.push_back(std::max(std::sqrt(ss / n), 1e-6));
    }
    return st;
}

// Two-pass unbiased covariance.
inline Eigen::MatrixXd two_pass_cov(const Eigen::MatrixXd& x) {
    const auto n = x.rows(), d = x.cols();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) mean[static_cast<std::size_t>(j)] += x(i, j);
        mean[static_cast<std::size_t>(j)] /= static_cast<double>(n);
    }
    Eigen::MatrixXd cov(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                s += (x(i, a) - mean[static_cast<std::size_t>(a)]) * (x(i, b) - mean[static_cast<std::size_t>(b)]);
            cov(a, b) = s / static_cast<double>(n - 1);
        }
    return cov;
}

// Frechet distance between diagonal Gaussians.
inline double diagonal_frechet(const std::vector<double>& mu_a, const std::vector<double>& var_a,
                               const std::vector<double>& mu_b, const std::vector<double>& var_b) {
    double d = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        d += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
        const double s = std::sqrt(var_a[i]) - std::sqrt(var_b[i]);
        d += s * s;
    }
    return d;
}

// Sentence-accumulating chunker: add whole sentences (ending in '.') until
// the chunk holds at least min_chars; the leftover becomes the last chunk.
inline std::vector<std::string> greedy_chunks(const std::string& text, std::size_t min_chars) {
    std::vector<std::string> sentences;
    std::string cur;
    for (char c : text) {
        cur += c;
        if (c == '.') {
            sentences.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) sentences.push_back(cur);
    std::vector<std::string> chunks;
    std::string acc;
    for (const auto& s : sentences) {
        acc += s;
        if (acc.size() >= min_chars && acc.back() == '.') {
            chunks.push_back(acc);
            acc.clear();
        }
    }
    if (!acc.empty()) chunks.push_back(acc);
    return chunks;
}

// Exhaustive cosine ranking: indices by descending similarity, ties by index.
inline std::vector<std::size_t> cosine_rank(const std::vector<std::vector<double>>& rows,
                                            const std::vector<double>& q) {
    auto cosine = [&](const std::vector<double>& r) {
        double dot = 0, nr = 0, nq = 0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            dot += r[i] * q[i];
            nr += r[i] * r[i];
            nq += q[i] * q[i];
        }
        return dot / std::sqrt(nr * nq);
    };
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < rows.size(); ++i) scored.emplace_back(cosine(rows[i]), i);
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<std::size_t> out;
    for (auto& s : scored) out.push_back(s.second);
    return out;
}

// Macro metrics by explicit per-class counting.
struct HandMetrics {
    double overall, average, f1, jaccard;
};

inline HandMetrics hand_metrics(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
    double correct = 0;
    double rec = 0, f1 = 0, iou = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == pred[i];
    for (int c = 0; c < k; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += truth[i] == c && pred[i] == c;
            fp += truth[i] != c && pred[i] == c;
            fn += truth[i] == c && pred[i] != c;
        }
        const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        rec += recall;
        f1 += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
        iou += tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0.0;
    }
    return {correct / static_cast<double>(truth.size()), rec / k, f1 / k, iou / k};
}

}  // namespace rsgen::oracle

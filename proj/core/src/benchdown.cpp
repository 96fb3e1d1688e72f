#include "rsgen/benchdown.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rsgen/errors.hpp"
#include "rsgen/genfarm.hpp"
#include "rsgen/io.hpp"

namespace rsgen::benchdown {

namespace fs = std::filesystem;

void validate(const ClassifyConfig& c) {
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw ValidationError("learning_rate", "must be > 0");
    if (c.epochs < 1) throw ValidationError("epochs", "must be >= 1");
    if (c.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
    if (c.crop_side < 1) throw ValidationError("crop_side", "must be >= 1");
}

// ---- data -------------------------------------------------------------------------

DataSplits stratified_split(const LabeledSet& data, const SplitFractions& f, std::uint64_t seed) {
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw ArgumentError("split fractions must be non-negative and sum to 1");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    DataSplits out;
    auto take = [&](LabeledSet& dst, std::size_t i) {
        dst.images.push_back(data.images[i]);
        dst.labels.push_back(data.labels[i]);
    };
    for (auto& [label, idx] : by_class) {
        if (idx.size() < 3) {
            throw StateError("split error: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                             " items, need at least 3");
        }
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(idx);
        const std::size_t n = idx.size();
        const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n))));
        const auto n_val =
            std::min(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));
        for (std::size_t k = 0; k < n; ++k) {
            if (k < n_train)
                take(out.train, idx[k]);
            else if (k < n_train + n_val)
                take(out.val, idx[k]);
            else
                take(out.test, idx[k]);
        }
    }
    return out;
}

DataSplits load_synth(const fs::path& path, const SplitFractions& fractions, std::uint64_t seed) {
    auto records = genfarm::read_synth_dataset(path);
    LabeledSet all;
    for (auto& r : records) {
        all.images.push_back(std::move(r.image));
        all.labels.push_back(r.label_index);
    }
    return stratified_split(all, fractions, seed);
}

// ---- transforms -------------------------------------------------------------------

TransformPipeline::TransformPipeline(ingest::ChannelStats stats, int crop_side, bool train, JitterLimits jitter)
    : stats_(std::move(stats)), crop_side_(crop_side), train_(train), jitter_(jitter) {
    if (crop_side < 1) throw ArgumentError("crop_side must be >= 1");
}

RealRaster TransformPipeline::operator()(const Raster& image, Rng& rng) const {
    if (crop_side_ > image.height || crop_side_ > image.width) {
        throw ArgumentError("crop " + std::to_string(crop_side_) + " does not fit a " + std::to_string(image.height) +
                            "x" + std::to_string(image.width) + " image");
    }
    const int s = crop_side_;
    if (!train_) {
        const int y0 = (image.height - s) / 2;
        const int x0 = (image.width - s) / 2;
        Raster crop(s, s, image.channels);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                for (int c = 0; c < image.channels; ++c) crop.at(y, x, c) = image.at(y0 + y, x0 + x, c);
        return ingest::normalize(crop, stats_);
    }

    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.height - s + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.width - s + 1)));
    const bool hflip = rng.bernoulli(0.5);
    const bool vflip = rng.bernoulli(0.5);
    const double alpha = 1.0 + rng.uniform(-jitter_.contrast, jitter_.contrast);
    const double beta = 255.0 * rng.uniform(-jitter_.brightness, jitter_.brightness);

    RealRaster out(s, s, image.channels);
    for (int y = 0; y < s; ++y) {
        const int sy = y0 + (vflip ? s - 1 - y : y);
        for (int x = 0; x < s; ++x) {
            const int sx = x0 + (hflip ? s - 1 - x : x);
            for (int c = 0; c < image.channels; ++c)
                out.at(y, x, c) = std::clamp(alpha * image.at(sy, sx, c) + beta, 0.0, 255.0);
        }
    }
    return ingest::normalize(out, stats_);
}

TransformPipeline build_transforms(const ingest::ChannelStats& stats, int crop_side, bool train) {
    return TransformPipeline(stats, crop_side, train);
}

// ---- reference classifier ------------------------------------------------------------

LogisticRegressionBackend::LogisticRegressionBackend(int feature_side, Optimizer optimizer)
    : side_(feature_side), optimizer_(optimizer) {
    if (feature_side < 1) throw ArgumentError("feature_side must be >= 1");
}

std::string LogisticRegressionBackend::id() const {
    return std::string("logreg-") + (optimizer_ == Optimizer::Adam ? "adam" : "sgd") + "-s" + std::to_string(side_);
}

void LogisticRegressionBackend::reset(int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ArgumentError("classifier needs at least 2 classes");
    classes_ = num_classes;
    dim_ = side_ * side_ * 3 + 1;
    weights_.assign(static_cast<std::size_t>(classes_) * dim_, 0.0);
    Rng rng(derive_seed(seed, 0xc1a55));
    for (double& w : weights_) w = 0.01 * rng.normal();
    m_.assign(weights_.size(), 0.0);
    v_.assign(weights_.size(), 0.0);
    t_ = 0;
}

void LogisticRegressionBackend::set_parameters(std::span<const double> params) {
    if (params.size() != weights_.size()) throw BackendError("parameter count mismatch");
    weights_.assign(params.begin(), params.end());
}

std::vector<double> LogisticRegressionBackend::features(const RealRaster& image) const {
    if (image.height < side_ || image.width < side_)
        throw BackendError("image smaller than the feature grid");
    std::vector<double> f(static_cast<std::size_t>(dim_), 0.0);
    const int ch = image.channels;
    if (ch != 3) throw BackendError("classifier expects 3 channels");
    // Area average over a side_ x side_ grid.
    for (int gy = 0; gy < side_; ++gy) {
        const int y_begin = gy * image.height / side_, y_end = (gy + 1) * image.height / side_;
        for (int gx = 0; gx < side_; ++gx) {
            const int x_begin = gx * image.width / side_, x_end = (gx + 1) * image.width / side_;
            const double area = static_cast<double>((y_end - y_begin) * (x_end - x_begin));
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int y = y_begin; y < y_end; ++y)
                    for (int x = x_begin; x < x_end; ++x) acc += image.at(y, x, c);
                f[static_cast<std::size_t>((gy * side_ + gx) * ch + c)] = acc / area;
            }
        }
    }
    f.back() = 1.0;
    return f;
}

std::vector<double> LogisticRegressionBackend::logits(const std::vector<double>& x) const {
    std::vector<double> z(static_cast<std::size_t>(classes_), 0.0);
    for (int k = 0; k < classes_; ++k) {
        const double* w = weights_.data() + static_cast<std::size_t>(k) * dim_;
        double acc = 0.0;
        for (int i = 0; i < dim_; ++i) acc += w[i] * x[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(k)] = acc;
    }
    return z;
}

namespace {

std::vector<double> softmax(std::vector<double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

constexpr double kProbFloor = 1e-15;

}  // namespace

double LogisticRegressionBackend::train_batch(std::span<const RealRaster> images, std::span<const int> labels,
                                              double lr) {
    if (classes_ == 0) throw BackendError("backend not reset");
    if (images.size() != labels.size() || images.empty()) throw BackendError("bad training batch");
    std::vector<double> grad(weights_.size(), 0.0);
    double loss = 0.0;
    for (std::size_t n = 0; n < images.size(); ++n) {
        const int y = labels[n];
        if (y < 0 || y >= classes_) throw BackendError("label out of range");
        const auto x = features(images[n]);
        const auto p = softmax(logits(x));
        loss -= std::log(std::max(p[static_cast<std::size_t>(y)], kProbFloor));
        for (int k = 0; k < classes_; ++k) {
            const double e = p[static_cast<std::size_t>(k)] - (k == y ? 1.0 : 0.0);
            double* g = grad.data() + static_cast<std::size_t>(k) * dim_;
            for (int i = 0; i < dim_; ++i) g[i] += e * x[static_cast<std::size_t>(i)];
        }
    }
    const double inv = 1.0 / static_cast<double>(images.size());
    if (optimizer_ == Optimizer::Sgd) {
        for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] -= lr * grad[i] * inv;
    } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            const double g = grad[i] * inv;
            m_[i] = b1 * m_[i] + (1 - b1) * g;
            v_[i] = b2 * v_[i] + (1 - b2) * g * g;
            weights_[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
        }
    }
    return loss * inv;
}

std::vector<std::vector<double>> LogisticRegressionBackend::predict_proba(std::span<const RealRaster> images) const {
    if (classes_ == 0) throw BackendError("backend not reset");
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(softmax(logits(features(img))));
    return out;
}

std::unique_ptr<ClassifierBackend> make_classifier_backend(const std::string& id) {
    if (id == "reference" || id == "logreg-adam") return std::make_unique<LogisticRegressionBackend>(8, Optimizer::Adam);
    if (id == "logreg-sgd") return std::make_unique<LogisticRegressionBackend>(8, Optimizer::Sgd);
    throw ArgumentError("unknown classifier backend '" + id + "' (available: reference, logreg-adam, logreg-sgd)");
}

// ---- training ---------------------------------------------------------------------------

namespace {

std::vector<RealRaster> transform_all(const TransformPipeline& pipe, const LabeledSet& set, Rng& rng) {
    std::vector<RealRaster> out;
    out.reserve(set.size());
    for (const auto& img : set.images) out.push_back(pipe(img, rng));
    return out;
}

struct EvalScore {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalScore score(const ClassifierBackend& backend, std::span<const RealRaster> inputs, std::span<const int> labels) {
    if (inputs.empty()) return {};
    const auto probs = backend.predict_proba(inputs);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const auto& p = probs[i];
        const auto pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        correct += pred == labels[i];
        loss -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], kProbFloor));
    }
    const auto n = static_cast<double>(probs.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

TrainResult train_classifier(const ClassifyConfig& config, const DataSplits& data, ClassifierBackend& backend,
                             int num_classes, const std::function<void(const EpochLog&)>& on_epoch) {
    validate(config);
    if (data.train.empty()) throw ArgumentError("train_classifier: empty training set");

    const ingest::ChannelStats stats = ingest::compute_stats(std::span<const Raster>(data.train.images));
    const TransformPipeline train_pipe = build_transforms(stats, config.crop_side, true);
    const TransformPipeline eval_pipe = build_transforms(stats, config.crop_side, false);

    Rng unused(0);
    const auto train_eval = transform_all(eval_pipe, data.train, unused);
    const auto val_eval = transform_all(eval_pipe, data.val, unused);

    TrainResult result;
    result.model.backend_id = backend.id();
    result.model.num_classes = num_classes;
    result.model.stats = stats;
    result.model.crop_side = config.crop_side;
    bool have_best = false;

    try {
        backend.reset(num_classes, config.seed);
        const std::size_t n = data.train.size();
        for (int epoch = 1; epoch <= config.epochs; ++epoch) {
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            Rng order_rng(derive_seed(config.seed, 0x0e00 + static_cast<std::uint64_t>(epoch)));
            order_rng.shuffle(order);
            Rng aug_rng(derive_seed(config.seed, 0xa000 + static_cast<std::uint64_t>(epoch)));

            double loss_sum = 0.0;
            for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(config.batch_size)) {
                const std::size_t e = std::min(n, b + static_cast<std::size_t>(config.batch_size));
                std::vector<RealRaster> inputs;
                std::vector<int> labels;
                for (std::size_t k = b; k < e; ++k) {
                    inputs.push_back(train_pipe(data.train.images[order[k]], aug_rng));
                    labels.push_back(data.train.labels[order[k]]);
                }
                loss_sum += backend.train_batch(inputs, labels, config.learning_rate) * static_cast<double>(e - b);
            }

            EpochLog row;
            row.epoch = epoch;
            row.train_loss = loss_sum / static_cast<double>(n);
            row.train_accuracy = score(backend, train_eval, data.train.labels).accuracy;
            const EvalScore val = score(backend, val_eval, data.val.labels);
            row.val_loss = val.loss;
            row.val_accuracy = val.accuracy;
            result.epoch_log.push_back(row);
            if (on_epoch) on_epoch(row);

            const double selector = data.val.empty() ? row.train_accuracy : row.val_accuracy;
            if (!have_best || selector > result.model.val_accuracy) {
                have_best = true;
                result.model.best_epoch = epoch;
                result.model.val_accuracy = selector;
                result.model.parameters = backend.parameters();
            }
        }
    } catch (const std::exception& e) {
        throw JobError(std::string("classifier training failed: ") + e.what(),
                       static_cast<long long>(result.epoch_log.size()));
    }
    return result;
}

// ---- metrics -----------------------------------------------------------------------------

MetricsReport metrics_from_confusion(const std::vector<std::vector<long long>>& confusion) {
    const std::size_t k = confusion.size();
    if (k == 0) throw ArgumentError("empty confusion matrix");
    long long total = 0, trace = 0;
    std::vector<long long> row(k, 0), col(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
        if (confusion[i].size() != k) throw ArgumentError("confusion matrix is not square");
        for (std::size_t j = 0; j < k; ++j) {
            const long long v = confusion[i][j];
            if (v < 0) throw ArgumentError("negative confusion count");
            row[i] += v;
            col[j] += v;
            total += v;
        }
        trace += confusion[i][i];
    }
    if (total == 0) throw ArgumentError("confusion matrix has no samples");

    MetricsReport r;
    r.confusion = confusion;
    r.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
    double recall_sum = 0.0, f1_sum = 0.0, iou_sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double tp = static_cast<double>(confusion[c][c]);
        const double fn = static_cast<double>(row[c]) - tp;
        const double fp = static_cast<double>(col[c]) - tp;
        recall_sum += row[c] > 0 ? tp / static_cast<double>(row[c]) : 0.0;
        f1_sum += (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
        iou_sum += (tp + fp + fn) > 0 ? tp / (tp + fp + fn) : 0.0;
    }
    const double kk = static_cast<double>(k);
    r.average_accuracy = recall_sum / kk;
    r.macro_f1 = f1_sum / kk;
    r.jaccard = iou_sum / kk;
    return r;
}

MetricsReport metrics_from_predictions(std::span<const int> labels,
                                       const std::vector<std::vector<double>>& probabilities, int num_classes) {
    if (labels.empty()) throw ArgumentError("evaluate: empty test set");
    if (labels.size() != probabilities.size()) throw ArgumentError("evaluate: label/prediction count mismatch");
    std::vector<std::vector<long long>> confusion(static_cast<std::size_t>(num_classes),
                                                  std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& p = probabilities[i];
        if (static_cast<int>(p.size()) != num_classes) throw ArgumentError("evaluate: probability row width");
        const int y = labels[i];
        if (y < 0 || y >= num_classes) throw ArgumentError("evaluate: label out of range");
        const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        ++confusion[static_cast<std::size_t>(y)][pred];
        loss -= std::log(std::max(p[static_cast<std::size_t>(y)], kProbFloor));
    }
    MetricsReport r = metrics_from_confusion(confusion);
    r.test_loss = loss / static_cast<double>(labels.size());
    return r;
}

MetricsReport evaluate_classifier(const ModelRef& model, const LabeledSet& test, ClassifierBackend& backend) {
    if (test.empty()) throw ArgumentError("evaluate_classifier: empty test set");
    backend.reset(model.num_classes, 0);
    backend.set_parameters(model.parameters);
    const TransformPipeline pipe = build_transforms(model.stats, model.crop_side, false);
    Rng unused(0);
    const auto inputs = transform_all(pipe, test, unused);
    return metrics_from_predictions(test.labels, backend.predict_proba(inputs), model.num_classes);
}

// ---- persistence -----------------------------------------------------------------------------

std::string to_json_text(const MetricsReport& r) {
    nlohmann::ordered_json j{{"test_loss", r.test_loss},
                             {"average_accuracy", r.average_accuracy},
                             {"overall_accuracy", r.overall_accuracy},
                             {"macro_f1", r.macro_f1},
                             {"jaccard", r.jaccard},
                             {"confusion", r.confusion}};
    return j.dump(2);
}

void write_model(const fs::path& path, const ModelRef& m) {
    nlohmann::ordered_json j{{"backend_id", m.backend_id},
                             {"best_epoch", m.best_epoch},
                             {"val_accuracy", m.val_accuracy},
                             {"num_classes", m.num_classes},
                             {"crop_side", m.crop_side},
                             {"stats", {{"mean", m.stats.mean}, {"std", m.stats.std}}},
                             {"parameters", m.parameters}};
    write_file_atomic(path, j.dump() + "\n");
}

ModelRef read_model(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("no model at " + path.string());
    try {
        const auto j = nlohmann::json::parse(read_text(path));
        ModelRef m;
        m.backend_id = j.at("backend_id").get<std::string>();
        m.best_epoch = j.at("best_epoch").get<int>();
        m.val_accuracy = j.at("val_accuracy").get<double>();
        m.num_classes = j.at("num_classes").get<int>();
        m.crop_side = j.at("crop_side").get<int>();
        m.stats.mean = j.at("stats").at("mean").get<std::vector<double>>();
        m.stats.std = j.at("stats").at("std").get<std::vector<double>>();
        m.parameters = j.at("parameters").get<std::vector<double>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("malformed model file " + path.string() + ": " + e.what());
    }
}

std::string epoch_log_csv(std::span<const EpochLog> log) {
    std::ostringstream out;
    out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    out << std::setprecision(10);
    for (const auto& r : log)
        out << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ','
            << r.val_accuracy << '\n';
    return out.str();
}

}  // namespace rsgen::benchdown

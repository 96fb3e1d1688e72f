#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rsgen/ingest.hpp"
#include "rsgen/raster.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::benchdown {

struct ClassifyConfig {
    double learning_rate = 3e-4;
    int epochs = 20;
    int batch_size = 32;
    int crop_side = 224;
    std::uint64_t seed = 0;
    std::string backend_id = "reference";
};

void validate(const ClassifyConfig& config);

struct LabeledSet {
    std::vector<Raster> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

struct SplitFractions {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

struct DataSplits {
    LabeledSet train;
    LabeledSet val;
    LabeledSet test;
};

// Per class: shuffle, take round(train * n) for train, round(val * n) for
// val, the rest for test. Throws ArgumentError when fractions are negative or
// do not sum to 1, and StateError ("split error") for a class with fewer than
// three items.
DataSplits stratified_split(const LabeledSet& data, const SplitFractions& fractions, std::uint64_t seed);

// Reads a synthetic dataset file and splits it.
DataSplits load_synth(const std::filesystem::path& path, const SplitFractions& fractions, std::uint64_t seed);

struct JitterLimits {
    double brightness = 0.2;
    double contrast = 0.2;
};

// Train: random crop, horizontal and vertical flips (p = 0.5 each),
// brightness/contrast jitter, normalize. Eval: center crop, normalize.
class TransformPipeline {
public:
    TransformPipeline(ingest::ChannelStats stats, int crop_side, bool train, JitterLimits jitter = {});

    // Throws ArgumentError when the crop does not fit. `rng` is unused in
    // eval mode.
    RealRaster operator()(const Raster& image, Rng& rng) const;

    bool train() const { return train_; }
    int crop_side() const { return crop_side_; }

private:
    ingest::ChannelStats stats_;
    int crop_side_;
    bool train_;
    JitterLimits jitter_;
};

TransformPipeline build_transforms(const ingest::ChannelStats& stats, int crop_side, bool train);

// Trainable classifier adapter.
class ClassifierBackend {
public:
    virtual ~ClassifierBackend() = default;
    virtual std::string id() const = 0;
    // Re-initialises parameters deterministically.
    virtual void reset(int num_classes, std::uint64_t seed) = 0;
    // One update on a batch; returns mean cross-entropy before the update.
    virtual double train_batch(std::span<const RealRaster> images, std::span<const int> labels,
                               double learning_rate) = 0;
    // Row-wise class probabilities.
    virtual std::vector<std::vector<double>> predict_proba(std::span<const RealRaster> images) const = 0;
    virtual std::vector<double> parameters() const = 0;
    virtual void set_parameters(std::span<const double> params) = 0;
};

enum class Optimizer { Sgd, Adam };

// Multinomial logistic regression on area-downscaled, flattened inputs.
class LogisticRegressionBackend final : public ClassifierBackend {
public:
    explicit LogisticRegressionBackend(int feature_side = 8, Optimizer optimizer = Optimizer::Adam);

    std::string id() const override;
    void reset(int num_classes, std::uint64_t seed) override;
    double train_batch(std::span<const RealRaster> images, std::span<const int> labels,
                       double learning_rate) override;
    std::vector<std::vector<double>> predict_proba(std::span<const RealRaster> images) const override;
    std::vector<double> parameters() const override { return weights_; }
    void set_parameters(std::span<const double> params) override;

    std::vector<double> features(const RealRaster& image) const;

private:
    std::vector<double> logits(const std::vector<double>& x) const;

    int side_;
    Optimizer optimizer_;
    int classes_ = 0;
    int dim_ = 0;  // features + bias
    std::vector<double> weights_;  // classes_ x dim_
    std::vector<double> m_, v_;
    long long t_ = 0;
};

std::unique_ptr<ClassifierBackend> make_classifier_backend(const std::string& id);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct ModelRef {
    std::string backend_id;
    int best_epoch = 0;
    double val_accuracy = 0.0;
    int num_classes = 0;
    std::vector<double> parameters;
    ingest::ChannelStats stats;
    int crop_side = 0;
};

struct TrainResult {
    ModelRef model;
    std::vector<EpochLog> epoch_log;
};

// Channel statistics come from the training images. Returns the parameters
// of the epoch with the best validation accuracy (training accuracy when
// there is no validation set). Backend failure becomes JobError with the
// number of completed epochs; completed rows are passed to `on_epoch` as they
// finish.
TrainResult train_classifier(const ClassifyConfig& config, const DataSplits& data, ClassifierBackend& backend,
                             int num_classes, const std::function<void(const EpochLog&)>& on_epoch = {});

struct MetricsReport {
    double test_loss = 0.0;
    double average_accuracy = 0.0;
    double overall_accuracy = 0.0;
    double macro_f1 = 0.0;
    double jaccard = 0.0;
    std::vector<std::vector<long long>> confusion;  // rows: true class, cols: predicted
};

// Accuracy-type metrics from a confusion matrix. Per-class F1/IoU with a
// zero denominator count as 0 and still enter the macro mean.
MetricsReport metrics_from_confusion(const std::vector<std::vector<long long>>& confusion);

// Builds the confusion matrix from argmax predictions and adds mean
// cross-entropy. Throws ArgumentError for an empty set.
MetricsReport metrics_from_predictions(std::span<const int> labels,
                                       const std::vector<std::vector<double>>& probabilities, int num_classes);

MetricsReport evaluate_classifier(const ModelRef& model, const LabeledSet& test, ClassifierBackend& backend);

std::string to_json_text(const MetricsReport& report);
void write_model(const std::filesystem::path& path, const ModelRef& model);
ModelRef read_model(const std::filesystem::path& path);
std::string epoch_log_csv(std::span<const EpochLog> log);

}  // namespace rsgen::benchdown

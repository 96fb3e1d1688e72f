#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "rsgen/errors.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/io.hpp"
#include "rsgen/trainctl.hpp"
#include "support.hpp"

namespace rsgen::trainctl {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

ingest::LayoutManifest make_layout(const fs::path& dir, std::size_t n) {
    ingest::RecordSet rs;
    for (std::size_t i = 0; i < n; ++i)
        rs.records.push_back({testing::random_raster(8, 8, 3, 500 + i), {"caption " + std::to_string(i)}, std::nullopt,
                              "img-" + std::to_string(i)});
    return ingest::export_layout(rs, dir);
}

// Counts optimizer steps and records micro-batch shapes; optionally fails.
class CountingBackend final : public DiffusionBackend {
public:
    explicit CountingBackend(long long fail_at = -1) : fail_at_(fail_at) {}
    std::string id() const override { return "counting"; }
    void configure(const BackendSettings& s) override { settings = s; }
    double train_step(const TrainBatch& batch, Rng& rng) override {
        ++steps;
        if (steps == fail_at_) throw BackendError("injected failure");
        examples += batch.example_count();
        micro_batches += batch.micro_batches.size();
        return 1.0 / static_cast<double>(steps) + 1e-3 * rng.uniform();
    }
    void save_checkpoint(const fs::path& dir) const override {
        write_file_atomic(dir / "state.txt", std::to_string(steps));
    }
    void load_checkpoint(const fs::path& dir) override { steps = std::stoll(read_text(dir / "state.txt")); }
    Raster generate(const PromptSpec& spec) override { return Raster(spec.height, spec.width, 3); }

    BackendSettings settings;
    long long steps = 0;
    std::size_t examples = 0;
    std::size_t micro_batches = 0;

private:
    long long fail_at_;
};

TEST(FinetuneConfig, Defaults) {
    const auto c = build_finetune_config();
    EXPECT_EQ(c.epochs, 5);
    EXPECT_EQ(c.batch_size, 4);
    EXPECT_DOUBLE_EQ(c.learning_rate, 1e-6);
    EXPECT_EQ(c.grad_accum_steps, 4);
    EXPECT_TRUE(c.mixed_precision);
    EXPECT_EQ(c.checkpoint_interval_steps, 500);
}

TEST(FinetuneConfig, Overrides) {
    const auto c = build_finetune_config({{"epochs", "1"}, {"checkpoint_interval_steps", "2"}});
    EXPECT_EQ(c.epochs, 1);
    EXPECT_EQ(c.checkpoint_interval_steps, 2);
    try {
        build_finetune_config({{"learning_rate", "0"}});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "learning_rate");
    }
    EXPECT_THROW(build_finetune_config({{"epochs", "0"}}), ValidationError);
    EXPECT_THROW(build_finetune_config({{"epochs", "abc"}}), ValidationError);
    EXPECT_THROW(build_finetune_config({{"bogus", "1"}}), ValidationError);
}

TEST(FinetuneConfig, WarnsAboveFiveEpochs) {
    EXPECT_TRUE(config_warnings(build_finetune_config()).empty());
    EXPECT_FALSE(config_warnings(build_finetune_config({{"epochs", "6"}})).empty());
}

TEST(FinetuneConfig, HashTracksContent) {
    EXPECT_EQ(config_hash(build_finetune_config()), config_hash(build_finetune_config()));
    EXPECT_NE(config_hash(build_finetune_config()), config_hash(build_finetune_config({{"epochs", "2"}})));
}

TEST(RunFinetune, EightItemsTwoSteps) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 8);
    const auto cfg = build_finetune_config({{"epochs", "1"}, {"batch_size", "2"}, {"grad_accum_steps", "2"}});
    CountingBackend backend;
    const auto ledger = run_finetune(cfg, layout, backend, dir / "job");
    ASSERT_EQ(ledger.entries.size(), 2u);
    EXPECT_EQ(backend.steps, 2);
    EXPECT_EQ(backend.examples, 8u);
    EXPECT_EQ(backend.micro_batches, 4u);
}

TEST(RunFinetune, StepCountProperty) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 11);
    Rng rng(77);
    for (int trial = 0; trial < 12; ++trial) {
        const int epochs = 1 + static_cast<int>(rng.below(3));
        const int batch = 1 + static_cast<int>(rng.below(4));
        const int accum = 1 + static_cast<int>(rng.below(4));
        const int interval = 1 + static_cast<int>(rng.below(4));
        const auto cfg = build_finetune_config({{"epochs", std::to_string(epochs)},
                                                {"batch_size", std::to_string(batch)},
                                                {"grad_accum_steps", std::to_string(accum)},
                                                {"checkpoint_interval_steps", std::to_string(interval)}});
        const long long per_epoch = (11 + batch * accum - 1) / (batch * accum);
        CountingBackend backend;
        const auto job = dir / ("job-" + std::to_string(trial));
        const auto ledger = run_finetune(cfg, layout, backend, job);
        EXPECT_EQ(static_cast<long long>(ledger.entries.size()), epochs * per_epoch);
        EXPECT_EQ(total_steps(cfg, 11), epochs * per_epoch);
        EXPECT_EQ(backend.examples, static_cast<std::size_t>(epochs) * 11u);
        for (std::size_t i = 0; i < ledger.entries.size(); ++i) {
            const auto& e = ledger.entries[i];
            EXPECT_EQ(e.step, static_cast<long long>(i) + 1);
            EXPECT_EQ(e.checkpoint_ref.has_value(), e.step % interval == 0);
            if (e.checkpoint_ref) EXPECT_TRUE(fs::exists(job / *e.checkpoint_ref));
        }
        const bool aligned = (epochs * per_epoch) % interval == 0;
        EXPECT_EQ(ledger.final_checkpoint.has_value(), !aligned);
        if (ledger.final_checkpoint) EXPECT_TRUE(fs::exists(job / *ledger.final_checkpoint));
    }
}

TEST(RunFinetune, IntervalOneCheckpointsEverything) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 5);
    const auto cfg = build_finetune_config(
        {{"epochs", "2"}, {"batch_size", "2"}, {"grad_accum_steps", "1"}, {"checkpoint_interval_steps", "1"}});
    CountingBackend backend;
    const auto ledger = run_finetune(cfg, layout, backend, dir / "job");
    for (const auto& e : ledger.entries) {
        ASSERT_TRUE(e.checkpoint_ref.has_value());
        EXPECT_EQ(*e.checkpoint_ref, checkpoint_dir_name(e.step));
    }
}

TEST(RunFinetune, PersistedLedgerMatches) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 6);
    const auto cfg = build_finetune_config({{"epochs", "2"}, {"batch_size", "2"}, {"grad_accum_steps", "1"},
                                            {"checkpoint_interval_steps", "2"}});
    CountingBackend backend;
    const auto ledger = run_finetune(cfg, layout, backend, dir / "job");
    const auto back = read_ledger(dir / "job" / kLedgerFile);
    EXPECT_EQ(back.entries, ledger.entries);
    EXPECT_EQ(back.config_hash, config_hash(cfg));
    EXPECT_EQ(back.final_checkpoint, ledger.final_checkpoint);
}

TEST(RunFinetune, ResumeNeverDuplicates) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 10);
    const auto cfg = build_finetune_config({{"epochs", "2"}, {"batch_size", "2"}, {"grad_accum_steps", "1"},
                                            {"checkpoint_interval_steps", "3"}});
    const fs::path job = dir / "job";
    CountingBackend failing(7);
    try {
        run_finetune(cfg, layout, failing, job);
        FAIL() << "expected JobError";
    } catch (const JobError& e) {
        EXPECT_EQ(e.last_completed(), 6);
    }
    const auto partial = read_ledger(job / kLedgerFile);
    ASSERT_EQ(partial.entries.size(), 6u);

    CountingBackend healthy;
    const auto full = run_finetune(cfg, layout, healthy, job);
    ASSERT_EQ(full.entries.size(), 10u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(full.entries[i], partial.entries[i]);
    std::set<long long> steps;
    for (const auto& e : read_ledger(job / kLedgerFile).entries) EXPECT_TRUE(steps.insert(e.step).second);
    EXPECT_EQ(steps.size(), 10u);

    // A second complete run changes nothing.
    const std::string before = read_text(job / kLedgerFile);
    CountingBackend again;
    run_finetune(cfg, layout, again, job);
    EXPECT_EQ(read_text(job / kLedgerFile), before);
}

TEST(RunFinetune, TornTailIsDropped) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 4);
    const auto cfg = build_finetune_config({{"epochs", "1"}, {"batch_size", "1"}, {"grad_accum_steps", "1"},
                                            {"checkpoint_interval_steps", "1"}});
    const fs::path job = dir / "job";
    CountingBackend failing(3);
    EXPECT_THROW(run_finetune(cfg, layout, failing, job), JobError);
    append_line(job / kLedgerFile, "{\"kind\":\"step\",\"st");
    std::string text = read_text(job / kLedgerFile);
    text.pop_back();  // no trailing newline: torn write
    write_file_atomic(job / kLedgerFile, text);
    CountingBackend healthy;
    const auto ledger = run_finetune(cfg, layout, healthy, job);
    EXPECT_EQ(ledger.entries.size(), 4u);
}

TEST(RunFinetune, RejectsForeignLedger) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 4);
    CountingBackend b1, b2;
    run_finetune(build_finetune_config({{"epochs", "1"}}), layout, b1, dir / "job");
    EXPECT_THROW(run_finetune(build_finetune_config({{"epochs", "2"}}), layout, b2, dir / "job"), StateError);
}

TEST(RunFinetune, ReferenceBackendLearns) {
    TempDir dir;
    const auto layout = make_layout(dir / "layout", 4);
    const auto cfg = build_finetune_config({{"epochs", "50"}, {"batch_size", "4"}, {"grad_accum_steps", "1"},
                                            {"learning_rate", "0.05"}, {"checkpoint_interval_steps", "25"}});
    ReferenceDiffusionBackend backend;
    const auto ledger = run_finetune(cfg, layout, backend, dir / "job");
    ASSERT_EQ(ledger.entries.size(), 50u);
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) {
        first += ledger.entries[static_cast<std::size_t>(i)].loss;
        last += ledger.entries[ledger.entries.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    EXPECT_LT(last, first);
    EXPECT_LT(ledger.entries.back().loss, ledger.entries.front().loss);

    ReferenceDiffusionBackend again;
    const auto ledger2 = run_finetune(cfg, layout, again, dir / "job2");
    EXPECT_EQ(ledger2.entries, ledger.entries);
    EXPECT_EQ(again.weights(), backend.weights());
}

TEST(ToyLoss, Cases) {
    const std::vector<double> a = {0.5, -1.0, 2.0};
    EXPECT_EQ(toy_denoise_loss(a, a), 0.0);
    const std::vector<double> zeros(4, 0.0), ones(4, 1.0);
    EXPECT_DOUBLE_EQ(toy_denoise_loss(zeros, ones), 1.0);
    Rng rng(4);
    std::vector<double> p(37), t(37);
    for (auto& v : p) v = rng.normal();
    for (auto& v : t) v = rng.normal();
    double brute = 0;
    for (std::size_t i = 0; i < p.size(); ++i) brute += (p[i] - t[i]) * (p[i] - t[i]);
    EXPECT_NEAR(toy_denoise_loss(p, t), brute / 37.0, 1e-12);
    EXPECT_THROW(toy_denoise_loss(zeros, a), ArgumentError);
}

TrainLedger reference_ledger() {
    TrainLedger l;
    const std::vector<std::pair<long long, double>> rows = {{500, .31}, {1000, .27}, {1500, .25},
                                                            {2000, .22}, {2500, .20}, {3000, .22}};
    for (const auto& [step, loss] : rows) l.append({step, loss, checkpoint_dir_name(step)});
    return l;
}

TEST(SelectBest, DecliningThenRisingLedger) {
    const auto [step, ref] = select_best_checkpoint(reference_ledger(), 1);
    EXPECT_EQ(step, 2500);
    EXPECT_EQ(ref, checkpoint_dir_name(2500));
}

TEST(SelectBest, SingletonTiesAndErrors) {
    TrainLedger one;
    one.append({1, 0.1, std::nullopt});
    one.append({2, 0.5, "ckpt/step-2"});
    EXPECT_EQ(select_best_checkpoint(one).first, 2);

    TrainLedger tie;
    tie.append({10, 0.3, "a"});
    tie.append({20, 0.3, "b"});
    EXPECT_EQ(select_best_checkpoint(tie).first, 10);

    TrainLedger none;
    none.append({1, 0.1, std::nullopt});
    EXPECT_THROW(select_best_checkpoint(none), StateError);
    EXPECT_THROW(select_best_checkpoint(TrainLedger{}), StateError);
}

TEST(SelectBest, InvariantUnderWorseAppends) {
    auto l = reference_ledger();
    for (long long s = 3500; s <= 6000; s += 500) {
        l.append({s, 0.9 + static_cast<double>(s) * 1e-5, checkpoint_dir_name(s)});
        EXPECT_EQ(select_best_checkpoint(l, 1).first, 2500);
    }
}

TEST(SelectBest, SmoothingWindow) {
    TrainLedger l;
    // Raw minimum at step 2 is an isolated dip; the trailing mean of 3
    // prefers the sustained low at step 6.
    const std::vector<double> losses = {0.5, 0.1, 0.5, 0.3, 0.25, 0.2};
    for (std::size_t i = 0; i < losses.size(); ++i)
        l.append({static_cast<long long>(i + 1), losses[i], "s" + std::to_string(i + 1)});
    EXPECT_EQ(select_best_checkpoint(l, 1).first, 2);
    EXPECT_EQ(select_best_checkpoint(l, 3).first, 6);
}

TEST(Ledger, AppendRequiresIncreasingSteps) {
    TrainLedger l;
    l.append({5, 0.1, std::nullopt});
    EXPECT_THROW(l.append({5, 0.1, std::nullopt}), StateError);
    EXPECT_THROW(l.append({4, 0.1, std::nullopt}), StateError);
}

}  // namespace
}  // namespace rsgen::trainctl

#include "rsgen/trainctl.hpp"

#include <charconv>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"

namespace rsgen::trainctl {

namespace fs = std::filesystem;

void validate(const FinetuneConfig& c) {
    if (c.epochs < 1) throw ValidationError("epochs", "must be >= 1");
    if (c.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate))
        throw ValidationError("learning_rate", "must be > 0");
    if (c.grad_accum_steps < 1) throw ValidationError("grad_accum_steps", "must be >= 1");
    if (c.checkpoint_interval_steps < 1)
        throw ValidationError("checkpoint_interval_steps", "must be >= 1");
}

std::vector<std::string> config_warnings(const FinetuneConfig& c) {
    std::vector<std::string> out;
    if (c.epochs > kRecommendedMaxEpochs) {
        out.push_back("epochs=" + std::to_string(c.epochs) + " exceeds " +
                      std::to_string(kRecommendedMaxEpochs) +
                      "; long fine-tuning on a small corpus tends to overwrite the base model's "
                      "natural-image prior");
    }
    return out;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc{} || res.ptr != last)
        throw ValidationError(key, "cannot parse '" + text + "'");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "off" || text == "no") return false;
    throw ValidationError(key, "expected a boolean, got '" + text + "'");
}

nlohmann::ordered_json to_json(const FinetuneConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"grad_accum_steps", c.grad_accum_steps},
            {"mixed_precision", c.mixed_precision},
            {"checkpoint_interval_steps", c.checkpoint_interval_steps},
            {"seed", c.seed}};
}

}  // namespace

FinetuneConfig build_finetune_config(const std::map<std::string, std::string>& overrides) {
    FinetuneConfig c;
    for (const auto& [key, value] : overrides) {
        if (key == "epochs") c.epochs = parse_number<int>(key, value);
        else if (key == "batch_size") c.batch_size = parse_number<int>(key, value);
        else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
        else if (key == "grad_accum_steps") c.grad_accum_steps = parse_number<int>(key, value);
        else if (key == "mixed_precision") c.mixed_precision = parse_bool(key, value);
        else if (key == "checkpoint_interval_steps") c.checkpoint_interval_steps = parse_number<int>(key, value);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
        else throw ValidationError(key, "unknown finetune key");
    }
    validate(c);
    return c;
}

std::string config_hash(const FinetuneConfig& c) { return sha256_hex(to_json(c).dump()); }

long long steps_per_epoch(const FinetuneConfig& c, std::size_t n) {
    const auto per_step = static_cast<long long>(c.batch_size) * c.grad_accum_steps;
    return (static_cast<long long>(n) + per_step - 1) / per_step;
}

long long total_steps(const FinetuneConfig& c, std::size_t n) {
    return c.epochs * steps_per_epoch(c, n);
}

// ---- ledger ------------------------------------------------------------------

void TrainLedger::append(LedgerEntry entry) {
    if (!entries.empty() && entry.step <= entries.back().step) {
        throw StateError("ledger step " + std::to_string(entry.step) + " does not follow " +
                         std::to_string(entries.back().step));
    }
    entries.push_back(std::move(entry));
}

std::optional<long long> TrainLedger::last_step() const {
    if (entries.empty()) return std::nullopt;
    return entries.back().step;
}

std::string checkpoint_dir_name(long long step) { return "ckpt/step-" + std::to_string(step); }

namespace {

struct LedgerFile {
    TrainLedger ledger;
    bool has_header = false;
    // Byte length of the well-formed prefix.
    std::size_t valid_bytes = 0;
};

LedgerFile parse_ledger(const fs::path& path) {
    const std::string text = read_text(path);
    LedgerFile out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const bool complete = nl != std::string::npos;
        const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
        const std::size_t next = complete ? nl + 1 : text.size();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            if (next == text.size()) break;  // torn tail
            throw SchemaError("malformed ledger line in " + path.string());
        }
        if (!complete) break;  // parsed but never newline-terminated: torn
        try {
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "header") {
                out.ledger.config_hash = j.at("config_hash").get<std::string>();
                out.has_header = true;
            } else if (kind == "step") {
                LedgerEntry e;
                e.step = j.at("step").get<long long>();
                e.loss = j.at("loss").get<double>();
                if (!j.at("checkpoint").is_null()) e.checkpoint_ref = j.at("checkpoint").get<std::string>();
                out.ledger.append(std::move(e));
            } else if (kind == "final") {
                out.ledger.final_checkpoint = j.at("checkpoint").get<std::string>();
            } else {
                throw SchemaError("unknown ledger record kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("malformed ledger record in " + path.string() + ": " + e.what());
        }
        out.valid_bytes = next;
        pos = next;
    }
    return out;
}

std::string step_line(const LedgerEntry& e) {
    nlohmann::ordered_json j{{"kind", "step"}, {"step", e.step}, {"loss", e.loss}};
    j["checkpoint"] = e.checkpoint_ref ? nlohmann::ordered_json(*e.checkpoint_ref) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

}  // namespace

TrainLedger read_ledger(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("no ledger at " + path.string());
    return parse_ledger(path).ledger;
}

// ---- training loop ---------------------------------------------------------------

double toy_denoise_loss(std::span<const double> predicted, std::span<const double> truth) {
    if (predicted.size() != truth.size()) {
        throw ArgumentError("toy_denoise_loss: shape mismatch (" + std::to_string(predicted.size()) +
                            " vs " + std::to_string(truth.size()) + ")");
    }
    if (predicted.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double d = predicted[i] - truth[i];
        acc += d * d;
    }
    return acc / static_cast<double>(predicted.size());
}

namespace {

constexpr std::uint64_t kStepStream = 0x57e9'0000'0000ULL;
constexpr std::uint64_t kOrderStream = 0x0dde'0000'0000ULL;

class StepPlanner {
public:
    StepPlanner(const FinetuneConfig& c, std::size_t n)
        : config_(c), n_(n), per_epoch_(steps_per_epoch(c, n)) {}

    // Example indices for 1-based global optimizer step `step`, grouped into
    // micro-batches.
    std::vector<std::vector<std::size_t>> batch_for(long long step) {
        const long long epoch = (step - 1) / per_epoch_;
        const long long within = (step - 1) % per_epoch_;
        if (epoch != cached_epoch_) {
            order_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
            Rng rng(derive_seed(config_.seed, kOrderStream + static_cast<std::uint64_t>(epoch)));
            rng.shuffle(order_);
            cached_epoch_ = epoch;
        }
        const std::size_t per_step = static_cast<std::size_t>(config_.batch_size) * config_.grad_accum_steps;
        const std::size_t begin = static_cast<std::size_t>(within) * per_step;
        const std::size_t end = std::min(n_, begin + per_step);
        std::vector<std::vector<std::size_t>> micro;
        for (std::size_t i = begin; i < end; i += static_cast<std::size_t>(config_.batch_size)) {
            const std::size_t stop = std::min(end, i + static_cast<std::size_t>(config_.batch_size));
            micro.emplace_back(order_.begin() + static_cast<long>(i), order_.begin() + static_cast<long>(stop));
        }
        return micro;
    }

private:
    const FinetuneConfig& config_;
    std::size_t n_;
    long long per_epoch_;
    long long cached_epoch_ = -1;
    std::vector<std::size_t> order_;
};

}  // namespace

TrainLedger run_finetune(const FinetuneConfig& config, const ingest::LayoutManifest& data,
                         DiffusionBackend& backend, const fs::path& job_dir) {
    validate(config);
    const auto entries = ingest::read_metadata(data);
    if (entries.empty()) throw ArgumentError("run_finetune: layout has no images");

    fs::create_directories(job_dir);
    const fs::path ledger_path = job_dir / kLedgerFile;
    const std::string hash = config_hash(config);

    TrainLedger ledger;
    ledger.config_hash = hash;
    if (fs::exists(ledger_path)) {
        LedgerFile existing = parse_ledger(ledger_path);
        if (!existing.has_header) throw StateError("ledger " + ledger_path.string() + " has no header");
        if (existing.ledger.config_hash != hash)
            throw StateError("ledger " + ledger_path.string() + " belongs to a different config");
        if (existing.valid_bytes < fs::file_size(ledger_path)) fs::resize_file(ledger_path, existing.valid_bytes);
        ledger = std::move(existing.ledger);
    } else {
        nlohmann::ordered_json header{{"kind", "header"}, {"config_hash", hash}, {"config", to_json(config)},
                                      {"backend", backend.id()}, {"examples", entries.size()}};
        append_line(ledger_path, header.dump());
    }

    backend.configure(BackendSettings{config.learning_rate, config.batch_size, config.grad_accum_steps,
                                      config.mixed_precision, config.seed});
    const long long done = ledger.last_step().value_or(0);
    long long restored = 0;
    for (auto it = ledger.entries.rbegin(); it != ledger.entries.rend(); ++it) {
        if (it->checkpoint_ref) {
            backend.load_checkpoint(job_dir / *it->checkpoint_ref);
            restored = it->step;
            break;
        }
    }

    StepPlanner planner(config, entries.size());
    auto load_batch = [&](long long step) {
        TrainBatch batch;
        for (const auto& micro : planner.batch_for(step)) {
            auto& out = batch.micro_batches.emplace_back();
            for (std::size_t idx : micro)
                out.push_back({read_png(data.root_dir / entries[idx].file_name), entries[idx].text});
        }
        return batch;
    };
    auto run_step = [&](long long step) {
        Rng rng(derive_seed(config.seed, kStepStream + static_cast<std::uint64_t>(step)));
        try {
            return backend.train_step(load_batch(step), rng);
        } catch (const Error& e) {
            throw JobError("step " + std::to_string(step) + " failed: " + e.what(), done);
        } catch (const std::exception& e) {
            throw JobError("step " + std::to_string(step) + " failed: " + e.what(), done);
        }
    };

    // Rebuild the in-memory state for steps that were logged after the last
    // checkpoint; their ledger entries are already on disk.
    for (long long step = restored + 1; step <= done; ++step) run_step(step);

    const long long total = total_steps(config, entries.size());
    long long last_logged = done;
    for (long long step = done + 1; step <= total; ++step) {
        double loss;
        try {
            Rng rng(derive_seed(config.seed, kStepStream + static_cast<std::uint64_t>(step)));
            loss = backend.train_step(load_batch(step), rng);
            if (!std::isfinite(loss)) throw BackendError("non-finite loss");
        } catch (const std::exception& e) {
            throw JobError("step " + std::to_string(step) + " failed: " + e.what(), last_logged);
        }
        LedgerEntry entry{step, loss, std::nullopt};
        if (step % config.checkpoint_interval_steps == 0) {
            entry.checkpoint_ref = checkpoint_dir_name(step);
            backend.save_checkpoint(job_dir / *entry.checkpoint_ref);
        }
        append_line(ledger_path, step_line(entry));
        ledger.append(std::move(entry));
        last_logged = step;
    }

    if (!ledger.final_checkpoint && total % config.checkpoint_interval_steps != 0) {
        const std::string ref = "ckpt/final";
        backend.save_checkpoint(job_dir / ref);
        nlohmann::ordered_json j{{"kind", "final"}, {"step", total}, {"checkpoint", ref}};
        append_line(ledger_path, j.dump());
        ledger.final_checkpoint = ref;
    }
    return ledger;
}

std::pair<long long, std::string> select_best_checkpoint(const TrainLedger& ledger, int smoothing_window) {
    if (smoothing_window < 1) throw ArgumentError("smoothing_window must be >= 1");
    std::optional<std::size_t> best;
    double best_score = 0.0;
    const auto& e = ledger.entries;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (!e[i].checkpoint_ref) continue;
        const std::size_t first = i + 1 >= static_cast<std::size_t>(smoothing_window) ? i + 1 - smoothing_window : 0;
        double sum = 0.0;
        for (std::size_t k = first; k <= i; ++k) sum += e[k].loss;
        const double score = sum / static_cast<double>(i - first + 1);
        if (!best || score < best_score) {
            best = i;
            best_score = score;
        }
    }
    if (!best) throw StateError("ledger has no checkpointed entries");
    return {e[*best].step, *e[*best].checkpoint_ref};
}

}  // namespace rsgen::trainctl

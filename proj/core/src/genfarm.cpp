#include "rsgen/genfarm.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "rsgen/columnar.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"
#include "rsgen/lulc.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::genfarm {

namespace fs = std::filesystem;

GenerationPlan plan_generation(const std::map<std::string, int>& counts,
                               std::span<const PromptSpec> prompt_bank, std::uint64_t seed) {
    std::vector<std::pair<int, std::string>> ordered;
    for (const auto& [name, count] : counts) {
        const auto label = lulc_label_index(name);
        if (!label) throw ArgumentError("plan_generation: unknown class '" + name + "'");
        if (count < 0) throw ArgumentError("plan_generation: negative count for '" + name + "'");
        if (count > 0) ordered.emplace_back(*label, name);
    }
    std::sort(ordered.begin(), ordered.end());

    GenerationPlan plan;
    std::set<std::uint64_t> used;
    for (const auto& [label, name] : ordered) {
        std::vector<const PromptSpec*> bank;
        for (const auto& p : prompt_bank)
            if (p.class_name == name) bank.push_back(&p);
        if (bank.empty()) throw ArgumentError("plan_generation: no bank prompt for class '" + name + "'");

        const int count = counts.at(name);
        std::uint64_t draw = 0;
        for (int i = 0; i < count; ++i) {
            GenerationTask task{name, *bank[static_cast<std::size_t>(i) % bank.size()]};
            std::uint64_t s;
            do {
                s = derive_seed(seed, hash_text(name) + draw++) >> 1;  // keep seeds int64-safe
            } while (!used.insert(s).second);
            task.prompt.seed = s;
            plan.tasks.push_back(std::move(task));
        }
        plan.target_counts[name] = count;
    }
    return plan;
}

namespace {

using TaskKey = std::pair<std::string, std::uint64_t>;

nlohmann::ordered_json manifest_line(const SynthRecord& r, const std::string& file) {
    return {{"class_name", r.class_name}, {"seed", r.seed},
            {"label_index", r.label_index}, {"prompt", r.prompt},
            {"negative_prompt", r.negative_prompt}, {"scheduler", r.scheduler},
            {"steps", r.steps}, {"width", r.image.width},
            {"height", r.image.height}, {"file", file}};
}

std::map<TaskKey, nlohmann::json> read_manifest_lines(const fs::path& path) {
    std::map<TaskKey, nlohmann::json> done;
    if (!fs::exists(path)) return done;
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            done[{j.at("class_name").get<std::string>(), j.at("seed").get<std::uint64_t>()}] = j;
        } catch (const nlohmann::json::exception&) {
            if (in.peek() == std::char_traits<char>::eof()) break;  // torn tail from a crash
            throw SchemaError("malformed generation manifest line in " + path.string());
        }
    }
    return done;
}

std::string image_file_name(const GenerationTask& t, int label) {
    return "images/" + std::to_string(label) + "-" + std::to_string(t.prompt.seed) + ".png";
}

SynthRecord record_from(const GenerationTask& t, int label, Raster image) {
    SynthRecord r;
    r.image = std::move(image);
    r.class_name = t.class_name;
    r.label_index = label;
    r.prompt = t.prompt.positive;
    r.negative_prompt = t.prompt.negative;
    r.seed = t.prompt.seed;
    r.scheduler = t.prompt.scheduler;
    r.steps = t.prompt.steps;
    return r;
}

}  // namespace

std::vector<SynthRecord> run_generation(const GenerationPlan& plan, DiffusionBackend& backend,
                                        const fs::path& manifest, const GenerationOptions& options) {
    if (plan.tasks.empty()) return {};
    const fs::path root = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
    fs::create_directories(root / "images");

    const auto existing = read_manifest_lines(manifest);
    std::vector<std::optional<SynthRecord>> results(plan.tasks.size());
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < plan.tasks.size(); ++i) {
        const auto& t = plan.tasks[i];
        const int label = *lulc_label_index(t.class_name);
        const auto it = existing.find({t.class_name, t.prompt.seed});
        if (it != existing.end()) {
            const fs::path file = root / it->second.at("file").get<std::string>();
            if (fs::exists(file)) {
                results[i] = record_from(t, label, read_png(file));
                continue;
            }
        }
        pending.push_back(i);
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::optional<std::pair<std::size_t, std::string>> failure;
    std::size_t completed = plan.tasks.size() - pending.size();

    auto worker = [&] {
        while (!stop) {
            const std::size_t slot = next++;
            if (slot >= pending.size()) return;
            const std::size_t i = pending[slot];
            const auto& t = plan.tasks[i];
            const int label = *lulc_label_index(t.class_name);
            try {
                Raster img = backend.generate(t.prompt);
                if (img.width != t.prompt.width || img.height != t.prompt.height || img.channels != 3)
                    throw BackendError("backend returned a " + std::to_string(img.height) + "x" +
                                       std::to_string(img.width) + "x" + std::to_string(img.channels) +
                                       " image");
                const std::string file = image_file_name(t, label);
                write_file_atomic(root / file, encode_png(img, 1));
                SynthRecord rec = record_from(t, label, std::move(img));
                std::lock_guard lock(mu);
                append_line(manifest, manifest_line(rec, file).dump());
                results[i] = std::move(rec);
                ++completed;
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                if (!failure || i < failure->first) failure = {i, e.what()};
                stop = true;
            }
        }
    };

    // The backend is shared; only fan out when the caller asks for it.
    const unsigned n = std::max(1u, std::min<unsigned>(options.workers, static_cast<unsigned>(pending.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
    }

    if (failure) {
        const auto& t = plan.tasks[failure->first];
        throw JobError("generation task " + std::to_string(failure->first) + " (" + t.class_name +
                           ", seed " + std::to_string(t.prompt.seed) + ") failed: " + failure->second,
                       static_cast<long long>(completed));
    }

    std::vector<SynthRecord> out;
    out.reserve(results.size());
    for (auto& r : results) out.push_back(std::move(*r));
    std::sort(out.begin(), out.end(), [](const SynthRecord& a, const SynthRecord& b) {
        return std::tie(a.label_index, a.seed) < std::tie(b.label_index, b.seed);
    });
    return out;
}

void write_synth_dataset(std::span<const SynthRecord> records, const fs::path& path) {
    if (records.empty()) throw ArgumentError("write_synth_dataset: no records");
    columnar::BytesColumn images;
    columnar::StringColumn classes, prompts, negatives, schedulers;
    columnar::Int64Column labels, seeds, steps;
    for (const auto& r : records) {
        if (r.image.channels != 3) throw ArgumentError("write_synth_dataset: non-RGB record");
        images.push_back(encode_png(r.image, 1));
        classes.push_back(r.class_name);
        labels.push_back(r.label_index);
        prompts.push_back(r.prompt);
        negatives.push_back(r.negative_prompt);
        seeds.push_back(static_cast<std::int64_t>(r.seed));
        schedulers.push_back(r.scheduler);
        steps.push_back(r.steps);
    }
    columnar::Table t;
    t.add_column("image", std::move(images));
    t.add_column("class_name", std::move(classes));
    t.add_column("label_index", std::move(labels));
    t.add_column("prompt", std::move(prompts));
    t.add_column("negative_prompt", std::move(negatives));
    t.add_column("seed", std::move(seeds));
    t.add_column("scheduler", std::move(schedulers));
    t.add_column("steps", std::move(steps));
    columnar::write_table(path, t);
}

std::vector<SynthRecord> read_synth_dataset(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("no synthetic dataset at " + path.string());
    const auto t = columnar::read_table(path);
    const auto& images = t.bytes("image");
    const auto& classes = t.strings("class_name");
    const auto& labels = t.int64s("label_index");
    const auto& prompts = t.strings("prompt");
    const auto& negatives = t.strings("negative_prompt");
    const auto& seeds = t.int64s("seed");
    const auto& schedulers = t.strings("scheduler");
    const auto& steps = t.int64s("steps");
    std::vector<SynthRecord> out(t.num_rows());
    for (std::size_t i = 0; i < t.num_rows(); ++i) {
        auto& r = out[i];
        r.image = decode_png(images[i]);
        r.class_name = classes[i];
        r.label_index = static_cast<int>(labels[i]);
        r.prompt = prompts[i];
        r.negative_prompt = negatives[i];
        r.seed = static_cast<std::uint64_t>(seeds[i]);
        r.scheduler = schedulers[i];
        r.steps = static_cast<int>(steps[i]);
    }
    return out;
}

std::map<std::string, int> class_counts(std::span<const SynthRecord> records) {
    std::map<std::string, int> counts;
    for (const auto& r : records) ++counts[r.class_name];
    return counts;
}

}  // namespace rsgen::genfarm

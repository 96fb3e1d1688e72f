#include "rsgen/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <list>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rsgen/benchdown.hpp"
#include "rsgen/columnar.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/fidlab.hpp"
#include "rsgen/genfarm.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/io.hpp"
#include "rsgen/lulc.hpp"
#include "rsgen/promptforge.hpp"
#include "rsgen/trainctl.hpp"

namespace rsgen::pipeline {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---- config -----------------------------------------------------------------------------

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"ingest",
         {"input", "holdout", "resize", "augment", "caption_policy", "image_column", "captions_column",
          "source_id_column", "class_column"}},
        {"finetune",
         {"epochs", "batch_size", "learning_rate", "grad_accum_steps", "mixed_precision",
          "checkpoint_interval_steps", "backend", "smoothing_window"}},
        {"prompts",
         {"docs", "min_chunk_chars", "test_fraction", "eos", "index_chunk_size", "embed_dim", "threads", "template",
          "per_class", "top_k", "qlora_lora_alpha", "qlora_rank", "qlora_target_modules", "qlora_dropout",
          "qlora_learning_rate", "qlora_weight_decay", "qlora_epochs", "qlora_batch_size",
          "qlora_context_length"}},
        {"generate", {"backend", "counts", "workers", "steps", "scheduler", "width", "height"}},
        {"fid", {"real", "gen", "sample_size", "runs", "seed", "extractor"}},
        {"downstream",
         {"data", "learning_rate", "epochs", "batch_size", "crop", "backend", "train_fraction", "val_fraction",
          "test_fraction"}},
    };
    return keys;
}

namespace {

template <typename T>
T parse_value(const std::string& field, const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end || text.empty())
        throw ConfigError(field + ": cannot parse '" + text + "' as a number");
    return v;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::optional<std::string> PipelineConfig::get(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    if (s == sections.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
}

std::string PipelineConfig::get_or(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    return get(section, key).value_or(fallback);
}

long long PipelineConfig::get_int(const std::string& section, const std::string& key, long long fallback) const {
    const auto v = get(section, key);
    return v ? parse_value<long long>(section + "." + key, *v) : fallback;
}

double PipelineConfig::get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto v = get(section, key);
    return v ? parse_value<double>(section + "." + key, *v) : fallback;
}

bool PipelineConfig::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const auto v = get(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError(section + "." + key + ": expected a boolean, got '" + *v + "'");
}

void PipelineConfig::set(const std::string& section, const std::string& key, const std::string& value) {
    if (section.empty()) {
        if (key == "seed")
            seed = parse_value<std::uint64_t>("seed", value);
        else if (key == "workspace")
            workspace = fs::path(value);
        else
            throw ConfigError("unknown top-level key '" + key + "' (allowed: seed, workspace)");
        return;
    }
    const auto& keys = known_keys();
    const auto s = keys.find(section);
    if (s == keys.end()) throw ConfigError("unknown config section [" + section + "]");
    if (!s->second.count(key)) throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
    sections[section][key] = value;
}

std::string PipelineConfig::hash() const {
    ojson j;
    j["seed"] = seed;
    for (const auto& [section, kv] : sections)
        for (const auto& [k, v] : kv) j["sections"][section][k] = v;
    return sha256_hex(j.dump());
}

PipelineConfig parse_config(std::string_view ini_text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(ini_text)};
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    PipelineConfig cfg;
    const auto& keys = known_keys();
    for (const auto& [name, node] : tree) {
        if (keys.count(name)) {
            if (!node.data().empty()) throw ConfigError("config: '" + name + "' is a section name, not a key");
            for (const auto& [key, leaf] : node) cfg.set(name, key, trim(leaf.data()));
        } else if (node.empty()) {
            cfg.set("", name, trim(node.data()));
        } else {
            throw ConfigError("unknown config section [" + name + "]");
        }
    }
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config(read_text(path));
}

std::map<std::string, int> parse_counts(std::string_view text) {
    std::map<std::string, int> counts;
    std::string item;
    std::istringstream in{std::string(text)};
    while (std::getline(in, item, ',')) {
        if (trim(item).empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("generate.counts: expected 'Class=N', got '" + trim(item) + "'");
        const std::string name = trim(item.substr(0, eq));
        if (!lulc_label_index(name)) throw ConfigError("generate.counts: unknown class '" + name + "'");
        const int n = parse_value<int>("generate.counts", trim(item.substr(eq + 1)));
        if (n < 0) throw ConfigError("generate.counts: negative count for '" + name + "'");
        counts[name] = n;
    }
    if (counts.empty()) throw ConfigError("generate.counts: no classes given");
    return counts;
}

// ---- lock -------------------------------------------------------------------------------

WorkspaceLock::WorkspaceLock(const fs::path& workspace) : path_(workspace / kLockFile) {
    fs::create_directories(workspace);
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            const ssize_t n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            if (n != static_cast<ssize_t>(pid.size())) throw IoError("cannot write lock " + path_.string());
            return;
        }
        if (errno != EEXIST) throw IoError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
        long holder = 0;
        std::ifstream(path_) >> holder;
        if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) != 0 && errno == ESRCH) {
            fs::remove(path_);  // stale
            continue;
        }
        throw StateError("workspace is locked by process " + std::to_string(holder) + " (" + path_.string() + ")");
    }
    throw StateError("cannot acquire workspace lock " + path_.string());
}

WorkspaceLock::~WorkspaceLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---- stages -----------------------------------------------------------------------------

namespace {

struct Context {
    PipelineConfig cfg;
    fs::path ws;
    std::ostream& out;
    std::ostream& err;

    fs::path ws_path(const std::string& section, const std::string& key, const fs::path& fallback) const {
        const auto v = cfg.get(section, key);
        return v ? fs::path(*v) : ws / fallback;
    }
};

class Provenance {
public:
    Provenance(const Context& ctx, std::string command) : ctx_(ctx), command_(std::move(command)) {}

    void input(const fs::path& p) { inputs_.push_back(entry(p)); }
    void output(const fs::path& p) { outputs_.push_back(entry(p)); }

    void commit() const {
        ojson rec{{"command", command_},           {"version", kVersion},
                  {"config_hash", ctx_.cfg.hash()}, {"seed", ctx_.cfg.seed},
                  {"inputs", inputs_},              {"outputs", outputs_}};
        append_line(ctx_.ws / kProvenanceFile, rec.dump());
    }

private:
    ojson entry(const fs::path& p) const {
        return {{"path", display(p)}, {"sha256", sha256_file(p)}};
    }
    std::string display(const fs::path& p) const {
        const fs::path abs = fs::weakly_canonical(p);
        const fs::path rel = abs.lexically_relative(fs::weakly_canonical(ctx_.ws));
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return abs.generic_string();
    }

    const Context& ctx_;
    std::string command_;
    ojson inputs_ = ojson::array();
    ojson outputs_ = ojson::array();
};

void require(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw MissingArtifactError(what + " not found: " + p.string());
}

void cmd_prepare(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto input = cfg.get("ingest", "input");
    if (!input) throw ConfigError("ingest.input: no input dataset given (use --in)");
    require(*input, "input dataset");

    ingest::ColumnNames cols;
    cols.image = cfg.get_or("ingest", "image_column", cols.image);
    cols.captions = cfg.get_or("ingest", "captions_column", cols.captions);
    cols.source_id = cfg.get_or("ingest", "source_id_column", cols.source_id);
    cols.class_name = cfg.get_or("ingest", "class_column", cols.class_name);
    const auto holdout = cfg.get_int("ingest", "holdout", 500);
    const auto side = cfg.get_int("ingest", "resize", 224);
    const bool augment = cfg.get_bool("ingest", "augment", true);
    const std::string policy_name = cfg.get_or("ingest", "caption_policy", "first");
    ingest::CaptionPolicy policy;
    if (policy_name == "random")
        policy = ingest::CaptionPolicy::random(cfg.seed);
    else if (policy_name != "first")
        throw ConfigError("ingest.caption_policy: expected 'first' or 'random', got '" + policy_name + "'");
    if (side < 0) throw ConfigError("ingest.resize: must be >= 0 (0 keeps the source size)");

    ingest::RecordSet rs = ingest::ingest_columnar(*input, cols);
    if (holdout < 0 || static_cast<std::size_t>(holdout) > rs.size())
        throw ConfigError("ingest.holdout: " + std::to_string(holdout) + " is outside [0, " +
                          std::to_string(rs.size()) + "]");
    auto [train, hold] = ingest::split_holdout(rs, static_cast<std::size_t>(holdout), cfg.seed);
    if (train.empty()) throw ConfigError("ingest.holdout: leaves no training records");
    if (side > 0) {
        for (auto* set : {&train, &hold})
            for (auto& r : set->records) r.image = ingest::resize_to(r.image, static_cast<int>(side));
    }

    Provenance prov(ctx, "prepare");
    prov.input(*input);
    const fs::path layout = ctx.ws / "layout";
    const fs::path holdout_dir = ctx.ws / "holdout";
    fs::remove_all(layout);
    fs::remove_all(holdout_dir);
    const auto m = ingest::export_layout(train, layout, {policy, augment});
    prov.output(layout / ingest::kManifestFile);
    if (!hold.empty()) {
        ingest::export_layout(hold, holdout_dir, {});
        prov.output(holdout_dir / ingest::kManifestFile);
    }
    prov.commit();
    ctx.out << "prepare: " << train.size() << " training records (" << m.image_count << " layout images), "
            << hold.size() << " holdout records\n";
}

void cmd_stats(Context& ctx) {
    const fs::path layout = ctx.ws / "layout";
    const auto manifest = ingest::read_manifest(layout);
    ingest::verify_layout(manifest);
    const auto images = ingest::load_layout_images(manifest);
    const auto stats = ingest::compute_stats(std::span<const Raster>(images));
    const ojson j{{"mean", stats.mean}, {"std", stats.std}, {"image_count", images.size()}};
    const fs::path out = ctx.ws / "stats.json";
    write_file_atomic(out, j.dump(2) + "\n");
    Provenance prov(ctx, "stats");
    prov.input(layout / ingest::kManifestFile);
    prov.output(out);
    prov.commit();
    ctx.out << j.dump(2) << "\n";
}

void cmd_finetune(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path layout = ctx.ws / "layout";
    const auto manifest = ingest::read_manifest(layout);
    ingest::verify_layout(manifest);

    std::map<std::string, std::string> overrides;
    if (const auto s = cfg.sections.find("finetune"); s != cfg.sections.end())
        for (const auto& [k, v] : s->second)
            if (k != "backend" && k != "smoothing_window") overrides[k] = v;
    overrides["seed"] = std::to_string(cfg.seed);
    trainctl::FinetuneConfig fc;
    try {
        fc = trainctl::build_finetune_config(overrides);
    } catch (const ValidationError& e) {
        throw ConfigError("finetune." + e.field() + ": " + e.what());
    }
    for (const auto& w : trainctl::config_warnings(fc)) ctx.err << "warning: " << w << "\n";
    const auto window = cfg.get_int("finetune", "smoothing_window", 1);
    if (window < 1) throw ConfigError("finetune.smoothing_window: must be >= 1");

    std::unique_ptr<DiffusionBackend> backend;
    try {
        backend = make_diffusion_backend(cfg.get_or("finetune", "backend", "reference"));
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("finetune.backend: ") + e.what());
    }

    const fs::path job = ctx.ws / "finetune";
    const auto ledger = trainctl::run_finetune(fc, manifest, *backend, job);

    ojson best{{"smoothing_window", window}, {"config_hash", ledger.config_hash}};
    try {
        const auto [step, ref] = trainctl::select_best_checkpoint(ledger, static_cast<int>(window));
        best["step"] = step;
        best["checkpoint"] = ref;
        best["source"] = "ledger";
    } catch (const StateError&) {
        if (!ledger.final_checkpoint) throw;
        best["step"] = ledger.last_step().value_or(0);
        best["checkpoint"] = *ledger.final_checkpoint;
        best["source"] = "final";
    }
    const fs::path best_path = job / "best.json";
    write_file_atomic(best_path, best.dump(2) + "\n");

    Provenance prov(ctx, "finetune");
    prov.input(layout / ingest::kManifestFile);
    prov.output(job / trainctl::kLedgerFile);
    prov.output(best_path);
    prov.commit();
    ctx.out << "finetune: " << ledger.entries.size() << " optimizer steps, best checkpoint "
            << best["checkpoint"].get<std::string>() << " (step " << best["step"].get<long long>() << ")\n";
}

std::vector<promptforge::CorpusChunk> read_chunks(const fs::path& path) {
    require(path, "corpus chunk file");
    const auto t = columnar::read_table(path);
    const auto& ordinals = t.int64s("ordinal");
    const auto& texts = t.strings("text");
    const auto& lens = t.int64s("char_len");
    const auto& eos = t.int64s("ends_with_eos");
    std::vector<promptforge::CorpusChunk> chunks(t.num_rows());
    for (std::size_t i = 0; i < t.num_rows(); ++i) {
        chunks[i].ordinal = static_cast<std::size_t>(ordinals[i]);
        chunks[i].text = texts[i];
        chunks[i].char_len = static_cast<std::size_t>(lens[i]);
        chunks[i].ends_with_eos = eos[i] != 0;
    }
    std::sort(chunks.begin(), chunks.end(), [](const auto& a, const auto& b) { return a.ordinal < b.ordinal; });
    return chunks;
}

void cmd_corpus(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto docs = cfg.get("prompts", "docs");
    if (!docs) throw ConfigError("prompts.docs: no document directory or file given (use --docs)");
    require(*docs, "document source");

    std::vector<fs::path> files;
    if (fs::is_directory(*docs)) {
        for (const auto& e : fs::directory_iterator(*docs))
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw MissingArtifactError("no .txt documents in " + *docs);
    } else {
        files.emplace_back(*docs);
    }

    const auto min_chars = cfg.get_int("prompts", "min_chunk_chars", promptforge::kDefaultMinChunkChars);
    const double test_fraction = cfg.get_double("prompts", "test_fraction", 0.05);
    const std::string eos = cfg.get_or("prompts", "eos", promptforge::kDefaultEos);
    if (min_chars < 1) throw ConfigError("prompts.min_chunk_chars: must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("prompts.test_fraction: must be in [0, 1)");

    std::map<std::string, std::string> qlora;
    if (const auto s = cfg.sections.find("prompts"); s != cfg.sections.end())
        for (const auto& [k, v] : s->second)
            if (k.rfind("qlora_", 0) == 0) qlora[k.substr(6)] = v;
    promptforge::QLoraJobSpec spec;
    try {
        spec = promptforge::build_qlora_spec(qlora);
    } catch (const ValidationError& e) {
        throw ConfigError("prompts.qlora_" + e.field() + ": " + e.what());
    }

    std::vector<std::string> texts;
    for (const auto& f : files) texts.push_back(read_text(f));
    const auto chunks = promptforge::chunk_corpus(promptforge::build_corpus(texts), static_cast<std::size_t>(min_chars));
    const auto [train, test] = promptforge::split_corpus(chunks, test_fraction, cfg.seed);

    std::set<std::size_t> test_ordinals;
    for (const auto& c : test) test_ordinals.insert(c.ordinal);
    columnar::Int64Column ordinals, lens, eos_flags;
    columnar::StringColumn text_col, split_col;
    for (const auto& c : chunks) {
        ordinals.push_back(static_cast<std::int64_t>(c.ordinal));
        text_col.push_back(c.text);
        lens.push_back(static_cast<std::int64_t>(c.char_len));
        eos_flags.push_back(c.ends_with_eos ? 1 : 0);
        split_col.push_back(test_ordinals.count(c.ordinal) ? "test" : "train");
    }
    columnar::Table table;
    table.add_column("ordinal", std::move(ordinals));
    table.add_column("text", std::move(text_col));
    table.add_column("char_len", std::move(lens));
    table.add_column("ends_with_eos", std::move(eos_flags));
    table.add_column("split", std::move(split_col));

    const fs::path dir = ctx.ws / "corpus";
    auto rendered = [&](std::span<const promptforge::CorpusChunk> part) {
        std::string s;
        for (const auto& c : part) s += promptforge::render_chunk(c, eos) + "\n";
        return s;
    };
    columnar::write_table(dir / "chunks.rscol", table);
    write_file_atomic(dir / "train.txt", rendered(train));
    write_file_atomic(dir / "test.txt", rendered(test));
    write_file_atomic(dir / "qlora_job.json", promptforge::to_json_text(spec) + "\n");

    Provenance prov(ctx, "corpus");
    for (const auto& f : files) prov.input(f);
    for (const char* name : {"chunks.rscol", "train.txt", "test.txt", "qlora_job.json"}) prov.output(dir / name);
    prov.commit();
    ctx.out << "corpus: " << files.size() << " documents, " << chunks.size() << " chunks (" << train.size()
            << " train, " << test.size() << " test)\n";
}

promptforge::HashedBagOfWordsEmbedder make_embedder(const PipelineConfig& cfg) {
    const auto dim = cfg.get_int("prompts", "embed_dim", 256);
    if (dim < 1) throw ConfigError("prompts.embed_dim: must be >= 1");
    return promptforge::HashedBagOfWordsEmbedder(static_cast<std::size_t>(dim), cfg.seed);
}

void cmd_index(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path chunks_path = ctx.ws / "corpus" / "chunks.rscol";
    const auto chunks = read_chunks(chunks_path);
    const auto size = cfg.get_int("prompts", "index_chunk_size", promptforge::kDefaultIndexChunkSize);
    const auto threads = cfg.get_int("prompts", "threads", 1);
    if (size < 1) throw ConfigError("prompts.index_chunk_size: must be >= 1");
    if (threads < 1) throw ConfigError("prompts.threads: must be >= 1");
    const auto embedder = make_embedder(cfg);
    const auto index = promptforge::index_corpus(chunks, embedder, static_cast<std::size_t>(size),
                                                 static_cast<unsigned>(threads));
    const fs::path out = ctx.ws / "index" / "index.bin";
    promptforge::write_index(out, index);
    Provenance prov(ctx, "index");
    prov.input(chunks_path);
    prov.output(out);
    prov.commit();
    ctx.out << "index: " << index.entries.size() << " vectors of dimension " << index.dim() << " ("
            << index.embedder_id << ")\n";
}

void cmd_prompts(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const std::string tmpl = cfg.get_or("prompts", "template", "aerial");
    const auto templates = promptforge::PromptTemplates::defaults();
    if (!templates.templates.count(tmpl)) throw ConfigError("prompts.template: unknown template '" + tmpl + "'");
    const auto per_class = cfg.get_int("prompts", "per_class", 4);
    const auto top_k = cfg.get_int("prompts", "top_k", 3);
    if (per_class < 1) throw ConfigError("prompts.per_class: must be >= 1");
    if (top_k < 0) throw ConfigError("prompts.top_k: must be >= 0");

    Provenance prov(ctx, "prompts");
    const fs::path index_path = ctx.ws / "index" / "index.bin";
    const fs::path chunks_path = ctx.ws / "corpus" / "chunks.rscol";
    std::optional<promptforge::VectorIndex> index;
    std::vector<promptforge::CorpusChunk> chunks;
    const auto embedder = make_embedder(cfg);
    if (fs::exists(index_path) && top_k > 0) {
        index = promptforge::read_index(index_path);
        if (index->embedder_id != embedder.id())
            throw StateError("index was built with " + index->embedder_id + ", config asks for " + embedder.id());
        chunks = read_chunks(chunks_path);
        prov.input(index_path);
        prov.input(chunks_path);
    }

    std::vector<PromptSpec> bank;
    for (std::string_view cls : kLulcClasses) {
        const std::string name(cls);
        std::vector<std::string> context;
        if (index) {
            for (const auto& hit : promptforge::retrieve(*index, embedder, name, static_cast<std::size_t>(top_k)))
                context.emplace_back(promptforge::hit_text(chunks, *index, hit));
        }
        for (long long i = 0; i < per_class; ++i)
            bank.push_back(promptforge::assemble_prompt(name, context, tmpl, static_cast<std::uint64_t>(i), templates));
    }
    const fs::path out = ctx.ws / "prompts" / "prompt_bank.jsonl";
    promptforge::write_prompt_bank(out, bank);
    prov.output(out);
    prov.commit();
    ctx.out << "prompts: " << bank.size() << " prompts (" << per_class << " per class, "
            << (index ? "retrieval context" : "no retrieval context") << ")\n";
}

void cmd_generate(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path bank_path = ctx.ws / "prompts" / "prompt_bank.jsonl";
    require(bank_path, "prompt bank (run `prompts` first)");
    auto bank = promptforge::read_prompt_bank(bank_path);

    const auto counts = cfg.get("generate", "counts") ? parse_counts(*cfg.get("generate", "counts"))
                                                      : default_lulc_counts();
    const auto workers = cfg.get_int("generate", "workers", 1);
    if (workers < 1) throw ConfigError("generate.workers: must be >= 1");
    for (auto& p : bank) {
        p.steps = static_cast<int>(cfg.get_int("generate", "steps", p.steps));
        p.scheduler = cfg.get_or("generate", "scheduler", p.scheduler);
        p.width = static_cast<int>(cfg.get_int("generate", "width", p.width));
        p.height = static_cast<int>(cfg.get_int("generate", "height", p.height));
        try {
            validate(p);
        } catch (const ValidationError& e) {
            throw ConfigError("generate." + e.field() + ": " + e.what());
        }
    }

    const std::string backend_name = cfg.get_or("generate", "backend", "stub");
    std::unique_ptr<DiffusionBackend> backend;
    try {
        backend = make_diffusion_backend(backend_name);
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("generate.backend: ") + e.what());
    }
    Provenance prov(ctx, "generate");
    prov.input(bank_path);
    const fs::path best = ctx.ws / "finetune" / "best.json";
    if (backend_name == "reference" && fs::exists(best)) {
        const auto j = nlohmann::json::parse(read_text(best));
        backend->load_checkpoint(ctx.ws / "finetune" / j.at("checkpoint").get<std::string>());
        prov.input(best);
    }

    const auto plan = genfarm::plan_generation(counts, bank, cfg.seed);
    const fs::path dir = ctx.ws / "generate";
    const auto records = genfarm::run_generation(plan, *backend, dir / genfarm::kGenManifestFile,
                                                 {static_cast<unsigned>(workers)});
    if (records.empty()) throw ConfigError("generate.counts: nothing to generate");
    genfarm::write_synth_dataset(records, dir / "synth.rscol");
    prov.output(dir / genfarm::kGenManifestFile);
    prov.output(dir / "synth.rscol");
    prov.commit();

    ctx.out << "generate: " << records.size() << " images";
    for (const auto& [name, n] : genfarm::class_counts(records)) ctx.out << "; " << name << " " << n;
    ctx.out << "\n";
}

std::vector<Raster> load_images(const fs::path& p) {
    require(p, "image set");
    if (fs::is_directory(p)) return ingest::load_layout_images(ingest::read_manifest(p));
    const auto table = columnar::read_table(p);
    std::vector<Raster> images;
    if (table.has_column("label_index")) {
        for (auto& r : genfarm::read_synth_dataset(p)) images.push_back(std::move(r.image));
    } else {
        for (auto& r : ingest::ingest_columnar(p).records) images.push_back(std::move(r.image));
    }
    return images;
}

void cmd_fid(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path real_path = ctx.ws_path("fid", "real", "holdout");
    const fs::path gen_path = ctx.ws_path("fid", "gen", fs::path("generate") / "synth.rscol");
    const auto sample_size = cfg.get_int("fid", "sample_size", 250);
    const auto runs = cfg.get_int("fid", "runs", 4);
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("fid", "seed", static_cast<long long>(cfg.seed)));
    const std::string extractor_name = cfg.get_or("fid", "extractor", "random-projection");
    if (extractor_name != "random-projection")
        throw ConfigError("fid.extractor: unknown extractor '" + extractor_name + "' (available: random-projection)");
    if (runs < 1) throw ConfigError("fid.runs: must be >= 1");

    const auto real = load_images(real_path);
    const auto gen = load_images(gen_path);
    if (sample_size < 2 || static_cast<std::size_t>(sample_size) > std::min(real.size(), gen.size()))
        throw ConfigError("fid.sample_size: " + std::to_string(sample_size) + " must be in [2, " +
                          std::to_string(std::min(real.size(), gen.size())) + "]");
    const fidlab::RandomProjectionExtractor extractor;
    const auto result =
        fidlab::sampled_fid(real, gen, extractor, static_cast<std::size_t>(sample_size), static_cast<int>(runs), seed);

    const ojson report{{"mean_fid", result.mean_fid}, {"per_run", result.per_run},
                       {"extractor_id", extractor.id()}, {"n_real", real.size()},
                       {"n_gen", gen.size()},            {"sample_size", sample_size},
                       {"runs", runs},                   {"seed", seed}};
    const fs::path out = ctx.ws / "fid" / "fid_report.json";
    write_file_atomic(out, report.dump(2) + "\n");
    Provenance prov(ctx, "fid");
    prov.input(fs::is_directory(real_path) ? real_path / ingest::kManifestFile : real_path);
    prov.input(fs::is_directory(gen_path) ? gen_path / ingest::kManifestFile : gen_path);
    prov.output(out);
    prov.commit();
    ctx.out << report.dump(2) << "\n";
}

void cmd_train_downstream(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const fs::path data = ctx.ws_path("downstream", "data", fs::path("generate") / "synth.rscol");
    require(data, "synthetic dataset (run `generate` first)");

    benchdown::ClassifyConfig cc;
    cc.learning_rate = cfg.get_double("downstream", "learning_rate", cc.learning_rate);
    cc.epochs = static_cast<int>(cfg.get_int("downstream", "epochs", cc.epochs));
    cc.batch_size = static_cast<int>(cfg.get_int("downstream", "batch_size", cc.batch_size));
    cc.crop_side = static_cast<int>(cfg.get_int("downstream", "crop", cc.crop_side));
    cc.backend_id = cfg.get_or("downstream", "backend", cc.backend_id);
    cc.seed = cfg.seed;
    try {
        benchdown::validate(cc);
    } catch (const ValidationError& e) {
        throw ConfigError("downstream." + e.field() + ": " + e.what());
    }
    benchdown::SplitFractions fr;
    fr.train = cfg.get_double("downstream", "train_fraction", fr.train);
    fr.val = cfg.get_double("downstream", "val_fraction", fr.val);
    fr.test = cfg.get_double("downstream", "test_fraction", fr.test);
    if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
        throw ConfigError("downstream.*_fraction: fractions must be non-negative and sum to 1");

    std::unique_ptr<benchdown::ClassifierBackend> backend;
    try {
        backend = benchdown::make_classifier_backend(cc.backend_id);
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("downstream.backend: ") + e.what());
    }

    const auto splits = benchdown::load_synth(data, fr, cfg.seed);
    if (splits.test.empty()) throw ConfigError("downstream.test_fraction: test split is empty");
    const auto trained = benchdown::train_classifier(cc, splits, *backend, kNumLulcClasses,
                                                     [&](const benchdown::EpochLog& e) {
                                                         ctx.out << "epoch " << e.epoch << " train_loss "
                                                                 << e.train_loss << " val_acc " << e.val_accuracy
                                                                 << "\n";
                                                     });
    const auto metrics = benchdown::evaluate_classifier(trained.model, splits.test, *backend);

    const fs::path dir = ctx.ws / "downstream";
    write_file_atomic(dir / "metrics.json", benchdown::to_json_text(metrics) + "\n");
    write_file_atomic(dir / "epoch_log.csv", benchdown::epoch_log_csv(trained.epoch_log));
    benchdown::write_model(dir / "model.json", trained.model);
    Provenance prov(ctx, "train-downstream");
    prov.input(data);
    for (const char* name : {"metrics.json", "epoch_log.csv", "model.json"}) prov.output(dir / name);
    prov.commit();
    ctx.out << "train-downstream: train " << splits.train.size() << ", val " << splits.val.size() << ", test "
            << splits.test.size() << "; best epoch " << trained.model.best_epoch << "; test overall accuracy "
            << metrics.overall_accuracy << ", average accuracy " << metrics.average_accuracy << "\n";
}

std::string html_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::optional<nlohmann::json> read_json_if(const fs::path& p) {
    if (!fs::exists(p)) return std::nullopt;
    return nlohmann::json::parse(read_text(p));
}

std::string fmt_num(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

void cmd_report(Context& ctx) {
    const fs::path prov_path = ctx.ws / kProvenanceFile;
    require(prov_path, "provenance log");

    // Latest recorded checksum per artifact.
    std::map<std::string, std::string> expected;
    std::vector<nlohmann::json> records;
    {
        std::istringstream in(read_text(prov_path));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            for (const auto& o : j.at("outputs")) expected[o.at("path")] = o.at("sha256");
            records.push_back(std::move(j));
        }
    }
    std::vector<std::string> problems;
    for (const auto& [rel, sha] : expected) {
        const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : ctx.ws / rel;
        if (!fs::exists(p)) {
            problems.push_back(rel + ": missing");
            continue;
        }
        if (sha256_file(p) != sha) {
            problems.push_back(rel + ": checksum mismatch");
            continue;
        }
        if (p.filename() == ingest::kManifestFile) {
            try {
                ingest::verify_layout(ingest::read_manifest(p.parent_path()));
            } catch (const Error& e) {
                problems.push_back(rel + ": " + e.what());
            }
        }
    }
    if (!problems.empty()) {
        std::string msg = "report refused, provenance check failed:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw StateError(msg);
    }

    const fs::path dir = ctx.ws / "report";
    fs::remove_all(dir);
    fs::create_directories(dir / "thumbs");

    const auto fid = read_json_if(ctx.ws / "fid" / "fid_report.json");
    const auto metrics = read_json_if(ctx.ws / "downstream" / "metrics.json");
    const auto best = read_json_if(ctx.ws / "finetune" / "best.json");
    const auto stats = read_json_if(ctx.ws / "stats.json");

    ojson summary;
    summary["version"] = kVersion;
    summary["fid"] = fid ? ojson::parse(fid->dump()) : ojson(nullptr);
    summary["metrics"] = metrics ? ojson::parse(metrics->dump()) : ojson(nullptr);
    summary["finetune_best"] = best ? ojson::parse(best->dump()) : ojson(nullptr);
    summary["stats"] = stats ? ojson::parse(stats->dump()) : ojson(nullptr);
    summary["artifacts"] = ojson::array();
    for (const auto& [rel, sha] : expected) summary["artifacts"].push_back({{"path", rel}, {"sha256", sha}});

    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>rsgen report</title>\n"
         << "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
         << "td,th{border:1px solid #999;padding:4px 8px}img{margin:2px}</style></head><body>\n"
         << "<h1>Synthetic dataset review</h1>\n";

    html << "<h2>Fine-tuning</h2>\n";
    if (best)
        html << "<p>Selected checkpoint <code>" << html_escape((*best)["checkpoint"].get<std::string>())
             << "</code> at step " << (*best)["step"].get<long long>() << ".</p>\n";
    else
        html << "<p>No fine-tuning run.</p>\n";

    html << "<h2>FID</h2>\n";
    if (fid) {
        html << "<table><tr><th>extractor</th><th>mean</th><th>per run</th><th>real</th><th>generated</th></tr><tr><td>"
             << html_escape((*fid)["extractor_id"].get<std::string>()) << "</td><td>"
             << fmt_num((*fid)["mean_fid"].get<double>()) << "</td><td>";
        for (const auto& v : (*fid)["per_run"]) html << fmt_num(v.get<double>()) << " ";
        html << "</td><td>" << (*fid)["n_real"] << "</td><td>" << (*fid)["n_gen"] << "</td></tr></table>\n";
    } else {
        html << "<p>No FID report.</p>\n";
    }

    html << "<h2>Downstream classification</h2>\n";
    if (metrics) {
        html << "<table><tr><th>test loss</th><th>average accuracy</th><th>overall accuracy</th>"
             << "<th>macro F1</th><th>Jaccard</th></tr><tr>";
        for (const char* k : {"test_loss", "average_accuracy", "overall_accuracy", "macro_f1", "jaccard"})
            html << "<td>" << fmt_num((*metrics)[k].get<double>()) << "</td>";
        html << "</tr></table>\n<h3>Confusion matrix</h3>\n<table><tr><th>true \\ predicted</th>";
        for (std::string_view c : kLulcClasses) html << "<th>" << html_escape(c) << "</th>";
        html << "</tr>\n";
        const auto& conf = (*metrics)["confusion"];
        for (std::size_t r = 0; r < conf.size(); ++r) {
            html << "<tr><th>" << (r < kLulcClasses.size() ? html_escape(kLulcClasses[r]) : std::to_string(r))
                 << "</th>";
            for (const auto& v : conf[r]) html << "<td>" << v << "</td>";
            html << "</tr>\n";
        }
        html << "</table>\n";
    } else {
        html << "<p>No downstream metrics.</p>\n";
    }

    html << "<h2>Samples per class</h2>\n";
    summary["samples"] = ojson::object();
    const fs::path synth = ctx.ws / "generate" / "synth.rscol";
    if (fs::exists(synth)) {
        const auto records = genfarm::read_synth_dataset(synth);
        std::map<std::string, int> shown;
        html << "<table>\n";
        for (std::string_view cls : kLulcClasses) {
            const std::string name(cls);
            html << "<tr><th>" << html_escape(name) << "</th><td>";
            for (const auto& r : records) {
                if (r.class_name != name || shown[name] >= 6) continue;
                ++shown[name];
                const std::string file = "thumbs/" + std::to_string(r.label_index) + "-" + std::to_string(r.seed) + ".png";
                write_png(dir / file, ingest::resize_to(r.image, 96));
                summary["samples"][name].push_back(file);
                html << "<img src=\"" << file << "\" width=\"96\" height=\"96\" title=\"" << html_escape(r.prompt)
                     << "\">";
            }
            html << "</td></tr>\n";
        }
        html << "</table>\n";
    } else {
        html << "<p>No synthetic dataset.</p>\n";
    }

    html << "<h2>Provenance</h2>\n<table><tr><th>command</th><th>config hash</th><th>outputs</th></tr>\n";
    for (const auto& r : records) {
        html << "<tr><td>" << html_escape(r.at("command").get<std::string>()) << "</td><td><code>"
             << r.at("config_hash").get<std::string>().substr(0, 12) << "</code></td><td>";
        for (const auto& o : r.at("outputs")) html << html_escape(o.at("path").get<std::string>()) << " ";
        html << "</td></tr>\n";
    }
    html << "</table>\n</body></html>\n";

    write_file_atomic(dir / "index.html", html.str());
    write_file_atomic(dir / "report.json", summary.dump(2) + "\n");
    Provenance prov(ctx, "report");
    for (const auto& [rel, sha] : expected) prov.input(fs::path(rel).is_absolute() ? fs::path(rel) : ctx.ws / rel);
    prov.commit();
    ctx.out << "report: " << (dir / "index.html").string() << "\n";
}

// ---- command line -------------------------------------------------------------------------

struct FlagBinding {
    CLI::Option* option;
    std::string section;
    std::string key;
    std::string value;
};

struct Cli {
    CLI::App app{"Remote-sensing synthetic data pipeline", "rsgen"};
    std::string config_path;
    std::string workspace;
    std::string seed;
    std::vector<std::string> sets;
    std::list<FlagBinding> flags;

    Cli() {
        app.require_subcommand(1, 1);
        app.fallthrough();
        app.add_option("-c,--config", config_path, "INI config file");
        app.add_option("-w,--workspace", workspace, std::string("Workspace directory (default: $") + kWorkspaceEnv + ")");
        app.add_option("--seed", seed, "Global seed");
        app.add_option("--set", sets, "Override a config value: section.key=value")->take_all();

        auto* prepare = app.add_subcommand("prepare", "Ingest a captioned dataset into the fine-tuning layout and holdout");
        bind(prepare, "--in", "ingest", "input", "Columnar image-caption dataset");
        bind(prepare, "--holdout", "ingest", "holdout", "Holdout size (default 500)");
        bind(prepare, "--resize", "ingest", "resize", "Square side to resize to, 0 keeps size (default 224)");
        bind(prepare, "--augment", "ingest", "augment", "Add the seven dihedral transforms (default true)");
        bind(prepare, "--caption-policy", "ingest", "caption_policy", "first | random");

        app.add_subcommand("stats", "Compute channel statistics of the layout");

        auto* finetune = app.add_subcommand("finetune", "Fine-tune the diffusion backend on the layout");
        bind(finetune, "--epochs", "finetune", "epochs", "Epochs (default 5)");
        bind(finetune, "--batch-size", "finetune", "batch_size", "Micro-batch size (default 4)");
        bind(finetune, "--learning-rate", "finetune", "learning_rate", "Learning rate (default 1e-6)");
        bind(finetune, "--grad-accum", "finetune", "grad_accum_steps", "Gradient accumulation steps (default 4)");
        bind(finetune, "--checkpoint-interval", "finetune", "checkpoint_interval_steps", "Steps between checkpoints (default 500)");
        bind(finetune, "--backend", "finetune", "backend", "Diffusion backend (default reference)");

        auto* corpus = app.add_subcommand("corpus", "Chunk a document collection into the language-model corpus");
        bind(corpus, "--docs", "prompts", "docs", "Directory of .txt documents or a single text file");
        bind(corpus, "--min-chars", "prompts", "min_chunk_chars", "Minimum chunk length (default 500)");

        auto* index = app.add_subcommand("index", "Embed corpus chunks into a vector index");
        bind(index, "--chunk-size", "prompts", "index_chunk_size", "Index slice length (default 256)");
        bind(index, "--threads", "prompts", "threads", "Embedding threads (default 1)");

        auto* prompts = app.add_subcommand("prompts", "Assemble the class-conditioned prompt bank");
        bind(prompts, "--template", "prompts", "template", "Template id (default aerial)");
        bind(prompts, "--per-class", "prompts", "per_class", "Prompts per class (default 4)");
        bind(prompts, "--top-k", "prompts", "top_k", "Retrieved context chunks per class (default 3)");

        auto* generate = app.add_subcommand("generate", "Generate the labeled synthetic dataset");
        bind(generate, "--counts", "generate", "counts", "Per-class counts, e.g. \"Bare Land=52,Crop Land=57\"");
        bind(generate, "--backend", "generate", "backend", "Diffusion backend (default stub)");
        bind(generate, "--workers", "generate", "workers", "Parallel workers (default 1)");
        bind(generate, "--steps", "generate", "steps", "Inference steps (default 50)");
        bind(generate, "--size", "generate", "width", "Output side (default 512)");

        auto* fid = app.add_subcommand("fid", "Sampled FID between real and generated images");
        bind(fid, "--real", "fid", "real", "Layout directory or columnar dataset (default <workspace>/holdout)");
        bind(fid, "--gen", "fid", "gen", "Synthetic dataset (default <workspace>/generate/synth.rscol)");
        bind(fid, "--sample-size", "fid", "sample_size", "Images per run (default 250)");
        bind(fid, "--runs", "fid", "runs", "Number of runs (default 4)");
        bind(fid, "--seed", "fid", "seed", "Sampling seed (default: global seed)");
        bind(fid, "--extractor", "fid", "extractor", "Feature extractor (default random-projection)");

        auto* down = app.add_subcommand("train-downstream", "Train and evaluate the downstream classifier");
        bind(down, "--data", "downstream", "data", "Synthetic dataset (default <workspace>/generate/synth.rscol)");
        bind(down, "--epochs", "downstream", "epochs", "Epochs (default 20)");
        bind(down, "--learning-rate", "downstream", "learning_rate", "Learning rate (default 3e-4)");
        bind(down, "--batch-size", "downstream", "batch_size", "Batch size (default 32)");
        bind(down, "--crop", "downstream", "crop", "Crop side (default 224)");
        bind(down, "--backend", "downstream", "backend", "Classifier backend (default reference)");

        app.add_subcommand("report", "Render the static review page");
    }

    void bind(CLI::App* sub, const std::string& flag, const std::string& section, const std::string& key,
              const std::string& help) {
        auto& b = flags.emplace_back(FlagBinding{nullptr, section, key, {}});
        b.option = sub->add_option(flag, b.value, help);
    }
};

int map_exception(std::ostream& err) {
    try {
        throw;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const ValidationError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const MissingArtifactError& e) {
        err << "missing artifact: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const JobError& e) {
        err << "stage failed: " << e.what() << " (last completed: " << e.last_completed() << ")\n";
        return kExitStageFailure;
    } catch (const std::exception& e) {
        err << "stage failed: " << e.what() << "\n";
        return kExitStageFailure;
    }
}

}  // namespace

std::string usage() {
    Cli cli;
    return cli.app.help();
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli;
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        cli.app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << cli.app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << cli.app.help();
        return kExitConfigError;
    }
    CLI::App* sub = cli.app.get_subcommands().front();
    const std::string command = sub->get_name();

    try {
        Context ctx{cli.config_path.empty() ? PipelineConfig{} : load_config(cli.config_path), {}, out, err};
        if (!cli.seed.empty()) ctx.cfg.set("", "seed", cli.seed);
        for (const auto& b : cli.flags) {
            if (b.option->count() == 0) continue;
            ctx.cfg.set(b.section, b.key, b.value);
            // --size is square
            if (b.section == "generate" && b.key == "width") ctx.cfg.set("generate", "height", b.value);
        }
        for (const auto& s : cli.sets) {
            const auto eq = s.find('=');
            const auto dot = s.find('.');
            if (eq == std::string::npos || dot == std::string::npos || dot > eq)
                throw ConfigError("--set expects section.key=value, got '" + s + "'");
            ctx.cfg.set(s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1));
        }

        if (!cli.workspace.empty()) {
            ctx.ws = cli.workspace;
        } else if (ctx.cfg.workspace) {
            ctx.ws = *ctx.cfg.workspace;
        } else if (const char* env = std::getenv(kWorkspaceEnv); env && *env) {
            ctx.ws = env;
        } else {
            throw ConfigError(std::string("workspace: not set (use --workspace, the config file, or $") +
                              kWorkspaceEnv + ")");
        }

        WorkspaceLock lock(ctx.ws);
        if (command == "prepare") cmd_prepare(ctx);
        else if (command == "stats") cmd_stats(ctx);
        else if (command == "finetune") cmd_finetune(ctx);
        else if (command == "corpus") cmd_corpus(ctx);
        else if (command == "index") cmd_index(ctx);
        else if (command == "prompts") cmd_prompts(ctx);
        else if (command == "generate") cmd_generate(ctx);
        else if (command == "fid") cmd_fid(ctx);
        else if (command == "train-downstream") cmd_train_downstream(ctx);
        else if (command == "report") cmd_report(ctx);
        else throw InternalError("unhandled subcommand " + command);
        return kExitOk;
    } catch (...) {
        return map_exception(err);
    }
}

int run_command(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_command(args, std::cout, std::cerr);
}

}  // namespace rsgen::pipeline

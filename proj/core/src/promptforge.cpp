#include "rsgen/promptforge.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"
#include "rsgen/lulc.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::promptforge {

namespace fs = std::filesystem;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_alnum(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

// ---- corpus ----------------------------------------------------------------

std::string build_corpus(std::span<const std::string> documents) {
    std::string out;
    bool any = false;
    for (const auto& doc : documents) {
        std::string norm;
        norm.reserve(doc.size());
        bool pending_space = false;
        for (char c : doc) {
            if (is_space(c)) {
                pending_space = !norm.empty();
                continue;
            }
            if (pending_space) norm.push_back(' ');
            pending_space = false;
            norm.push_back(c);
        }
        if (norm.empty()) continue;
        if (any) out.push_back('\n');
        out += norm;
        any = true;
    }
    if (!any) throw ArgumentError("build_corpus: every document is empty");
    return out;
}

std::vector<CorpusChunk> chunk_corpus(std::string_view text, std::size_t min_chars) {
    if (min_chars < 1) throw ArgumentError("chunk_corpus: min_chars must be >= 1");
    std::vector<CorpusChunk> out;
    std::size_t start = 0;
    while (start < text.size()) {
        const std::size_t earliest = start + min_chars - 1;
        const std::size_t stop = earliest < text.size() ? text.find('.', earliest) : std::string_view::npos;
        const std::size_t end = stop == std::string_view::npos ? text.size() : stop + 1;
        CorpusChunk c;
        c.text = std::string(text.substr(start, end - start));
        c.char_len = c.text.size();
        c.ends_with_eos = true;
        c.ordinal = out.size();
        out.push_back(std::move(c));
        start = end;
    }
    return out;
}

std::string render_chunk(const CorpusChunk& chunk, std::string_view eos) {
    std::string s = chunk.text;
    if (chunk.ends_with_eos) s += eos;
    return s;
}

std::pair<std::vector<CorpusChunk>, std::vector<CorpusChunk>> split_corpus(
    std::span<const CorpusChunk> chunks, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ArgumentError("split_corpus: test_fraction must be in [0, 1)");
    const auto n = chunks.size();
    const auto k = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    Rng rng(seed);
    const auto picked = rng.sample_without_replacement(n, std::min(k, n));
    std::vector<bool> is_test(n, false);
    for (auto i : picked) is_test[i] = true;
    std::vector<CorpusChunk> train, test;
    for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).push_back(chunks[i]);
    return {std::move(train), std::move(test)};
}

// ---- embedding / index ---------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (is_alnum(c)) {
            cur.push_back(lower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

HashedBagOfWordsEmbedder::HashedBagOfWordsEmbedder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
    if (dim == 0) throw ArgumentError("embedder dimension must be >= 1");
}

std::string HashedBagOfWordsEmbedder::id() const {
    return "hashed-bow-d" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

std::vector<double> HashedBagOfWordsEmbedder::embed(std::string_view text) const {
    std::vector<double> v(dim_, 0.0);
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens.emplace_back();
    for (const auto& t : tokens) {
        const std::uint64_t h = derive_seed(seed_, hash_text(t));
        const double sign = (h >> 63) ? -1.0 : 1.0;
        v[static_cast<std::size_t>(h % dim_)] += sign;
    }
    // Hash collisions can cancel to zero; fall back to a fixed direction.
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
        v[static_cast<std::size_t>(derive_seed(seed_, hash_text(text)) % dim_)] = 1.0;
    return v;
}

std::vector<std::string_view> segment_text(std::string_view text, std::size_t size) {
    if (size == 0) throw ArgumentError("index_chunk_size must be >= 1");
    std::vector<std::string_view> out;
    for (std::size_t pos = 0; pos < text.size(); pos += size) out.push_back(text.substr(pos, size));
    if (out.empty()) out.push_back(text);
    return out;
}

namespace {

void unit_normalize(std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double n = std::sqrt(ss);
    if (!(n > 0.0) || !std::isfinite(n)) throw BackendError("embedding has zero or non-finite norm");
    for (double& x : v) x /= n;
}

}  // namespace

VectorIndex index_corpus(std::span<const CorpusChunk> chunks, const Embedder& embedder,
                         std::size_t index_chunk_size, unsigned threads) {
    if (index_chunk_size == 0) throw ArgumentError("index_chunk_size must be >= 1");
    std::vector<std::vector<IndexEntry>> per_chunk(chunks.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::optional<std::pair<std::size_t, std::string>> first_error;

    auto worker = [&] {
        for (std::size_t i = next++; i < chunks.size(); i = next++) {
            try {
                const auto segs = segment_text(chunks[i].text, index_chunk_size);
                for (std::size_t s = 0; s < segs.size(); ++s) {
                    IndexEntry e{chunks[i].ordinal, s, embedder.embed(segs[s])};
                    if (e.embedding.size() != embedder.dim())
                        throw BackendError("embedder returned wrong dimension");
                    unit_normalize(e.embedding);
                    per_chunk[i].push_back(std::move(e));
                }
            } catch (const std::exception& ex) {
                std::lock_guard lock(err_mu);
                if (!first_error || chunks[i].ordinal < first_error->first)
                    first_error = {chunks[i].ordinal, ex.what()};
            }
        }
    };
    const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (first_error) {
        throw BackendError("embedding chunk " + std::to_string(first_error->first) +
                           " failed: " + first_error->second);
    }

    VectorIndex index;
    index.embedder_id = embedder.id();
    index.index_chunk_size = index_chunk_size;
    for (auto& v : per_chunk)
        for (auto& e : v) index.entries.push_back(std::move(e));
    return index;
}

std::vector<RetrievalHit> retrieve(const VectorIndex& index, const Embedder& embedder,
                                   std::string_view query, std::size_t k) {
    if (k < 1) throw ArgumentError("retrieve: k must be >= 1");
    if (index.entries.empty()) throw StateError("retrieve: index is empty");
    if (embedder.id() != index.embedder_id) {
        throw StateError("retrieve: index was built with " + index.embedder_id + ", query embedder is " +
                         embedder.id());
    }
    auto q = embedder.embed(query);
    if (q.size() != index.dim()) throw StateError("retrieve: query dimension mismatch");
    unit_normalize(q);

    std::vector<RetrievalHit> hits;
    hits.reserve(index.entries.size());
    for (const auto& e : index.entries) {
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * e.embedding[i];
        hits.push_back({e.chunk_ordinal, e.segment, dot});
    }
    const std::size_t take = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(take), hits.end(),
                      [](const RetrievalHit& a, const RetrievalHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          if (a.chunk_ordinal != b.chunk_ordinal) return a.chunk_ordinal < b.chunk_ordinal;
                          return a.segment < b.segment;
                      });
    hits.resize(take);
    return hits;
}

std::string_view hit_text(std::span<const CorpusChunk> chunks, const VectorIndex& index,
                          const RetrievalHit& hit) {
    for (const auto& c : chunks) {
        if (c.ordinal != hit.chunk_ordinal) continue;
        const auto segs = segment_text(c.text, index.index_chunk_size);
        if (hit.segment < segs.size()) return segs[hit.segment];
        break;
    }
    throw StateError("retrieval hit refers to unknown chunk " + std::to_string(hit.chunk_ordinal));
}

namespace {

constexpr char kIndexMagic[8] = {'R', 'S', 'V', 'I', 'D', 'X', '\0', '\1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void write_index(const fs::path& path, const VectorIndex& index) {
    const std::size_t dim = index.dim();
    for (const auto& e : index.entries)
        if (e.embedding.size() != dim) throw ArgumentError("write_index: ragged embeddings");
    nlohmann::ordered_json h{{"embedder_id", index.embedder_id},
                             {"index_chunk_size", index.index_chunk_size},
                             {"dim", dim},
                             {"count", index.entries.size()}};
    const std::string header = h.dump();
    std::vector<std::uint8_t> out(kIndexMagic, kIndexMagic + 8);
    put_u64(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    for (const auto& e : index.entries) {
        put_u64(out, e.chunk_ordinal);
        put_u64(out, e.segment);
        for (double x : e.embedding) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof bits);
            put_u64(out, bits);
        }
    }
    write_file_atomic(path, out);
}

VectorIndex read_index(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("no vector index at " + path.string());
    const auto buf = read_binary(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kIndexMagic, 8) != 0)
        throw SchemaError(path.string() + " is not a vector index");
    const std::uint64_t hlen = get_u64(buf.data() + 8);
    if (16 + hlen > buf.size()) throw SchemaError("truncated index header");
    VectorIndex index;
    std::size_t dim = 0, count = 0;
    try {
        const auto h = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<long>(hlen));
        index.embedder_id = h.at("embedder_id").get<std::string>();
        index.index_chunk_size = h.at("index_chunk_size").get<std::size_t>();
        dim = h.at("dim").get<std::size_t>();
        count = h.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bad index header: ") + e.what());
    }
    const std::size_t rec = (2 + dim) * 8;
    if (buf.size() != 16 + hlen + rec * count) throw SchemaError("index body size mismatch");
    const std::uint8_t* p = buf.data() + 16 + hlen;
    for (std::size_t i = 0; i < count; ++i, p += rec) {
        IndexEntry e;
        e.chunk_ordinal = get_u64(p);
        e.segment = get_u64(p + 8);
        e.embedding.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            const std::uint64_t bits = get_u64(p + 16 + 8 * d);
            std::memcpy(&e.embedding[d], &bits, sizeof bits);
        }
        index.entries.push_back(std::move(e));
    }
    return index;
}

// ---- prompts -------------------------------------------------------------------

const std::map<std::string, std::vector<std::string>>& default_scene_bank() {
    static const std::map<std::string, std::vector<std::string>> bank = {
        {"Bare Land",
         {"Barren landscape of a rocky desert canyon", "Dry salt flat with a cracked white crust",
          "Wind-rippled sand dunes in an arid basin", "Exposed bedrock plateau with scattered gravel"}},
        {"Crop Land",
         {"Vineyards and orchards in a wine-producing region",
          "Patchwork of irrigated fields with center-pivot circles",
          "Terraced rice paddies along a hillside", "Rectangular farm plots separated by dirt roads"}},
        {"Cultivated Vegetation",
         {"Golden hues of ripe wheat fields ready for harvest", "Rows of tea plantations on rolling hills",
          "Olive groves planted in evenly spaced rows", "Market gardens lined with greenhouses"}},
        {"Natural Vegetation",
         {"Mixed oak-hickory forest with vibrant autumn foliage", "Open savanna grassland dotted with shrubs",
          "Alpine meadow scattered with wildflowers", "Reed-covered wetland marsh"}},
        {"Snow Ice",
         {"Ice floes drifting in the Arctic Ocean under the northern lights",
          "Glacier tongue with crevasses descending a valley", "Snow-covered mountain ridges at midday",
          "Frozen lake with cracked sheets of ice"}},
        {"Water Body",
         {"Cluster of small islands surrounded by shallow turquoise waters",
          "Meandering river winding through a floodplain", "Reservoir held behind a concrete dam",
          "Coastal lagoon separated from the sea by a sandbar"}},
        {"Woody Vegetation",
         {"Coastal mangrove swamp with meandering tidal creeks", "Dense tropical rainforest canopy",
          "Pine plantation in regular rows", "Eucalyptus woodland along a dry creek bed"}},
    };
    return bank;
}

PromptTemplates PromptTemplates::defaults() {
    PromptTemplates t;
    t.templates = {
        {"aerial", "satellite image of {scene}, {class}, {context}, high resolution aerial photography, "
                   "realistic, sharp details"},
        {"overhead", "top-down remote sensing view of {scene}, {class} land cover, {context}, "
                     "photorealistic, natural colors"},
    };
    t.scenes = default_scene_bank();
    return t;
}

namespace {

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "the", "and", "for", "with", "that", "this", "from", "are", "was", "were", "been", "have", "has",
        "had", "not", "but", "its", "into", "than", "then", "they", "their", "there", "these", "those",
        "which", "while", "where", "when", "such", "also", "can", "could", "may", "might", "will",
        "would", "should", "our", "out", "over", "under", "between", "each", "other", "some", "more",
        "most", "very", "using", "used", "use", "based", "all", "any", "both", "per", "via", "who"};
    return words;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

std::string lower_text(std::string s) {
    for (char& c : s) c = lower(c);
    return s;
}

}  // namespace

std::string context_keywords(std::span<const std::string> context) {
    std::vector<std::string> kept;
    std::unordered_set<std::string> seen;
    for (const auto& text : context) {
        for (auto& tok : tokenize(text)) {
            if (kept.size() >= kMaxContextKeywords) break;
            if (tok.size() < 3 || std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }))
                continue;
            if (stopwords().contains(tok) || !seen.insert(tok).second) continue;
            kept.push_back(std::move(tok));
        }
    }
    std::string out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i) out += ", ";
        out += kept[i];
    }
    return out;
}

PromptSpec assemble_prompt(const std::string& class_name, std::span<const std::string> context,
                           const std::string& template_id, std::uint64_t seed,
                           const PromptTemplates& templates) {
    const auto scenes = templates.scenes.find(class_name);
    if (scenes == templates.scenes.end() || scenes->second.empty())
        throw ArgumentError("assemble_prompt: unknown class '" + class_name + "'");
    const auto tmpl = templates.templates.find(template_id);
    if (tmpl == templates.templates.end())
        throw ArgumentError("assemble_prompt: unknown template '" + template_id + "'");

    const std::string& scene = scenes->second[static_cast<std::size_t>(seed % scenes->second.size())];
    const std::string keywords = context_keywords(context);

    std::string text = tmpl->second;
    if (keywords.empty()) {
        replace_all(text, ", {context}", "");
        replace_all(text, "{context}", "");
    }
    replace_all(text, "{scene}", scene);
    replace_all(text, "{class}", lower_text(class_name));
    replace_all(text, "{context}", keywords);

    PromptSpec spec;
    spec.class_name = class_name;
    spec.positive = std::move(text);
    spec.seed = seed;
    return spec;
}

namespace {

nlohmann::ordered_json to_json(const PromptSpec& s) {
    return {{"class_name", s.class_name}, {"positive", s.positive}, {"negative", s.negative},
            {"seed", s.seed},             {"steps", s.steps},       {"scheduler", s.scheduler},
            {"width", s.width},           {"height", s.height}};
}

}  // namespace

void write_prompt_bank(const fs::path& path, std::span<const PromptSpec> bank) {
    std::string out;
    for (const auto& s : bank) {
        out += to_json(s).dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<PromptSpec> read_prompt_bank(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifactError("no prompt bank at " + path.string());
    std::istringstream in(read_text(path));
    std::vector<PromptSpec> bank;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PromptSpec s;
            s.class_name = j.at("class_name").get<std::string>();
            s.positive = j.at("positive").get<std::string>();
            s.negative = j.at("negative").get<std::string>();
            s.seed = j.at("seed").get<std::uint64_t>();
            s.steps = j.at("steps").get<int>();
            s.scheduler = j.at("scheduler").get<std::string>();
            s.width = j.at("width").get<int>();
            s.height = j.at("height").get<int>();
            validate(s);
            bank.push_back(std::move(s));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("malformed prompt bank line in " + path.string() + ": " + e.what());
        }
    }
    return bank;
}

// ---- QLoRA job spec --------------------------------------------------------------

void validate(const QLoraJobSpec& s) {
    if (s.lora_alpha < 1) throw ValidationError("lora_alpha", "must be >= 1");
    if (s.rank < 1) throw ValidationError("rank", "must be >= 1");
    if (s.target_modules.empty()) throw ValidationError("target_modules", "must not be empty");
    for (const auto& m : s.target_modules)
        if (m != "k" && m != "q" && m != "v")
            throw ValidationError("target_modules", "'" + m + "' is not one of k, q, v");
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) throw ValidationError("dropout", "must be in [0, 1)");
    if (!(s.learning_rate > 0.0)) throw ValidationError("learning_rate", "must be > 0");
    if (!(s.weight_decay >= 0.0)) throw ValidationError("weight_decay", "must be >= 0");
    if (s.epochs < 1) throw ValidationError("epochs", "must be >= 1");
    if (s.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
    if (s.context_length < 1) throw ValidationError("context_length", "must be >= 1");
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ValidationError(key, "cannot parse '" + text + "'");
    return value;
}

}  // namespace

QLoraJobSpec build_qlora_spec(const std::map<std::string, std::string>& overrides) {
    QLoraJobSpec s;
    for (const auto& [key, value] : overrides) {
        if (key == "lora_alpha") s.lora_alpha = parse_number<int>(key, value);
        else if (key == "rank") s.rank = parse_number<int>(key, value);
        else if (key == "dropout") s.dropout = parse_number<double>(key, value);
        else if (key == "learning_rate") s.learning_rate = parse_number<double>(key, value);
        else if (key == "weight_decay") s.weight_decay = parse_number<double>(key, value);
        else if (key == "epochs") s.epochs = parse_number<int>(key, value);
        else if (key == "batch_size") s.batch_size = parse_number<int>(key, value);
        else if (key == "context_length") s.context_length = parse_number<int>(key, value);
        else if (key == "target_modules") {
            s.target_modules.clear();
            std::string item;
            std::istringstream in(value);
            while (std::getline(in, item, ',')) {
                item.erase(std::remove_if(item.begin(), item.end(), is_space), item.end());
                if (!item.empty()) s.target_modules.insert(item);
            }
        } else {
            throw ValidationError(key, "unknown qlora key");
        }
    }
    validate(s);
    return s;
}

std::string to_json_text(const QLoraJobSpec& s) {
    nlohmann::ordered_json j{{"lora_alpha", s.lora_alpha},
                             {"rank", s.rank},
                             {"target_modules", s.target_modules},
                             {"dropout", s.dropout},
                             {"learning_rate", s.learning_rate},
                             {"weight_decay", s.weight_decay},
                             {"epochs", s.epochs},
                             {"batch_size", s.batch_size},
                             {"context_length", s.context_length}};
    return j.dump(2);
}

double perplexity(std::span<const double> nll) {
    if (nll.empty()) throw ArgumentError("perplexity: empty NLL stream");
    long double sum = 0.0L;
    for (double x : nll) {
        if (!std::isfinite(x)) throw ArgumentError("perplexity: non-finite NLL value");
        sum += x;
    }
    return static_cast<double>(std::exp(sum / static_cast<long double>(nll.size())));
}

}  // namespace rsgen::promptforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsgen/diffusion.hpp"

namespace rsgen::promptforge {

// ---- corpus ----------------------------------------------------------------

// Collapses whitespace runs inside each document to one space, trims, drops
// documents that end up empty, and joins the rest with '\n'. Throws
// ArgumentError when nothing is left.
std::string build_corpus(std::span<const std::string> documents);

inline constexpr const char* kDefaultEos = "<|endoftext|>";
inline constexpr std::size_t kDefaultMinChunkChars = 500;

// `text` never contains the EOS marker; ends_with_eos records that the marker
// follows the chunk when rendered. Lengths are in bytes.
struct CorpusChunk {
    std::string text;
    std::size_t char_len = 0;
    bool ends_with_eos = true;
    std::size_t ordinal = 0;

    friend bool operator==(const CorpusChunk&, const CorpusChunk&) = default;
};

// Greedy: each chunk ends at the first '.' that makes it at least
// `min_chars` long. Whatever follows the last such cut forms a final,
// possibly short, chunk. Concatenating chunk texts reproduces `text`.
std::vector<CorpusChunk> chunk_corpus(std::string_view text,
                                      std::size_t min_chars = kDefaultMinChunkChars);

std::string render_chunk(const CorpusChunk& chunk, std::string_view eos = kDefaultEos);

// Test size is round(test_fraction * N), half away from zero. Both halves
// are returned in ordinal order.
std::pair<std::vector<CorpusChunk>, std::vector<CorpusChunk>> split_corpus(
    std::span<const CorpusChunk> chunks, double test_fraction = 0.05, std::uint64_t seed = 0);

// ---- retrieval -------------------------------------------------------------

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Signed feature hashing over lowercased alphanumeric tokens. Text without
// tokens hashes as a single empty token, so no output is the zero vector.
class HashedBagOfWordsEmbedder final : public Embedder {
public:
    explicit HashedBagOfWordsEmbedder(std::size_t dim = 256, std::uint64_t seed = 0);

    std::string id() const override;
    std::size_t dim() const override { return dim_; }
    std::vector<double> embed(std::string_view text) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

std::vector<std::string> tokenize(std::string_view text);

inline constexpr std::size_t kDefaultIndexChunkSize = 256;

struct IndexEntry {
    std::size_t chunk_ordinal = 0;
    std::size_t segment = 0;  // position of the slice within its chunk
    std::vector<double> embedding;
};

struct VectorIndex {
    std::vector<IndexEntry> entries;
    std::string embedder_id;
    std::size_t index_chunk_size = kDefaultIndexChunkSize;

    std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
};

// Fixed-width byte slices of at most `index_chunk_size`.
std::vector<std::string_view> segment_text(std::string_view text, std::size_t index_chunk_size);

// Embeds and unit-normalizes every segment of every chunk. Work is spread
// over `threads` workers; entry order is always (chunk, segment).
// Embedder failures surface as BackendError naming the chunk ordinal.
VectorIndex index_corpus(std::span<const CorpusChunk> chunks, const Embedder& embedder,
                         std::size_t index_chunk_size = kDefaultIndexChunkSize,
                         unsigned threads = 1);

struct RetrievalHit {
    std::size_t chunk_ordinal = 0;
    std::size_t segment = 0;
    double score = 0.0;
};

// Top-k by cosine similarity, descending; ties by (chunk_ordinal, segment).
// k is clamped to the index size. Throws StateError for an empty index or an
// embedder other than the one that built the index.
std::vector<RetrievalHit> retrieve(const VectorIndex& index, const Embedder& embedder,
                                   std::string_view query, std::size_t k);

// Text of a hit's segment, looked up from the chunks the index was built on.
std::string_view hit_text(std::span<const CorpusChunk> chunks, const VectorIndex& index,
                          const RetrievalHit& hit);

// Flat binary file: magic, header JSON, then (u64 ordinal, u64 segment,
// dim x f64) per entry.
void write_index(const std::filesystem::path& path, const VectorIndex& index);
VectorIndex read_index(const std::filesystem::path& path);

// ---- prompts ----------------------------------------------------------------

inline constexpr std::size_t kMaxContextKeywords = 20;

// Scene phrases per class. The first entry of each class is the caption of
// the reference sample image for that class.
const std::map<std::string, std::vector<std::string>>& default_scene_bank();

struct PromptTemplates {
    // Placeholders: {scene}, {class}, {context}. "{context}" collapses with
    // its separator when there is no retrieved context.
    std::map<std::string, std::string> templates;
    std::map<std::string, std::vector<std::string>> scenes;

    static PromptTemplates defaults();
};

// Distinct lowercase content words from `context`, in first-seen order,
// capped at kMaxContextKeywords, comma-joined.
std::string context_keywords(std::span<const std::string> context);

// Scene phrase chosen as scenes[class][seed % size]. Throws ArgumentError for
// an unknown class or template.
PromptSpec assemble_prompt(const std::string& class_name, std::span<const std::string> context,
                           const std::string& template_id, std::uint64_t seed,
                           const PromptTemplates& templates = PromptTemplates::defaults());

void write_prompt_bank(const std::filesystem::path& path, std::span<const PromptSpec> bank);
std::vector<PromptSpec> read_prompt_bank(const std::filesystem::path& path);

// ---- language-model fine-tune job -----------------------------------------------

struct QLoraJobSpec {
    int lora_alpha = 8;
    int rank = 16;
    std::set<std::string> target_modules = {"k", "q", "v"};
    double dropout = 0.05;
    double learning_rate = 2e-5;
    double weight_decay = 0.01;
    int epochs = 3;
    int batch_size = 8;
    int context_length = 512;

    friend bool operator==(const QLoraJobSpec&, const QLoraJobSpec&) = default;
};

void validate(const QLoraJobSpec& spec);

// Keys mirror the field names; target_modules is a comma list over {k,q,v}.
QLoraJobSpec build_qlora_spec(const std::map<std::string, std::string>& overrides = {});

std::string to_json_text(const QLoraJobSpec& spec);

// exp(mean negative log-likelihood per token).
double perplexity(std::span<const double> nll_per_token);

}  // namespace rsgen::promptforge

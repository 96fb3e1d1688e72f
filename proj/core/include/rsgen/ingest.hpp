#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rsgen/raster.hpp"

namespace rsgen::ingest {

struct ImageCaptionRecord {
    Raster image;
    std::vector<std::string> captions;
    std::optional<std::string> class_name;
    std::string source_id;
};

enum class SplitTag { Unsplit, Train, Holdout };

const char* to_string(SplitTag tag);

struct RecordSet {
    std::vector<ImageCaptionRecord> records;
    SplitTag split_tag = SplitTag::Unsplit;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

// Throws ArgumentError on 3-channel or unique-id violations.
void validate(const RecordSet& rs);

inline constexpr double kStdFloor = 1e-6;

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

struct ColumnNames {
    std::string image = "image";
    std::string captions = "captions";
    // Optional columns; used when present in the file.
    std::string source_id = "source_id";
    std::string class_name = "class_name";
};

// Reads an rscol table. The image column holds PNG bytes, the caption column a
// string list. Rows without a source_id column get "row-<index>".
// Throws SchemaError for missing columns, RecordError listing every
// undecodable source_id.
RecordSet ingest_columnar(const std::filesystem::path& path, const ColumnNames& columns = {});

// Inverse of ingest_columnar; used by fixtures and by tooling that emits
// caption datasets.
void write_columnar(const std::filesystem::path& path, const RecordSet& rs,
                    const ColumnNames& columns = {});

// Uniform unstratified sample of `holdout_n` records. Both halves keep the
// input order.
std::pair<RecordSet, RecordSet> split_holdout(const RecordSet& rs, std::size_t holdout_n,
                                              std::uint64_t seed);

// Population mean/std per channel over every pixel of every image, std
// floored at kStdFloor. Integer accumulation, so the result is exact up to
// the final division and independent of image order.
ChannelStats compute_stats(const RecordSet& rs);
ChannelStats compute_stats(std::span<const Raster> images);
// Two-pass compensated version for already-normalized images.
ChannelStats compute_stats(std::span<const RealRaster> images);

RealRaster normalize(const Raster& image, const ChannelStats& stats);
RealRaster normalize(const RealRaster& image, const ChannelStats& stats);

// Bilinear, half-pixel centres, edge-clamped, round-half-up to 8 bits.
Raster resize_to(const Raster& image, int side);
Raster resize_to(const Raster& image, int height, int width);

// The seven non-identity symmetries of the square. Rotations are
// counter-clockwise; Transpose mirrors across the main diagonal and
// AntiTranspose across the anti-diagonal.
enum class Dihedral { Rot90, Rot180, Rot270, HFlip, VFlip, Transpose, AntiTranspose };

inline constexpr std::array<Dihedral, 7> kDihedralOrder = {
    Dihedral::Rot90,  Dihedral::Rot180,    Dihedral::Rot270,       Dihedral::HFlip,
    Dihedral::VFlip,  Dihedral::Transpose, Dihedral::AntiTranspose,
};

const char* to_string(Dihedral d);

template <typename Image>
Image apply_dihedral(const Image& image, Dihedral d);

// Outputs in kDihedralOrder. Throws ArgumentError for non-square input.
std::vector<Raster> augment_dihedral(const Raster& image);

struct CaptionPolicy {
    enum class Kind { First, Random } kind = Kind::First;
    std::uint64_t seed = 0;

    static CaptionPolicy first() { return {}; }
    static CaptionPolicy random(std::uint64_t seed) { return {Kind::Random, seed}; }
};

std::string choose_caption(const ImageCaptionRecord& rec, std::size_t position,
                           const CaptionPolicy& policy);

struct LayoutManifest {
    std::filesystem::path root_dir;
    std::size_t image_count = 0;
    std::filesystem::path metadata_path;
    std::string checksum;
};

struct ExportOptions {
    CaptionPolicy caption_policy;
    // Also write the seven dihedral variants of every image under the same caption.
    bool augment = false;
};

inline constexpr const char* kMetadataFile = "metadata.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

// Writes images/<id>.png, metadata.jsonl ({"file_name","text"} per line) and
// manifest.json. Throws IoError when the directory is unwritable and
// InternalError when two records map to the same file name.
LayoutManifest export_layout(const RecordSet& rs, const std::filesystem::path& dir,
                             const ExportOptions& options = {});

struct LayoutEntry {
    std::string file_name;
    std::string text;
};

LayoutManifest read_manifest(const std::filesystem::path& dir);
std::vector<LayoutEntry> read_metadata(const LayoutManifest& manifest);
// Recomputes the checksum from disk; throws StateError on mismatch or a
// missing file.
void verify_layout(const LayoutManifest& manifest);
std::string layout_checksum(const std::filesystem::path& root,
                            const std::vector<LayoutEntry>& entries);

// Loads every image listed in the layout's metadata, in metadata order.
std::vector<Raster> load_layout_images(const LayoutManifest& manifest);

}  // namespace rsgen::ingest

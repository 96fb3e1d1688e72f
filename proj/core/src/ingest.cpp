#include "rsgen/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "rsgen/columnar.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"
#include "rsgen/rng.hpp"

namespace rsgen::ingest {

namespace fs = std::filesystem;

const char* to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::Unsplit: return "unsplit";
        case SplitTag::Train: return "train";
        case SplitTag::Holdout: return "holdout";
    }
    return "?";
}

void validate(const RecordSet& rs) {
    std::set<std::string_view> ids;
    for (const auto& r : rs.records) {
        if (r.image.channels != 3) throw ArgumentError("record " + r.source_id + " is not RGB");
        if (r.captions.empty()) throw ArgumentError("record " + r.source_id + " has no captions");
        if (!ids.insert(r.source_id).second)
            throw ArgumentError("duplicate source_id " + r.source_id);
    }
}

// ---- columnar I/O ---------------------------------------------------------

RecordSet ingest_columnar(const fs::path& path, const ColumnNames& columns) {
    const columnar::Table table = columnar::read_table(path);
    RecordSet rs;
    if (table.columns().empty()) return rs;

    const auto& images = table.bytes(columns.image);
    const auto& captions = table.string_lists(columns.captions);
    const columnar::StringColumn* ids =
        table.has_column(columns.source_id) ? &table.strings(columns.source_id) : nullptr;
    const columnar::StringColumn* classes =
        table.has_column(columns.class_name) ? &table.strings(columns.class_name) : nullptr;

    std::vector<std::string> bad;
    rs.records.reserve(table.num_rows());
    for (std::size_t i = 0; i < table.num_rows(); ++i) {
        ImageCaptionRecord rec;
        rec.source_id = ids ? (*ids)[i] : "row-" + std::to_string(i);
        rec.captions = captions[i];
        if (classes && !(*classes)[i].empty()) rec.class_name = (*classes)[i];
        try {
            rec.image = decode_png(images[i]);
        } catch (const ArgumentError&) {
            bad.push_back(rec.source_id);
            continue;
        }
        rs.records.push_back(std::move(rec));
    }
    if (!bad.empty()) throw RecordError(std::move(bad));
    for (const auto& r : rs.records)
        if (r.captions.empty()) throw SchemaError("row " + r.source_id + " has no captions");
    validate(rs);
    return rs;
}

void write_columnar(const fs::path& path, const RecordSet& rs, const ColumnNames& columns) {
    columnar::BytesColumn images;
    columnar::StringListColumn captions;
    columnar::StringColumn ids;
    columnar::StringColumn classes;
    for (const auto& r : rs.records) {
        images.push_back(encode_png(r.image));
        captions.push_back(r.captions);
        ids.push_back(r.source_id);
        classes.push_back(r.class_name.value_or(""));
    }
    columnar::Table t;
    t.add_column(columns.image, std::move(images));
    t.add_column(columns.captions, std::move(captions));
    t.add_column(columns.source_id, std::move(ids));
    t.add_column(columns.class_name, std::move(classes));
    columnar::write_table(path, t);
}

// ---- split -------------------------------------------------------------------

std::pair<RecordSet, RecordSet> split_holdout(const RecordSet& rs, std::size_t holdout_n,
                                              std::uint64_t seed) {
    if (rs.split_tag != SplitTag::Unsplit) throw ArgumentError("record set is already split");
    if (holdout_n > rs.size()) {
        throw ArgumentError("holdout_n " + std::to_string(holdout_n) + " exceeds " +
                            std::to_string(rs.size()) + " records");
    }
    Rng rng(seed);
    const auto picked = rng.sample_without_replacement(rs.size(), holdout_n);
    std::vector<bool> in_holdout(rs.size(), false);
    for (auto i : picked) in_holdout[i] = true;

    RecordSet train{.records = {}, .split_tag = SplitTag::Train};
    RecordSet holdout{.records = {}, .split_tag = SplitTag::Holdout};
    for (std::size_t i = 0; i < rs.size(); ++i)
        (in_holdout[i] ? holdout : train).records.push_back(rs.records[i]);
    return {std::move(train), std::move(holdout)};
}

// ---- statistics --------------------------------------------------------------

__extension__ typedef unsigned __int128 u128;

ChannelStats compute_stats(std::span<const Raster> images) {
    if (images.empty()) throw ArgumentError("compute_stats: empty image set");
    const int channels = images.front().channels;
    std::vector<u128> sum(channels, 0), sumsq(channels, 0);
    u128 n = 0;
    for (const auto& img : images) {
        if (img.channels != channels) throw ArgumentError("compute_stats: mixed channel counts");
        const std::size_t px = img.pixel_count();
        for (std::size_t p = 0; p < px; ++p) {
            for (int c = 0; c < channels; ++c) {
                const unsigned v = img.data[p * channels + c];
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        n += px;
    }
    if (n == 0) throw ArgumentError("compute_stats: images have no pixels");
    ChannelStats st;
    for (int c = 0; c < channels; ++c) {
        // n * sumsq - sum^2 is exact in 128 bits for any realistic dataset.
        const u128 scaled_var = n * sumsq[c] - sum[c] * sum[c];
        const long double nn = static_cast<long double>(n);
        st.mean.push_back(static_cast<double>(static_cast<long double>(sum[c]) / nn));
        const double sd = static_cast<double>(std::sqrt(static_cast<long double>(scaled_var)) / nn);
        st.std.push_back(std::max(sd, kStdFloor));
    }
    return st;
}

ChannelStats compute_stats(const RecordSet& rs) {
    if (rs.empty()) throw ArgumentError("compute_stats: empty record set");
    std::vector<Raster> images;
    images.reserve(rs.size());
    for (const auto& r : rs.records) images.push_back(r.image);
    return compute_stats(images);
}

namespace {

// Neumaier compensated accumulator.
struct CompensatedSum {
    double sum = 0.0;
    double comp = 0.0;
    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            comp += (sum - t) + v;
        else
            comp += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + comp; }
};

}  // namespace

ChannelStats compute_stats(std::span<const RealRaster> images) {
    if (images.empty()) throw ArgumentError("compute_stats: empty image set");
    const int channels = images.front().channels;
    std::vector<CompensatedSum> sum(channels);
    std::size_t n = 0;
    for (const auto& img : images) {
        if (img.channels != channels) throw ArgumentError("compute_stats: mixed channel counts");
        for (std::size_t p = 0; p < img.pixel_count(); ++p)
            for (int c = 0; c < channels; ++c) sum[c].add(img.data[p * channels + c]);
        n += img.pixel_count();
    }
    if (n == 0) throw ArgumentError("compute_stats: images have no pixels");
    ChannelStats st;
    for (int c = 0; c < channels; ++c) st.mean.push_back(sum[c].value() / static_cast<double>(n));
    std::vector<CompensatedSum> sq(channels);
    for (const auto& img : images) {
        for (std::size_t p = 0; p < img.pixel_count(); ++p) {
            for (int c = 0; c < channels; ++c) {
                const double d = img.data[p * channels + c] - st.mean[c];
                sq[c].add(d * d);
            }
        }
    }
    for (int c = 0; c < channels; ++c)
        st.std.push_back(std::max(std::sqrt(sq[c].value() / static_cast<double>(n)), kStdFloor));
    return st;
}

namespace {

template <typename Image>
RealRaster normalize_impl(const Image& image, const ChannelStats& stats) {
    if (stats.mean.size() != static_cast<std::size_t>(image.channels) ||
        stats.std.size() != stats.mean.size()) {
        throw ArgumentError("normalize: image has " + std::to_string(image.channels) +
                            " channels, stats have " + std::to_string(stats.mean.size()));
    }
    RealRaster out(image.height, image.width, image.channels);
    const int ch = image.channels;
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const auto c = static_cast<std::size_t>(i % ch);
        out.data[i] = (static_cast<double>(image.data[i]) - stats.mean[c]) / stats.std[c];
    }
    return out;
}

}  // namespace

RealRaster normalize(const Raster& image, const ChannelStats& stats) {
    return normalize_impl(image, stats);
}

RealRaster normalize(const RealRaster& image, const ChannelStats& stats) {
    return normalize_impl(image, stats);
}

// ---- resize ------------------------------------------------------------------

Raster resize_to(const Raster& image, int height, int width) {
    if (height < 1 || width < 1) throw ArgumentError("resize_to: side must be >= 1");
    if (image.height < 1 || image.width < 1) throw ArgumentError("resize_to: empty source image");
    if (height == image.height && width == image.width) return image;

    Raster out(height, width, image.channels);
    const double sy = static_cast<double>(image.height) / height;
    const double sx = static_cast<double>(image.width) / width;

    struct Tap {
        int lo, hi;
        double w;
    };
    auto taps = [](int n_out, int n_in, double scale) {
        std::vector<Tap> t(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            const int lo = static_cast<int>(std::floor(src));
            const int hi = std::min(lo + 1, n_in - 1);
            t[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
        }
        return t;
    };
    const auto ty = taps(height, image.height, sy);
    const auto tx = taps(width, image.width, sx);

    for (int y = 0; y < height; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const Tap& b = tx[static_cast<std::size_t>(x)];
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(a.lo, b.lo, c) * (1.0 - b.w) + image.at(a.lo, b.hi, c) * b.w;
                const double bot = image.at(a.hi, b.lo, c) * (1.0 - b.w) + image.at(a.hi, b.hi, c) * b.w;
                const double v = top * (1.0 - a.w) + bot * a.w;
                out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

Raster resize_to(const Raster& image, int side) { return resize_to(image, side, side); }

// ---- dihedral ------------------------------------------------------------------

const char* to_string(Dihedral d) {
    switch (d) {
        case Dihedral::Rot90: return "rot90";
        case Dihedral::Rot180: return "rot180";
        case Dihedral::Rot270: return "rot270";
        case Dihedral::HFlip: return "hflip";
        case Dihedral::VFlip: return "vflip";
        case Dihedral::Transpose: return "transpose";
        case Dihedral::AntiTranspose: return "antitranspose";
    }
    return "?";
}

template <typename Image>
Image apply_dihedral(const Image& image, Dihedral d) {
    if (image.height != image.width)
        throw ArgumentError("dihedral transforms need a square image");
    const int n = image.height;
    const int last = n - 1;
    Image out(n, n, image.channels);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            int si = i, sj = j;
            switch (d) {
                case Dihedral::Rot90: si = j; sj = last - i; break;
                case Dihedral::Rot180: si = last - i; sj = last - j; break;
                case Dihedral::Rot270: si = last - j; sj = i; break;
                case Dihedral::HFlip: sj = last - j; break;
                case Dihedral::VFlip: si = last - i; break;
                case Dihedral::Transpose: si = j; sj = i; break;
                case Dihedral::AntiTranspose: si = last - j; sj = last - i; break;
            }
            for (int c = 0; c < image.channels; ++c) out.at(i, j, c) = image.at(si, sj, c);
        }
    }
    return out;
}

template Raster apply_dihedral<Raster>(const Raster&, Dihedral);
template RealRaster apply_dihedral<RealRaster>(const RealRaster&, Dihedral);

std::vector<Raster> augment_dihedral(const Raster& image) {
    if (image.height != image.width) {
        throw ArgumentError("augment_dihedral: image is " + std::to_string(image.height) + "x" +
                            std::to_string(image.width) + ", expected square");
    }
    std::vector<Raster> out;
    out.reserve(kDihedralOrder.size());
    for (Dihedral d : kDihedralOrder) out.push_back(apply_dihedral(image, d));
    return out;
}

// ---- layout export -----------------------------------------------------------------

std::string choose_caption(const ImageCaptionRecord& rec, std::size_t position,
                           const CaptionPolicy& policy) {
    if (rec.captions.empty()) throw ArgumentError("record " + rec.source_id + " has no captions");
    if (policy.kind == CaptionPolicy::Kind::First) return rec.captions.front();
    Rng rng(derive_seed(policy.seed, position));
    return rec.captions[static_cast<std::size_t>(rng.below(rec.captions.size()))];
}

namespace {

std::string sanitize_file_stem(const std::string& id) {
    std::string out;
    out.reserve(id.size());
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '_');
    }
    if (out.empty() || out.front() == '.') out.insert(out.begin(), '_');
    return out;
}

nlohmann::ordered_json manifest_json(const LayoutManifest& m) {
    nlohmann::ordered_json j;
    j["root_dir"] = m.root_dir.generic_string();
    j["image_count"] = m.image_count;
    j["metadata_path"] = kMetadataFile;
    j["checksum"] = m.checksum;
    return j;
}

}  // namespace

std::string layout_checksum(const fs::path& root, const std::vector<LayoutEntry>& entries) {
    std::string acc = read_text(root / kMetadataFile);
    for (const auto& e : entries) {
        const fs::path p = root / e.file_name;
        if (!fs::exists(p)) throw StateError("layout file missing: " + p.string());
        acc += '\n';
        acc += e.file_name;
        acc += ' ';
        acc += sha256_file(p);
    }
    return sha256_hex(acc);
}

LayoutManifest export_layout(const RecordSet& rs, const fs::path& dir, const ExportOptions& options) {
    if (rs.empty()) throw ArgumentError("export_layout: empty record set");
    validate(rs);

    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw IoError("cannot create layout directory " + dir.string() + ": " + ec.message());

    std::vector<LayoutEntry> entries;
    std::set<std::string> names;
    std::string metadata;
    auto emit = [&](const Raster& img, std::string file_name, const std::string& text) {
        if (!names.insert(file_name).second)
            throw InternalError("duplicate file_name " + file_name);
        write_png(dir / file_name, img);
        nlohmann::ordered_json line;
        line["file_name"] = file_name;
        line["text"] = text;
        metadata += line.dump();
        metadata += '\n';
        entries.push_back({std::move(file_name), text});
    };

    for (std::size_t i = 0; i < rs.size(); ++i) {
        const auto& rec = rs.records[i];
        const std::string stem = "images/" + sanitize_file_stem(rec.source_id);
        const std::string caption = choose_caption(rec, i, options.caption_policy);
        emit(rec.image, stem + ".png", caption);
        if (options.augment) {
            const auto variants = augment_dihedral(rec.image);
            for (std::size_t k = 0; k < variants.size(); ++k)
                emit(variants[k], stem + "__" + to_string(kDihedralOrder[k]) + ".png", caption);
        }
    }
    write_file_atomic(dir / kMetadataFile, metadata);

    LayoutManifest m;
    m.root_dir = dir;
    m.image_count = entries.size();
    m.metadata_path = dir / kMetadataFile;
    m.checksum = layout_checksum(dir, entries);
    write_file_atomic(dir / kManifestFile, manifest_json(m).dump(2) + "\n");
    return m;
}

LayoutManifest read_manifest(const fs::path& dir) {
    const fs::path p = dir / kManifestFile;
    if (!fs::exists(p)) throw MissingArtifactError("no layout manifest at " + p.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(p));
        LayoutManifest m;
        m.root_dir = dir;
        m.image_count = j.at("image_count").get<std::size_t>();
        m.metadata_path = dir / j.at("metadata_path").get<std::string>();
        m.checksum = j.at("checksum").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("malformed manifest " + p.string() + ": " + e.what());
    }
}

std::vector<LayoutEntry> read_metadata(const LayoutManifest& manifest) {
    std::istringstream in(read_text(manifest.metadata_path));
    std::vector<LayoutEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("file_name").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("malformed metadata line in " + manifest.metadata_path.string() + ": " +
                              e.what());
        }
    }
    return out;
}

void verify_layout(const LayoutManifest& manifest) {
    const auto entries = read_metadata(manifest);
    if (entries.size() != manifest.image_count) {
        throw StateError("manifest lists " + std::to_string(manifest.image_count) +
                         " images, metadata has " + std::to_string(entries.size()));
    }
    if (layout_checksum(manifest.root_dir, entries) != manifest.checksum)
        throw StateError("layout checksum mismatch in " + manifest.root_dir.string());
}

std::vector<Raster> load_layout_images(const LayoutManifest& manifest) {
    std::vector<Raster> images;
    for (const auto& e : read_metadata(manifest)) images.push_back(read_png(manifest.root_dir / e.file_name));
    return images;
}

}  // namespace rsgen::ingest

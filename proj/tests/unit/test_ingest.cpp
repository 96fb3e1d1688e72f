#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rsgen/columnar.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/ingest.hpp"
#include "rsgen/io.hpp"
#include "support.hpp"

namespace rsgen::ingest {
namespace {

using testing::TempDir;

RecordSet tiny_set(std::size_t n, int side = 4) {
    RecordSet rs;
    for (std::size_t i = 0; i < n; ++i) {
        ImageCaptionRecord r;
        r.image = testing::random_raster(side, side, 3, 100 + i);
        r.source_id = "id-" + std::to_string(i);
        for (int k = 0; k < 5; ++k) r.captions.push_back("record " + std::to_string(i) + " caption " + std::to_string(k));
        rs.records.push_back(std::move(r));
    }
    return rs;
}

std::set<std::string> ids(const RecordSet& rs) {
    std::set<std::string> out;
    for (const auto& r : rs.records) out.insert(r.source_id);
    return out;
}

TEST(IngestColumnar, ThreeRowFixture) {
    TempDir dir;
    const auto rs = tiny_set(3);
    write_columnar(dir / "d.rscol", rs);
    const auto back = ingest_columnar(dir / "d.rscol");
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back.split_tag, SplitTag::Unsplit);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.records[i].captions, rs.records[i].captions);
        EXPECT_EQ(back.records[i].image, rs.records[i].image);
        EXPECT_EQ(back.records[i].source_id, rs.records[i].source_id);
    }
}

TEST(IngestColumnar, EmptyDataset) {
    TempDir dir;
    write_columnar(dir / "e.rscol", RecordSet{});
    EXPECT_EQ(ingest_columnar(dir / "e.rscol").size(), 0u);
}

TEST(IngestColumnar, MissingColumnIsSchemaError) {
    TempDir dir;
    columnar::Table t;
    t.add_column("image", columnar::BytesColumn{encode_png(testing::random_raster(2, 2, 3, 1))});
    columnar::write_table(dir / "m.rscol", t);
    EXPECT_THROW(ingest_columnar(dir / "m.rscol"), SchemaError);
}

TEST(IngestColumnar, CustomColumnNames) {
    TempDir dir;
    ColumnNames cols{"img", "sentences", "sid", "label"};
    write_columnar(dir / "c.rscol", tiny_set(2), cols);
    EXPECT_EQ(ingest_columnar(dir / "c.rscol", cols).size(), 2u);
    EXPECT_THROW(ingest_columnar(dir / "c.rscol"), SchemaError);
}

TEST(IngestColumnar, UndecodableImagesListed) {
    TempDir dir;
    columnar::Table t;
    t.add_column("image", columnar::BytesColumn{encode_png(testing::random_raster(2, 2, 3, 1)), {1, 2, 3}, {9}});
    t.add_column("captions", columnar::StringListColumn{{"a"}, {"b"}, {"c"}});
    t.add_column("source_id", columnar::StringColumn{"ok", "bad-1", "bad-2"});
    columnar::write_table(dir / "b.rscol", t);
    try {
        ingest_columnar(dir / "b.rscol");
        FAIL() << "expected RecordError";
    } catch (const RecordError& e) {
        EXPECT_EQ(e.source_ids(), (std::vector<std::string>{"bad-1", "bad-2"}));
    }
}

TEST(SplitHoldout, PartitionForEverySize) {
    const auto rs = tiny_set(12, 1);
    for (std::size_t n = 0; n <= rs.size(); ++n) {
        const auto [train, hold] = split_holdout(rs, n, 5);
        EXPECT_EQ(hold.size(), n);
        EXPECT_EQ(train.size() + hold.size(), rs.size());
        auto all = ids(train);
        for (const auto& id : ids(hold)) EXPECT_TRUE(all.insert(id).second) << "overlap on " << id;
        EXPECT_EQ(all, ids(rs));
        EXPECT_EQ(train.split_tag, SplitTag::Train);
        EXPECT_EQ(hold.split_tag, SplitTag::Holdout);
    }
}

TEST(SplitHoldout, FullScaleArithmetic) {
    RecordSet rs;
    for (int i = 0; i < 10921; ++i) {
        ImageCaptionRecord r;
        r.image = Raster(1, 1, 3);
        r.captions = {"c"};
        r.source_id = std::to_string(i);
        rs.records.push_back(std::move(r));
    }
    const auto [train, hold] = split_holdout(rs, 500, 0);
    EXPECT_EQ(train.size(), 10421u);
    EXPECT_EQ(hold.size(), 500u);
}

TEST(SplitHoldout, DeterministicAndBounds) {
    const auto rs = tiny_set(10, 1);
    EXPECT_EQ(ids(split_holdout(rs, 4, 9).second), ids(split_holdout(rs, 4, 9).second));
    EXPECT_EQ(split_holdout(rs, 0, 1).first.size(), rs.size());
    EXPECT_THROW(split_holdout(rs, 11, 1), ArgumentError);
}

TEST(ComputeStats, ConstantImageFloorsStd) {
    const Raster zero(4, 4, 3, 0);
    const auto st = compute_stats(std::span<const Raster>(&zero, 1));
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(st.mean[c], 0.0);
        EXPECT_EQ(st.std[c], kStdFloor);
    }
}

TEST(ComputeStats, TwoPixelsPopulationStd) {
    const std::vector<Raster> imgs = {Raster(1, 1, 3, 0), Raster(1, 1, 3, 2)};
    const auto st = compute_stats(std::span<const Raster>(imgs));
    for (int c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(st.mean[c], 1.0);
        EXPECT_DOUBLE_EQ(st.std[c], 1.0);
    }
}

TEST(ComputeStats, MatchesTwoPassOracle) {
    std::vector<Raster> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back(testing::random_raster(5 + i, 3 + i, 3, 40 + i));
    const auto st = compute_stats(std::span<const Raster>(imgs));
    const auto ref = oracle::two_pass_stats(imgs);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(st.mean[c], ref.mean[c], 1e-10);
        EXPECT_NEAR(st.std[c], ref.std[c], 1e-10);
    }
    RecordSet rs;
    for (auto& img : imgs) rs.records.push_back({img, {"c"}, std::nullopt, std::to_string(rs.size())});
    const auto st_rs = compute_stats(rs);
    EXPECT_EQ(st_rs.mean, st.mean);
    EXPECT_EQ(st_rs.std, st.std);
    EXPECT_THROW(compute_stats(RecordSet{}), ArgumentError);
}

TEST(Normalize, ForcedArithmetic) {
    Raster img(1, 2, 3);
    for (int c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 0;
        img.at(0, 1, c) = 2;
    }
    const auto out = normalize(img, ChannelStats{{1, 1, 1}, {1, 1, 1}});
    for (int c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(out.at(0, 0, c), -1.0);
        EXPECT_DOUBLE_EQ(out.at(0, 1, c), 1.0);
    }
}

TEST(Normalize, IdentityStats) {
    const auto img = testing::random_raster(3, 3, 3, 2);
    const auto out = normalize(img, ChannelStats{{0, 0, 0}, {1, 1, 1}});
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_EQ(out.data[i], img.data[i]);
}

TEST(Normalize, FixedPoint) {
    std::vector<Raster> imgs;
    for (int i = 0; i < 4; ++i) imgs.push_back(testing::random_raster(6, 6, 3, 70 + i));
    const auto st = compute_stats(std::span<const Raster>(imgs));
    std::vector<RealRaster> normed;
    for (const auto& img : imgs) normed.push_back(normalize(img, st));
    const auto st2 = compute_stats(std::span<const RealRaster>(normed));
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(st2.mean[c], 0.0, 1e-6);
        EXPECT_NEAR(st2.std[c], 1.0, 1e-6);
    }
}

TEST(Normalize, ChannelMismatch) {
    EXPECT_THROW(normalize(Raster(2, 2, 3), ChannelStats{{0}, {1}}), ArgumentError);
}

TEST(Resize, SameSizeIsBitIdentical) {
    const auto img = testing::random_raster(224, 224, 3, 1);
    EXPECT_EQ(resize_to(img, 224), img);
}

TEST(Resize, ConstantInvariance) {
    const Raster img = testing::solid_raster(448, 448, 17, 130, 250);
    EXPECT_EQ(resize_to(img, 224), testing::solid_raster(224, 224, 17, 130, 250));
}

TEST(Resize, CheckerboardMatchesTentOracle) {
    Raster board(2, 2, 3);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) board.at(y, x, c) = (x + y) % 2 ? 255 : 0;
    EXPECT_EQ(resize_to(board, 4), oracle::tent_resize(board, 4, 4));
    const auto rnd = testing::random_raster(7, 5, 3, 3);
    EXPECT_EQ(resize_to(rnd, 11, 13), oracle::tent_resize(rnd, 11, 13));
    EXPECT_EQ(resize_to(rnd, 3, 2), oracle::tent_resize(rnd, 3, 2));
}

TEST(Resize, RejectsNonPositiveSide) {
    EXPECT_THROW(resize_to(Raster(2, 2, 3), 0), ArgumentError);
    EXPECT_THROW(resize_to(Raster(2, 2, 3), -3), ArgumentError);
}

Raster grid(std::initializer_list<std::uint8_t> values, int n) {
    Raster r(n, n, 1);
    std::copy(values.begin(), values.end(), r.data.begin());
    return r;
}

TEST(Dihedral, HFlipExample) {
    EXPECT_EQ(apply_dihedral(grid({1, 2, 3, 4}, 2), Dihedral::HFlip), grid({2, 1, 4, 3}, 2));
}

TEST(Dihedral, Rot90IsCounterClockwise) {
    EXPECT_EQ(apply_dihedral(grid({1, 2, 3, 4}, 2), Dihedral::Rot90), grid({2, 4, 1, 3}, 2));
}

TEST(Dihedral, Rot180Involution) {
    const auto img = testing::random_raster(5, 5, 3, 8);
    EXPECT_EQ(apply_dihedral(apply_dihedral(img, Dihedral::Rot180), Dihedral::Rot180), img);
}

TEST(Dihedral, SevenDistinctOutputs) {
    const auto img = grid({1, 2, 3, 4, 5, 6, 7, 8, 9}, 3);
    const auto outs = augment_dihedral(img);
    ASSERT_EQ(outs.size(), 7u);
    for (std::size_t i = 0; i < outs.size(); ++i) {
        EXPECT_NE(outs[i], img);
        for (std::size_t j = i + 1; j < outs.size(); ++j) EXPECT_NE(outs[i], outs[j]);
    }
}

TEST(Dihedral, MatchesMatrixOracle) {
    const auto img = testing::random_raster(5, 5, 3, 21);
    for (Dihedral d : kDihedralOrder) EXPECT_EQ(apply_dihedral(img, d), oracle::apply_matrix(img, oracle::dihedral_matrix(d))) << to_string(d);
}

TEST(Dihedral, RealRasterAgrees) {
    const auto img = testing::random_raster(4, 4, 3, 22);
    const auto real = normalize(img, ChannelStats{{0, 0, 0}, {1, 1, 1}});
    for (Dihedral d : kDihedralOrder)
        EXPECT_EQ(apply_dihedral(real, d), normalize(apply_dihedral(img, d), ChannelStats{{0, 0, 0}, {1, 1, 1}}));
}

TEST(Dihedral, NonSquareRejected) {
    EXPECT_THROW(augment_dihedral(Raster(2, 3, 3)), ArgumentError);
}

TEST(ExportLayout, ThreeRecords) {
    TempDir dir;
    const auto rs = tiny_set(3);
    const auto m = export_layout(rs, dir / "layout");
    EXPECT_EQ(m.image_count, 3u);
    const auto entries = read_metadata(m);
    ASSERT_EQ(entries.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(entries[i].text, rs.records[i].captions[0]);
        EXPECT_EQ(read_png(m.root_dir / entries[i].file_name), rs.records[i].image);
        EXPECT_EQ(entries[i].file_name.find('\\'), std::string::npos);
    }
    std::istringstream lines(read_text(m.metadata_path));
    std::string line;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j.size(), 2u);
        EXPECT_TRUE(j.contains("file_name"));
        EXPECT_TRUE(j.contains("text"));
    }
    const auto again = read_manifest(dir / "layout");
    EXPECT_EQ(again.image_count, 3u);
    EXPECT_EQ(again.checksum, m.checksum);
    EXPECT_NO_THROW(verify_layout(again));
    EXPECT_EQ(load_layout_images(again).size(), 3u);
}

TEST(ExportLayout, DeterministicMetadata) {
    TempDir dir;
    const auto rs = tiny_set(4);
    const ExportOptions opts{CaptionPolicy::random(3), false};
    const auto a = export_layout(rs, dir / "a", opts);
    const auto b = export_layout(rs, dir / "b", opts);
    EXPECT_EQ(read_text(a.metadata_path), read_text(b.metadata_path));
    EXPECT_EQ(a.checksum, b.checksum);
}

TEST(ExportLayout, AugmentAddsSevenVariants) {
    TempDir dir;
    const auto m = export_layout(tiny_set(2), dir / "l", {CaptionPolicy::first(), true});
    EXPECT_EQ(m.image_count, 16u);
    EXPECT_EQ(read_metadata(m).size(), 16u);
}

TEST(ExportLayout, TamperingDetected) {
    TempDir dir;
    const auto m = export_layout(tiny_set(2), dir / "l");
    const auto entries = read_metadata(m);
    write_png(m.root_dir / entries[0].file_name, testing::random_raster(4, 4, 3, 999));
    EXPECT_THROW(verify_layout(m), StateError);
}

TEST(ExportLayout, Errors) {
    TempDir dir;
    EXPECT_THROW(export_layout(RecordSet{}, dir / "x"), ArgumentError);
    EXPECT_THROW(read_manifest(dir / "nothing"), MissingArtifactError);
    auto dup = tiny_set(2);
    dup.records[1].source_id = dup.records[0].source_id;
    EXPECT_THROW(export_layout(dup, dir / "y"), ArgumentError);
}

TEST(CaptionPolicy, FirstAndRandom) {
    const auto rs = tiny_set(1);
    EXPECT_EQ(choose_caption(rs.records[0], 0, CaptionPolicy::first()), rs.records[0].captions[0]);
    const auto r1 = choose_caption(rs.records[0], 0, CaptionPolicy::random(4));
    EXPECT_EQ(r1, choose_caption(rs.records[0], 0, CaptionPolicy::random(4)));
    EXPECT_NE(std::find(rs.records[0].captions.begin(), rs.records[0].captions.end(), r1), rs.records[0].captions.end());
}

}  // namespace
}  // namespace rsgen::ingest

#include <gtest/gtest.h>

#include <set>

#include "rsgen/columnar.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"
#include "rsgen/rng.hpp"
#include "support.hpp"

namespace rsgen {
namespace {

using testing::TempDir;

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex(std::string_view("abc")),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(std::string_view("")),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Sha256, FileMatchesBuffer) {
    TempDir dir;
    write_file_atomic(dir / "a.txt", std::string_view("hello\n"));
    EXPECT_EQ(sha256_file(dir / "a.txt"), sha256_hex(std::string_view("hello\n")));
    EXPECT_FALSE(std::filesystem::exists(dir / "a.txt.tmp"));
}

TEST(Png, RoundTrip) {
    const Raster img = testing::random_raster(13, 7, 3, 11);
    EXPECT_EQ(decode_png(encode_png(img)), img);
    EXPECT_EQ(decode_png(encode_png(img, 1)), img);
}

TEST(Png, RejectsGarbage) {
    const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5};
    EXPECT_THROW(decode_png(junk), ArgumentError);
}

TEST(Io, MissingFile) {
    EXPECT_THROW(read_binary("/nonexistent/rsgen/file"), IoError);
}

TEST(Io, AppendLine) {
    TempDir dir;
    append_line(dir / "log.jsonl", "a");
    append_line(dir / "log.jsonl", "b");
    EXPECT_EQ(read_text(dir / "log.jsonl"), "a\nb\n");
}

TEST(Columnar, RoundTripAllTypes) {
    TempDir dir;
    columnar::Table t;
    t.add_column("i", columnar::Int64Column{1, -2, 3});
    t.add_column("f", columnar::Float64Column{0.5, -1e300, 3.25});
    t.add_column("b", columnar::BytesColumn{{}, {0, 255}, {7}});
    t.add_column("s", columnar::StringColumn{"", "two", "three\nlines"});
    t.add_column("l", columnar::StringListColumn{{"a", "b"}, {}, {"c"}});
    columnar::write_table(dir / "t.rscol", t);
    const auto back = columnar::read_table(dir / "t.rscol");
    EXPECT_EQ(back, t);
    EXPECT_EQ(back.num_rows(), 3u);
    EXPECT_EQ(back.strings("s")[2], "three\nlines");
}

TEST(Columnar, SchemaErrors) {
    columnar::Table t;
    t.add_column("i", columnar::Int64Column{1});
    EXPECT_THROW(t.strings("i"), SchemaError);
    EXPECT_THROW(t.int64s("missing"), SchemaError);
    EXPECT_THROW(t.add_column("j", columnar::Int64Column{1, 2}), ArgumentError);
    EXPECT_THROW(t.add_column("i", columnar::Int64Column{1}), ArgumentError);
}

TEST(Columnar, RejectsForeignFile) {
    TempDir dir;
    write_file_atomic(dir / "x", std::string_view("not a table at all"));
    EXPECT_THROW(columnar::read_table(dir / "x"), SchemaError);
}

TEST(Rng, Deterministic) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowAndSampling) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
    const auto s = rng.sample_without_replacement(50, 20);
    ASSERT_EQ(s.size(), 20u);
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 20u);
    for (auto v : s) EXPECT_LT(v, 50u);
}

TEST(Rng, NormalMoments) {
    Rng rng(9);
    double sum = 0, sumsq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sumsq += v * v;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sumsq / n, 1.0, 0.01);
}

TEST(Rng, DerivedSeedsDiffer) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(7, s));
    EXPECT_EQ(seen.size(), 1000u);
}

}  // namespace
}  // namespace rsgen

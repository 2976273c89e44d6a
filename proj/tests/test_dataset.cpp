#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace agepro;
using agepro::testing::TempDir;

namespace {

std::string pts_text(int count, double x0 = 1.0, double y0 = 2.0) {
    std::string s = "version: 1\nn_points: " + std::to_string(count) + "\n{\n";
    for (int i = 0; i < count; ++i) s += std::to_string(x0 + i) + " " + std::to_string(y0 + 0.5 * i) + "\n";
    return s + "}\n";
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

Shape grid_shape(double scale, double offset) {
    Points p(kNumLandmarks, 2);
    for (int i = 0; i < kNumLandmarks; ++i) {
        p(i, 0) = offset + scale * (i % 9);
        p(i, 1) = offset + scale * (i / 9);
    }
    return Shape(p);
}

}  // namespace

TEST(Landmarks, ParsesSixtyEightPairs) {
    const Shape s = parse_landmarks(pts_text(68));
    EXPECT_DOUBLE_EQ(s.points()(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(s.points()(67, 0), 68.0);
    EXPECT_DOUBLE_EQ(s.points()(67, 1), 2.0 + 0.5 * 67);
}

TEST(Landmarks, BarePairsWithoutHeader) {
    std::string s;
    for (int i = 0; i < 68; ++i) s += "3 4\n";
    EXPECT_NO_THROW(parse_landmarks(s));
}

TEST(Landmarks, WrongCountIsMalformed) {
    EXPECT_THROW(parse_landmarks(pts_text(67)), MalformedLandmarks);
    EXPECT_THROW(parse_landmarks(pts_text(69)), MalformedLandmarks);
    EXPECT_THROW(parse_landmarks(""), MalformedLandmarks);
}

TEST(Landmarks, NonNumericTokenIsParseError) {
    std::string s = pts_text(68);
    s.replace(s.find("5.000000"), 8, "abc");
    EXPECT_THROW(parse_landmarks(s), ParseError);
    EXPECT_THROW(parse_landmarks("{\n1 2 3\n}"), ParseError);
}

TEST(Landmarks, AllZeroPointsAreAccepted) {
    std::string s;
    for (int i = 0; i < 68; ++i) s += "0 0\n";
    const Shape shape = parse_landmarks(s);
    EXPECT_TRUE(shape.points().isZero(0.0));
}

TEST(Landmarks, FileRoundTripIsExact) {
    TempDir dir("lm");
    std::mt19937_64 rng(3);
    Points p = agepro::testing::random_matrix(68, 2, rng, 17.0);
    const Shape s(p);
    save_landmarks(dir / "a.pts", s);
    EXPECT_TRUE(load_landmarks(dir / "a.pts") == s);
}

TEST(Manifest, HeaderOnlyGivesNoEntries) {
    EXPECT_TRUE(parse_manifest("subject_id,age,gender,image_path,landmarks_path\n").empty());
}

TEST(Manifest, ParsesRowsWithReorderedColumnsBomAndCrlf) {
    const std::string text =
        "\xEF\xBB\xBFgender,age,subject_id,landmarks_path,image_path\r\n"
        "female,34,s1,l/a.pts,i/a.png\r\n"
        "male,7,s2,l/b.pts,i/b.png\r\n";
    const auto e = parse_manifest(text);
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[0].subject_id, "s1");
    EXPECT_EQ(e[0].age, 34);
    EXPECT_EQ(e[0].gender, Gender::female);
    EXPECT_EQ(e[0].image_path, "i/a.png");
    EXPECT_EQ(e[1].landmarks_path, "l/b.pts");
}

TEST(Manifest, SchemaViolations) {
    const std::string h = "subject_id,age,gender,image_path,landmarks_path\n";
    EXPECT_THROW(parse_manifest(h + "s,30,other,a.png,a.pts\n"), SchemaError);
    EXPECT_THROW(parse_manifest("subject_id,age,image_path,landmarks_path\ns,30,a.png,a.pts\n"), SchemaError);
    EXPECT_THROW(parse_manifest(h + "s,thirty,male,a.png,a.pts\n"), SchemaError);
    EXPECT_THROW(parse_manifest(h + "s,30,male,,a.pts\n"), SchemaError);
    EXPECT_THROW(parse_manifest(h + "s,30,male,a.png,a.pts\ns,31,male,a.png,b.pts\n"), SchemaError);
    EXPECT_THROW(parse_manifest(""), SchemaError);
}

TEST(Manifest, AgeOutsidePlausibleRange) {
    const std::string h = "subject_id,age,gender,image_path,landmarks_path\n";
    EXPECT_THROW(parse_manifest(h + "s,0,male,a.png,a.pts\n"), RangeError);
    EXPECT_THROW(parse_manifest(h + "s,121,male,a.png,a.pts\n"), RangeError);
    EXPECT_NO_THROW(parse_manifest(h + "s,120,male,a.png,a.pts\n"));
}

TEST(Manifest, FormatParseRoundTrip) {
    std::vector<ManifestEntry> e = {{"a,b", 12, Gender::male, "x \"y\".png", "p.pts"},
                                    {"c", 70, Gender::female, "z.png", "q.pts"}};
    EXPECT_EQ(parse_manifest(format_manifest(e)), e);
}

TEST(Binning, DefaultDecades) {
    const AgeBinning b;
    EXPECT_EQ(b.group_count(), 7);
    EXPECT_EQ(bin_age(35, b), 3);
    EXPECT_EQ(bin_age(1, b), 0);
    EXPECT_EQ(bin_age(10, b), 0);
    EXPECT_EQ(bin_age(11, b), 1);
    EXPECT_EQ(bin_age(70, b), 6);
    EXPECT_THROW(bin_age(71, b), RangeError);
    EXPECT_THROW(bin_age(0, b), RangeError);
    EXPECT_EQ(format_binning(b), "1-10,11-20,21-30,31-40,41-50,51-60,61-70");
}

TEST(Binning, MonotoneInAge) {
    const AgeBinning b;
    int prev = 0;
    for (int age = b.min_age(); age <= b.max_age(); ++age) {
        const int g = bin_age(age, b);
        EXPECT_GE(g, prev);
        EXPECT_LE(g - prev, 1);
        prev = g;
    }
}

TEST(Binning, RejectsGapsAndEmptyIntervals) {
    EXPECT_THROW(AgeBinning({{1, 10}, {12, 20}}), ConfigError);
    EXPECT_THROW(AgeBinning({{5, 5}}), ConfigError);
    EXPECT_THROW(AgeBinning(std::vector<AgeInterval>{}), ConfigError);
}

TEST(Sample, GrayscaleIsReplicatedAcrossChannels) {
    TempDir dir("gray");
    Rgb8Image img(12, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::uint8_t(x * 20 + y);
    write_pgm(dir / "g.pgm", img);
    save_landmarks(dir / "g.pts", grid_shape(1.0, 1.0));
    const ManifestEntry e{"s", 25, Gender::male, "g.pgm", "g.pts"};
    const auto s = load_sample(e, AgeBinning{}, dir.path());
    EXPECT_EQ(s.age_group, 2);
    ASSERT_EQ(s.pixels.width, 12);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) {
            EXPECT_EQ(s.pixels.at(x, y, 0), img.at(x, y, 0));
            EXPECT_EQ(s.pixels.at(x, y, 1), s.pixels.at(x, y, 0));
            EXPECT_EQ(s.pixels.at(x, y, 2), s.pixels.at(x, y, 0));
        }
}

TEST(Sample, PngRoundTrip) {
    TempDir dir("png");
    Rgb8Image img(9, 7);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = std::uint8_t(i * 37);
    write_png(dir / "a.png", img);
    EXPECT_EQ(read_image(dir / "a.png"), img);
    write_ppm(dir / "a.ppm", img);
    EXPECT_EQ(read_image(dir / "a.ppm"), img);
}

TEST(Sample, LandmarkOutsideRasterIsRejected) {
    TempDir dir("oob");
    write_ppm(dir / "a.ppm", Rgb8Image(10, 10));
    save_landmarks(dir / "a.pts", grid_shape(1.0, 2.0));  // x reaches 10 > 9
    const ManifestEntry e{"s", 25, Gender::male, "a.ppm", "a.pts"};
    EXPECT_THROW(load_sample(e, AgeBinning{}, dir.path()), LandmarkOutOfBounds);
}

TEST(Sample, MissingImageIsIoError) {
    TempDir dir("missing");
    save_landmarks(dir / "a.pts", grid_shape(1.0, 1.0));
    const ManifestEntry e{"s", 25, Gender::male, "nope.png", "a.pts"};
    EXPECT_THROW(load_sample(e, AgeBinning{}, dir.path()), IoError);
}

// Any landmark set is accepted exactly when every point lies in
// [0, w-1] x [0, h-1].
TEST(Sample, BoundsCheckMatchesDefinitionOnRandomShapes) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 22.0);
    for (int trial = 0; trial < 500; ++trial) {
        const int w = 10 + trial % 11, h = 8 + trial % 13;
        Points p(kNumLandmarks, 2);
        bool inside = true;
        for (int i = 0; i < kNumLandmarks; ++i) {
            // Mostly inside so both outcomes occur.
            p(i, 0) = trial % 3 ? std::uniform_real_distribution<double>(0.0, w - 1.0)(rng) : u(rng);
            p(i, 1) = trial % 3 ? std::uniform_real_distribution<double>(0.0, h - 1.0)(rng) : u(rng);
            inside = inside && p(i, 0) >= 0 && p(i, 0) <= w - 1 && p(i, 1) >= 0 && p(i, 1) <= h - 1;
        }
        if (inside) EXPECT_NO_THROW(check_in_bounds(Shape(p), w, h));
        else EXPECT_THROW(check_in_bounds(Shape(p), w, h), LandmarkOutOfBounds);
    }
}

#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <png.h>

#include "subact/config.hpp"
#include "subact/imaging.hpp"
#include "support/temp_dir.hpp"

using namespace subact;
using subact::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

Frame constant_frame(int w, int h, std::uint8_t v) { return Frame(w, h, v); }

}  // namespace

TEST(BoundingBox, Geometry) {
    BoundingBox b{10, 20, 30, 60};
    EXPECT_DOUBLE_EQ(b.right(), 40);
    EXPECT_DOUBLE_EQ(b.bottom(), 80);
    EXPECT_DOUBLE_EQ(b.area(), 1800);
    EXPECT_DOUBLE_EQ(b.cx(), 25);
    EXPECT_DOUBLE_EQ(b.cy(), 50);
    EXPECT_EQ(BoundingBox::from_center(25, 50, 30, 60), b);
    EXPECT_FALSE((BoundingBox{0, 0, 0, 5}.valid()));
}

TEST(BoundingBox, IouCases) {
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {5, 5, 2, 2}), 0.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 2, 2}), 2.0 / 6.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {2, 0, 2, 2}), 0.0);  // touching edges
}

TEST(Luma, IntegerApproximation) {
    EXPECT_EQ(luma(0, 0, 0), 0);
    EXPECT_EQ(luma(255, 255, 255), 255);
    EXPECT_EQ(luma(255, 0, 0), 76);
    EXPECT_EQ(luma(0, 255, 0), 149);
    EXPECT_EQ(luma(0, 0, 255), 28);
}

TEST(Pgm, RoundTrip) {
    TempDir dir;
    Frame f(5, 3);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = static_cast<std::uint8_t>(i * 17);
    write_pgm(f, dir / "a.pgm");
    Frame g = read_pgm(dir / "a.pgm");
    EXPECT_EQ(g.width, 5);
    EXPECT_EQ(g.height, 3);
    EXPECT_EQ(g.data, f.data);
}

TEST(Pgm, HeaderComments) {
    TempDir dir;
    std::string bytes = "P5\n# a comment\n2 1\n255\n";
    bytes += static_cast<char>(7);
    bytes += static_cast<char>(200);
    write_text(dir / "c.pgm", bytes);
    Frame f = read_pgm(dir / "c.pgm");
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f.data[0], 7);
    EXPECT_EQ(f.data[1], 200);
}

TEST(Pgm, RejectsBadFiles) {
    TempDir dir;
    write_text(dir / "p2.pgm", "P2\n1 1\n255\n0\n");
    EXPECT_THROW(read_pgm(dir / "p2.pgm"), FormatError);
    write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
    EXPECT_THROW(read_pgm(dir / "short.pgm"), FormatError);
    write_text(dir / "deep.pgm", "P5\n1 1\n65535\nab");
    EXPECT_THROW(read_pgm(dir / "deep.pgm"), FormatError);
    EXPECT_THROW(read_pgm(dir / "missing.pgm"), DataError);
}

TEST(Png, ColorConvertsThroughLuma) {
    TempDir dir;
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = 2;
    image.height = 1;
    image.format = PNG_FORMAT_RGB;
    const png_byte rgb[] = {255, 0, 0, 10, 200, 30};
    auto path = (dir / "c.png").string();
    ASSERT_TRUE(png_image_write_to_file(&image, path.c_str(), 0, rgb, 0, nullptr));
    Frame f = read_frame_file(path);
    ASSERT_EQ(f.width, 2);
    EXPECT_EQ(f.data[0], luma(255, 0, 0));
    EXPECT_EQ(f.data[1], luma(10, 200, 30));
}

TEST(Sequence, LoadsThreeIdenticalFrames) {
    TempDir dir;
    FrameSequence seq({constant_frame(4, 4, 9), constant_frame(4, 4, 9), constant_frame(4, 4, 9)}, 15, "cam1");
    write_sequence(seq, dir.path());
    FrameSequence loaded = load_sequence(dir.path());
    ASSERT_EQ(loaded.size(), 3u);
    EXPECT_EQ(loaded.fps(), 15);
    EXPECT_EQ(loaded.scene_id(), "cam1");
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        Frame f = loaded.frame(i);
        EXPECT_EQ(f.index, static_cast<std::int64_t>(i));
        for (auto v : f.data) EXPECT_EQ(v, 9);
    }
}

TEST(Sequence, FramesInIncreasingOrder) {
    TempDir dir;
    std::vector<Frame> frames;
    for (int i = 0; i < 12; ++i) frames.push_back(constant_frame(3, 2, static_cast<std::uint8_t>(i)));
    write_sequence(FrameSequence(frames, 15, "s"), dir.path());
    auto seq = load_sequence(dir.path());
    for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(seq.frame(i).data[0], i);
}

TEST(Sequence, FullSizeFrames) {
    TempDir dir;
    write_sequence(FrameSequence({constant_frame(640, 320, 1)}, 15, "s"), dir.path());
    auto seq = load_sequence(dir.path());
    EXPECT_EQ(seq.width(), 640);
    EXPECT_EQ(seq.height(), 320);
}

TEST(Sequence, Errors) {
    TempDir dir;
    auto empty = dir / "empty";
    std::filesystem::create_directories(empty);
    try {
        load_sequence(empty);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("no frames"), std::string::npos);
    }

    auto nomanifest = dir / "nomanifest";
    std::filesystem::create_directories(nomanifest);
    write_pgm(constant_frame(2, 2, 0), nomanifest / "000000.pgm");
    try {
        load_sequence(nomanifest);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("sequence.txt"), std::string::npos);
    }

    auto mixed = dir / "mixed";
    write_sequence(FrameSequence({constant_frame(2, 2, 0)}, 15, "s"), mixed);
    write_pgm(constant_frame(3, 2, 0), mixed / "000001.pgm");
    try {
        load_sequence(mixed);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("000001.pgm"), std::string::npos);
    }

    EXPECT_THROW(FrameSequence({constant_frame(2, 2, 0), constant_frame(2, 3, 0)}, 15, "s"), DataError);
}

TEST(Annotations, ParsesDirectLine) {
    auto recs = parse_annotations_text("0 7 10 20 30 60 standing walking nothing\n");
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].frame, 0);
    EXPECT_EQ(recs[0].track_id, 7);
    EXPECT_EQ(recs[0].box, (BoundingBox{10, 20, 30, 60}));
    EXPECT_EQ(recs[0].posture, "standing");
    EXPECT_EQ(recs[0].locomotion, "walking");
    EXPECT_EQ(recs[0].gesture, "nothing");
    EXPECT_FALSE(recs[0].confidence);
}

TEST(Annotations, UnknownLabelNamesToken) {
    try {
        parse_annotations_text("0 1 0 0 5 5 standing flying nothing\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("flying"), std::string::npos);
    }
}

TEST(Annotations, MalformedLineNamesLineNumber) {
    try {
        parse_annotations_text("0 1 0 0 5 5 standing walking nothing\n\n3 x 0 0 5 5 - - -\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
    }
    EXPECT_THROW(parse_annotations_text("0 1 0 0 5 5 standing walking\n"), FormatError);
    EXPECT_THROW(parse_annotations_text("0 1 0 0 0 5 - - -\n"), FormatError);
}

TEST(Annotations, SortedByFrameThenTrack) {
    auto recs = parse_annotations_text("2 1 0 0 1 1 - - -\n0 5 0 0 1 1 - - -\n0 2 0 0 1 1 - - -\n");
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].track_id, 2);
    EXPECT_EQ(recs[1].track_id, 5);
    EXPECT_EQ(recs[2].frame, 2);
}

TEST(Annotations, ConfidenceColumns) {
    auto recs = parse_annotations_text("4 1 1.5 2.25 10 20 sitting stationary texting 0.9 0.5 0.25\n");
    ASSERT_TRUE(recs[0].confidence);
    EXPECT_DOUBLE_EQ((*recs[0].confidence)[2], 0.25);
    EXPECT_EQ(format_annotation(recs[0]), "4 1 1.5 2.25 10 20 sitting stationary texting 0.9 0.5 0.25");
}

TEST(Annotations, EmptyAndSingle) {
    TempDir dir;
    write_annotations({}, dir / "empty.txt");
    EXPECT_TRUE(parse_annotations(dir / "empty.txt").empty());
    EXPECT_EQ(std::filesystem::file_size(dir / "empty.txt"), 0u);

    AnnotationRecord r;
    r.frame = 3;
    r.track_id = 1;
    r.box = {1, 2, 3, 4};
    write_annotations({r}, dir / "one.txt");
    std::ifstream in(dir / "one.txt");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1);
}

TEST(Annotations, RandomRoundTrip) {
    TempDir dir;
    const auto vocab = DescriptorGraph::icvl();
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> frame(0, 200), track(0, 30);
    std::uniform_real_distribution<double> coord(-50, 700), extent(0.5, 200);
    std::vector<AnnotationRecord> recs;
    for (int i = 0; i < 1000; ++i) {
        AnnotationRecord r;
        r.frame = frame(rng);
        r.track_id = track(rng);
        r.box = {coord(rng), coord(rng), extent(rng), extent(rng)};
        for (Level level : kLevels) {
            std::uniform_int_distribution<int> pick(-1, vocab.size(level) - 1);
            int k = pick(rng);
            r.label(level) = k < 0 ? std::string(kUnlabeled) : vocab.label(level, k);
        }
        if (i % 3 == 0) r.confidence = std::array<double, 3>{coord(rng) + 50, 0.5, 1.0 / 3.0};
        recs.push_back(r);
    }
    std::stable_sort(recs.begin(), recs.end(), annotation_order);
    write_annotations(recs, dir / "a.txt");
    auto back = parse_annotations(dir / "a.txt");
    EXPECT_EQ(back, recs);
    write_annotations(back, dir / "b.txt");
    EXPECT_EQ(detail::read_file(dir / "a.txt"), detail::read_file(dir / "b.txt"));
}

TEST(Config, ParsesAndTypes) {
    TempDir dir;
    write_text(dir / "c.cfg", "# header\ngmm.k = 3\nfeat.w1=0.7   # trailing\nflag=true\nname = cam 1\n\n");
    Config cfg = Config::load((dir / "c.cfg").string());
    EXPECT_EQ(cfg.get_int("gmm.k", 0), 3);
    EXPECT_DOUBLE_EQ(cfg.get_double("feat.w1", 0), 0.7);
    EXPECT_TRUE(cfg.get_bool("flag", false));
    EXPECT_EQ(cfg.get_string("name", ""), "cam 1");
    EXPECT_EQ(cfg.get_int("absent", 11), 11);
    cfg.set_assignment("gmm.k=5");
    EXPECT_EQ(cfg.get_int("gmm.k", 0), 5);
}

TEST(Config, Errors) {
    TempDir dir;
    write_text(dir / "bad.cfg", "ok=1\nnot an assignment\n");
    try {
        Config::load((dir / "bad.cfg").string());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
    EXPECT_THROW(Config::load((dir / "missing.cfg").string()), ConfigError);
    Config cfg;
    cfg.set("n", "twelve");
    EXPECT_THROW(cfg.get_int("n", 0), ConfigError);
    EXPECT_THROW(cfg.get_double("n", 0), ConfigError);
    EXPECT_THROW(cfg.get_bool("n", false), ConfigError);
}

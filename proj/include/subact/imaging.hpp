#pragma once

// Frames, frame sequences, boxes and the annotation text format.

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "vocabulary.hpp"

namespace subact {

template <class T>
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Plane() = default;
    Plane(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw DataError("negative plane dimensions");
    }

    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    T* row(int y) { return data.data() + static_cast<std::size_t>(y) * width; }
    const T* row(int y) const { return data.data() + static_cast<std::size_t>(y) * width; }
    std::size_t size() const { return data.size(); }
    bool same_shape(int w, int h) const { return width == w && height == h; }
    template <class U>
    bool same_shape(const Plane<U>& o) const { return width == o.width && height == o.height; }

    bool operator==(const Plane&) const = default;
};

// f(x, y, t) for one fixed t.
struct Frame : Plane<std::uint8_t> {
    std::int64_t index = 0;

    Frame() = default;
    Frame(int w, int h, std::uint8_t fill = 0, std::int64_t t = 0) : Plane<std::uint8_t>(w, h, fill), index(t) {}

    bool operator==(const Frame&) const = default;
};

using Map = Plane<double>;

struct BoundingBox {
    double x = 0;
    double y = 0;
    double w = 0;
    double h = 0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }
    double cx() const { return x + w / 2; }
    double cy() const { return y + h / 2; }
    bool valid() const { return w > 0 && h > 0; }

    static BoundingBox from_center(double cx, double cy, double w, double h) {
        return {cx - w / 2, cy - h / 2, w, h};
    }

    bool operator==(const BoundingBox&) const = default;
};

inline std::optional<BoundingBox> intersect(const BoundingBox& a, const BoundingBox& b) {
    double x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    double x1 = std::min(a.right(), b.right()), y1 = std::min(a.bottom(), b.bottom());
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    return BoundingBox{x0, y0, x1 - x0, y1 - y0};
}

inline double iou(const BoundingBox& a_in, const BoundingBox& b_in) {
    // Fixed operand order keeps the result bit-symmetric under FMA contraction.
    const bool swap = std::tie(b_in.x, b_in.y, b_in.w, b_in.h) < std::tie(a_in.x, a_in.y, a_in.w, a_in.h);
    const BoundingBox& a = swap ? b_in : a_in;
    const BoundingBox& b = swap ? a_in : b_in;
    if (a == b) return a.area() > 0 ? 1.0 : 0.0;
    auto inter = intersect(a, b);
    if (!inter) return 0.0;
    double i = inter->area();
    double u = a.area() + b.area() - i;
    return u > 0 ? std::clamp(i / u, 0.0, 1.0) : 0.0;
}

inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return static_cast<std::uint8_t>((77u * r + 150u * g + 29u * b) >> 8);
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("unreadable file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct PgmHeader {
    int width = 0;
    int height = 0;
    std::size_t offset = 0;
};

inline PgmHeader parse_pgm_header(const std::string& bytes, const std::filesystem::path& path) {
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_ws();
        int v = 0;
        auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (ec != std::errc()) throw FormatError("malformed PGM header: " + path.string());
        pos = static_cast<std::size_t>(ptr - bytes.data());
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5): " + path.string());
    pos = 2;
    PgmHeader h;
    h.width = read_int();
    h.height = read_int();
    int maxval = read_int();
    if (h.width <= 0 || h.height <= 0) throw FormatError("bad PGM dimensions: " + path.string());
    if (maxval != 255) throw FormatError("only 8-bit PGM (maxval 255) supported: " + path.string());
    if (pos >= bytes.size()) throw FormatError("truncated PGM: " + path.string());
    h.offset = pos + 1;  // exactly one whitespace byte after maxval
    return h;
}

inline std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError("unreadable PNG " + path.string() + ": " + image.message);
    std::pair<int, int> dims{static_cast<int>(image.width), static_cast<int>(image.height)};
    png_image_free(&image);
    return dims;
}

inline Frame read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError("unreadable PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("unreadable PNG " + path.string() + ": " + msg);
    }
    Frame f(static_cast<int>(image.width), static_cast<int>(image.height));
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = luma(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
    return f;
}

inline bool is_frame_file(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".pgm" || ext == ".png";
}

inline bool is_png(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    return ext == ".png" || ext == ".PNG";
}

}  // namespace detail

inline Frame read_pgm(const std::filesystem::path& path) {
    std::string bytes = detail::read_file(path);
    auto h = detail::parse_pgm_header(bytes, path);
    std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() < h.offset + n) throw FormatError("truncated PGM: " + path.string());
    Frame f(h.width, h.height);
    std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + h.offset), n, f.data.begin());
    return f;
}

inline void write_pgm(const Plane<std::uint8_t>& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("unwritable path: " + path.string());
    out << "P5\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline Frame read_frame_file(const std::filesystem::path& path) {
    return detail::is_png(path) ? detail::read_png(path) : read_pgm(path);
}

// The video F: an ordered run of equally sized frames, held in memory or
// decoded from disk on access.
class FrameSequence {
public:
    FrameSequence() = default;

    FrameSequence(std::vector<Frame> frames, int fps, std::string scene_id)
        : fps_(fps), scene_(std::move(scene_id)), frames_(std::move(frames)) {
        if (!frames_.empty()) {
            width_ = frames_.front().width;
            height_ = frames_.front().height;
        }
        for (std::size_t i = 0; i < frames_.size(); ++i) {
            if (!frames_[i].same_shape(width_, height_)) throw DataError("inconsistent frame dimensions at frame " + std::to_string(i));
            frames_[i].index = static_cast<std::int64_t>(i);
        }
    }

    static FrameSequence from_files(std::vector<std::filesystem::path> files, int width, int height, int fps,
                                    std::string scene_id) {
        FrameSequence s;
        s.files_ = std::move(files);
        s.width_ = width;
        s.height_ = height;
        s.fps_ = fps;
        s.scene_ = std::move(scene_id);
        return s;
    }

    std::size_t size() const { return files_.empty() ? frames_.size() : files_.size(); }
    bool empty() const { return size() == 0; }
    int width() const { return width_; }
    int height() const { return height_; }
    int fps() const { return fps_; }
    const std::string& scene_id() const { return scene_; }

    Frame frame(std::size_t i) const {
        if (i >= size()) throw DataError("frame index out of range: " + std::to_string(i));
        if (files_.empty()) return frames_[i];
        Frame f = read_frame_file(files_[i]);
        if (!f.same_shape(width_, height_)) throw DataError("inconsistent frame dimensions: " + files_[i].string());
        f.index = static_cast<std::int64_t>(i);
        return f;
    }

private:
    int width_ = 0;
    int height_ = 0;
    int fps_ = 15;
    std::string scene_;
    std::vector<Frame> frames_;
    std::vector<std::filesystem::path> files_;
};

inline constexpr const char* kManifestName = "sequence.txt";

inline FrameSequence load_sequence(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && detail::is_frame_file(entry.path())) files.push_back(entry.path());
    if (files.empty()) throw DataError("no frames in " + dir.string());
    std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });

    fs::path manifest = dir / kManifestName;
    std::ifstream in(manifest);
    if (!in) throw DataError("missing manifest: " + manifest.string());
    int fps = -1;
    std::string scene;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("fps=", 0) == 0) {
            auto v = std::string_view(line).substr(4);
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), fps);
            if (ec != std::errc() || ptr != v.data() + v.size() || fps <= 0)
                throw FormatError("bad fps in manifest: " + manifest.string());
        } else if (line.rfind("scene=", 0) == 0) {
            scene = line.substr(6);
        }
    }
    if (fps <= 0) throw FormatError("manifest lacks fps: " + manifest.string());
    if (scene.empty()) throw FormatError("manifest lacks scene: " + manifest.string());

    int w = 0, h = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        int fw = 0, fh = 0;
        if (detail::is_png(files[i])) {
            std::tie(fw, fh) = detail::png_dimensions(files[i]);
        } else {
            // Header only; pixel data decoded on access.
            std::ifstream f(files[i], std::ios::binary);
            if (!f) throw DataError("unreadable file: " + files[i].string());
            std::string head(64, '\0');
            f.read(head.data(), static_cast<std::streamsize>(head.size()));
            head.resize(static_cast<std::size_t>(f.gcount()));
            auto hdr = detail::parse_pgm_header(head, files[i]);
            fw = hdr.width;
            fh = hdr.height;
        }
        if (i == 0) {
            w = fw;
            h = fh;
        } else if (fw != w || fh != h) {
            throw DataError("inconsistent frame dimensions: " + files[i].string());
        }
    }
    return FrameSequence::from_files(std::move(files), w, h, fps, std::move(scene));
}

inline void write_sequence(const FrameSequence& seq, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream m(dir / kManifestName);
        if (!m) throw DataError("unwritable path: " + (dir / kManifestName).string());
        m << "fps=" << seq.fps() << "\nscene=" << seq.scene_id() << "\n";
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.pgm", i);
        write_pgm(seq.frame(i), dir / name);
    }
}

struct AnnotationRecord {
    std::int64_t frame = 0;
    int track_id = 0;
    BoundingBox box;
    std::string posture{kUnlabeled};
    std::string locomotion{kUnlabeled};
    std::string gesture{kUnlabeled};
    // Per-level confidences; present on prediction files only.
    std::optional<std::array<double, kLevelCount>> confidence;

    const std::string& label(Level level) const {
        switch (level) {
            case Level::posture: return posture;
            case Level::locomotion: return locomotion;
            case Level::gesture: break;
        }
        return gesture;
    }
    std::string& label(Level level) {
        return const_cast<std::string&>(std::as_const(*this).label(level));
    }

    bool operator==(const AnnotationRecord&) const = default;
};

inline bool annotation_order(const AnnotationRecord& a, const AnnotationRecord& b) {
    return std::tie(a.frame, a.track_id) < std::tie(b.frame, b.track_id);
}

namespace detail {

inline std::string format_number(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class T>
bool parse_number(std::string_view tok, T& out) {
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc() && ptr == tok.data() + tok.size();
}

}  // namespace detail

inline std::vector<AnnotationRecord> parse_annotations_text(std::string_view text,
                                                            const DescriptorGraph& vocab = DescriptorGraph::icvl(),
                                                            const std::string& origin = "<annotations>") {
    std::vector<AnnotationRecord> records;
    int lineno = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        std::vector<std::string_view> tok;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
            std::size_t j = i;
            while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
            if (j > i) tok.push_back(line.substr(i, j - i));
            i = j;
        }
        if (tok.empty()) continue;
        auto fail = [&](const std::string& why) {
            return FormatError(origin + ":" + std::to_string(lineno) + ": " + why);
        };
        if (tok.size() != 9 && tok.size() != 12) throw fail("expected 9 or 12 fields, got " + std::to_string(tok.size()));

        AnnotationRecord r;
        if (!detail::parse_number(tok[0], r.frame) || r.frame < 0) throw fail("bad frame index");
        if (!detail::parse_number(tok[1], r.track_id)) throw fail("bad track id");
        if (!detail::parse_number(tok[2], r.box.x) || !detail::parse_number(tok[3], r.box.y) ||
            !detail::parse_number(tok[4], r.box.w) || !detail::parse_number(tok[5], r.box.h))
            throw fail("bad box");
        if (!r.box.valid()) throw fail("box width and height must be positive");
        for (Level level : kLevels) {
            std::string_view label = tok[6 + index_of(level)];
            if (label != kUnlabeled && !vocab.find(level, label))
                throw fail("unknown " + std::string(level_name(level)) + " label '" + std::string(label) + "'");
            r.label(level) = std::string(label);
        }
        if (tok.size() == 12) {
            std::array<double, kLevelCount> c{};
            for (int k = 0; k < kLevelCount; ++k)
                if (!detail::parse_number(tok[9 + k], c[k]) || c[k] < 0) throw fail("bad confidence");
            r.confidence = c;
        }
        records.push_back(std::move(r));
    }
    std::stable_sort(records.begin(), records.end(), annotation_order);
    return records;
}

inline std::vector<AnnotationRecord> parse_annotations(const std::filesystem::path& path,
                                                       const DescriptorGraph& vocab = DescriptorGraph::icvl()) {
    return parse_annotations_text(detail::read_file(path), vocab, path.string());
}

inline std::string format_annotation(const AnnotationRecord& r) {
    std::string s = std::to_string(r.frame) + " " + std::to_string(r.track_id) + " " + detail::format_number(r.box.x) + " " +
                    detail::format_number(r.box.y) + " " + detail::format_number(r.box.w) + " " +
                    detail::format_number(r.box.h) + " " + r.posture + " " + r.locomotion + " " + r.gesture;
    if (r.confidence)
        for (double c : *r.confidence) s += " " + detail::format_number(c);
    return s;
}

inline std::string format_annotations(std::vector<AnnotationRecord> records) {
    std::stable_sort(records.begin(), records.end(), annotation_order);
    std::string out;
    for (const auto& r : records) out += format_annotation(r) + "\n";
    return out;
}

inline void write_annotations(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("unwritable path: " + path.string());
    out << format_annotations(records);
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace subact

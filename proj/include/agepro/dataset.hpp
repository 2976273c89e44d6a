#pragma once

#include <agepro/error.hpp>
#include <agepro/geometry.hpp>
#include <agepro/image.hpp>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace agepro {

enum class Gender { male, female };

inline constexpr std::array<Gender, 2> kGenders = {Gender::male, Gender::female};

inline std::string to_string(Gender g) { return g == Gender::male ? "male" : "female"; }

inline Gender parse_gender(std::string_view s) {
    if (s == "male") return Gender::male;
    if (s == "female") return Gender::female;
    throw SchemaError("gender must be 'male' or 'female', got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Age binning

/// Half-open interval [begin, end) in whole years.
struct AgeInterval {
    int begin = 0;
    int end = 0;
    bool operator==(const AgeInterval&) const = default;
};

/// Contiguous, disjoint age intervals; group index = interval position.
class AgeBinning {
public:
    AgeBinning() : AgeBinning(decades(1, 7)) {}

    explicit AgeBinning(std::vector<AgeInterval> intervals) : intervals_(std::move(intervals)) {
        if (intervals_.empty()) throw ConfigError("age binning needs at least one interval");
        for (std::size_t i = 0; i < intervals_.size(); ++i) {
            if (intervals_[i].end <= intervals_[i].begin) throw ConfigError("empty age interval");
            if (i > 0 && intervals_[i].begin != intervals_[i - 1].end)
                throw ConfigError("age intervals must be sorted and contiguous");
        }
    }

    /// `count` bins of ten years starting at `first` ([1,10], [11,20], ...).
    static std::vector<AgeInterval> decades(int first, int count) {
        std::vector<AgeInterval> v;
        for (int i = 0; i < count; ++i) v.push_back({first + 10 * i, first + 10 * (i + 1)});
        return v;
    }

    int group_count() const { return int(intervals_.size()); }
    const std::vector<AgeInterval>& intervals() const { return intervals_; }
    int min_age() const { return intervals_.front().begin; }
    int max_age() const { return intervals_.back().end - 1; }

    bool operator==(const AgeBinning&) const = default;

private:
    std::vector<AgeInterval> intervals_;
};

inline int bin_age(int age, const AgeBinning& binning) {
    const auto& iv = binning.intervals();
    for (std::size_t i = 0; i < iv.size(); ++i)
        if (age >= iv[i].begin && age < iv[i].end) return int(i);
    throw RangeError("age " + std::to_string(age) + " outside the binning range [" +
                     std::to_string(binning.min_age()) + ", " + std::to_string(binning.max_age()) + "]");
}

/// Formats as "1-10,11-20,..." (inclusive years).
inline std::string format_binning(const AgeBinning& b) {
    std::string out;
    for (const auto& iv : b.intervals()) {
        if (!out.empty()) out += ',';
        out += std::to_string(iv.begin) + "-" + std::to_string(iv.end - 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Landmark files

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        const std::size_t j = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > j) out.push_back(s.substr(j, i - j));
    }
    return out;
}

inline bool looks_numeric(std::string_view tok) {
    if (tok.empty()) return false;
    const char c = tok.front();
    return std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
}

inline double parse_double(std::string_view tok, std::size_t line) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("line " + std::to_string(line) + ": '" + std::string(tok) + "' is not a number");
    return v;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

/// Parses a 68-point landmark file: optional non-numeric header lines (the
/// FG-NET .pts convention, "version: 1", "n_points: 68", "{"), then one
/// "x y" pair per line, optionally closed by "}".
inline Shape parse_landmarks(std::string_view text) {
    std::vector<Point> pts;
    bool closed = false;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = detail::trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty()) continue;
        const auto toks = detail::split_ws(line);
        if (!detail::looks_numeric(toks.front())) {
            if (pts.empty()) continue;  // header
            if (toks.size() == 1 && toks.front() == "}" && !closed) {
                closed = true;
                continue;
            }
            throw ParseError("line " + std::to_string(line_no) + ": unexpected '" + std::string(line) + "'");
        }
        if (closed) throw ParseError("line " + std::to_string(line_no) + ": point after closing brace");
        if (toks.size() != 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected an 'x y' pair");
        pts.emplace_back(detail::parse_double(toks[0], line_no), detail::parse_double(toks[1], line_no));
    }
    if (pts.size() != std::size_t(kNumLandmarks))
        throw MalformedLandmarks("expected 68 points, found " + std::to_string(pts.size()));
    Points p(kNumLandmarks, 2);
    for (int i = 0; i < kNumLandmarks; ++i) p.row(i) = pts[std::size_t(i)].transpose();
    if (!p.allFinite()) throw ParseError("non-finite landmark coordinate");
    return Shape(std::move(p));
}

/// Writes the .pts layout accepted by parse_landmarks, at round-trip precision.
inline std::string format_landmarks(const Shape& shape) {
    std::string out = "version: 1\nn_points: 68\n{\n";
    char buf[64];
    for (int i = 0; i < kNumLandmarks; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", shape.points()(i, 0), shape.points()(i, 1));
        out += buf;
    }
    out += "}\n";
    return out;
}

inline Shape load_landmarks(const std::filesystem::path& path) { return parse_landmarks(detail::read_text_file(path)); }

inline void save_landmarks(const std::filesystem::path& path, const Shape& shape) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_landmarks(shape);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    std::string subject_id;
    int age = 0;
    Gender gender = Gender::male;
    std::string image_path;      // relative paths resolve against the manifest directory
    std::string landmarks_path;
    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;

    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

inline constexpr std::array<std::string_view, 5> kManifestColumns = {"subject_id", "age", "gender", "image_path",
                                                                       "landmarks_path"};

namespace detail {

inline std::vector<std::string> split_csv_row(std::string_view line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw SchemaError("line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::vector<ManifestEntry> parse_manifest(std::string_view text) {
    std::vector<ManifestEntry> entries;
    std::vector<int> column;  // manifest column -> field index
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t line_no = 0;
    bool have_header = false;
    if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_row(line, line_no);
        if (!have_header) {
            for (const auto name : kManifestColumns) {
                const auto it = std::find_if(fields.begin(), fields.end(),
                                             [&](const std::string& f) { return detail::trim(f) == name; });
                if (it == fields.end()) throw SchemaError("manifest header lacks column '" + std::string(name) + "'");
                column.push_back(int(it - fields.begin()));
            }
            have_header = true;
            continue;
        }
        const int needed = *std::max_element(column.begin(), column.end()) + 1;
        if (int(fields.size()) < needed)
            throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(needed) + " fields");
        auto field = [&](int k) { return std::string(detail::trim(fields[std::size_t(column[std::size_t(k)])])); };
        ManifestEntry e;
        e.subject_id = field(0);
        if (e.subject_id.empty()) throw SchemaError("line " + std::to_string(line_no) + ": empty subject_id");
        const auto age_text = field(1);
        const auto [ptr, ec] = std::from_chars(age_text.data(), age_text.data() + age_text.size(), e.age);
        if (ec != std::errc() || ptr != age_text.data() + age_text.size())
            throw SchemaError("line " + std::to_string(line_no) + ": age '" + age_text + "' is not an integer");
        if (e.age < 1 || e.age > 120)
            throw RangeError("line " + std::to_string(line_no) + ": age " + age_text + " outside [1, 120]");
        e.gender = parse_gender(field(2));
        e.image_path = field(3);
        e.landmarks_path = field(4);
        if (e.image_path.empty() || e.landmarks_path.empty())
            throw SchemaError("line " + std::to_string(line_no) + ": empty path");
        if (!seen.insert({e.subject_id, e.image_path}).second)
            throw SchemaError("line " + std::to_string(line_no) + ": duplicate (subject_id, image_path)");
        entries.push_back(std::move(e));
    }
    if (!have_header) throw SchemaError("manifest has no header");
    return entries;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    Manifest m;
    m.entries = parse_manifest(detail::read_text_file(path));
    m.base_dir = path.parent_path();
    return m;
}

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
    std::string out = "subject_id,age,gender,image_path,landmarks_path\n";
    for (const auto& e : entries) {
        out += detail::csv_field(e.subject_id) + ',' + std::to_string(e.age) + ',' + to_string(e.gender) + ',' +
               detail::csv_field(e.image_path) + ',' + detail::csv_field(e.landmarks_path) + '\n';
    }
    return out;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_manifest(entries);
}

// ---------------------------------------------------------------------------
// Samples

struct FaceSample {
    Rgb8Image pixels;
    Shape shape;
    int age_group = 0;
    std::string subject_id;
    Gender gender = Gender::male;
};

inline void check_in_bounds(const Shape& shape, int width, int height) {
    for (int i = 0; i < kNumLandmarks; ++i) {
        const double x = shape.points()(i, 0), y = shape.points()(i, 1);
        if (!(x >= 0.0 && y >= 0.0 && x <= width - 1 && y <= height - 1))
            throw LandmarkOutOfBounds("landmark " + std::to_string(i) + " at (" + std::to_string(x) + ", " +
                                      std::to_string(y) + ") lies outside a " + std::to_string(width) + "x" +
                                      std::to_string(height) + " raster");
    }
}

inline FaceSample load_sample(const ManifestEntry& entry, const AgeBinning& binning,
                              const std::filesystem::path& base_dir = {}) {
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    FaceSample s;
    s.pixels = read_image(resolve(entry.image_path));
    s.shape = load_landmarks(resolve(entry.landmarks_path));
    check_in_bounds(s.shape, s.pixels.width, s.pixels.height);
    s.age_group = bin_age(entry.age, binning);
    s.subject_id = entry.subject_id;
    s.gender = entry.gender;
    return s;
}

inline FaceSample load_sample(const Manifest& manifest, std::size_t index, const AgeBinning& binning) {
    return load_sample(manifest.entries.at(index), binning, manifest.base_dir);
}

}  // namespace agepro

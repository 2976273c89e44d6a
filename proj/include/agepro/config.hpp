#pragma once

// Pipeline configuration: a `key = value` text file. Blank lines and `#`
// comments are ignored; unknown keys are rejected.

#include <agepro/dataset.hpp>
#include <agepro/error.hpp>
#include <agepro/geometry.hpp>
#include <agepro/patches.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace agepro {

struct PipelineConfig {
    FrameSize frame{};
    double frame_margin = 0.05;
    AgeBinning binning{};
    int p = 10;
    int q = 100;
    int max_sweeps = 200;
    double elbo_rel_tol = 1e-6;
    std::uint64_t seed = 0;
    int max_support = 0;  // 0 = ceil(K / 10) per dictionary
    double lambda_ratio = 0.01;
    double kkt_tol = 1e-8;
    double feather_px = 3.0;
    double composite_feather_px = 2.0;
    bool apply_shape_aging = true;
    RegionConfig regions = RegionConfig::standard();

    void validate() const {
        if (frame.width < 8 || frame.height < 8) throw ConfigError("frame must be at least 8x8");
        if (!(frame_margin >= 0.0 && frame_margin < 0.5)) throw ConfigError("frame_margin must lie in [0, 0.5)");
        if (p <= 0 || q <= 0) throw ConfigError("hfa.p and hfa.q must be positive");
        if (max_sweeps <= 0) throw ConfigError("hfa.max_sweeps must be positive");
        if (!(elbo_rel_tol > 0.0)) throw ConfigError("hfa.elbo_rel_tol must be positive");
        if (max_support < 0) throw ConfigError("solver.max_support must be non-negative");
        if (!(lambda_ratio >= 0.0 && lambda_ratio < 1.0)) throw ConfigError("solver.lambda_ratio must lie in [0, 1)");
        if (!(kkt_tol > 0.0)) throw ConfigError("solver.kkt_tol must be positive");
        if (!(feather_px >= 0.0) || !(composite_feather_px >= 0.0)) throw ConfigError("feather radii must be non-negative");
        regions.validate();
    }

    bool operator==(const PipelineConfig& o) const {
        return frame == o.frame && frame_margin == o.frame_margin && binning.intervals() == o.binning.intervals() &&
               p == o.p && q == o.q && max_sweeps == o.max_sweeps && elbo_rel_tol == o.elbo_rel_tol &&
               seed == o.seed && max_support == o.max_support && lambda_ratio == o.lambda_ratio &&
               kkt_tol == o.kkt_tol && feather_px == o.feather_px && composite_feather_px == o.composite_feather_px &&
               apply_shape_aging == o.apply_shape_aging && regions == o.regions;
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, std::string_view v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) throw ConfigError("bad value for " + key + ": '" + std::string(v) + "'");
    return out;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad boolean for " + key + ": '" + std::string(v) + "'");
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// "17-21,36-41; 22-26,42-47": polygons separated by ';', each a list of
// indices and inclusive ranges.
inline std::vector<std::vector<int>> parse_index_sets(const std::string& key, std::string_view v) {
    std::vector<std::vector<int>> polys;
    for (const auto poly : split(v, ';')) {
        std::vector<int> idx;
        for (const auto item : split(poly, ',')) {
            if (item.empty()) throw ConfigError("empty index in " + key);
            const auto dash = item.find('-', 1);
            if (dash == std::string_view::npos) {
                idx.push_back(parse_number<int>(key, item));
                continue;
            }
            const int a = parse_number<int>(key, trim(item.substr(0, dash)));
            const int b = parse_number<int>(key, trim(item.substr(dash + 1)));
            if (b < a) throw ConfigError("descending index range in " + key);
            for (int i = a; i <= b; ++i) idx.push_back(i);
        }
        polys.push_back(std::move(idx));
    }
    return polys;
}

inline std::string format_index_sets(const std::vector<std::vector<int>>& polys) {
    std::string out;
    for (std::size_t p = 0; p < polys.size(); ++p) {
        if (p) out += "; ";
        const auto& v = polys[p];
        for (std::size_t i = 0; i < v.size();) {
            std::size_t j = i;
            while (j + 1 < v.size() && v[j + 1] == v[j] + 1) ++j;
            if (i) out += ',';
            out += std::to_string(v[i]);
            if (j > i) out += '-' + std::to_string(v[j]);
            i = j + 1;
        }
    }
    return out;
}

inline AgeBinning parse_binning(std::string_view v) {
    std::vector<AgeInterval> iv;
    for (const auto item : split(v, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string_view::npos) throw ConfigError("age bin '" + std::string(item) + "' is not lo-hi");
        const int lo = parse_number<int>("age_bins", trim(item.substr(0, dash)));
        const int hi = parse_number<int>("age_bins", trim(item.substr(dash + 1)));
        iv.push_back({lo, hi + 1});
    }
    return AgeBinning(iv);
}

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline PipelineConfig parse_config(std::string_view text) {
    PipelineConfig c;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        auto line = std::string_view(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key(detail::trim(line.substr(0, eq)));
        const auto v = detail::trim(line.substr(eq + 1));
        if (!seen.emplace(key, line_no).second) throw ConfigError("duplicate key " + key);
        using detail::parse_number;
        if (key == "frame_width") c.frame.width = parse_number<int>(key, v);
        else if (key == "frame_height") c.frame.height = parse_number<int>(key, v);
        else if (key == "frame_margin") c.frame_margin = parse_number<double>(key, v);
        else if (key == "age_bins") c.binning = detail::parse_binning(v);
        else if (key == "hfa.p") c.p = parse_number<int>(key, v);
        else if (key == "hfa.q") c.q = parse_number<int>(key, v);
        else if (key == "hfa.max_sweeps") c.max_sweeps = parse_number<int>(key, v);
        else if (key == "hfa.elbo_rel_tol") c.elbo_rel_tol = parse_number<double>(key, v);
        else if (key == "hfa.seed") c.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "solver.max_support") c.max_support = parse_number<int>(key, v);
        else if (key == "solver.lambda_ratio") c.lambda_ratio = parse_number<double>(key, v);
        else if (key == "solver.kkt_tol") c.kkt_tol = parse_number<double>(key, v);
        else if (key == "feather_px") c.feather_px = parse_number<double>(key, v);
        else if (key == "composite_feather_px") c.composite_feather_px = parse_number<double>(key, v);
        else if (key == "apply_shape_aging") c.apply_shape_aging = detail::parse_bool(key, v);
        else if (key == "region.eyes") c.regions.eyes = detail::parse_index_sets(key, v);
        else if (key == "region.nose") c.regions.nose = detail::parse_index_sets(key, v);
        else if (key == "region.mouth") c.regions.mouth = detail::parse_index_sets(key, v);
        else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

/// Canonical text form; parse_config(format_config(c)) == c.
inline std::string format_config(const PipelineConfig& c) {
    using detail::fmt_double;
    std::string s;
    auto put = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
    put("frame_width", std::to_string(c.frame.width));
    put("frame_height", std::to_string(c.frame.height));
    put("frame_margin", fmt_double(c.frame_margin));
    put("age_bins", format_binning(c.binning));
    put("hfa.p", std::to_string(c.p));
    put("hfa.q", std::to_string(c.q));
    put("hfa.max_sweeps", std::to_string(c.max_sweeps));
    put("hfa.elbo_rel_tol", fmt_double(c.elbo_rel_tol));
    put("hfa.seed", std::to_string(c.seed));
    put("solver.max_support", std::to_string(c.max_support));
    put("solver.lambda_ratio", fmt_double(c.lambda_ratio));
    put("solver.kkt_tol", fmt_double(c.kkt_tol));
    put("feather_px", fmt_double(c.feather_px));
    put("composite_feather_px", fmt_double(c.composite_feather_px));
    put("apply_shape_aging", c.apply_shape_aging ? "true" : "false");
    put("region.eyes", detail::format_index_sets(c.regions.eyes));
    put("region.nose", detail::format_index_sets(c.regions.nose));
    put("region.mouth", detail::format_index_sets(c.regions.mouth));
    return s;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    return parse_config(detail::read_text_file(path));
}

inline void save_config(const std::filesystem::path& path, const PipelineConfig& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << format_config(c);
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace agepro

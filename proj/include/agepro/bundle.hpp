#pragma once

// Trained artifacts for aging and their single-file binary form. Layout is
// documented in docs/bundle_format.md.

#include <agepro/config.hpp>
#include <agepro/dataset.hpp>
#include <agepro/error.hpp>
#include <agepro/geometry.hpp>
#include <agepro/hfa.hpp>
#include <agepro/sparse.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace agepro {

/// Everything learned for one gender.
struct GenderModel {
    HfaModel model;
    Shape canonical_shape;
    Triangulation triangulation;
    std::vector<std::optional<Shape>> group_means;        // per age group, canonical frame
    std::vector<std::optional<VectorXd>> age_centroids;   // per age group, canonical frame
    std::vector<std::array<std::optional<AgeDictionary>, kRegionCount>> dictionaries;  // [group][region]

    bool has_group(int g) const {
        return g >= 0 && g < int(dictionaries.size()) && dictionaries[std::size_t(g)][0].has_value();
    }
    const AgeDictionary& dictionary(int group, Region r) const {
        if (group < 0 || group >= int(dictionaries.size()) || !dictionaries[std::size_t(group)][std::size_t(r)])
            throw DataError("no " + to_string(r) + " dictionary for age group " + std::to_string(group));
        return *dictionaries[std::size_t(group)][std::size_t(r)];
    }
};

struct AgingBundle {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::uint32_t version = kFormatVersion;
    PipelineConfig config;
    std::array<std::optional<GenderModel>, 2> genders;

    FrameSize frame() const { return config.frame; }
    const AgeBinning& binning() const { return config.binning; }

    const GenderModel& gender(Gender g) const {
        const auto& gm = genders[std::size_t(g)];
        if (!gm) throw DataError("bundle has no model for gender " + to_string(g));
        return *gm;
    }
    int dictionary_count() const {
        int n = 0;
        for (const auto& gm : genders)
            if (gm)
                for (const auto& row : gm->dictionaries)
                    for (const auto& d : row) n += d.has_value();
        return n;
    }
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void i32(std::int32_t v) { put(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void text(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    void vec(const VectorXd& v) {
        u64(std::uint64_t(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
    }
    void mat(const MatrixXd& m) {
        u64(std::uint64_t(m.rows()));
        u64(std::uint64_t(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) f64(m(i, j));
    }
    std::vector<std::uint8_t>& data() { return buf_; }

private:
    template <class T>
    void put(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* p, std::size_t n, std::string what) : p_(p), n_(n), what_(std::move(what)) {}

    std::uint8_t u8() { return take<std::uint8_t>(); }
    std::uint32_t u32() { return take<std::uint32_t>(); }
    std::uint64_t u64() { return take<std::uint64_t>(); }
    std::int32_t i32() { return std::bit_cast<std::int32_t>(take<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(take<std::uint64_t>()); }
    std::string text() {
        const auto n = count(1);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    VectorXd vec() {
        const auto n = count(8);
        VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) v[Eigen::Index(i)] = f64();
        return v;
    }
    MatrixXd mat() {
        const auto r = u64(), c = u64();
        if (r != 0 && c > (n_ - pos_) / 8 / r) fail("matrix larger than its section");
        MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (std::uint64_t j = 0; j < c; ++j)
            for (std::uint64_t i = 0; i < r; ++i) m(Eigen::Index(i), Eigen::Index(j)) = f64();
        return m;
    }
    bool done() const { return pos_ == n_; }
    [[noreturn]] void fail(const std::string& why) const { throw ParseError("bundle " + what_ + ": " + why); }

private:
    std::size_t count(std::size_t elem) {
        const auto n = u64();
        if (n > (n_ - pos_) / elem) fail("length prefix exceeds the section");
        return std::size_t(n);
    }
    template <class T>
    T take() {
        if (n_ - pos_ < sizeof(T)) fail("truncated");
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(T(p_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline constexpr std::array<char, 4> kTagConfig = {'C', 'O', 'N', 'F'};
inline constexpr std::array<char, 4> kTagModel = {'M', 'O', 'D', 'L'};
inline constexpr std::array<char, 4> kTagShapes = {'S', 'H', 'A', 'P'};
inline constexpr std::array<char, 4> kTagDicts = {'D', 'I', 'C', 'T'};

inline void write_shape(ByteWriter& w, const Shape& s) { w.mat(s.points()); }

inline Shape read_shape(ByteReader& r) {
    const MatrixXd m = r.mat();
    if (m.cols() != 2 || m.rows() != kNumLandmarks) r.fail("shape must be 68x2");
    return Shape(Points(m));
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_bundle(const AgingBundle& b) {
    using detail::ByteWriter;
    std::vector<std::pair<std::array<char, 4>, std::vector<std::uint8_t>>> sections;

    ByteWriter conf;
    conf.text(format_config(b.config));
    sections.emplace_back(detail::kTagConfig, std::move(conf.data()));

    ByteWriter model, shapes, dicts;
    std::uint32_t present = 0;
    for (const auto& gm : b.genders) present += gm.has_value();
    model.u32(present);
    shapes.u32(present);
    std::uint32_t dict_count = 0;
    for (const auto& gm : b.genders)
        if (gm)
            for (const auto& row : gm->dictionaries)
                for (const auto& d : row) dict_count += d.has_value();
    dicts.u32(dict_count);

    for (std::size_t g = 0; g < b.genders.size(); ++g) {
        const auto& gm = b.genders[g];
        if (!gm) continue;
        const auto groups = std::uint32_t(gm->dictionaries.size());
        model.u32(std::uint32_t(g));
        model.u32(groups);
        model.vec(gm->model.mean());
        model.mat(gm->model.U());
        model.mat(gm->model.V());
        model.f64(gm->model.sigma2());
        for (std::uint32_t j = 0; j < groups; ++j) {
            const auto& c = gm->age_centroids[j];
            model.u8(c.has_value());
            if (c) model.vec(*c);
        }

        shapes.u32(std::uint32_t(g));
        shapes.u32(groups);
        detail::write_shape(shapes, gm->canonical_shape);
        shapes.u64(gm->triangulation.triangles.size());
        for (const auto& t : gm->triangulation.triangles)
            for (const int v : t) shapes.i32(v);
        for (std::uint32_t j = 0; j < groups; ++j) {
            const auto& s = gm->group_means[j];
            shapes.u8(s.has_value());
            if (s) detail::write_shape(shapes, *s);
        }

        for (std::uint32_t j = 0; j < groups; ++j)
            for (const Region r : kRegions) {
                const auto& d = gm->dictionaries[j][std::size_t(r)];
                if (!d) continue;
                dicts.u32(std::uint32_t(g));
                dicts.u32(j);
                dicts.u32(std::uint32_t(r));
                dicts.mat(d->atoms);
                dicts.vec(d->column_norms);
            }
    }
    sections.emplace_back(detail::kTagModel, std::move(model.data()));
    sections.emplace_back(detail::kTagShapes, std::move(shapes.data()));
    sections.emplace_back(detail::kTagDicts, std::move(dicts.data()));

    ByteWriter out;
    out.bytes("HFAB", 4);
    out.u32(b.version);
    out.u32(std::uint32_t(sections.size()));
    std::uint64_t offset = 12 + sections.size() * 20;
    for (const auto& [tag, data] : sections) {
        out.bytes(tag.data(), 4);
        out.u64(offset);
        out.u64(data.size());
        offset += data.size();
    }
    for (const auto& [tag, data] : sections) out.bytes(data.data(), data.size());
    return std::move(out.data());
}

inline AgingBundle deserialize_bundle(const std::vector<std::uint8_t>& bytes) {
    using detail::ByteReader;
    ByteReader head(bytes.data(), bytes.size(), "header");
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "HFAB", 4) != 0) head.fail("bad magic");
    for (int i = 0; i < 4; ++i) head.u8();
    AgingBundle b;
    b.version = head.u32();
    if (b.version != AgingBundle::kFormatVersion) head.fail("unsupported format version " + std::to_string(b.version));
    const auto count = head.u32();
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> table;
    for (std::uint32_t s = 0; s < count; ++s) {
        std::string tag;
        for (int i = 0; i < 4; ++i) tag += char(head.u8());
        const auto off = head.u64(), len = head.u64();
        if (off > bytes.size() || len > bytes.size() - off) head.fail("section " + tag + " out of range");
        if (!table.emplace(tag, std::make_pair(off, len)).second) head.fail("duplicate section " + tag);
    }
    auto section = [&](const std::array<char, 4>& tag) {
        const std::string t(tag.data(), 4);
        const auto it = table.find(t);
        if (it == table.end()) head.fail("missing section " + t);
        return ByteReader(bytes.data() + it->second.first, std::size_t(it->second.second), "section " + t);
    };

    {
        auto r = section(detail::kTagConfig);
        b.config = parse_config(r.text());
        if (!r.done()) r.fail("trailing bytes");
    }
    const int J = b.config.binning.group_count();
    const Eigen::Index d = Eigen::Index(b.config.frame.width) * b.config.frame.height * 3;
    {
        auto r = section(detail::kTagModel);
        const auto n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            const auto g = r.u32();
            if (g >= 2 || b.genders[g]) r.fail("bad gender entry");
            if (int(r.u32()) != J) r.fail("group count disagrees with the binning");
            VectorXd mean = r.vec();
            MatrixXd U = r.mat(), V = r.mat();
            const double s2 = r.f64();
            if (mean.size() != d) r.fail("model dimension does not match the frame");
            GenderModel gm;
            gm.model = HfaModel(std::move(mean), std::move(U), std::move(V), s2);
            gm.age_centroids.resize(std::size_t(J));
            for (int j = 0; j < J; ++j)
                if (r.u8()) {
                    gm.age_centroids[std::size_t(j)] = r.vec();
                    if (gm.age_centroids[std::size_t(j)]->size() != d) r.fail("centroid dimension");
                }
            gm.group_means.resize(std::size_t(J));
            gm.dictionaries.resize(std::size_t(J));
            b.genders[g] = std::move(gm);
        }
        if (!r.done()) r.fail("trailing bytes");
    }
    {
        auto r = section(detail::kTagShapes);
        const auto n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            const auto g = r.u32();
            if (g >= 2 || !b.genders[g]) r.fail("shapes for a gender without a model");
            if (int(r.u32()) != J) r.fail("group count disagrees with the binning");
            auto& gm = *b.genders[g];
            gm.canonical_shape = detail::read_shape(r);
            const auto nt = r.u64();
            if (nt > 1000) r.fail("implausible triangle count");
            for (std::uint64_t t = 0; t < nt; ++t) {
                Triangle tri;
                for (auto& v : tri) {
                    v = r.i32();
                    if (v < 0 || v >= kNumLandmarks) r.fail("triangle vertex out of range");
                }
                gm.triangulation.triangles.push_back(tri);
            }
            for (int j = 0; j < J; ++j)
                if (r.u8()) gm.group_means[std::size_t(j)] = detail::read_shape(r);
        }
        if (!r.done()) r.fail("trailing bytes");
    }
    {
        auto r = section(detail::kTagDicts);
        const auto n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            const auto g = r.u32(), j = r.u32(), reg = r.u32();
            if (g >= 2 || !b.genders[g] || int(j) >= J || reg >= kRegionCount) r.fail("bad dictionary key");
            AgeDictionary dict;
            dict.group_id = int(j);
            dict.region = Region(reg);
            dict.atoms = r.mat();
            dict.column_norms = r.vec();
            if (dict.column_norms.size() != dict.atoms.cols() || dict.atoms.cols() == 0)
                r.fail("dictionary norms do not match its atoms");
            auto& slot = b.genders[g]->dictionaries[j][reg];
            if (slot) r.fail("duplicate dictionary");
            slot = std::move(dict);
        }
        if (!r.done()) r.fail("trailing bytes");
    }
    return b;
}

inline void save_bundle(const std::filesystem::path& path, const AgingBundle& b) {
    const auto bytes = serialize_bundle(b);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline AgingBundle load_bundle(const std::filesystem::path& path) {
    return deserialize_bundle(detail::read_file_bytes(path));
}

}  // namespace agepro

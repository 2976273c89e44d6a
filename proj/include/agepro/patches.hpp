#pragma once

// Region partition of the face hull (eyes, nose, mouth, skin) with
// feathered borders, and region-restricted extraction and insertion.

#include <agepro/error.hpp>
#include <agepro/geometry.hpp>
#include <agepro/region.hpp>

#include <Eigen/Dense>

#include <array>
#include <limits>
#include <span>
#include <vector>

namespace agepro {

/// Landmark index sets (68-point convention) whose convex hulls form the
/// feature regions. A region may consist of several disjoint polygons.
struct RegionConfig {
    std::vector<std::vector<int>> eyes;
    std::vector<std::vector<int>> nose;
    std::vector<std::vector<int>> mouth;

    static std::vector<int> range(int first, int last) {
        std::vector<int> v;
        for (int i = first; i <= last; ++i) v.push_back(i);
        return v;
    }
    static std::vector<int> join(std::vector<int> a, const std::vector<int>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    }

    static RegionConfig standard() {
        RegionConfig c;
        c.eyes = {join(range(17, 21), range(36, 41)), join(range(22, 26), range(42, 47))};
        c.nose = {range(27, 35)};
        c.mouth = {range(48, 59)};
        return c;
    }

    const std::vector<std::vector<int>>& polygons(Region r) const {
        switch (r) {
            case Region::eyes: return eyes;
            case Region::nose: return nose;
            case Region::mouth: return mouth;
            default: throw ConfigError("skin has no landmark polygon");
        }
    }

    void validate() const {
        for (const Region r : {Region::eyes, Region::nose, Region::mouth}) {
            if (polygons(r).empty()) throw ConfigError(to_string(r) + " region has no polygon");
            for (const auto& poly : polygons(r)) {
                if (poly.size() < 3) throw ConfigError(to_string(r) + " polygon needs at least three landmarks");
                for (const int i : poly)
                    if (i < 0 || i >= kNumLandmarks) throw ConfigError("landmark index out of range in " + to_string(r));
            }
        }
    }

    bool operator==(const RegionConfig&) const = default;
};

struct RegionMasks {
    FrameSize frame;
    std::array<std::vector<double>, kRegionCount> weights;  // per pixel
    std::array<std::vector<int>, kRegionCount> support;     // pixel indices with weight > 0
    std::vector<char> hull;

    const std::vector<double>& weight(Region r) const { return weights[std::size_t(r)]; }
    const std::vector<int>& pixels(Region r) const { return support[std::size_t(r)]; }
    /// Patch length: three channels per support pixel.
    Eigen::Index patch_size(Region r) const { return Eigen::Index(pixels(r).size()) * 3; }
};

namespace detail {

// Distance from p to a CCW convex polygon; 0 inside or on the border.
inline double convex_polygon_distance(const Point& p, const std::vector<Point>& poly) {
    if (poly.size() < 3) {
        if (poly.empty()) return std::numeric_limits<double>::infinity();
        if (poly.size() == 1) return (p - poly[0]).norm();
        return point_segment_distance(p, poly[0], poly[1]);
    }
    bool inside = true;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point& a = poly[i];
        const Point& b = poly[(i + 1) % poly.size()];
        if (orient(a, b, p) < -1e-9 * std::max(1.0, (b - a).norm())) inside = false;
        best = std::min(best, point_segment_distance(p, a, b));
    }
    return inside ? 0.0 : best;
}

}  // namespace detail

/// Feature weights are polygon indicators dilated by `feather_px` with a
/// linear falloff. Overlaps resolve by priority eyes, nose, mouth; skin takes
/// the remainder, so the four weights sum to one on the hull. Pixels outside
/// the hull get zero everywhere.
inline RegionMasks build_region_masks(const Shape& shape, const Triangulation& tri, double feather_px,
                                      FrameSize frame, const RegionConfig& cfg = RegionConfig::standard()) {
    if (!(feather_px >= 0.0)) throw ConfigError("feather_px must be non-negative");
    cfg.validate();
    const auto map = rasterize_triangles(shape.points(), tri, frame);
    if (map.hull_pixel_count() == 0) throw DegenerateShape("face hull covers no pixels");

    std::array<std::vector<std::vector<Point>>, 3> hulls;
    for (const Region r : {Region::eyes, Region::nose, Region::mouth})
        for (const auto& idx : cfg.polygons(r)) {
            std::vector<Point> pts;
            for (const int i : idx) pts.push_back(shape.point(i));
            auto h = convex_hull(pts);
            if (h.size() < 3 || polygon_area(h) <= 1e-9) throw DegenerateShape(to_string(r) + " polygon has no area");
            hulls[std::size_t(r)].push_back(std::move(h));
        }

    RegionMasks masks;
    masks.frame = frame;
    const std::size_t npx = std::size_t(frame.width) * frame.height;
    for (auto& w : masks.weights) w.assign(npx, 0.0);
    masks.hull.assign(npx, 0);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            if (!map.inside(x, y)) continue;
            const std::size_t k = std::size_t(y) * frame.width + x;
            masks.hull[k] = 1;
            double remaining = 1.0;
            for (const Region r : {Region::eyes, Region::nose, Region::mouth}) {
                double dist = std::numeric_limits<double>::infinity();
                for (const auto& h : hulls[std::size_t(r)])
                    dist = std::min(dist, detail::convex_polygon_distance(Point(x, y), h));
                double raw = 0.0;
                if (dist == 0.0) raw = 1.0;
                else if (feather_px > 0.0 && dist < feather_px) raw = 1.0 - dist / feather_px;
                const double w = std::min(raw, remaining);
                masks.weights[std::size_t(r)][k] = w;
                remaining -= w;
            }
            masks.weights[std::size_t(Region::skin)][k] = remaining;
        }
    for (const Region r : kRegions) {
        auto& sup = masks.support[std::size_t(r)];
        const auto& w = masks.weights[std::size_t(r)];
        for (std::size_t k = 0; k < npx; ++k)
            if (w[k] > 0.0) sup.push_back(int(k));
    }
    return masks;
}

namespace detail {

inline void check_face(const Eigen::VectorXd& face, const RegionMasks& masks) {
    if (face.size() != Eigen::Index(masks.frame.width) * masks.frame.height * 3)
        throw ShapeError("face raster does not match the mask frame");
}

}  // namespace detail

/// Interleaved RGB values at the region's support pixels, in pixel order.
inline Eigen::VectorXd extract_patch(const Eigen::VectorXd& face, const RegionMasks& masks, Region region) {
    detail::check_face(face, masks);
    const auto& px = masks.pixels(region);
    Eigen::VectorXd out(Eigen::Index(px.size()) * 3);
    for (std::size_t i = 0; i < px.size(); ++i) out.segment<3>(Eigen::Index(i) * 3) = face.segment<3>(Eigen::Index(px[i]) * 3);
    return out;
}

/// weight * patch + (1 - weight) * face on the support; face elsewhere.
inline Eigen::VectorXd insert_patch(const Eigen::VectorXd& face, const RegionMasks& masks, Region region,
                                    const Eigen::VectorXd& patch) {
    detail::check_face(face, masks);
    const auto& px = masks.pixels(region);
    if (patch.size() != Eigen::Index(px.size()) * 3) throw ShapeError("patch length does not match the region support");
    const auto& w = masks.weight(region);
    Eigen::VectorXd out = face;
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double a = w[std::size_t(px[i])];
        const Eigen::Index o = Eigen::Index(px[i]) * 3;
        const Eigen::Index s = Eigen::Index(i) * 3;
        if (a == 1.0) out.segment<3>(o) = patch.segment<3>(s);
        else out.segment<3>(o) = a * patch.segment<3>(s) + (1.0 - a) * face.segment<3>(o);
    }
    return out;
}

struct RegionPatch {
    Region region;
    Eigen::VectorXd patch;
};

/// Inserts several regions at once, each relative to the input face:
/// face + sum_r w_r (patch_r - face). The result does not depend on order.
inline Eigen::VectorXd insert_patches(const Eigen::VectorXd& face, const RegionMasks& masks,
                                      std::span<const RegionPatch> patches) {
    detail::check_face(face, masks);
    std::vector<char> seen(kRegionCount, 0);
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(face.size());
    for (const auto& [region, patch] : patches) {
        if (seen[std::size_t(region)]++) throw ShapeError("region " + to_string(region) + " inserted twice");
        const auto& px = masks.pixels(region);
        if (patch.size() != Eigen::Index(px.size()) * 3)
            throw ShapeError("patch length does not match the region support");
        const auto& w = masks.weight(region);
        for (std::size_t i = 0; i < px.size(); ++i) {
            const Eigen::Index o = Eigen::Index(px[i]) * 3;
            delta.segment<3>(o) += w[std::size_t(px[i])] * (patch.segment<3>(Eigen::Index(i) * 3) - face.segment<3>(o));
        }
    }
    // Pixels fully covered by the inserted regions take the patch values exactly.
    Eigen::VectorXd out = face + delta;
    for (const auto& [region, patch] : patches) {
        const auto& px = masks.pixels(region);
        const auto& w = masks.weight(region);
        for (std::size_t i = 0; i < px.size(); ++i)
            if (w[std::size_t(px[i])] == 1.0) out.segment<3>(Eigen::Index(px[i]) * 3) = patch.segment<3>(Eigen::Index(i) * 3);
    }
    return out;
}

}  // namespace agepro

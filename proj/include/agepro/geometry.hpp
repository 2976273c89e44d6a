#pragma once

#include <agepro/error.hpp>
#include <agepro/image.hpp>
#include <agepro/log.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace agepro {

inline constexpr int kNumLandmarks = 68;

using Point = Eigen::Vector2d;
/// One point per row, (x, y) in pixel coordinates. Pixel (i, j) has its
/// centre at (i, j).
using Points = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// A 68-point landmark configuration.
class Shape {
public:
    Shape() : points_(Points::Zero(kNumLandmarks, 2)) {}

    explicit Shape(Points points) : points_(std::move(points)) {
        if (points_.rows() != kNumLandmarks)
            throw ShapeError("a shape needs exactly 68 points, got " + std::to_string(points_.rows()));
        if (!points_.allFinite()) throw ShapeError("shape has non-finite coordinates");
    }

    const Points& points() const { return points_; }
    Point point(int i) const { return points_.row(i).transpose(); }
    static constexpr int size() { return kNumLandmarks; }

    bool operator==(const Shape& other) const { return points_ == other.points_; }

private:
    Points points_;
};

struct FrameSize {
    int width = 100;
    int height = 100;
    bool operator==(const FrameSize&) const = default;
};

struct SimilarityTransform {
    double scale = 1.0;
    double rotation = 0.0;  // radians, counter-clockwise in (x, y)
    Point translation = Point::Zero();

    Eigen::Matrix2d linear() const {
        const double c = scale * std::cos(rotation), s = scale * std::sin(rotation);
        Eigen::Matrix2d m;
        m << c, -s, s, c;
        return m;
    }
    Point apply(const Point& p) const { return linear() * p + translation; }
    Points apply(const Points& pts) const {
        Points out = pts * linear().transpose();
        out.rowwise() += translation.transpose();
        return out;
    }
};

// ---------------------------------------------------------------------------
// Similarity alignment and Procrustes means

/// Least-squares similarity transform T minimising sum |T(from_i) - to_i|^2.
inline SimilarityTransform fit_similarity(const Points& from, const Points& to) {
    if (from.rows() != to.rows() || from.rows() == 0) throw ShapeError("point sets differ in size");
    const Eigen::RowVector2d cf = from.colwise().mean();
    const Eigen::RowVector2d ct = to.colwise().mean();
    double ss = 0.0, a = 0.0, b = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
        const double x = from(i, 0) - cf(0), y = from(i, 1) - cf(1);
        const double u = to(i, 0) - ct(0), v = to(i, 1) - ct(1);
        ss += x * x + y * y;
        a += x * u + y * v;
        b += x * v - y * u;
    }
    if (!(ss > 0.0)) throw DegenerateShape("source points are all coincident");
    SimilarityTransform t;
    const double sc = a / ss, sn = b / ss;
    t.scale = std::hypot(sc, sn);
    if (!(t.scale > 0.0)) throw DegenerateShape("reference points are all coincident");
    t.rotation = std::atan2(sn, sc);
    Eigen::Matrix2d lin;
    lin << sc, -sn, sn, sc;
    t.translation = ct.transpose() - lin * cf.transpose();
    return t;
}

/// Aligns `shape` onto `reference` by the least-squares similarity transform.
inline std::pair<Shape, SimilarityTransform> similarity_align(const Shape& shape, const Shape& reference) {
    const auto t = fit_similarity(shape.points(), reference.points());
    return {Shape(t.apply(shape.points())), t};
}

inline double squared_residual(const Points& a, const Points& b) { return (a - b).squaredNorm(); }

/// Scales and centres `pts` so the bounding box fits the frame, inset by
/// `margin` (a fraction of the smaller frame side) on every side.
inline Points fit_to_frame(const Points& pts, FrameSize frame, double margin = 0.05) {
    const Eigen::RowVector2d lo = pts.colwise().minCoeff();
    const Eigen::RowVector2d hi = pts.colwise().maxCoeff();
    const double m = margin * (std::min(frame.width, frame.height) - 1);
    const double avail_w = frame.width - 1 - 2 * m, avail_h = frame.height - 1 - 2 * m;
    const double bw = hi(0) - lo(0), bh = hi(1) - lo(1);
    if (!(bw > 0.0 || bh > 0.0)) throw DegenerateShape("shape has an empty bounding box");
    double scale = std::numeric_limits<double>::infinity();
    if (bw > 0.0) scale = std::min(scale, avail_w / bw);
    if (bh > 0.0) scale = std::min(scale, avail_h / bh);
    const Eigen::RowVector2d box_centre = 0.5 * (lo + hi);
    const Eigen::RowVector2d frame_centre((frame.width - 1) * 0.5, (frame.height - 1) * 0.5);
    Points out = (pts.rowwise() - box_centre) * scale;
    out.rowwise() += frame_centre;
    return out;
}

namespace detail {

// Centred, unit centroid-size copy.
inline Points normalise_pose(const Points& pts) {
    Points c = pts.rowwise() - pts.colwise().mean();
    const double n = c.norm();
    if (!(n > 0.0)) throw DegenerateShape("shape has all points coincident");
    return c / n;
}

}  // namespace detail

struct MeanShapeOptions {
    FrameSize frame{};
    double margin = 0.05;
    double tolerance = 1e-8;  // mean movement, in frame pixels
    int max_iterations = 100;
};

/// Generalised Procrustes mean over arbitrary equal-size point sets. The
/// orientation is pinned to the raw arithmetic mean so the result does not
/// depend on input order.
inline Points procrustes_mean(std::span<const Points> shapes, const MeanShapeOptions& opt = {}) {
    if (shapes.empty()) throw EmptyInput("mean_shape needs at least one shape");
    const Eigen::Index n = shapes.front().rows();
    Points raw = Points::Zero(n, 2);
    for (const auto& s : shapes) {
        if (s.rows() != n) throw ShapeError("shapes differ in point count");
        raw += s;
    }
    raw /= double(shapes.size());

    Points anchor;
    try {
        anchor = detail::normalise_pose(raw);
    } catch (const DegenerateShape&) {
        anchor = detail::normalise_pose(shapes.front());
    }
    // Convergence is judged in frame pixels, so track the scale that maps a
    // unit-size shape onto the frame.
    const Points fitted = fit_to_frame(anchor, opt.frame, opt.margin);
    const double to_px = (fitted.rowwise() - fitted.colwise().mean()).norm();
    Points mean = anchor;
    for (int it = 0; it < opt.max_iterations; ++it) {
        Points acc = Points::Zero(n, 2);
        for (const auto& s : shapes) acc += fit_similarity(s, mean).apply(s);
        acc /= double(shapes.size());
        Points next = detail::normalise_pose(acc);
        next = fit_similarity(next, anchor).apply(next);
        next = detail::normalise_pose(next);
        const double moved = (next - mean).rowwise().norm().maxCoeff() * to_px;
        mean = std::move(next);
        if (moved < opt.tolerance) break;
    }
    return fit_to_frame(mean, opt.frame, opt.margin);
}

inline Shape mean_shape(std::span<const Shape> shapes, const MeanShapeOptions& opt = {}) {
    if (shapes.empty()) throw EmptyInput("mean_shape needs at least one shape");
    std::vector<Points> pts;
    pts.reserve(shapes.size());
    for (const auto& s : shapes) pts.push_back(s.points());
    return Shape(procrustes_mean(pts, opt));
}

/// S_new = S_subject + (S_target - S_input). The group means live in the
/// canonical frame, so both are carried into the subject's frame by the
/// similarity fitted from the input-group mean to the subject before the
/// difference is applied.
inline Shape shape_age(const Shape& subject, const Shape& input_mean, const Shape& target_mean) {
    const auto t = fit_similarity(input_mean.points(), subject.points());
    const Points delta = t.apply(target_mean.points()) - t.apply(input_mean.points());
    return Shape(subject.points() + delta);
}

// ---------------------------------------------------------------------------
// Triangulation

using Triangle = std::array<int, 3>;

struct Triangulation {
    std::vector<Triangle> triangles;  // counter-clockwise on the shape it was built from
    bool operator==(const Triangulation&) const = default;
};

namespace detail {

inline double orient(const Point& a, const Point& b, const Point& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// > 0 when d lies strictly inside the circumcircle of counter-clockwise (a, b, c).
inline long double incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
    const long double adx = a.x() - d.x(), ady = a.y() - d.y();
    const long double bdx = b.x() - d.x(), bdy = b.y() - d.y();
    const long double cdx = c.x() - d.x(), cdy = c.y() - d.y();
    const long double ad = adx * adx + ady * ady, bd = bdx * bdx + bdy * bdy, cd = cdx * cdx + cdy * cdy;
    return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

inline Point row_point(const Points& p, int i) { return p.row(i).transpose(); }

}  // namespace detail

/// Delaunay triangulation of an arbitrary planar point set: a sweep builds
/// some triangulation of the convex hull, then Lawson edge flips make it
/// Delaunay. Deterministic for a fixed input.
inline std::vector<Triangle> delaunay(const Points& pts) {
    using detail::orient;
    const int n = int(pts.rows());
    if (n < 3) throw DegenerateShape("need at least three points to triangulate");
    auto P = [&](int i) { return detail::row_point(pts, i); };

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (pts(a, 0) != pts(b, 0)) return pts(a, 0) < pts(b, 0);
        if (pts(a, 1) != pts(b, 1)) return pts(a, 1) < pts(b, 1);
        return a < b;
    });
    for (int i = 1; i < n; ++i)
        if (pts(order[i], 0) == pts(order[i - 1], 0) && pts(order[i], 1) == pts(order[i - 1], 1))
            throw DegenerateShape("coincident points " + std::to_string(order[i - 1]) + " and " +
                                  std::to_string(order[i]));

    const double extent = std::max((pts.colwise().maxCoeff() - pts.colwise().minCoeff()).maxCoeff(), 1e-300);
    const double area_eps = 1e-14 * extent * extent;

    // Collinear prefix, then the first point off that line.
    int k = 2;
    while (k < n && std::abs(orient(P(order[0]), P(order[1]), P(order[k]))) <= area_eps) ++k;
    if (k == n) throw DegenerateShape("all points are collinear");

    std::vector<Triangle> tris;
    std::vector<int> hull;  // counter-clockwise
    const int apex = order[k];
    const bool apex_left = orient(P(order[0]), P(order[1]), P(apex)) > 0;
    for (int i = 0; i + 1 < k; ++i) {
        const int a = order[i], b = order[i + 1];
        tris.push_back(apex_left ? Triangle{a, b, apex} : Triangle{b, a, apex});
    }
    if (apex_left) {
        for (int i = 0; i < k; ++i) hull.push_back(order[i]);
        hull.push_back(apex);
    } else {
        hull.push_back(apex);
        for (int i = k - 1; i >= 0; --i) hull.push_back(order[i]);
        std::rotate(hull.begin(), hull.begin() + 1, hull.end());
    }

    for (int s = k + 1; s < n; ++s) {
        const int p = order[s];
        const int h = int(hull.size());
        std::vector<char> visible(h, 0);
        for (int e = 0; e < h; ++e) visible[e] = orient(P(hull[e]), P(hull[(e + 1) % h]), P(p)) < -area_eps;
        // The visible edges form one contiguous run; find its start.
        int first = -1;
        for (int e = 0; e < h; ++e)
            if (visible[e] && !visible[(e + h - 1) % h]) {
                first = e;
                break;
            }
        if (first < 0) throw DegenerateShape("sweep triangulation lost the hull");
        int count = 0;
        while (visible[(first + count) % h]) {
            const int e = (first + count) % h;
            tris.push_back({hull[(e + 1) % h], hull[e], p});
            ++count;
        }
        // Vertices strictly inside the visible run leave the hull.
        std::vector<int> next;
        next.reserve(h + 1);
        const int start_v = first, end_v = (first + count) % h;
        for (int i = 0; i < h; ++i) {
            const int v = (end_v + i) % h;
            next.push_back(hull[v]);
            if (v == start_v) break;
        }
        next.push_back(p);
        hull = std::move(next);
    }

    // Lawson flips until every interior edge is locally Delaunay.
    const long double flip_eps = 1e-12L * (long double)extent * extent * extent * extent;
    for (bool flipped = true; flipped;) {
        flipped = false;
        std::map<std::pair<int, int>, std::pair<int, int>> edge_owner;  // directed edge -> (tri, opposite)
        for (int t = 0; t < int(tris.size()); ++t)
            for (int e = 0; e < 3; ++e) edge_owner[{tris[t][e], tris[t][(e + 1) % 3]}] = {t, tris[t][(e + 2) % 3]};
        for (const auto& [edge, owner] : edge_owner) {
            const auto [a, b] = edge;
            if (a > b) continue;
            const auto it = edge_owner.find({b, a});
            if (it == edge_owner.end()) continue;
            const auto [t1, c] = owner;
            const auto [t2, d] = it->second;
            if (detail::incircle(P(a), P(b), P(c), P(d)) > flip_eps) {
                if (orient(P(c), P(a), P(d)) <= area_eps || orient(P(c), P(d), P(b)) <= area_eps) continue;
                tris[t1] = {c, a, d};
                tris[t2] = {c, d, b};
                flipped = true;
                break;  // adjacency is stale; rebuild
            }
        }
    }

    // Canonical vertex order inside each triangle (smallest index first,
    // orientation kept) and sorted triangle list.
    for (auto& t : tris) std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
    std::sort(tris.begin(), tris.end());
    return tris;
}

inline Triangulation triangulate(const Shape& shape) { return {delaunay(shape.points())}; }

inline double signed_area(const Points& pts, const Triangle& t) {
    return 0.5 * detail::orient(detail::row_point(pts, t[0]), detail::row_point(pts, t[1]),
                                detail::row_point(pts, t[2]));
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear
/// points dropped.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point> h(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && detail::orient(h[k - 2], h[k - 1], p) <= 0) --k;
        h[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
        while (k >= lo && detail::orient(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

inline double polygon_area(const std::vector<Point>& poly) {
    double a = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % poly.size()];
        a += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * a;
}

inline double point_segment_distance(const Point& p, const Point& a, const Point& b) {
    const Point ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

// ---------------------------------------------------------------------------
// Rasterised triangle membership and piecewise-affine warping

/// For every pixel of a raster, the lowest-index triangle containing its
/// centre, or -1 outside the union of triangles.
struct TriangleMap {
    FrameSize frame;
    std::vector<int> owner;

    bool inside(int x, int y) const { return owner[std::size_t(y) * frame.width + x] >= 0; }
    int at(int x, int y) const { return owner[std::size_t(y) * frame.width + x]; }
    std::size_t hull_pixel_count() const {
        return std::size_t(std::count_if(owner.begin(), owner.end(), [](int t) { return t >= 0; }));
    }
};

namespace detail {

inline constexpr double kBaryEps = 1e-9;

// Barycentric coordinates of p; false for a degenerate triangle.
inline bool barycentric(const Point& p, const Point& a, const Point& b, const Point& c, Eigen::Vector3d& out) {
    const double det = orient(a, b, c);
    if (std::abs(det) <= 1e-12 * std::max({(b - a).squaredNorm(), (c - a).squaredNorm(), 1e-300})) return false;
    const double l1 = orient(p, b, c) / det;
    const double l2 = orient(a, p, c) / det;
    out = {l1, l2, 1.0 - l1 - l2};
    return true;
}

}  // namespace detail

inline TriangleMap rasterize_triangles(const Points& pts, const Triangulation& tri, FrameSize frame) {
    TriangleMap map{frame, std::vector<int>(std::size_t(frame.width) * frame.height, -1)};
    for (int t = 0; t < int(tri.triangles.size()); ++t) {
        const auto& T = tri.triangles[t];
        const Point a = detail::row_point(pts, T[0]), b = detail::row_point(pts, T[1]), c = detail::row_point(pts, T[2]);
        const int x0 = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}) - 1e-6)));
        const int x1 = std::min(frame.width - 1, int(std::ceil(std::max({a.x(), b.x(), c.x()}) + 1e-6)));
        const int y0 = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}) - 1e-6)));
        const int y1 = std::min(frame.height - 1, int(std::ceil(std::max({a.y(), b.y(), c.y()}) + 1e-6)));
        Eigen::Vector3d bary;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                auto& slot = map.owner[std::size_t(y) * frame.width + x];
                if (slot >= 0) continue;
                if (!detail::barycentric(Point(x, y), a, b, c, bary)) continue;
                if (bary.minCoeff() >= -detail::kBaryEps) slot = t;
            }
    }
    return map;
}

/// Edges owned by exactly one triangle: the outline of the warped region.
inline std::vector<std::pair<int, int>> boundary_edges(const Triangulation& tri) {
    std::map<std::pair<int, int>, int> count;
    for (const auto& t : tri.triangles)
        for (int e = 0; e < 3; ++e) {
            const int a = t[e], b = t[(e + 1) % 3];
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    std::vector<std::pair<int, int>> out;
    for (const auto& [edge, c] : count)
        if (c == 1) out.push_back(edge);
    return out;
}

/// Distance from each hull pixel centre to the region outline; 0 outside.
inline std::vector<double> hull_distance(const Points& pts, const Triangulation& tri, const TriangleMap& map) {
    const auto edges = boundary_edges(tri);
    std::vector<double> dist(map.owner.size(), 0.0);
    for (int y = 0; y < map.frame.height; ++y)
        for (int x = 0; x < map.frame.width; ++x) {
            if (!map.inside(x, y)) continue;
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [a, b] : edges)
                best = std::min(best, point_segment_distance(Point(x, y), detail::row_point(pts, a),
                                                             detail::row_point(pts, b)));
            dist[std::size_t(y) * map.frame.width + x] = best;
        }
    return dist;
}

/// Precomputed destination-to-source sampling positions for one
/// (src shape, dst shape) pair, reusable across any number of images.
struct WarpPlan {
    FrameSize src_frame;
    FrameSize dst_frame;
    std::vector<int> dst_pixel;      // linear pixel index in the destination
    std::vector<Point> src_position; // sampling position in the source
    std::vector<char> nearest;       // sample with nearest-neighbour (flipped triangle)
    std::vector<char> mask;          // destination pixel lies inside the warped region
    int flipped_triangles = 0;
};

inline WarpPlan plan_warp(const Shape& src, const Shape& dst, const Triangulation& tri, FrameSize src_frame,
                          FrameSize dst_frame) {
    const auto map = rasterize_triangles(dst.points(), tri, dst_frame);
    WarpPlan plan;
    plan.src_frame = src_frame;
    plan.dst_frame = dst_frame;
    plan.mask.assign(map.owner.size(), 0);
    std::vector<char> flipped(tri.triangles.size(), 0);
    for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
        const double as = signed_area(src.points(), tri.triangles[t]);
        const double ad = signed_area(dst.points(), tri.triangles[t]);
        flipped[t] = (as * ad <= 0.0);
        plan.flipped_triangles += flipped[t];
    }
    if (plan.flipped_triangles > 0)
        log_warning(std::to_string(plan.flipped_triangles) +
                    " triangle(s) flip between source and destination; using nearest-neighbour sampling there");
    Eigen::Vector3d bary;
    for (int y = 0; y < dst_frame.height; ++y)
        for (int x = 0; x < dst_frame.width; ++x) {
            const int t = map.at(x, y);
            if (t < 0) continue;
            const auto& T = tri.triangles[t];
            detail::barycentric(Point(x, y), dst.point(T[0]), dst.point(T[1]), dst.point(T[2]), bary);
            const Point s = bary[0] * src.point(T[0]) + bary[1] * src.point(T[1]) + bary[2] * src.point(T[2]);
            const int idx = y * dst_frame.width + x;
            plan.dst_pixel.push_back(idx);
            plan.src_position.push_back(s);
            plan.nearest.push_back(flipped[t]);
            plan.mask[std::size_t(idx)] = 1;
        }
    return plan;
}

namespace detail {

inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-7 ? r : v;
}

}  // namespace detail

/// Applies a plan to a source raster of `plan.src_frame`; pixels outside the
/// region are zero. Out-of-range samples clamp to the border.
inline Image apply_warp(const WarpPlan& plan, const Image& src) {
    if (src.width != plan.src_frame.width || src.height != plan.src_frame.height)
        throw ShapeError("source raster does not match the warp plan");
    Image out(plan.dst_frame.width, plan.dst_frame.height);
    const int w = src.width, h = src.height;
    for (std::size_t k = 0; k < plan.dst_pixel.size(); ++k) {
        const double sx = std::clamp(detail::snap(plan.src_position[k].x()), 0.0, double(w - 1));
        const double sy = std::clamp(detail::snap(plan.src_position[k].y()), 0.0, double(h - 1));
        const Eigen::Index o = Eigen::Index(plan.dst_pixel[k]) * 3;
        if (plan.nearest[k]) {
            const int nx = int(std::lround(sx)), ny = int(std::lround(sy));
            for (int c = 0; c < 3; ++c) out.pixels[o + c] = src.at(nx, ny, c);
            continue;
        }
        const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        for (int c = 0; c < 3; ++c) {
            double v = src.at(x0, y0, c);
            if (fx != 0.0 || fy != 0.0) {
                v = (1 - fx) * (1 - fy) * src.at(x0, y0, c) + fx * (1 - fy) * src.at(x1, y0, c) +
                    (1 - fx) * fy * src.at(x0, y1, c) + fx * fy * src.at(x1, y1, c);
            }
            out.pixels[o + c] = v;
        }
    }
    return out;
}

struct WarpedImage {
    Image image;
    std::vector<char> mask;  // per pixel, inside the destination hull
};

/// Piecewise-affine warp of `image` from landmarks `src` onto `dst`.
inline WarpedImage warp(const Image& image, const Shape& src, const Shape& dst, const Triangulation& tri,
                        FrameSize dst_frame) {
    const auto plan = plan_warp(src, dst, tri, {image.width, image.height}, dst_frame);
    return {apply_warp(plan, image), plan.mask};
}

}  // namespace agepro

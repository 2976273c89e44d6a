#pragma once

// Training of an AgingBundle from labelled faces, and aging / rejuvenation
// of a probe photograph against it.

#include <agepro/bundle.hpp>
#include <agepro/config.hpp>
#include <agepro/dataset.hpp>
#include <agepro/geometry.hpp>
#include <agepro/hfa.hpp>
#include <agepro/image.hpp>
#include <agepro/log.hpp>
#include <agepro/patches.hpp>
#include <agepro/sparse.hpp>

#include <chrono>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace agepro {

struct GenderTrainingLog {
    Gender gender = Gender::male;
    int faces = 0;
    int subjects = 0;
    int sweeps = 0;
    bool converged = false;
    std::vector<double> elbo_history;
};

namespace detail {

inline HfaConfig hfa_config(const PipelineConfig& c) {
    HfaConfig h;
    h.p = c.p;
    h.q = c.q;
    h.max_sweeps = c.max_sweeps;
    h.elbo_rel_tol = c.elbo_rel_tol;
    h.seed = c.seed;
    return h;
}

// Warps a face photograph onto the canonical shape; zero outside the hull.
inline VectorXd canonical_vector(const Image& image, const Shape& shape, const GenderModel& gm, FrameSize frame) {
    const auto plan = plan_warp(shape, gm.canonical_shape, gm.triangulation, {image.width, image.height}, frame);
    return apply_warp(plan, image).pixels;
}

}  // namespace detail

/// One bundle from in-memory samples. Each gender present needs at least
/// two age groups and two subjects.
inline AgingBundle train_bundle(std::span<const FaceSample> samples, const PipelineConfig& config,
                                std::vector<GenderTrainingLog>* logs = nullptr) {
    config.validate();
    if (samples.empty()) throw DataError("no training faces");
    const FrameSize frame = config.frame;
    const int J = config.binning.group_count();
    AgingBundle bundle;
    bundle.config = config;

    std::string problems;
    for (const Gender g : kGenders) {
        std::vector<const FaceSample*> mine;
        for (const auto& s : samples)
            if (s.gender == g) mine.push_back(&s);
        if (mine.empty()) continue;
        std::set<int> groups;
        std::set<std::string> subjects;
        for (const auto* s : mine) {
            if (s->age_group < 0 || s->age_group >= J) throw DataError("age group out of range for the binning");
            groups.insert(s->age_group);
            subjects.insert(s->subject_id);
        }
        if (groups.size() < 2 || subjects.size() < 2) {
            std::string missing;
            for (int j = 0; j < J; ++j)
                if (!groups.count(j)) missing += (missing.empty() ? "" : ",") + std::to_string(j);
            problems += to_string(g) + ": " + std::to_string(groups.size()) + " age group(s), " +
                        std::to_string(subjects.size()) + " subject(s); missing groups [" + missing + "]. ";
        }
    }
    if (!problems.empty()) throw DataError("insufficient training data: " + problems);

    for (const Gender g : kGenders) {
        std::vector<const FaceSample*> mine;
        for (const auto& s : samples)
            if (s.gender == g) mine.push_back(&s);
        if (mine.empty()) continue;

        GenderModel gm;
        std::vector<Shape> shapes;
        for (const auto* s : mine) shapes.push_back(s->shape);
        const MeanShapeOptions mopt{frame, config.frame_margin};
        gm.canonical_shape = mean_shape(shapes, mopt);
        gm.triangulation = triangulate(gm.canonical_shape);

        std::map<std::string, int> subject_index;
        for (const auto* s : mine) subject_index.emplace(s->subject_id, 0);
        int k = 0;
        for (auto& [_, v] : subject_index) v = k++;

        HfaData data;
        const Eigen::Index d = Eigen::Index(frame.width) * frame.height * 3;
        data.faces.resize(d, Eigen::Index(mine.size()));
        for (std::size_t n = 0; n < mine.size(); ++n) {
            const auto* s = mine[n];
            data.faces.col(Eigen::Index(n)) = detail::canonical_vector(to_real(s->pixels), s->shape, gm, frame);
            data.subject.push_back(subject_index.at(s->subject_id));
            data.group.push_back(s->age_group);
        }
        // Dense group labels for the model; bundle indices stay as binned.
        std::map<int, int> dense;
        for (const int j : data.group) dense.emplace(j, 0);
        k = 0;
        for (auto& [_, v] : dense) v = k++;
        for (auto& j : data.group) j = dense.at(j);
        data.subject_count = int(subject_index.size());
        data.group_count = int(dense.size());

        auto [model, state] = train(data, detail::hfa_config(config));
        if (logs)
            logs->push_back({g, int(mine.size()), data.subject_count, state.sweeps, state.converged, state.elbo_history});

        const auto masks = build_region_masks(gm.canonical_shape, gm.triangulation, config.feather_px, frame, config.regions);
        gm.group_means.resize(std::size_t(J));
        gm.age_centroids.resize(std::size_t(J));
        gm.dictionaries.resize(std::size_t(J));
        for (int j = 0; j < J; ++j) {
            std::vector<VectorXd> ages;
            std::vector<Shape> group_shapes;
            for (std::size_t n = 0; n < mine.size(); ++n)
                if (mine[n]->age_group == j) {
                    ages.push_back(age_component(model, data.faces.col(Eigen::Index(n))));
                    group_shapes.push_back(mine[n]->shape);
                }
            if (ages.empty()) continue;
            gm.age_centroids[std::size_t(j)] = mean_face(ages);
            const Shape gmean = mean_shape(group_shapes, mopt);
            gm.group_means[std::size_t(j)] = similarity_align(gmean, gm.canonical_shape).first;
            for (const Region r : kRegions) {
                std::vector<VectorXd> patches;
                for (const auto& a : ages) patches.push_back(extract_patch(a, masks, r));
                gm.dictionaries[std::size_t(j)][std::size_t(r)] = build_dictionary(std::span<const VectorXd>(patches), j, r);
            }
        }
        gm.model = std::move(model);
        bundle.genders[std::size_t(g)] = std::move(gm);
    }
    return bundle;
}

inline AgingBundle train_bundle(const Manifest& manifest, const PipelineConfig& config,
                                std::vector<GenderTrainingLog>* logs = nullptr) {
    std::vector<FaceSample> samples;
    samples.reserve(manifest.entries.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) samples.push_back(load_sample(manifest, i, config.binning));
    return train_bundle(samples, config, logs);
}

// ---------------------------------------------------------------------------
// Aging

struct AgingOptions {
    bool apply_shape_aging = true;
    double feather_px = 3.0;
    double composite_feather_px = 2.0;
    int max_support = 0;  // 0 = ceil(K / 10)
    double lambda_ratio = 0.01;
    double kkt_tol = 1e-8;

    static AgingOptions from(const PipelineConfig& c) {
        return {c.apply_shape_aging, c.feather_px, c.composite_feather_px, c.max_support, c.lambda_ratio, c.kkt_tol};
    }
};

struct AgingRequest {
    Image image;
    Shape landmarks;
    Gender gender = Gender::male;
    int source_group = 0;
    int target_group = 0;
    AgingOptions options;
};

struct RegionDiagnostics {
    Region region = Region::skin;
    int atoms = 0;
    int patch_length = 0;
    int support_size = 0;
    double lambda_final = 0.0;
    double residual_norm = 0.0;
    double kkt_residual = 0.0;
    bool rank_deficient = false;
    double elapsed_ms = 0.0;
};

struct AgingDiagnostics {
    std::vector<RegionDiagnostics> regions;
    int flipped_triangles = 0;
    double elapsed_ms = 0.0;
};

struct AgingResult {
    Image image;              // composited photograph, unclamped
    Shape shape;              // landmarks of the output face
    AgingDiagnostics diagnostics;
};

namespace detail {

// Rebuilds full canonical-frame atoms from per-region dictionaries. Region
// supports overlap only where they hold copies of the same atom values.
inline MatrixXd assemble_atoms(const GenderModel& gm, int group, const RegionMasks& masks) {
    const auto& first = gm.dictionary(group, Region::eyes);
    const Eigen::Index K = first.size();
    MatrixXd atoms = MatrixXd::Zero(Eigen::Index(masks.frame.width) * masks.frame.height * 3, K);
    for (const Region r : kRegions) {
        const auto& dict = gm.dictionary(group, r);
        if (dict.size() != K) throw DataError("dictionaries of one group disagree in atom count");
        const auto& px = masks.pixels(r);
        if (dict.length() != Eigen::Index(px.size()) * 3)
            throw DataError("dictionary length does not match the canonical region; bundle and config disagree");
        for (Eigen::Index j = 0; j < K; ++j) {
            const double s = dict.column_norms[j];
            for (std::size_t i = 0; i < px.size(); ++i)
                atoms.col(j).segment<3>(Eigen::Index(px[i]) * 3) = dict.atoms.col(j).segment<3>(Eigen::Index(i) * 3) * s;
        }
    }
    return atoms;
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Inside a convex CCW polygon: distance to its border; outside: -1.
inline double inside_depth(const Point& p, const std::vector<Point>& hull) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % hull.size()];
        if (orient(a, b, p) < 0.0) return -1.0;
        best = std::min(best, point_segment_distance(p, a, b));
    }
    return best;
}

}  // namespace detail

/// Blends `aged` over `original` inside the convex hull of `hull`: weight 1
/// at depth >= feather_px, linear ramp towards the border, original pixels
/// copied untouched outside.
inline Image composite_into_background(const Image& original, const Image& aged, const Shape& hull, double feather_px) {
    if (!original.same_frame(aged)) throw ShapeError("composite: rasters differ in size");
    if (!(feather_px >= 0.0)) throw ConfigError("feather_px must be non-negative");
    std::vector<Point> pts;
    for (int i = 0; i < kNumLandmarks; ++i) pts.push_back(hull.point(i));
    const auto poly = convex_hull(pts);
    if (poly.size() < 3) throw DegenerateShape("face hull has no area");
    Image out = original;
    for (int y = 0; y < original.height; ++y)
        for (int x = 0; x < original.width; ++x) {
            const double depth = detail::inside_depth(Point(x, y), poly);
            if (depth < 0.0) continue;
            const double w = feather_px > 0.0 ? std::min(1.0, depth / feather_px) : 1.0;
            for (int c = 0; c < 3; ++c) {
                const Eigen::Index i = out.index(x, y, c);
                out.pixels[i] = w == 1.0 ? aged.pixels[i] : original.pixels[i] + w * (aged.pixels[i] - original.pixels[i]);
            }
        }
    return out;
}

/// Texture aging by sparse reconstruction from the target group's age
/// components, then optional shape aging, then compositing into the photo.
inline AgingResult age_face(const AgingBundle& bundle, const AgingRequest& req) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& gm = bundle.gender(req.gender);
    const int J = bundle.binning().group_count();
    const auto& opt = req.options;
    if (req.source_group < 0 || req.source_group >= J || req.target_group < 0 || req.target_group >= J)
        throw RangeError("age group outside the bundle's binning");
    if (!gm.has_group(req.target_group))
        throw DataError("bundle has no " + to_string(req.gender) + " dictionaries for group " +
                        std::to_string(req.target_group));
    if (opt.apply_shape_aging &&
        (!gm.group_means[std::size_t(req.source_group)] || !gm.group_means[std::size_t(req.target_group)]))
        throw DataError("bundle lacks the group mean shapes needed for shape aging");
    check_in_bounds(req.landmarks, req.image.width, req.image.height);

    const FrameSize canon = bundle.frame();
    const FrameSize photo{req.image.width, req.image.height};
    const auto& model = gm.model;
    AgingResult result;

    // Identity component in the canonical frame, mapped back to the probe shape.
    const auto plan_in = plan_warp(req.landmarks, gm.canonical_shape, gm.triangulation, photo, canon);
    const VectorXd f_can = apply_warp(plan_in, req.image).pixels;
    const VectorXd ux_can = project_identity(model, f_can);
    const auto plan_out = plan_warp(gm.canonical_shape, req.landmarks, gm.triangulation, canon, photo);
    result.diagnostics.flipped_triangles = plan_in.flipped_triangles;
    const VectorXd m_w = apply_warp(plan_out, Image(canon.width, canon.height, model.mean())).pixels;
    const VectorXd ux_w = apply_warp(plan_out, Image(canon.width, canon.height, ux_can)).pixels;

    // The probe's age component, computed in its own shape.
    VectorXd age = VectorXd::Zero(req.image.size());
    for (const int px : plan_out.dst_pixel) {
        const Eigen::Index o = Eigen::Index(px) * 3;
        age.segment<3>(o) = req.image.pixels.segment<3>(o) - m_w.segment<3>(o) - ux_w.segment<3>(o);
    }

    // Target atoms warped whole to the probe shape, then split by region.
    const auto canon_masks = build_region_masks(gm.canonical_shape, gm.triangulation, bundle.config.feather_px, canon,
                                                bundle.config.regions);
    const MatrixXd atoms = detail::assemble_atoms(gm, req.target_group, canon_masks);
    const auto masks = build_region_masks(req.landmarks, gm.triangulation, opt.feather_px, photo, bundle.config.regions);
    std::vector<VectorXd> warped(std::size_t(atoms.cols()));
    for (Eigen::Index j = 0; j < atoms.cols(); ++j)
        warped[std::size_t(j)] = apply_warp(plan_out, Image(canon.width, canon.height, atoms.col(j))).pixels;

    std::vector<RegionPatch> recon;
    for (const Region r : kRegions) {
        const auto tr = std::chrono::steady_clock::now();
        RegionDiagnostics rd;
        rd.region = r;
        const Eigen::Index n = masks.patch_size(r);
        rd.patch_length = int(n);
        if (n == 0) {
            result.diagnostics.regions.push_back(rd);
            continue;
        }
        const VectorXd y = extract_patch(age, masks, r);
        std::vector<VectorXd> cols;
        for (const auto& a : warped) {
            VectorXd c = extract_patch(a, masks, r);
            if (c.norm() > 0.0) cols.push_back(std::move(c));
        }
        if (cols.empty()) throw DataError("every " + to_string(r) + " atom vanishes on the probe region");
        if (cols.size() < warped.size())
            log_warning(std::to_string(warped.size() - cols.size()) + " " + to_string(r) +
                        " atom(s) vanish on the probe region and are skipped");
        const auto dict = build_dictionary(std::span<const VectorXd>(cols), req.target_group, r);
        SolverStop stop = SolverStop::defaults_for(dict.size());
        if (opt.max_support > 0) stop.max_support = std::min(opt.max_support, dict.size());
        stop.lambda_ratio = opt.lambda_ratio;
        stop.kkt_tol = opt.kkt_tol;
        const auto code = homotopy_solve(dict, y, stop);
        VectorXd rec = reconstruct(dict, code);
        rd.atoms = dict.size();
        rd.support_size = code.support_size;
        rd.lambda_final = code.lambda_final;
        rd.residual_norm = (y - rec).norm();
        rd.kkt_residual = code.kkt_residual;
        rd.rank_deficient = code.rank_deficient;
        rd.elapsed_ms = detail::ms_since(tr);
        result.diagnostics.regions.push_back(rd);
        recon.push_back({r, std::move(rec)});
    }
    const VectorXd aged_age = insert_patches(VectorXd::Zero(age.size()), masks, recon);

    // Aged texture on the probe hull, the photograph elsewhere.
    Image texture = req.image;
    for (const int px : plan_out.dst_pixel) {
        const Eigen::Index o = Eigen::Index(px) * 3;
        texture.pixels.segment<3>(o) = m_w.segment<3>(o) + ux_w.segment<3>(o) + aged_age.segment<3>(o);
    }

    Shape final_shape = req.landmarks;
    if (opt.apply_shape_aging) {
        final_shape = shape_age(req.landmarks, *gm.group_means[std::size_t(req.source_group)],
                                *gm.group_means[std::size_t(req.target_group)]);
        if (!(final_shape == req.landmarks)) {
            const auto moved = warp(texture, req.landmarks, final_shape, gm.triangulation, photo);
            Image shaped = req.image;
            for (std::size_t k = 0; k < moved.mask.size(); ++k)
                if (moved.mask[k]) shaped.pixels.segment<3>(Eigen::Index(k) * 3) = moved.image.pixels.segment<3>(Eigen::Index(k) * 3);
            texture = std::move(shaped);
        }
    }
    result.image = composite_into_background(req.image, texture, final_shape, opt.composite_feather_px);
    result.shape = final_shape;
    result.diagnostics.elapsed_ms = detail::ms_since(t0);
    return result;
}

/// Same machinery with a younger target group.
inline AgingResult rejuvenate_face(const AgingBundle& bundle, const AgingRequest& req) { return age_face(bundle, req); }

/// A photograph warped onto the canonical shape of its gender.
inline VectorXd to_canonical(const AgingBundle& bundle, Gender g, const Image& image, const Shape& shape) {
    return detail::canonical_vector(image, shape, bundle.gender(g), bundle.frame());
}

}  // namespace agepro

#pragma once

// Synthetic data with known ground truth, and evaluation proxies: subspace
// principal angles, identity preservation and nearest-centroid age group.

#include <agepro/bundle.hpp>
#include <agepro/config.hpp>
#include <agepro/dataset.hpp>
#include <agepro/geometry.hpp>
#include <agepro/hfa.hpp>
#include <agepro/image.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace agepro {

// ---------------------------------------------------------------------------
// Vector mode

struct SynthConfig {
    int d = 200;
    int p = 3;
    int q = 4;
    int num_identities = 40;
    int num_groups = 7;
    int images_per_cell = 1;
    double sigma = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        if (d <= 0 || p <= 0 || q <= 0 || num_identities <= 0 || num_groups <= 0 || images_per_cell <= 0)
            throw ConfigError("synthetic dimensions and counts must be positive");
        if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
    }
};

struct GroundTruth {
    VectorXd mean;
    MatrixXd U;
    MatrixXd V;
    double sigma2 = 0.0;
    MatrixXd x;  // p x identities
    MatrixXd y;  // q x groups
};

struct SyntheticSet {
    std::map<std::pair<int, int>, std::vector<VectorXd>> cells;  // (identity, group) -> faces
    GroundTruth truth;
};

namespace detail {

inline MatrixXd gaussian_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal;
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal(rng);
    return m;
}

}  // namespace detail

/// Draws m, U, V with standard normal entries, x_i and y_j from N(0, I),
/// and emits f = m + U x_i + V y_j + eps for every cell.
inline SyntheticSet generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    SyntheticSet out;
    auto& t = out.truth;
    t.mean = detail::gaussian_matrix(cfg.d, 1, rng);
    t.U = detail::gaussian_matrix(cfg.d, cfg.p, rng);
    t.V = detail::gaussian_matrix(cfg.d, cfg.q, rng);
    t.sigma2 = cfg.sigma * cfg.sigma;
    t.x = detail::gaussian_matrix(cfg.p, cfg.num_identities, rng);
    t.y = detail::gaussian_matrix(cfg.q, cfg.num_groups, rng);
    for (int i = 0; i < cfg.num_identities; ++i)
        for (int j = 0; j < cfg.num_groups; ++j) {
            auto& cell = out.cells[{i, j}];
            for (int k = 0; k < cfg.images_per_cell; ++k) {
                VectorXd f = t.mean + t.U * t.x.col(i) + t.V * t.y.col(j);
                if (cfg.sigma > 0.0) f += detail::gaussian_matrix(cfg.d, 1, rng, cfg.sigma);
                cell.push_back(std::move(f));
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Raster mode

/// Image-shaped synthesis. Each face is m + U x + V y + P_type + eps on the
/// template hull, with smooth random textures for every basis image.
/// Identities come in blocks of J (the group count); each block owns J type
/// prototypes forming a centred simplex, and identity i wears prototype
/// (i + j) mod J of its block in group j. Every identity therefore cycles
/// through its block once and its types sum to zero, so types belong to
/// neither the identity nor the age factor, and no two faces of one group
/// share a type. Group codes follow a trajectory: y_j is a drift along the
/// first age direction plus a small random part.
struct RasterSynthConfig {
    FrameSize frame{32, 32};
    double margin = 0.08;
    AgeBinning binning{};
    std::vector<Gender> genders{Gender::male, Gender::female};
    int identities = 15;      // per gender, each photographed in every group
    int images_per_cell = 1;
    int p = 3;
    int q = 6;
    int texture_grid = 5;     // control points per side of the smooth noise
    int type_grid = 12;       // finer, so types stay apart inside small regions
    double mean_amp = 0.05;
    double identity_amp = 0.05;
    double age_amp = 0.0125;
    double type_amp = 0.1;
    double age_drift = 1.5;   // group code drift along the first age direction, youngest -drift to oldest +drift
    double age_spread = 0.1;  // scale of the random part of the group codes
    double sigma = 0.005;
    double shape_delta_px = 0.0;   // per-group landmark displacement scale
    double shape_jitter_px = 0.0;  // per-face landmark noise
    std::uint64_t seed = 0;

    void validate() const {
        if (frame.width < 16 || frame.height < 16) throw ConfigError("synthetic frame must be at least 16x16");
        if (identities < 2 || images_per_cell < 1 || p < 1 || q < 1 || texture_grid < 2 || type_grid < 2)
            throw ConfigError("synthetic counts out of range");
        if (genders.empty()) throw ConfigError("no genders to synthesise");
        if (!(sigma >= 0.0 && shape_delta_px >= 0.0 && shape_jitter_px >= 0.0)) throw ConfigError("negative noise level");
    }
};

struct RasterTruth {
    GroundTruth model;           // canonical-frame texture model
    MatrixXd prototypes;         // d x (blocks * J); column = type index
    std::vector<Shape> group_shapes;
};

struct RasterFace {
    FaceSample sample;
    int age = 0;
    int identity = 0;
    int type = 0;
};

struct RasterSet {
    RasterSynthConfig config;
    Shape base_shape;  // template fitted to the frame
    std::array<std::optional<RasterTruth>, 2> truth;
    std::vector<RasterFace> faces;
};

/// 68-point frontal template in the 68-point annotation order, fitted to
/// the frame. A small fixed asymmetry keeps the Delaunay triangulation free
/// of cocircular ties.
inline Shape template_shape(FrameSize frame, double margin = 0.05) {
    Points p(kNumLandmarks, 2);
    const double pi = std::numbers::pi;
    auto set = [&](int i, double x, double y) { p.row(i) << x, y; };
    for (int i = 0; i <= 16; ++i) {  // jaw, ear to ear via the chin
        const double t = pi - pi * i / 16.0;
        set(i, 0.5 + 0.42 * std::cos(t), 0.45 + 0.5 * std::sin(t));
    }
    for (int i = 0; i < 5; ++i) {  // brows
        const double u = i / 4.0;
        set(17 + i, 0.18 + 0.22 * u, 0.30 - 0.05 * std::sin(pi * u));
        set(22 + i, 0.60 + 0.22 * u, 0.30 - 0.05 * std::sin(pi * u));
    }
    for (int i = 0; i < 4; ++i) set(27 + i, 0.5, 0.40 + 0.06 * i);  // nose bridge
    for (int i = 0; i < 5; ++i) set(31 + i, 0.42 + 0.04 * i, 0.60 + 0.02 * std::sin(pi * i / 4.0));
    for (int e = 0; e < 2; ++e) {  // eyes
        const double cx = e == 0 ? 0.30 : 0.70;
        for (int i = 0; i < 6; ++i) {
            const double t = pi + 2.0 * pi * i / 6.0;
            set(36 + 6 * e + i, cx + 0.08 * std::cos(t), 0.40 + 0.035 * std::sin(t));
        }
    }
    for (int i = 0; i < 12; ++i) {  // outer lip
        const double t = pi + 2.0 * pi * i / 12.0;
        set(48 + i, 0.5 + 0.15 * std::cos(t), 0.75 + 0.07 * std::sin(t));
    }
    for (int i = 0; i < 8; ++i) {  // inner lip
        const double t = pi + 2.0 * pi * i / 8.0;
        set(60 + i, 0.5 + 0.09 * std::cos(t), 0.75 + 0.03 * std::sin(t));
    }
    for (int i = 0; i < kNumLandmarks; ++i) p.row(i) += 0.003 * Eigen::RowVector2d(std::sin(1.7 * i), std::cos(2.3 * i));
    return Shape(fit_to_frame(p * 100.0, frame, margin));
}

namespace detail {

// Smooth noise: a coarse Gaussian grid per channel, bilinearly upsampled.
inline VectorXd smooth_noise(FrameSize frame, int grid, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> g(std::size_t(grid) * grid * 3);
    for (auto& v : g) v = normal(rng);
    VectorXd out(Eigen::Index(frame.width) * frame.height * 3);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const double gx = double(x) * (grid - 1) / (frame.width - 1), gy = double(y) * (grid - 1) / (frame.height - 1);
            const int x0 = std::min(int(gx), grid - 2), y0 = std::min(int(gy), grid - 2);
            const double fx = gx - x0, fy = gy - y0;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int i, int j) { return g[(std::size_t(j) * grid + i) * 3 + c]; };
                out[(Eigen::Index(y) * frame.width + x) * 3 + c] =
                    (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
                    fx * fy * at(x0 + 1, y0 + 1);
            }
        }
    return out;
}

// Restricted to the hull and scaled to the given RMS over hull entries.
inline VectorXd hull_texture(const std::vector<char>& hull, FrameSize frame, int grid, double rms, std::mt19937_64& rng) {
    VectorXd v = smooth_noise(frame, grid, rng);
    double ss = 0.0;
    Eigen::Index n = 0;
    for (std::size_t k = 0; k < hull.size(); ++k) {
        if (!hull[k]) {
            v.segment<3>(Eigen::Index(k) * 3).setZero();
            continue;
        }
        ss += v.segment<3>(Eigen::Index(k) * 3).squaredNorm();
        n += 3;
    }
    return n > 0 && ss > 0.0 ? VectorXd(v * (rms / std::sqrt(ss / double(n)))) : v;
}

// Non-similarity displacement pattern for the per-group shape change:
// jaw widens, mouth drops, brows lower, scaled by `t`.
inline Points group_displacement(const Shape& base, double t) {
    Points d = Points::Zero(kNumLandmarks, 2);
    const Eigen::RowVector2d c = base.points().colwise().mean();
    const double half_w = 0.5 * (base.points().col(0).maxCoeff() - base.points().col(0).minCoeff());
    for (int i = 0; i <= 16; ++i) {
        const double rel = (base.points()(i, 0) - c(0)) / half_w;
        d.row(i) << t * rel, 0.5 * t * (1.0 - std::abs(rel));
    }
    for (int i = 17; i <= 26; ++i) d(i, 1) = 0.4 * t;
    for (int i = 48; i <= 67; ++i) d(i, 1) = 0.6 * t;
    for (int i = 31; i <= 35; ++i) d(i, 1) = 0.3 * t;
    return d;
}

}  // namespace detail

/// Faces for every (gender, identity, group, image). Ages sit at the middle
/// of each group's interval. Deterministic per seed.
inline RasterSet generate_raster(const RasterSynthConfig& cfg) {
    cfg.validate();
    RasterSet set;
    set.config = cfg;
    set.base_shape = template_shape(cfg.frame, cfg.margin);
    const auto tri = triangulate(set.base_shape);
    const auto map = rasterize_triangles(set.base_shape.points(), tri, cfg.frame);
    std::vector<char> hull(map.owner.size());
    for (std::size_t k = 0; k < hull.size(); ++k) hull[k] = map.owner[k] >= 0;
    const int J = cfg.binning.group_count();
    const Eigen::Index d = Eigen::Index(cfg.frame.width) * cfg.frame.height * 3;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal;

    for (const Gender g : cfg.genders) {
        RasterTruth truth;
        auto& gt = truth.model;
        gt.mean = detail::hull_texture(hull, cfg.frame, cfg.texture_grid, cfg.mean_amp, rng);
        for (std::size_t k = 0; k < hull.size(); ++k)
            if (hull[k]) gt.mean.segment<3>(Eigen::Index(k) * 3).array() += 0.5;
        gt.U.resize(d, cfg.p);
        gt.V.resize(d, cfg.q);
        for (int j = 0; j < cfg.p; ++j) gt.U.col(j) = detail::hull_texture(hull, cfg.frame, cfg.texture_grid, cfg.identity_amp, rng);
        for (int j = 0; j < cfg.q; ++j) gt.V.col(j) = detail::hull_texture(hull, cfg.frame, cfg.texture_grid, cfg.age_amp, rng);
        gt.sigma2 = cfg.sigma * cfg.sigma;
        gt.x = detail::gaussian_matrix(cfg.p, cfg.identities, rng);
        gt.y = detail::gaussian_matrix(cfg.q, J, rng, cfg.age_spread);
        for (int j = 0; j < J && J > 1; ++j) gt.y(0, j) += cfg.age_drift * (2.0 * j / (J - 1) - 1.0);

        // Type prototypes: orthonormal directions away from the identity and
        // age bases, centred per block.
        const int blocks = (cfg.identities + J - 1) / J, types = blocks * J;
        MatrixXd basis(d, cfg.p + cfg.q + types);
        basis.leftCols(cfg.p + cfg.q) << gt.U, gt.V;
        for (int k = 0; k < types; ++k)
            basis.col(cfg.p + cfg.q + k) = detail::hull_texture(hull, cfg.frame, cfg.type_grid, 1.0, rng);
        const MatrixXd Q = basis.householderQr().householderQ() * MatrixXd::Identity(d, basis.cols());
        const double entries = 3.0 * double(std::count(hull.begin(), hull.end(), char(1)));
        truth.prototypes = Q.rightCols(types);
        for (int b = 0; b < blocks; ++b) {
            auto block = truth.prototypes.middleCols(Eigen::Index(b) * J, J);
            block.colwise() -= VectorXd(block.rowwise().mean());
        }
        if (J > 1) truth.prototypes *= cfg.type_amp * std::sqrt(entries / (1.0 - 1.0 / J));

        for (int j = 0; j < J; ++j) {
            const double t = J > 1 ? (double(j) - 0.5 * (J - 1)) / (0.5 * (J - 1)) : 0.0;
            truth.group_shapes.emplace_back(set.base_shape.points() + cfg.shape_delta_px * detail::group_displacement(set.base_shape, t));
        }

        for (int i = 0; i < cfg.identities; ++i)
            for (int j = 0; j < J; ++j)
                for (int k = 0; k < cfg.images_per_cell; ++k) {
                    RasterFace face;
                    face.identity = i;
                    face.type = (i / J) * J + (i + j + k) % J;
                    const auto& iv = cfg.binning.intervals()[std::size_t(j)];
                    face.age = (iv.begin + iv.end - 1) / 2;

                    VectorXd f = gt.mean + gt.U * gt.x.col(i) + gt.V * gt.y.col(j) + truth.prototypes.col(face.type);
                    Points pts = truth.group_shapes[std::size_t(j)].points();
                    if (cfg.shape_jitter_px > 0.0)
                        for (Eigen::Index r = 0; r < pts.rows(); ++r)
                            for (int c = 0; c < 2; ++c) pts(r, c) += cfg.shape_jitter_px * normal(rng);
                    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
                        pts(r, 0) = std::clamp(pts(r, 0), 0.0, cfg.frame.width - 1.0);
                        pts(r, 1) = std::clamp(pts(r, 1), 0.0, cfg.frame.height - 1.0);
                    }
                    const Shape shape(pts);
                    if (cfg.sigma > 0.0)
                        for (std::size_t px = 0; px < hull.size(); ++px)
                            if (hull[px])
                                for (int c = 0; c < 3; ++c) f[Eigen::Index(px) * 3 + c] += cfg.sigma * normal(rng);

                    Image photo(cfg.frame.width, cfg.frame.height,
                                (0.3 + 0.08 * detail::smooth_noise(cfg.frame, cfg.texture_grid, rng).array()).matrix());
                    const auto placed = warp(Image(cfg.frame.width, cfg.frame.height, f), set.base_shape, shape, tri, cfg.frame);
                    for (std::size_t px = 0; px < placed.mask.size(); ++px)
                        if (placed.mask[px])
                            photo.pixels.segment<3>(Eigen::Index(px) * 3) = placed.image.pixels.segment<3>(Eigen::Index(px) * 3);

                    face.sample.pixels = to_rgb8(photo);
                    face.sample.shape = shape;
                    face.sample.age_group = j;
                    face.sample.gender = g;
                    face.sample.subject_id = to_string(g).substr(0, 1) + std::to_string(i);
                    set.faces.push_back(std::move(face));
                }
        set.truth[std::size_t(g)] = std::move(truth);
    }
    return set;
}

inline std::vector<FaceSample> samples_of(const RasterSet& set) {
    std::vector<FaceSample> out;
    out.reserve(set.faces.size());
    for (const auto& f : set.faces) out.push_back(f.sample);
    return out;
}

/// Writes images, landmark files and manifest.csv under `dir`. Images are
/// binary PPM unless `extension` says otherwise.
inline Manifest write_raster_set(const RasterSet& set, const std::filesystem::path& dir,
                                 const std::string& extension = ".ppm") {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "landmarks");
    std::vector<ManifestEntry> entries;
    std::map<std::string, int> counter;
    for (const auto& f : set.faces) {
        const auto& s = f.sample;
        const std::string stem = s.subject_id + "_g" + std::to_string(s.age_group) + "_" +
                                 std::to_string(counter[s.subject_id + "_" + std::to_string(s.age_group)]++);
        const std::string img = "images/" + stem + extension;
        const std::string pts = "landmarks/" + stem + ".pts";
        write_image(dir / img, s.pixels);
        save_landmarks(dir / pts, s.shape);
        entries.push_back({s.subject_id, f.age, s.gender, img, pts});
    }
    save_manifest(dir / "manifest.csv", entries);
    return {dir, entries};
}

namespace detail {

inline RasterSynthConfig parse_raster_config(std::string_view text) {
    RasterSynthConfig c;
    std::istringstream in{std::string(text)};
    std::size_t line_no = 0;
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        auto line = std::string_view(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        const auto v = trim(line.substr(eq + 1));
        if (key == "frame_width") c.frame.width = parse_number<int>(key, v);
        else if (key == "frame_height") c.frame.height = parse_number<int>(key, v);
        else if (key == "margin") c.margin = parse_number<double>(key, v);
        else if (key == "age_bins") c.binning = parse_binning(v);
        else if (key == "genders") {
            c.genders.clear();
            for (const auto g : split(v, ',')) c.genders.push_back(parse_gender(g));
        } else if (key == "identities") c.identities = parse_number<int>(key, v);
        else if (key == "images_per_cell") c.images_per_cell = parse_number<int>(key, v);
        else if (key == "p") c.p = parse_number<int>(key, v);
        else if (key == "q") c.q = parse_number<int>(key, v);
        else if (key == "texture_grid") c.texture_grid = parse_number<int>(key, v);
        else if (key == "type_grid") c.type_grid = parse_number<int>(key, v);
        else if (key == "age_drift") c.age_drift = parse_number<double>(key, v);
        else if (key == "age_spread") c.age_spread = parse_number<double>(key, v);
        else if (key == "mean_amp") c.mean_amp = parse_number<double>(key, v);
        else if (key == "identity_amp") c.identity_amp = parse_number<double>(key, v);
        else if (key == "age_amp") c.age_amp = parse_number<double>(key, v);
        else if (key == "type_amp") c.type_amp = parse_number<double>(key, v);
        else if (key == "sigma") c.sigma = parse_number<double>(key, v);
        else if (key == "shape_delta_px") c.shape_delta_px = parse_number<double>(key, v);
        else if (key == "shape_jitter_px") c.shape_jitter_px = parse_number<double>(key, v);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
        else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

}  // namespace detail

inline RasterSynthConfig load_raster_config(const std::filesystem::path& path) {
    return detail::parse_raster_config(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// Proxies

/// Principal angles between column spaces, ascending, in [0, pi/2]. Small
/// angles come from sines and large ones from cosines for accuracy.
inline std::vector<double> principal_angles(const MatrixXd& A, const MatrixXd& B) {
    if (A.rows() != B.rows()) throw ShapeError("subspaces live in different ambient dimensions");
    if (A.cols() == 0 || B.cols() == 0) throw DegenerateInput("empty subspace basis");
    auto orth = [](const MatrixXd& M) {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
        qr.setThreshold(1e-10);
        if (qr.rank() < M.cols()) throw DegenerateInput("subspace basis is rank deficient");
        return MatrixXd(qr.householderQ() * MatrixXd::Identity(M.rows(), M.cols()));
    };
    MatrixXd Qa = orth(A), Qb = orth(B);
    if (Qb.cols() > Qa.cols()) std::swap(Qa, Qb);
    const MatrixXd C = Qa.transpose() * Qb;
    const VectorXd cosv = Eigen::JacobiSVD<MatrixXd>(C).singularValues();  // descending
    VectorXd sinv = Eigen::JacobiSVD<MatrixXd>(Qb - Qa * C).singularValues();
    std::sort(sinv.data(), sinv.data() + sinv.size());
    const Eigen::Index k = Qb.cols();
    std::vector<double> out(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        const double s = std::asin(std::clamp(sinv[i], 0.0, 1.0));
        out[std::size_t(i)] = s < std::numbers::pi / 4 ? s : std::acos(std::clamp(cosv[i], 0.0, 1.0));
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Cosine similarity of the identity components; 0 if either vanishes.
inline double identity_preservation_score(const HfaModel& model, const VectorXd& before, const VectorXd& after) {
    model.check(before);
    model.check(after);
    const VectorXd a = project_identity(model, before), b = project_identity(model, after);
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Group whose training age-component centroid is nearest to the face's
/// age component; the lowest index wins ties.
inline int age_group_proxy(const AgingBundle& bundle, const VectorXd& face, Gender gender) {
    const auto& gm = bundle.gender(gender);
    gm.model.check(face);
    const VectorXd a = age_component(gm.model, face);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gm.age_centroids.size(); ++j) {
        if (!gm.age_centroids[j]) continue;
        const double dist = (a - *gm.age_centroids[j]).squaredNorm();
        if (dist < best_d) {
            best_d = dist;
            best = int(j);
        }
    }
    if (best < 0) throw DataError("bundle has no age centroids for gender " + to_string(gender));
    return best;
}

}  // namespace agepro

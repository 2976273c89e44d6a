// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "oracles.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace agepro;
using agepro::testing::random_matrix;
using agepro::testing::random_vector;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int id, const char* title, Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "):" << o.detail.str() << '\n';
    std::cout.flush();
    failures += !o.pass;
}

template <class F>
void run_criterion(int id, const char* title, F body) {
    Outcome o;
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    report(id, title, o);
}

double deg(double r) { return r * 180.0 / std::numbers::pi; }

// The 210-face raster set, its bundle and the probes shared by 5 to 8.
struct Desk {
    RasterSynthConfig sc = agepro::testing::desk_raster_config(7);
    RasterSet set;
    PipelineConfig pc;
    AgingBundle bundle;
    double train_seconds = 0.0;
    std::vector<const FaceSample*> probes;  // 50 faces from groups 0-2
};

Desk& desk() {
    static Desk d = [] {
        Desk d;
        d.set = generate_raster(d.sc);
        d.pc = agepro::testing::pipeline_config_for(d.sc);
        const agepro::testing::TempDir dir("acceptance");
        const auto manifest = write_raster_set(d.set, dir.path());
        const auto t0 = Clock::now();
        d.bundle = train_bundle(load_manifest(dir / "manifest.csv"), d.pc);
        d.train_seconds = seconds_since(t0);
        for (const auto& f : d.set.faces)
            if (f.sample.age_group <= 2 && d.probes.size() < 50) d.probes.push_back(&f.sample);
        return d;
    }();
    return d;
}

std::vector<char> outside_convex_hull(const Shape& s, FrameSize f) {
    std::vector<Point> pts;
    for (int i = 0; i < kNumLandmarks; ++i) pts.push_back(s.point(i));
    const auto poly = convex_hull(pts);
    std::vector<char> out(std::size_t(f.width) * f.height, 0);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            for (std::size_t i = 0; i < poly.size(); ++i)
                if (detail::orient(poly[i], poly[(i + 1) % poly.size()], Point(x, y)) < 0.0)
                    out[std::size_t(y) * f.width + x] = 1;
    return out;
}

}  // namespace

int main() {
    std::cout.setf(std::ios::fmtflags(0), std::ios::floatfield);

    run_criterion(1, "HFA recovers the generating subspaces", [](Outcome& o) {
        SynthConfig sc;  // d=200, p=3, q=4, 40 identities x 7 groups, sigma=0.05
        sc.seed = 42;
        const auto set = generate_synthetic(sc);
        HfaConfig cfg;
        cfg.p = sc.p;
        cfg.q = sc.q;
        cfg.seed = 1;
        const auto t0 = Clock::now();
        const auto [model, state] = train(HfaData::from_grouped(set.cells), cfg);
        const double secs = seconds_since(t0);
        const double au = deg(principal_angles(model.U(), set.truth.U).back());
        const double av = deg(principal_angles(model.V(), set.truth.V).back());
        double worst_drop = 0.0;
        for (std::size_t i = 1; i < state.elbo_history.size(); ++i)
            worst_drop = std::max(worst_drop, state.elbo_history[i - 1] - state.elbo_history[i]);
        o.detail << " max angle U " << au << " deg, V " << av << " deg; " << state.sweeps
                 << " sweeps, largest ELBO decrease " << worst_drop << "; " << secs << " s";
        o.require(au <= 10.0 && av <= 10.0, "angle <= 10 deg");
        o.require(worst_drop <= 1e-8, "ELBO non-decreasing within 1e-8");
        o.require(secs <= 60.0, "runtime <= 60 s");
    });

    run_criterion(2, "projection identity and dense-inverse agreement", [](Outcome& o) {
        std::mt19937_64 rng(2);
        double worst_sum = 0.0, worst_dense = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const int d = 5 + trial % 96, p = 1 + trial % 5, q = 1 + (trial * 3) % 7;
            const HfaModel model(random_vector(d, rng), random_matrix(d, p, rng), random_matrix(d, q, rng),
                                 0.01 + 0.05 * (trial % 9));
            const VectorXd f = random_vector(d, rng, 2.0);
            const VectorXd z = f - model.mean();
            const auto parts = decompose(model, f);
            worst_sum = std::max(worst_sum, (parts.identity + parts.age + parts.residual - z).norm() / z.norm());
            const MatrixXd S = model.sigma2() * MatrixXd::Identity(d, d) + model.U() * model.U().transpose() +
                               model.V() * model.V().transpose();
            const VectorXd sz = S.inverse() * z;
            const VectorXd id_ref = model.U() * (model.U().transpose() * sz);
            const VectorXd age_ref = model.V() * (model.V().transpose() * sz);
            worst_dense = std::max({worst_dense, (project_identity(model, f) - id_ref).norm() / std::max(1.0, id_ref.norm()),
                                    (project_age(model, f) - age_ref).norm() / std::max(1.0, age_ref.norm())});
        }
        o.detail << " worst relative sum error " << worst_sum << ", worst Woodbury vs dense " << worst_dense;
        o.require(worst_sum <= 1e-9, "sum identity to 1e-9");
        o.require(worst_dense <= 1e-10, "dense oracle to 1e-10");
    });

    run_criterion(3, "homotopy solver exactness", [](Outcome& o) {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> ratio(0.0, 0.8);
        double worst_enum = 0.0, worst_soft = 0.0, worst_kkt = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            const auto dict = build_dictionary(random_matrix(8, 5, rng), 0, Region::skin);
            const VectorXd y = random_vector(8, rng);
            const auto code = homotopy_solve(dict, y, {5, ratio(rng), 1e-8});
            const VectorXd ref = agepro::testing::lasso_by_enumeration(dict.atoms, y, code.lambda_final);
            worst_enum = std::max(worst_enum, (code.coefficients - ref).cwiseAbs().maxCoeff());
            worst_kkt = std::max(worst_kkt, code.kkt_residual);
        }
        for (int trial = 0; trial < 50; ++trial) {
            const int n = 8 + trial % 8, K = 2 + trial % 6;
            const MatrixXd Q = random_matrix(n, K, rng).householderQr().householderQ() * MatrixXd::Identity(n, K);
            const auto dict = build_dictionary(Q, 0, Region::skin);
            const VectorXd y = random_vector(n, rng);
            const auto code = homotopy_solve(dict, y, {K, ratio(rng), 1e-8});
            const VectorXd ref = agepro::testing::soft_threshold(Q.transpose() * y, code.lambda_final);
            worst_soft = std::max(worst_soft, (code.coefficients - ref).cwiseAbs().maxCoeff());
            worst_kkt = std::max(worst_kkt, code.kkt_residual);
        }
        o.detail << " enumeration oracle " << worst_enum << ", soft threshold " << worst_soft << ", KKT " << worst_kkt;
        o.require(worst_enum <= 1e-8, "enumeration oracle to 1e-8");
        o.require(worst_soft <= 1e-10, "soft thresholding to 1e-10");
        o.require(worst_kkt <= 1e-8, "KKT <= 1e-8");
    });

    run_criterion(4, "warp and geometry", [](Outcome& o) {
        const FrameSize f{100, 100};
        const Shape a = template_shape(f, 0.05);
        const auto tri = triangulate(a);
        std::mt19937_64 rng(4);
        Image img(f.width, f.height);
        for (int y = 0; y < f.height; ++y)
            for (int x = 0; x < f.width; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.1 + 0.008 * x * (c + 1) / 3.0 + 0.005 * y;
        const auto same = warp(img, a, a, tri, f);
        bool exact = true;
        for (std::size_t k = 0; k < same.mask.size(); ++k)
            if (same.mask[k])
                exact = exact && same.image.pixels.segment<3>(Eigen::Index(k) * 3) == img.pixels.segment<3>(Eigen::Index(k) * 3);
        const Shape b(a.points() + random_matrix(kNumLandmarks, 2, rng, 0.8));
        const auto back = warp(warp(img, a, b, tri, f).image, b, a, tri, f);
        double se = 0.0;
        int n = 0;
        const auto depth = hull_distance(a.points(), tri, rasterize_triangles(a.points(), tri, f));
        for (std::size_t k = 0; k < back.mask.size(); ++k)
            if (back.mask[k] && depth[k] >= 2.0) {
                se += (back.image.pixels.segment<3>(Eigen::Index(k) * 3) - img.pixels.segment<3>(Eigen::Index(k) * 3)).squaredNorm();
                n += 3;
            }
        const double psnr = 10.0 * std::log10(1.0 / (se / n));
        const Shape m(a.points() * 0.7);
        const bool shape_fixed = shape_age(b, m, m) == b;
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<Shape> shapes;
        for (int i = 0; i < 150; ++i) {
            SimilarityTransform t;
            t.scale = 1.0 + 0.3 * u(rng);
            t.rotation = 0.2 * u(rng);
            t.translation = Point(10 * u(rng), 10 * u(rng));
            shapes.emplace_back(t.apply(Points(a.points() + random_matrix(kNumLandmarks, 2, rng, 0.5))));
        }
        const Shape mean = mean_shape(shapes);
        const Points aligned = fit_similarity(mean.points(), a.points()).apply(mean.points());
        const double rms = std::sqrt((aligned - a.points()).rowwise().squaredNorm().mean());
        o.detail << " identity warp " << (exact ? "exact" : "inexact") << ", interior round-trip PSNR " << psnr
                 << " dB, shape_age(S,M,M)==S " << (shape_fixed ? "yes" : "no") << ", mean-shape RMS " << rms << " px";
        o.require(exact, "identity warp exact");
        o.require(psnr >= 35.0, "PSNR >= 35 dB");
        o.require(shape_fixed, "shape_age fixed point");
        o.require(rms <= 0.15, "mean shape within 0.15 px");
    });

    run_criterion(5, "pipeline self-reconstruction", [](Outcome& o) {
        auto& d = desk();
        double worst = 0.0;
        bool background = true;
        for (const auto& face : d.set.faces) {
            auto req = agepro::testing::request_for(face.sample, face.sample.age_group, d.pc);
            req.options.apply_shape_aging = false;
            req.options.lambda_ratio = 0.0;
            req.options.max_support = 1000;
            const auto res = age_face(d.bundle, req);
            const auto outside = outside_convex_hull(face.sample.shape, d.sc.frame);
            for (std::size_t k = 0; k < outside.size(); ++k) {
                const auto got = res.image.pixels.segment<3>(Eigen::Index(k) * 3);
                const auto want = req.image.pixels.segment<3>(Eigen::Index(k) * 3);
                if (outside[k]) background = background && got == want;
                else worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
            }
            // Aging to another group must leave the background alone too.
            req.target_group = (face.sample.age_group + 3) % d.sc.binning.group_count();
            const auto other = age_face(d.bundle, req);
            for (std::size_t k = 0; k < outside.size(); ++k)
                if (outside[k])
                    background = background && other.image.pixels.segment<3>(Eigen::Index(k) * 3) ==
                                                   req.image.pixels.segment<3>(Eigen::Index(k) * 3);
        }
        o.detail << " " << d.set.faces.size() << " faces, worst hull deviation " << worst
                 << ", background bit-identical " << (background ? "yes" : "no");
        o.require(worst <= 1e-6, "hull within 1e-6");
        o.require(background, "background bit-identical");
    });

    run_criterion(6, "identity preservation proxy", [](Outcome& o) {
        auto& d = desk();
        const int J = d.sc.binning.group_count();
        double worst = 1.0, sum = 0.0;
        int n = 0;
        for (const auto* s : d.probes) {
            const auto& model = d.bundle.gender(s->gender).model;
            const VectorXd before = to_canonical(d.bundle, s->gender, to_real(s->pixels), s->shape);
            for (int t = 0; t < J; ++t) {
                if (t == s->age_group) continue;
                auto req = agepro::testing::request_for(*s, t, d.pc);
                req.options.apply_shape_aging = false;
                const auto res = age_face(d.bundle, req);
                const double score =
                    identity_preservation_score(model, before, to_canonical(d.bundle, s->gender, res.image, res.shape));
                worst = std::min(worst, score);
                sum += score;
                ++n;
            }
        }
        o.detail << " " << d.probes.size() << " probes x " << (J - 1) << " targets, min score " << worst << ", mean "
                 << sum / n;
        o.require(d.probes.size() == 50, "50 probes");
        o.require(worst >= 0.98, "min score >= 0.98");
    });

    run_criterion(7, "age monotonicity proxy", [](Outcome& o) {
        auto& d = desk();
        int monotone = 0, hits = 0, calls = 0;
        for (const auto* s : d.probes) {
            int prev = -1;
            bool ok = true;
            for (int t = 3; t <= 6; ++t) {
                auto req = agepro::testing::request_for(*s, t, d.pc);
                req.options.apply_shape_aging = false;
                const auto res = age_face(d.bundle, req);
                const int g = age_group_proxy(d.bundle, to_canonical(d.bundle, s->gender, res.image, res.shape), s->gender);
                ok = ok && g >= prev;
                prev = g;
                hits += g == t;
                ++calls;
            }
            monotone += ok;
        }
        const double frac = double(monotone) / double(d.probes.size());
        o.detail << " " << monotone << "/" << d.probes.size() << " sequences non-decreasing (" << 100 * frac
                 << "%); predicted group equals the target in " << hits << "/" << calls << " outputs";
        o.require(frac >= 0.8, ">= 80% non-decreasing");
    });

    run_criterion(8, "desk-scale end to end", [](Outcome& o) {
        auto& d = desk();
        double slowest = 0.0;
        for (int i = 0; i < 10; ++i) {
            const auto* s = d.probes[std::size_t(i) * 5];
            auto req = agepro::testing::request_for(*s, 6, d.pc);
            const auto t0 = Clock::now();
            age_face(d.bundle, req);
            slowest = std::max(slowest, seconds_since(t0));
        }
        const agepro::testing::TempDir dir("acceptance_bundle");
        save_bundle(dir / "b.hfab", d.bundle);
        const auto on_disk = detail::read_file_bytes(dir / "b.hfab");
        const auto reloaded = load_bundle(dir / "b.hfab");
        save_bundle(dir / "c.hfab", reloaded);
        const bool identical = detail::read_file_bytes(dir / "c.hfab") == on_disk && serialize_bundle(reloaded) == on_disk;
        o.detail << " training on " << d.set.faces.size() << " faces " << d.train_seconds << " s, slowest age_face "
                 << slowest << " s, bundle " << on_disk.size() << " bytes, round trip "
                 << (identical ? "byte-identical" : "differs");
        o.require(d.set.faces.size() == 210, "210 faces");
        o.require(d.train_seconds <= 120.0, "training <= 2 min");
        o.require(slowest <= 2.0, "age_face <= 2 s");
        o.require(identical, "byte-identical round trip");
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed") << '\n';
    return failures == 0 ? 0 : 1;
}

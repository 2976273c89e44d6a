#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <set>

using namespace agepro;
using agepro::testing::random_matrix;
using agepro::testing::TempDir;

TEST(Synthetic, NoiselessFacesReconstructFromTruth) {
    SynthConfig c;
    c.sigma = 0.0;
    c.num_identities = 6;
    c.num_groups = 3;
    c.images_per_cell = 2;
    const auto set = generate_synthetic(c);
    const auto& t = set.truth;
    EXPECT_EQ(set.cells.size(), 18u);
    for (const auto& [key, faces] : set.cells) {
        ASSERT_EQ(faces.size(), 2u);
        const VectorXd expect = t.mean + t.U * t.x.col(key.first) + t.V * t.y.col(key.second);
        for (const auto& f : faces) EXPECT_EQ(f, expect);
    }
}

TEST(Synthetic, DeterministicPerSeed) {
    SynthConfig c;
    c.seed = 5;
    const auto a = generate_synthetic(c), b = generate_synthetic(c);
    EXPECT_EQ(a.cells, b.cells);
    c.seed = 6;
    EXPECT_NE(generate_synthetic(c).cells, a.cells);
    c.sigma = -1.0;
    EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Synthetic, NoiseLevelMatchesSigma) {
    SynthConfig c;
    c.sigma = 0.3;
    const auto set = generate_synthetic(c);
    const auto& t = set.truth;
    double ss = 0.0;
    long n = 0;
    for (const auto& [key, faces] : set.cells)
        for (const auto& f : faces) {
            ss += (f - t.mean - t.U * t.x.col(key.first) - t.V * t.y.col(key.second)).squaredNorm();
            n += f.size();
        }
    EXPECT_NEAR(std::sqrt(ss / double(n)), 0.3, 0.01);
}

TEST(Raster, NoiselessFacesMatchTheTruthUpToQuantisation) {
    RasterSynthConfig c;
    c.identities = 4;
    c.sigma = 0.0;
    c.seed = 2;
    const auto set = generate_raster(c);
    const int J = c.binning.group_count();
    ASSERT_EQ(set.faces.size(), std::size_t(2 * 4 * J));
    const auto tri = triangulate(set.base_shape);
    const auto map = rasterize_triangles(set.base_shape.points(), tri, c.frame);
    for (const auto& face : set.faces) {
        const auto& t = *set.truth[std::size_t(face.sample.gender)];
        const VectorXd f = t.model.mean + t.model.U * t.model.x.col(face.identity) +
                           t.model.V * t.model.y.col(face.sample.age_group) + t.prototypes.col(face.type);
        const Image img = to_real(face.sample.pixels);
        for (std::size_t k = 0; k < map.owner.size(); ++k) {
            if (map.owner[k] < 0) continue;
            for (int c3 = 0; c3 < 3; ++c3) {
                const double v = std::clamp(f[Eigen::Index(k) * 3 + c3], 0.0, 1.0);
                ASSERT_LE(std::abs(img.pixels[Eigen::Index(k) * 3 + c3] - v), 0.5 / 255 + 1e-12);
            }
        }
        EXPECT_TRUE(face.sample.shape == set.base_shape);
    }
}

TEST(Raster, TypesBalanceWithinEachIdentity) {
    RasterSynthConfig c;
    c.seed = 4;
    const auto set = generate_raster(c);
    const int J = c.binning.group_count();
    const auto& t = *set.truth[0];
    // Each block of J prototypes sums to zero.
    for (Eigen::Index b = 0; b < t.prototypes.cols() / J; ++b)
        EXPECT_LT(t.prototypes.middleCols(b * J, J).rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    // Prototypes are orthogonal to the identity and age bases.
    EXPECT_LT((t.model.U.transpose() * t.prototypes).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((t.model.V.transpose() * t.prototypes).cwiseAbs().maxCoeff(), 1e-9);
    // No two faces of one (gender, group) share a type; every identity
    // visits each type of its block once.
    std::map<std::pair<int, int>, std::set<int>> per_group;
    std::map<std::pair<int, int>, std::set<int>> per_identity;
    for (const auto& f : set.faces) {
        const bool fresh = per_group[{int(f.sample.gender), f.sample.age_group}].insert(f.type).second;
        EXPECT_TRUE(fresh);
        per_identity[{int(f.sample.gender), f.identity}].insert(f.type);
    }
    for (const auto& [key, types] : per_identity) EXPECT_EQ(int(types.size()), J);
}

TEST(Raster, DeterministicAndWritesAManifest) {
    RasterSynthConfig c;
    c.identities = 2;
    c.binning = AgeBinning(AgeBinning::decades(1, 2));
    c.shape_delta_px = 1.0;
    c.shape_jitter_px = 0.3;
    c.seed = 8;
    const auto a = generate_raster(c), b = generate_raster(c);
    ASSERT_EQ(a.faces.size(), b.faces.size());
    for (std::size_t i = 0; i < a.faces.size(); ++i) {
        EXPECT_EQ(a.faces[i].sample.pixels, b.faces[i].sample.pixels);
        EXPECT_TRUE(a.faces[i].sample.shape == b.faces[i].sample.shape);
    }
    TempDir dir("raster");
    const auto m = write_raster_set(a, dir.path(), ".pgm");
    const auto loaded = load_manifest(dir / "manifest.csv");
    ASSERT_EQ(loaded.entries.size(), a.faces.size());
    for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
        const auto s = load_sample(loaded, i, c.binning);
        EXPECT_EQ(s.age_group, a.faces[i].sample.age_group);
        EXPECT_TRUE(s.shape == a.faces[i].sample.shape);
    }
    EXPECT_EQ(m.entries, loaded.entries);
}

TEST(Raster, ConfigFile) {
    const auto c = detail::parse_raster_config("frame_width = 24\nframe_height = 20\nidentities = 3\ngenders = female\n"
                                               "age_bins = 1-10,11-20\nsigma = 0.01\nseed = 9\n");
    EXPECT_EQ(c.frame, (FrameSize{24, 20}));
    EXPECT_EQ(c.identities, 3);
    EXPECT_EQ(c.genders, std::vector<Gender>{Gender::female});
    EXPECT_EQ(c.binning.group_count(), 2);
    EXPECT_THROW(detail::parse_raster_config("bogus = 1\n"), ConfigError);
    EXPECT_THROW(detail::parse_raster_config("frame_width = 4\n"), ConfigError);
}

TEST(PrincipalAngles, Examples) {
    std::mt19937_64 rng(1);
    const MatrixXd A = random_matrix(20, 4, rng);
    for (const double a : principal_angles(A, A)) EXPECT_NEAR(a, 0.0, 1e-10);
    MatrixXd e1(2, 1), e2(2, 1);
    e1 << 1, 0;
    e2 << 0, 3;
    const auto ang = principal_angles(e1, e2);
    ASSERT_EQ(ang.size(), 1u);
    EXPECT_NEAR(ang[0], std::numbers::pi / 2, 1e-12);
    EXPECT_THROW(principal_angles(A, MatrixXd::Zero(19, 2)), ShapeError);
    MatrixXd deficient = random_matrix(20, 3, rng);
    deficient.col(2) = deficient.col(0) + deficient.col(1);
    EXPECT_THROW(principal_angles(A, deficient), DegenerateInput);
}

TEST(PrincipalAngles, KnownRotation) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, std::numbers::pi / 2);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 10, k = 3;
        const MatrixXd Q = random_matrix(d, d, rng).householderQr().householderQ();
        const MatrixXd base = Q.leftCols(k);
        const double theta = u(rng);
        // Rotate the first basis vector towards a direction outside the subspace.
        MatrixXd rotated = base;
        rotated.col(0) = std::cos(theta) * Q.col(0) + std::sin(theta) * Q.col(k);
        const MatrixXd mix = random_matrix(k, k, rng) + 3.0 * MatrixXd::Identity(k, k);
        const auto ang = principal_angles(base * mix, rotated);
        EXPECT_NEAR(ang.back(), theta, 1e-8);
        EXPECT_NEAR(ang.front(), 0.0, 1e-8);
        const auto sym = principal_angles(rotated, base * mix);
        for (std::size_t i = 0; i < ang.size(); ++i) EXPECT_NEAR(ang[i], sym[i], 1e-10);
    }
}

TEST(PrincipalAngles, SymmetricForDifferentDimensions) {
    std::mt19937_64 rng(3);
    const MatrixXd A = random_matrix(15, 2, rng), B = random_matrix(15, 5, rng);
    const auto ab = principal_angles(A, B), ba = principal_angles(B, A);
    ASSERT_EQ(ab.size(), 2u);
    ASSERT_EQ(ab.size(), ba.size());
    for (std::size_t i = 0; i < ab.size(); ++i) EXPECT_NEAR(ab[i], ba[i], 1e-10);
    EXPECT_TRUE(std::is_sorted(ab.begin(), ab.end()));
}

TEST(IdentityScore, Examples) {
    std::mt19937_64 rng(4);
    const HfaModel model(agepro::testing::random_vector(30, rng), random_matrix(30, 3, rng), random_matrix(30, 4, rng),
                         0.1);
    const VectorXd f = agepro::testing::random_vector(30, rng);
    EXPECT_NEAR(identity_preservation_score(model, f, f), 1.0, 1e-12);
    EXPECT_EQ(identity_preservation_score(model, f, model.mean()), 0.0);
    EXPECT_THROW(identity_preservation_score(model, f, VectorXd::Zero(29)), ShapeError);
    // Adding only age-space content keeps the identity direction close.
    const VectorXd g = model.mean() + 5.0 * model.U().col(0);
    EXPECT_NEAR(identity_preservation_score(model, g, model.mean() + 2.0 * model.U().col(0)), 1.0, 1e-12);
    EXPECT_NEAR(identity_preservation_score(model, g, model.mean() - 2.0 * model.U().col(0)), -1.0, 1e-12);
}

namespace {

struct ProxyFixture {
    RasterSet set;
    AgingBundle bundle;
};

ProxyFixture proxy_fixture(double sigma) {
    auto c = agepro::testing::desk_raster_config(7);
    c.sigma = sigma;
    ProxyFixture f{generate_raster(c), {}};
    f.bundle = train_bundle(samples_of(f.set), agepro::testing::pipeline_config_for(c));
    return f;
}

double self_consistency(const ProxyFixture& f) {
    int correct = 0;
    for (const auto& face : f.set.faces) {
        const auto& s = face.sample;
        const VectorXd v = to_canonical(f.bundle, s.gender, to_real(s.pixels), s.shape);
        correct += age_group_proxy(f.bundle, v, s.gender) == s.age_group;
    }
    return double(correct) / double(f.set.faces.size());
}

}  // namespace

TEST(AgeProxy, MeanFaceGoesToTheSmallestCentroid) {
    const auto f = proxy_fixture(0.005);
    for (const Gender g : kGenders) {
        const auto& gm = f.bundle.gender(g);
        int expect = -1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < gm.age_centroids.size(); ++j)
            if (gm.age_centroids[j]->norm() < best) {
                best = gm.age_centroids[j]->norm();
                expect = int(j);
            }
        EXPECT_EQ(age_group_proxy(f.bundle, gm.model.mean(), g), expect);
    }
    EXPECT_THROW(age_group_proxy(f.bundle, VectorXd::Zero(5), Gender::male), ShapeError);
}

TEST(AgeProxy, TrainingFacesLandInTheirOwnGroup) {
    EXPECT_GE(self_consistency(proxy_fixture(0.005)), 0.9);
    EXPECT_GE(self_consistency(proxy_fixture(0.05)), 0.9);
}

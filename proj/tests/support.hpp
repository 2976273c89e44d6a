#pragma once

// Shared fixtures for the unit tests and the acceptance run.

#include <agepro/agepro.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace agepro::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("agepro_" + tag + "_" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal(rng);
    return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    return random_matrix(n, 1, rng, scale);
}

/// The synthetic raster configuration used throughout: 2 genders, 7 groups,
/// 15 identities at 32x32, which gives 210 faces.
inline RasterSynthConfig desk_raster_config(std::uint64_t seed = 7) {
    RasterSynthConfig c;
    c.seed = seed;
    return c;
}

inline PipelineConfig pipeline_config_for(const RasterSynthConfig& sc) {
    PipelineConfig pc;
    pc.frame = sc.frame;
    pc.frame_margin = sc.margin;
    pc.binning = sc.binning;
    pc.p = sc.p;
    pc.q = sc.q;
    pc.seed = 1;
    pc.apply_shape_aging = sc.shape_delta_px > 0.0;
    return pc;
}

inline AgingRequest request_for(const FaceSample& s, int target, const PipelineConfig& pc) {
    AgingRequest r;
    r.image = to_real(s.pixels);
    r.landmarks = s.shape;
    r.gender = s.gender;
    r.source_group = s.age_group;
    r.target_group = target;
    r.options = AgingOptions::from(pc);
    return r;
}

}  // namespace agepro::testing

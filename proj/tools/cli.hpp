#pragma once

// Command-line front end: train / age / decompose / synth / eval.
// Exit status: 0 success, 1 usage error, 2 data or numeric failure.

#include <agepro/agepro.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace agepro::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline void write_json(const fs::path& path, const ordered_json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<int> parse_group_list(const std::string& s) {
    std::vector<int> out;
    for (const auto item : detail::split(s, ',')) out.push_back(detail::parse_number<int>("target-groups", item));
    return out;
}

struct AgeArgs {
    std::string bundle, image, landmarks, gender, targets, out_dir, report, format = "png";
    int source_group = -1;
    bool no_shape_aging = false;
    double feather = -1.0, composite_feather = -1.0, lambda_ratio = -1.0;
    int max_support = -1;
};

inline int cmd_train(const std::string& manifest_path, const std::string& config_path, const std::string& out) {
    const PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    const auto manifest = load_manifest(manifest_path);
    std::vector<GenderTrainingLog> logs;
    const auto bundle = train_bundle(manifest, cfg, &logs);
    for (const auto& l : logs)
        std::cerr << to_string(l.gender) << ": " << l.faces << " faces, " << l.subjects << " subjects, " << l.sweeps
                  << " EM sweeps" << (l.converged ? "" : " (not converged)") << '\n';
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_bundle(out, bundle);
    std::cerr << "wrote " << out << " with " << bundle.dictionary_count() << " dictionaries\n";
    return kExitOk;
}

inline int cmd_age(const AgeArgs& a) {
    const auto bundle = load_bundle(a.bundle);
    AgingRequest req;
    req.image = to_real(read_image(a.image));
    req.landmarks = load_landmarks(a.landmarks);
    req.gender = parse_gender(a.gender);
    req.source_group = a.source_group;
    req.options = AgingOptions::from(bundle.config);
    if (a.no_shape_aging) req.options.apply_shape_aging = false;
    if (a.feather >= 0.0) req.options.feather_px = a.feather;
    if (a.composite_feather >= 0.0) req.options.composite_feather_px = a.composite_feather;
    if (a.lambda_ratio >= 0.0) req.options.lambda_ratio = a.lambda_ratio;
    if (a.max_support >= 0) req.options.max_support = a.max_support;
    const auto targets = parse_group_list(a.targets);
    if (targets.empty()) throw ConfigError("target-groups must list at least one group");

    const fs::path out_dir(a.out_dir);
    fs::create_directories(out_dir);
    ordered_json report;
    report["source_group"] = a.source_group;
    report["gender"] = a.gender;
    report["results"] = ordered_json::array();
    for (const int t : targets) {
        req.target_group = t;
        const auto res = age_face(bundle, req);
        const fs::path img = out_dir / ("aged_g" + std::to_string(t) + "." + a.format);
        write_image(img, to_rgb8(res.image));
        ordered_json entry;
        entry["target_group"] = t;
        entry["image"] = img.filename().string();
        entry["flipped_triangles"] = res.diagnostics.flipped_triangles;
        entry["elapsed_ms"] = res.diagnostics.elapsed_ms;
        ordered_json regions = ordered_json::object();
        for (const auto& r : res.diagnostics.regions) {
            ordered_json rj;
            rj["support_size"] = r.support_size;
            rj["residual_norm"] = r.residual_norm;
            rj["kkt_residual"] = r.kkt_residual;
            rj["elapsed_ms"] = r.elapsed_ms;
            rj["atoms"] = r.atoms;
            rj["lambda_final"] = r.lambda_final;
            rj["rank_deficient"] = r.rank_deficient;
            regions[to_string(r.region)] = rj;
        }
        entry["regions"] = regions;
        report["results"].push_back(entry);
        std::cerr << "wrote " << img.string() << '\n';
    }
    write_json(a.report.empty() ? out_dir / "diagnostics.json" : fs::path(a.report), report);
    return kExitOk;
}

inline int cmd_decompose(const std::string& bundle_path, const std::string& image, const std::string& landmarks,
                         const std::string& gender, const std::string& out) {
    const auto bundle = load_bundle(bundle_path);
    const Gender g = parse_gender(gender);
    const auto& gm = bundle.gender(g);
    const auto f = to_canonical(bundle, g, to_real(read_image(image)), load_landmarks(landmarks));
    const auto parts = decompose(gm.model, f);
    const FrameSize frame = bundle.frame();
    const auto map = rasterize_triangles(gm.canonical_shape.points(), gm.triangulation, frame);

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    ordered_json sidecar;
    sidecar["note"] = "display = (value - offset) * scale, hull pixels only; background is 0";
    const std::pair<const char*, const VectorXd*> comps[] = {
        {"mean", &parts.mean}, {"identity", &parts.identity}, {"age", &parts.age}, {"residual", &parts.residual}};
    for (const auto& [name, v] : comps) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t k = 0; k < map.owner.size(); ++k)
            if (map.owner[k] >= 0)
                for (int c = 0; c < 3; ++c) {
                    lo = std::min(lo, (*v)[Eigen::Index(k) * 3 + c]);
                    hi = std::max(hi, (*v)[Eigen::Index(k) * 3 + c]);
                }
        const double scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
        Image img(frame.width, frame.height);
        for (std::size_t k = 0; k < map.owner.size(); ++k)
            if (map.owner[k] >= 0)
                for (int c = 0; c < 3; ++c)
                    img.pixels[Eigen::Index(k) * 3 + c] = ((*v)[Eigen::Index(k) * 3 + c] - lo) * scale;
        write_image(out_dir / (std::string(name) + ".png"), to_rgb8(img));
        sidecar[name] = {{"offset", lo}, {"scale", scale}};
    }
    write_json(out_dir / "components.json", sidecar);
    return kExitOk;
}

inline int cmd_synth(const std::string& config_path, const std::string& out, const std::string& format) {
    const auto cfg = load_raster_config(config_path);
    const auto set = generate_raster(cfg);
    const auto manifest = write_raster_set(set, out, "." + format);
    std::cerr << "wrote " << manifest.entries.size() << " faces to " << out << '\n';
    return kExitOk;
}

inline int cmd_eval(const std::string& bundle_path, const std::string& manifest_path, const std::string& report_path) {
    const auto bundle = load_bundle(bundle_path);
    const auto manifest = load_manifest(manifest_path);
    const int J = bundle.binning().group_count();
    ordered_json report;
    report["faces"] = ordered_json::array();
    int evaluated = 0, correct = 0, skipped = 0;
    double abs_err = 0.0;
    std::vector<std::vector<int>> confusion(std::size_t(J), std::vector<int>(std::size_t(J), 0));
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        if (!bundle.genders[std::size_t(e.gender)]) {
            ++skipped;
            continue;
        }
        const auto s = load_sample(manifest, i, bundle.binning());
        const auto f = to_canonical(bundle, s.gender, to_real(s.pixels), s.shape);
        const int pred = age_group_proxy(bundle, f, s.gender);
        ++evaluated;
        correct += pred == s.age_group;
        abs_err += std::abs(pred - s.age_group);
        ++confusion[std::size_t(s.age_group)][std::size_t(pred)];
        report["faces"].push_back({{"subject_id", e.subject_id}, {"image", e.image_path}, {"group", s.age_group},
                                   {"predicted_group", pred}});
    }
    report["evaluated"] = evaluated;
    report["skipped_unknown_gender"] = skipped;
    report["group_accuracy"] = evaluated ? double(correct) / evaluated : 0.0;
    report["mean_abs_group_error"] = evaluated ? abs_err / evaluated : 0.0;
    report["confusion"] = confusion;
    write_json(report_path, report);
    std::cerr << "age-group proxy accuracy " << report["group_accuracy"].get<double>() << " over " << evaluated
              << " faces\n";
    return kExitOk;
}

/// Parses and executes one command.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Face age progression with hidden factor analysis and sparse age-component reconstruction", "agepro"};
    app.require_subcommand(1);

    std::string manifest, config, out, bundle_path, image, landmarks, gender, report, format = "ppm";
    auto* train = app.add_subcommand("train", "Train an aging bundle from a manifest");
    train->add_option("--manifest", manifest, "Manifest CSV")->required();
    train->add_option("--config", config, "Pipeline config (key = value)");
    train->add_option("--out", out, "Output bundle path")->required();

    AgeArgs age_args;
    auto* age = app.add_subcommand("age", "Age or rejuvenate a face to one or more target groups");
    age->add_option("--bundle", age_args.bundle)->required();
    age->add_option("--image", age_args.image)->required();
    age->add_option("--landmarks", age_args.landmarks)->required();
    age->add_option("--gender", age_args.gender)->required();
    age->add_option("--source-group", age_args.source_group, "Age group of the probe (0-based)")->required();
    age->add_option("--target-groups", age_args.targets, "Comma-separated target groups, e.g. 3,4,5,6")->required();
    age->add_option("--out-dir", age_args.out_dir)->required();
    age->add_option("--report", age_args.report, "Diagnostics JSON (default OUT_DIR/diagnostics.json)");
    age->add_option("--format", age_args.format, "Output image format")->check(CLI::IsMember({"png", "ppm"}));
    age->add_flag("--no-shape-aging", age_args.no_shape_aging);
    age->add_option("--feather", age_args.feather, "Region feather radius in pixels");
    age->add_option("--composite-feather", age_args.composite_feather, "Hull feather radius in pixels");
    age->add_option("--lambda-ratio", age_args.lambda_ratio);
    age->add_option("--max-support", age_args.max_support);

    auto* dec = app.add_subcommand("decompose", "Visualise mean, identity, age and residual components");
    dec->add_option("--bundle", bundle_path)->required();
    dec->add_option("--image", image)->required();
    dec->add_option("--landmarks", landmarks)->required();
    dec->add_option("--gender", gender)->required();
    dec->add_option("--out-dir", out)->required();

    auto* synth = app.add_subcommand("synth", "Write a synthetic raster dataset");
    synth->add_option("--config", config, "Synthetic config (key = value)")->required();
    synth->add_option("--out-dir", out)->required();
    synth->add_option("--format", format, "Image format")->check(CLI::IsMember({"png", "ppm", "pgm"}));

    auto* eval = app.add_subcommand("eval", "Age-group proxy accuracy of a bundle on a manifest");
    eval->add_option("--bundle", bundle_path)->required();
    eval->add_option("--manifest", manifest)->required();
    eval->add_option("--report", report)->required();

    if (argc <= 1) {
        std::cerr << app.help();
        return kExitUsage;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    try {
        if (*train) return cmd_train(manifest, config, out);
        if (*age) return cmd_age(age_args);
        if (*dec) return cmd_decompose(bundle_path, image, landmarks, gender, out);
        if (*synth) return cmd_synth(config, out, format);
        if (*eval) return cmd_eval(bundle_path, manifest, report);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace agepro::cli

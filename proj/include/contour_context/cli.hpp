#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "contour_context/dataset.hpp"
#include "contour_context/eval.hpp"
#include "contour_context/pipeline.hpp"

namespace contour_context::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kDataError = 2 };

struct RunConfig {
    PipelineConfig pipeline;
    EvalConfig eval;
    double rotation_window_deg = 10.0;

    // run
    std::string dataset;
    std::string predictions_out = "predictions.csv";
    std::string timing_out;
    long long max_scans = -1;

    // eval
    std::string predictions_in;
    std::string poses;
    std::string calib;
    std::string eval_out_dir = "eval_out";
    std::string timing_in;

    // synth
    std::string synth_out;
    std::uint64_t seed = 42;
    RevisitParams synth;

    /// Copies option values that need unit conversion into the module configs.
    void finalize() {
        pipeline.rotation_window = deg2rad(rotation_window_deg);
        eval.exclusion_window = pipeline.exclusion_window;
    }
};

/*
 * Every tunable is a global option, so it can appear before or after the
 * subcommand and in the --config file (keys are the long option names, e.g.
 * "min-pairs = 5"). Precedence: command line > config file > default.
 */
inline void register_options(CLI::App& app, RunConfig& rc) {
    auto& p = rc.pipeline;
    app.set_config("--config", "", "Read a key = value config file (keys are the long option names)");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.fallthrough();

    const std::string bev = "BEV";
    app.add_option("--bev-resolution", p.bev.resolution, "Meters per BEV pixel")->capture_default_str()->group(bev);
    app.add_option("--bev-half-extent-x", p.bev.half_extent_x, "Half extent along x (m)")->capture_default_str()->group(bev);
    app.add_option("--bev-half-extent-y", p.bev.half_extent_y, "Half extent along y (m)")->capture_default_str()->group(bev);
    app.add_option("--slice-heights", p.bev.slice_heights, "Ascending lower bounds of levels 1..L (m)")
        ->capture_default_str()->group(bev);
    app.add_option("--sensor-height-offset", p.bev.sensor_height_offset, "Added to every point height (m)")
        ->capture_default_str()->group(bev);
    app.add_option("--min-pixels", p.min_pixels, "Smallest contour kept (pixels)")->capture_default_str()->group(bev);

    const std::string cac = "Constellation";
    app.add_option("--cac-levels", p.constellation.levels, "Levels providing peripheral contours")
        ->capture_default_str()->group(cac);
    app.add_option("--cac-top-k", p.constellation.top_k, "Peripheral contours per level")->capture_default_str()->group(cac);
    app.add_option("--cac-max-radius", p.constellation.max_radius, "Peripheral search radius (px)")
        ->capture_default_str()->group(cac);
    app.add_option("--bucket-width", p.constellation.bucket_width, "Distance bucket width (px)")
        ->capture_default_str()->group(cac);
    app.add_option("--bucket-margin", p.constellation.boundary_margin, "Boundary margin for adjacent bits (px)")
        ->capture_default_str()->group(cac);
    app.add_option("--rotation-window-deg", rc.rotation_window_deg, "Rotation voting window (deg)")
        ->capture_default_str()->group(cac);
    app.add_option("--min-pairs", p.min_pairs, "Surviving peripheral pairs required")->capture_default_str()->group(cac);

    const std::string th = "Similarity thresholds";
    auto add_th = [&](const std::string& name, ScalarThreshold& t, const std::string& what) {
        app.add_option("--th-" + name + "-tp", t.t_p, "Relative threshold for " + what)->capture_default_str()->group(th);
        app.add_option("--th-" + name + "-ta", t.t_a, "Absolute threshold for " + what)->capture_default_str()->group(th);
    };
    add_th("na", p.thresholds.n_a, "pixel count");
    add_th("hm", p.thresholds.h_m, "mean height");
    add_th("ecc", p.thresholds.ecc, "|x_c - x_m|");
    add_th("lam1", p.thresholds.lam1, "major eigenvalue");
    add_th("lam2", p.thresholds.lam2, "minor eigenvalue");
    add_th("dist", p.thresholds.dist, "peripheral distance");

    const std::string gmm = "GMM";
    app.add_option("--gmm-levels", p.gmm.levels, "Levels included in the mixture")->capture_default_str()->group(gmm);
    app.add_option("--gmm-reg-eps", p.gmm.reg_eps, "Diagonal regularization (px^2)")->capture_default_str()->group(gmm);
    app.add_option("--prune-dist", p.optimizer.prune_dist, "Component pair pruning distance (px)")
        ->capture_default_str()->group(gmm);
    app.add_option("--opt-max-iter", p.optimizer.max_iterations, "Optimizer iteration cap")
        ->capture_default_str()->group(gmm);

    const std::string ret = "Retrieval";
    app.add_option("--key-levels", p.retrieval.levels, "Indexed levels")->capture_default_str()->group(ret);
    app.add_option("--anchors-per-level", p.retrieval.anchors_per_level, "Anchor contours per indexed level")
        ->capture_default_str()->group(ret);
    app.add_option("--roi-radius", p.retrieval.roi.radius, "Key RoI radius (px)")->capture_default_str()->group(ret);
    app.add_option("--roi-segments", p.retrieval.roi.segments, "Distance segments in the key")
        ->capture_default_str()->group(ret);
    app.add_option("--roi-sigma", p.retrieval.roi.sigma, "Pixel distance spread (px)")->capture_default_str()->group(ret);
    app.add_option("--roi-base-level", p.retrieval.roi.base_level, "Base level l_b")->capture_default_str()->group(ret);
    app.add_option("--key-w1", p.retrieval.w1, "Weight of the anchor part of the key")->capture_default_str()->group(ret);
    app.add_option("--candidates-per-key", p.retrieval.candidates_per_key, "Neighbors retrieved per key")
        ->capture_default_str()->group(ret);
    app.add_option("--batch-interval", p.retrieval.batch_interval, "Scans between refreshes of one level")
        ->capture_default_str()->group(ret);

    const std::string det = "Detection";
    app.add_option("--exclusion-window", p.exclusion_window, "Most recent frames excluded from candidates")
        ->capture_default_str()->group(det);
    app.add_option("--max-retrieval-candidates", p.max_retrieval_candidates, "Candidates entering constellation checks")
        ->capture_default_str()->group(det);
    app.add_option("--max-gmm-candidates", p.max_gmm_candidates, "Candidates entering GMM optimization")
        ->capture_default_str()->group(det);
    app.add_flag("--parallel-candidates", p.parallel_candidates, "Evaluate candidates of one scan concurrently")
        ->group(det);
    app.add_option("--l3", rc.eval.l3, "True-loop distance bound (m)")->capture_default_str()->group(det);

    auto* run = app.add_subcommand("run", "Process a scan sequence (detect, then insert) and write predictions");
    run->add_option("--dataset", rc.dataset, "Sequence directory containing velodyne/*.bin")->required();
    run->add_option("--out", rc.predictions_out, "Prediction CSV")->capture_default_str();
    run->add_option("--timing", rc.timing_out, "Per-scan stage timing CSV");
    run->add_option("--max-scans", rc.max_scans, "Stop after this many scans");

    auto* ev = app.add_subcommand("eval", "Score a prediction CSV against ground-truth poses");
    ev->add_option("--predictions", rc.predictions_in, "Prediction CSV from run")->required();
    ev->add_option("--poses", rc.poses, "KITTI pose file")->required();
    ev->add_option("--calib", rc.calib, "KITTI calib file with a Tr entry");
    ev->add_option("--timing", rc.timing_in, "Timing CSV from run, summarized per stage");
    ev->add_option("--out-dir", rc.eval_out_dir, "Report directory")->capture_default_str();

    auto* sy = app.add_subcommand("synth", "Write a synthetic revisit dataset in KITTI layout");
    sy->add_option("--out", rc.synth_out, "Output directory")->required();
    sy->add_option("--seed", rc.seed, "Random seed")->capture_default_str();
    sy->add_option("--pairs", rc.synth.pairs, "Number of place/revisit pairs")->capture_default_str();
    sy->add_option("--max-translation", rc.synth.max_translation, "Revisit offset bound (m)")->capture_default_str();
    sy->add_option("--dropout", rc.synth.dropout, "Blob dropout probability on revisits")->capture_default_str();
    sy->add_option("--jitter", rc.synth.jitter, "Blob center jitter on revisits (m)")->capture_default_str();

    app.require_subcommand(1);
}

/// Scans of a sequence directory sorted by file name; ids come from numeric stems.
inline std::vector<std::pair<std::int64_t, std::filesystem::path>> list_scans(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::path scan_dir = dir / "velodyne";
    if (!fs::is_directory(scan_dir)) scan_dir = dir;
    if (!fs::is_directory(scan_dir)) throw DataError("dataset directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(scan_dir))
        if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .bin scans in " + scan_dir.string());
    std::vector<std::pair<std::int64_t, fs::path>> out;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string stem = files[i].stem().string();
        const bool numeric = !stem.empty() && std::all_of(stem.begin(), stem.end(), ::isdigit);
        out.emplace_back(numeric ? std::stoll(stem) : static_cast<std::int64_t>(i), files[i]);
    }
    return out;
}

inline int cmd_run(const RunConfig& rc, std::ostream& log = std::cerr) {
    const auto scans = list_scans(rc.dataset);
    std::ofstream pred(rc.predictions_out);
    if (!pred) throw DataError("cannot write " + rc.predictions_out);
    std::ofstream timing;
    if (!rc.timing_out.empty()) {
        timing.open(rc.timing_out);
        if (!timing) throw DataError("cannot write " + rc.timing_out);
        write_timing_header(timing);
    }
    LoopDetector detector(rc.pipeline);
    PredictionLog preds;
    std::size_t n = scans.size();
    if (rc.max_scans >= 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(rc.max_scans));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& [id, path] = scans[i];
        const PointCloud cloud = read_scan_bin(path);
        const DetectionOutcome out = detector.process(id, cloud);
        PredictionEntry e;
        e.query_id = id;
        if (out.loop) {
            e.candidate_id = out.loop->candidate_id;
            e.score = out.loop->score;
            e.pose = out.loop->pose;
        }
        preds.entries.push_back(e);
        if (timing.is_open()) {
            const auto& t = out.timings;
            write_timing_row(timing, {id, t.gen_contours_ms, t.retrieval_ms, t.cac_check_ms, t.l2_optim_ms,
                                      t.update_db_ms, t.total_ms()});
        }
        if ((i + 1) % 500 == 0) log << "processed " << (i + 1) << "/" << n << " scans\n";
    }
    write_predictions_csv(pred, preds);
    if (!pred) throw DataError("write failed: " + rc.predictions_out);
    return kSuccess;
}

inline std::vector<TimingRow> read_timing_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open timing file: " + path.string());
    std::string line;
    std::getline(in, line);
    const auto header = detail::split_csv(line);
    const std::vector<std::string> expect{"query_id",    "gen_contours_ms", "retrieval_ms", "cac_check_ms",
                                          "l2_optim_ms", "update_db_ms",    "total_ms"};
    for (std::size_t i = 0; i < expect.size(); ++i)
        if (i >= header.size() || header[i] != expect[i])
            throw DataError("timing file " + path.string() + ": expected column '" + expect[i] + "'");
    std::vector<TimingRow> rows;
    while (std::getline(in, line)) {
        const auto f = detail::split_csv(line);
        if (f.size() != expect.size()) continue;
        rows.push_back({std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                        std::stod(f[5]), std::stod(f[6])});
    }
    return rows;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    rc.eval.validate();
    const PredictionLog log = read_predictions_csv(rc.predictions_in);
    if (log.entries.empty()) throw DataError("prediction file has no rows: " + rc.predictions_in);
    const Pose3 calib = rc.calib.empty() ? Pose3::Identity() : read_calib(rc.calib);
    const auto poses = read_poses(rc.poses, calib);
    validate_id_ranges(log, poses.size());
    const GroundTruth gt(poses);

    const PrCurve curve = pr_curve(log, gt, rc.eval);
    const double th = curve.best_threshold.value_or(std::numeric_limits<double>::infinity());
    const MpeStats mpe = mpe_stats(log, gt, th, rc.eval);
    const FpDistribution fps = fp_error_distribution(log, gt, th, rc.eval);

    fs::create_directories(rc.eval_out_dir);
    const fs::path dir(rc.eval_out_dir);
    {
        std::ofstream f(dir / "pr_curve.csv");
        f << "threshold,precision,recall,f1,tp,fp,fn,tn,skipped\n";
        for (const auto& p : curve.points)
            f << detail::format_double(p.threshold) << ',' << detail::format_double(p.precision) << ','
              << detail::format_double(p.recall) << ',' << detail::format_double(p.f1) << ',' << p.counts.tp << ','
              << p.counts.fp << ',' << p.counts.fn << ',' << p.counts.tn << ',' << p.counts.skipped << '\n';
    }
    {
        std::ofstream f(dir / "fp_errors.csv");
        f << "query_id,trans_err_m,rot_err_deg\n";
        for (const auto& e : fps.errors)
            f << e.query_id << ',' << detail::format_double(e.trans_err) << ',' << detail::format_double(e.rot_err)
              << '\n';
    }

    nlohmann::json report;
    report["queries"] = log.entries.size();
    report["max_f1"] = curve.max_f1;
    report["best_threshold"] = curve.best_threshold ? nlohmann::json(*curve.best_threshold) : nlohmann::json();
    report["mpe"] = {{"tp_count", mpe.tp_count},        {"mean_rot_deg", mpe.mean_rot_deg},
                     {"rmse_rot_deg", mpe.rmse_rot_deg}, {"mean_trans_m", mpe.mean_trans_m},
                     {"rmse_trans_m", mpe.rmse_trans_m}, {"tilt_flagged", mpe.tilt_flagged}};
    report["fp"] = {{"count", fps.errors.size()},
                    {"under_1m_1deg", fps.under_box},
                    {"fraction_under_1m_1deg",
                     fps.fraction_under_box ? nlohmann::json(*fps.fraction_under_box) : nlohmann::json()}};
    std::ostringstream summary;
    summary << std::setprecision(6);
    summary << "queries = " << log.entries.size() << "\n"
            << "max_f1 = " << curve.max_f1 << "\n"
            << "best_threshold = " << (curve.best_threshold ? detail::format_double(*curve.best_threshold) : "none")
            << "\n"
            << "tp_loops = " << mpe.tp_count << "\n"
            << "mean_rot_err_deg = " << mpe.mean_rot_deg << "\n"
            << "rmse_rot_deg = " << mpe.rmse_rot_deg << "\n"
            << "mean_trans_err_m = " << mpe.mean_trans_m << "\n"
            << "rmse_trans_m = " << mpe.rmse_trans_m << "\n"
            << "fp_count = " << fps.errors.size() << "\n"
            << "fp_under_1m_1deg = " << fps.under_box << "\n";
    if (!rc.timing_in.empty()) {
        const TimingRow m = mean_timing(read_timing_csv(rc.timing_in));
        report["timing_ms"] = {{"gen_contours", m.gen_contours_ms}, {"retrieval", m.retrieval_ms},
                               {"cac_check", m.cac_check_ms},       {"l2_optim", m.l2_optim_ms},
                               {"update_db", m.update_db_ms},       {"total", m.total_ms}};
        summary << "mean_gen_contours_ms = " << m.gen_contours_ms << "\n"
                << "mean_retrieval_ms = " << m.retrieval_ms << "\n"
                << "mean_cac_check_ms = " << m.cac_check_ms << "\n"
                << "mean_l2_optim_ms = " << m.l2_optim_ms << "\n"
                << "mean_update_db_ms = " << m.update_db_ms << "\n"
                << "mean_total_ms = " << m.total_ms << "\n";
    }
    std::ofstream(dir / "summary.txt") << summary.str();
    std::ofstream(dir / "report.json") << report.dump(2) << "\n";
    out << summary.str();
    return kSuccess;
}

inline int cmd_synth(const RunConfig& rc) {
    namespace fs = std::filesystem;
    const fs::path dir(rc.synth_out);
    std::error_code ec;
    fs::create_directories(dir / "velodyne", ec);
    if (ec) throw DataError("cannot create " + (dir / "velodyne").string() + ": " + ec.message());
    std::vector<SyntheticScene> scenes;
    const auto records = make_revisit_sequence(rc.seed, rc.synth, &scenes);
    std::vector<Pose3> poses;
    for (const auto& r : records) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.bin", static_cast<long long>(r.scan_id));
        write_scan_bin(dir / "velodyne" / name, r.cloud);
        poses.push_back(*r.gt_pose);
    }
    write_poses(dir / "poses.txt", poses);
    std::ofstream(dir / "calib.txt") << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
    std::ofstream sf(dir / "scenes.txt");
    for (std::size_t i = 0; i < scenes.size(); ++i) sf << "[place " << i << "]\n" << scenes[i].serialize();
    if (!sf) throw DataError("cannot write " + (dir / "scenes.txt").string());
    return kSuccess;
}

/// Parses argv and dispatches; returns the process exit code.
inline int main_entry(int argc, const char* const* argv) {
    CLI::App app{"Contour-based LiDAR loop closure detection with planar pose estimation"};
    app.name("contour_context");
    RunConfig rc;
    register_options(app, rc);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        const std::string ini = "INI was not able to parse ";
        if (msg.rfind(ini, 0) == 0) msg = "unknown config key: " + msg.substr(ini.size());
        std::cerr << "error: " << msg << "\n";
        return kUsageError;
    }
    rc.finalize();
    try {
        rc.pipeline.validate();
        if (app.got_subcommand("run")) return cmd_run(rc);
        if (app.got_subcommand("eval")) return cmd_eval(rc);
        if (app.got_subcommand("synth")) return cmd_synth(rc);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return kUsageError;
}

}  // namespace contour_context::cli

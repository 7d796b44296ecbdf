#include <gtest/gtest.h>

#include "contour_context/dataset.hpp"
#include "contour_context/pipeline.hpp"

using namespace contour_context;

namespace {

PipelineConfig small_window_config(int exclusion = 2) {
    PipelineConfig cfg;
    cfg.exclusion_window = exclusion;
    cfg.retrieval.batch_interval = 1;  // one level refreshed per scan
    return cfg;
}

}  // namespace

TEST(PipelineConfig, DefaultsValidateAndBadLevelsReject) {
    PipelineConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.gmm.levels = {9};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = PipelineConfig{};
    cfg.retrieval.levels = {0};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Preprocess, EmptyCloud) {
    const PipelineConfig cfg;
    const ScanDescriptor d = preprocess(0, PointCloud{}, cfg);
    EXPECT_TRUE(d.keys.empty());
    EXPECT_TRUE(d.constellations.empty());
    EXPECT_FALSE(d.gmm.has_value());
    LayeredDatabase db(cfg.retrieval);
    ScanHistory history;
    EXPECT_FALSE(detect_loop(d, db, history, cfg).loop.has_value());
}

TEST(Preprocess, KeysAndConstellationsShareAnchors) {
    const PipelineConfig cfg;
    const ScanDescriptor d = preprocess(3, generate_scene(1).second, cfg);
    ASSERT_FALSE(d.keys.empty());
    ASSERT_EQ(d.keys.size(), d.constellations.size());
    for (std::size_t k = 0; k < d.keys.size(); ++k) {
        EXPECT_EQ(d.constellations[k].anchor.level, d.keys[k].level);
        EXPECT_EQ(d.constellations[k].anchor.seq, d.keys[k].seq);
        EXPECT_EQ(d.key_index(d.keys[k].level, d.keys[k].seq), k);
    }
    EXPECT_TRUE(d.gmm.has_value());
    EXPECT_TRUE(d.bev.has_value());
}

TEST(Preprocess, Deterministic) {
    const PipelineConfig cfg;
    const PointCloud cloud = generate_scene(2).second;
    const ScanDescriptor a = preprocess(0, cloud, cfg), b = preprocess(0, cloud, cfg);
    EXPECT_TRUE(*a.bev == *b.bev);
    ASSERT_EQ(a.keys.size(), b.keys.size());
    for (std::size_t k = 0; k < a.keys.size(); ++k) EXPECT_EQ(a.keys[k].values, b.keys[k].values);
    EXPECT_EQ(a.gmm->self_term, b.gmm->self_term);
}

TEST(Archive, DropsImageAndTrimsContours) {
    const PipelineConfig cfg;
    const ScanDescriptor d = archive(preprocess(0, generate_scene(3).second, cfg), cfg);
    EXPECT_FALSE(d.bev.has_value());
    for (const auto& lv : d.contours) EXPECT_LE(static_cast<int>(lv.size()), cfg.constellation.top_k);
    EXPECT_FALSE(d.keys.empty());
}

TEST(DetectLoop, EmptyDatabaseGivesNone) {
    const PipelineConfig cfg = small_window_config();
    LoopDetector det(cfg);
    EXPECT_FALSE(det.process(0, generate_scene(4).second).loop.has_value());
}

TEST(DetectLoop, SelfRevisitRecoversIdentity) {
    const PipelineConfig cfg = small_window_config(2);
    LoopDetector det(cfg);
    std::vector<PointCloud> clouds;
    for (int i = 0; i < 5; ++i) clouds.push_back(generate_scene(100 + i).second);
    for (int i = 0; i < 5; ++i) EXPECT_FALSE(det.process(i, clouds[i]).loop.has_value()) << i;
    const DetectionOutcome out = det.process(5, clouds[0]);
    ASSERT_TRUE(out.loop.has_value());
    EXPECT_EQ(out.loop->candidate_id, 0);
    EXPECT_GE(out.loop->score, 0.99);
    EXPECT_LT(out.loop->pose.t.norm(), 0.05);
    EXPECT_LT(std::abs(rad2deg(out.loop->pose.theta)), 0.1);
}

TEST(DetectLoop, RecoversKnownRevisitMotion) {
    const PipelineConfig cfg = small_window_config(0);
    LoopDetector det(cfg);
    const auto [scene, cloud] = generate_scene(55);
    det.process(0, cloud);
    det.database().flush_all();
    const Se2Transform sensor(1.2, -0.8, 0.9);  // revisit pose of the sensor in the first scan's frame
    const DetectionOutcome out = det.process(1, sample_scene(scene, sensor, 77));
    ASSERT_TRUE(out.loop.has_value());
    EXPECT_EQ(out.loop->candidate_id, 0);
    // The pose maps candidate-frame points into the query frame, i.e. the inverse sensor motion.
    const Se2Transform want = sensor.inverse();
    EXPECT_LT((out.loop->pose.t - want.t).norm(), 0.3);
    EXPECT_LT(std::abs(rad2deg(wrap_angle(out.loop->pose.theta - want.theta))), 1.0);
}

TEST(DetectLoop, ExclusionWindowHidesRecentScans) {
    PipelineConfig cfg = small_window_config(3);
    LoopDetector det(cfg);
    const PointCloud cloud = generate_scene(9).second;
    det.process(0, cloud);
    EXPECT_FALSE(det.process(1, cloud).loop.has_value());
    EXPECT_FALSE(det.process(2, cloud).loop.has_value());
    EXPECT_FALSE(det.process(3, cloud).loop.has_value());
    const auto out = det.process(4, cloud);
    ASSERT_TRUE(out.loop.has_value());
    EXPECT_EQ(out.loop->candidate_id, 0);
}

TEST(DetectLoop, ParallelCandidatesMatchSerial) {
    PipelineConfig serial = small_window_config(1), parallel = serial;
    parallel.parallel_candidates = true;
    LoopDetector a(serial), b(parallel);
    RevisitParams p;
    p.pairs = 6;
    p.place_spacing = 0.0;  // every place overlaps, so many candidates survive retrieval
    for (const auto& rec : make_revisit_sequence(5, p)) {
        const auto ra = a.process(rec.scan_id, rec.cloud), rb = b.process(rec.scan_id, rec.cloud);
        ASSERT_EQ(ra.loop.has_value(), rb.loop.has_value());
        if (!ra.loop) continue;
        EXPECT_EQ(ra.loop->candidate_id, rb.loop->candidate_id);
        EXPECT_EQ(ra.loop->score, rb.loop->score);
        EXPECT_EQ(ra.funnel.cac_survivors, rb.funnel.cac_survivors);
    }
}

TEST(LoopDetector, DatabaseGrowsInScanOrder) {
    PipelineConfig cfg = small_window_config(1000);
    LoopDetector det(cfg);
    std::size_t keys = 0;
    for (int i = 0; i < 6; ++i) {
        const PointCloud cloud = generate_scene(200 + i).second;
        keys += preprocess(i, cloud, cfg).keys.size();
        det.process(i, cloud);
    }
    det.database().flush_all();
    EXPECT_EQ(det.database().size(), keys);
    ASSERT_EQ(det.history().size(), 6u);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(det.history().scans()[i].scan_id, i);
    EXPECT_NE(det.history().find(3), nullptr);
    EXPECT_EQ(det.history().find(42), nullptr);
}

TEST(LoopDetector, TimingsAreAccounted) {
    PipelineConfig cfg = small_window_config(0);
    LoopDetector det(cfg);
    const PointCloud cloud = generate_scene(12).second;
    det.process(0, cloud);
    det.database().flush_all();
    const auto out = det.process(1, cloud);
    const auto& t = out.timings;
    EXPECT_GT(t.gen_contours_ms, 0.0);
    EXPECT_NEAR(t.total_ms(),
                t.gen_contours_ms + t.retrieval_ms + t.cac_check_ms + t.l2_optim_ms + t.update_db_ms, 1e-12);
    ASSERT_TRUE(out.loop.has_value());
    EXPECT_EQ(out.loop->timings.gen_contours_ms, t.gen_contours_ms);
}

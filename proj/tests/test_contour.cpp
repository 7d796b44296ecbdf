#include <gtest/gtest.h>

#include <random>

#include "contour_context/contour.hpp"
#include "oracles.hpp"

using namespace contour_context;

namespace {

BevImage flat_image(int half, double z = 1.0) {
    BevConfig cfg;
    cfg.resolution = 1.0;
    cfg.half_extent_x = half;
    cfg.half_extent_y = half;
    cfg.slice_heights = {0.0, 1.0, 2.0};
    BevImage img(cfg);
    for (int r = 0; r < img.rows(); ++r)
        for (int c = 0; c < img.cols(); ++c) img.update_max(r, c, z);
    return img;
}

RawContour make_raw(std::vector<ContourPixel> px) {
    RawContour rc;
    rc.pixels = std::move(px);
    return rc;
}

}  // namespace

TEST(ExtractContours, EmptyMask) {
    const BevImage img = flat_image(2);
    LevelMask m{1, 5, 5, std::vector<std::uint8_t>(25, 0)};
    EXPECT_TRUE(extract_contours(m, img, 1).empty());
}

TEST(ExtractContours, DiagonalNeighborsJoin) {
    const BevImage img = flat_image(2, 1.5);
    LevelMask m{1, 5, 5, std::vector<std::uint8_t>(25, 0)};
    m.bits[1 * 5 + 1] = 1;
    m.bits[2 * 5 + 2] = 1;
    const auto cs = extract_contours(m, img, 1);
    ASSERT_EQ(cs.size(), 1u);
    EXPECT_EQ(cs[0].pixels.size(), 2u);
    for (const auto& p : cs[0].pixels) EXPECT_DOUBLE_EQ(p.z, 1.5);
}

TEST(ExtractContours, MinPixelsDropsSmallComponents) {
    const BevImage img = flat_image(2);
    LevelMask m{1, 5, 5, std::vector<std::uint8_t>(25, 0)};
    m.bits[0] = 1;
    m.bits[4] = m.bits[9] = m.bits[14] = 1;
    EXPECT_EQ(extract_contours(m, img, 1).size(), 2u);
    const auto cs = extract_contours(m, img, 3);
    ASSERT_EQ(cs.size(), 1u);
    EXPECT_EQ(cs[0].pixels.size(), 3u);
}

TEST(ExtractContours, MatchesFloodFillOnRandom5x5Masks) {
    std::mt19937_64 rng(7);
    const BevImage img = flat_image(2);
    for (int trial = 0; trial < 500; ++trial) {
        const LevelMask m = oracle::random_mask(rng, 5, 5, 0.45);
        const auto got = oracle::as_pixel_sets(extract_contours(m, img, 1), 2, 2);
        EXPECT_EQ(got, oracle::flood_fill_components(m)) << "trial " << trial;
    }
}

TEST(ExtractContours, RejectsMaskLargerThanImage) {
    const BevImage img = flat_image(2);
    LevelMask m{1, 6, 6, std::vector<std::uint8_t>(36, 0)};
    EXPECT_THROW(extract_contours(m, img, 1), std::invalid_argument);
}

TEST(Summarize, SinglePixel) {
    const ContourAbstraction ca = summarize(make_raw({{5, 7, 2.0}}));
    EXPECT_EQ(ca.n_a, 1);
    EXPECT_EQ(ca.x_c, Vec2(5, 7));
    EXPECT_EQ(ca.cov, Mat2::Zero());
    EXPECT_DOUBLE_EQ(ca.h_m, 2.0);
    EXPECT_EQ(ca.x_m, Vec2(10, 14));
    EXPECT_DOUBLE_EQ(ca.lam1, 0.0);
    EXPECT_DOUBLE_EQ(ca.lam2, 0.0);
}

TEST(Summarize, KnownStatistics) {
    // A 2x3 block: rows {0,1}, cols {0,1,2}.
    std::vector<ContourPixel> px;
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 3; ++y) px.push_back({x, y, 1.0 + x});
    const ContourAbstraction ca = summarize(make_raw(px));
    EXPECT_EQ(ca.n_a, 6);
    EXPECT_NEAR(ca.h_m, 1.5, 1e-12);
    EXPECT_NEAR(ca.x_c.x(), 0.5, 1e-12);
    EXPECT_NEAR(ca.x_c.y(), 1.0, 1e-12);
    // Sample covariance with 1/(n-1): var(x) = 6*0.25/5, var(y) = 4/5, cov = 0.
    EXPECT_NEAR(ca.cov(0, 0), 0.3, 1e-12);
    EXPECT_NEAR(ca.cov(1, 1), 0.8, 1e-12);
    EXPECT_NEAR(ca.cov(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(ca.lam1, 0.8, 1e-12);
    EXPECT_NEAR(ca.lam2, 0.3, 1e-12);
    EXPECT_NEAR(std::abs(ca.v1.y()), 1.0, 1e-12);
    // x_m = (1/n) sum z p = ((0*3*1 + 1*3*2), (1*(0+1+2) + 2*(0+1+2))) / 6
    EXPECT_NEAR(ca.x_m.x(), 1.0, 1e-12);
    EXPECT_NEAR(ca.x_m.y(), 1.5, 1e-12);
    EXPECT_NEAR(ca.ecc_feat, (ca.x_c - ca.x_m).norm(), 1e-15);
}

TEST(Summarize, TranslationShiftsCentroidOnly) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> pos(-10, 10);
    std::vector<ContourPixel> px, moved;
    for (int k = 0; k < 30; ++k) px.push_back({pos(rng), pos(rng), 1.0});
    for (const auto& p : px) moved.push_back({p.x + 7, p.y - 4, p.z});
    const auto a = summarize(make_raw(px)), b = summarize(make_raw(moved));
    EXPECT_NEAR((b.x_c - a.x_c - Vec2(7, -4)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((b.cov - a.cov).norm(), 0.0, 1e-9);
}

TEST(Summarize, EigenInvariants) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> pos(-20, 20);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ContourPixel> px;
        for (int k = 0; k < 40; ++k) px.push_back({pos(rng), pos(rng) / 3, 0.5});
        const auto ca = summarize(make_raw(px));
        EXPECT_GE(ca.lam1, ca.lam2);
        EXPECT_GE(ca.lam2, 0.0);
        EXPECT_NEAR(ca.v1.dot(ca.v2), 0.0, 1e-12);
        EXPECT_NEAR(ca.v1.norm(), 1.0, 1e-12);
        EXPECT_NEAR((ca.cov * ca.v1 - ca.lam1 * ca.v1).norm(), 0.0, 1e-8);
    }
}

TEST(Summarize, EmptyThrows) { EXPECT_THROW(summarize(RawContour{}), std::invalid_argument); }

TEST(Eig2x2, Identity) {
    const Eigen2 e = eig2x2(Mat2::Identity());
    EXPECT_DOUBLE_EQ(e.lam1, 1.0);
    EXPECT_DOUBLE_EQ(e.lam2, 1.0);
    EXPECT_NEAR(e.v1.dot(e.v2), 0.0, 1e-15);
}

TEST(Eig2x2, Diagonal) {
    Mat2 m;
    m << 4, 0, 0, 1;
    const Eigen2 e = eig2x2(m);
    EXPECT_DOUBLE_EQ(e.lam1, 4.0);
    EXPECT_DOUBLE_EQ(e.lam2, 1.0);
    EXPECT_NEAR(std::abs(e.v1.x()), 1.0, 1e-15);
}

TEST(Eig2x2, OffDiagonal) {
    Mat2 m;
    m << 2, 1, 1, 2;
    const Eigen2 e = eig2x2(m);
    EXPECT_NEAR(e.lam1, 3.0, 1e-15);
    EXPECT_NEAR(e.lam2, 1.0, 1e-15);
    EXPECT_NEAR(std::abs(e.v1.x()), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(e.v1.x(), e.v1.y(), 1e-15);
}

TEST(Eig2x2, MatchesEigenSolver) {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 100; ++k) {
        const Mat2 m = oracle::random_spd(rng, 0.1, 5.0);
        const Eigen2 e = eig2x2(m);
        Eigen::SelfAdjointEigenSolver<Mat2> es(m);
        EXPECT_NEAR(e.lam1, es.eigenvalues()(1), 1e-10);
        EXPECT_NEAR(e.lam2, es.eigenvalues()(0), 1e-10);
        EXPECT_NEAR(std::abs(e.v1.dot(es.eigenvectors().col(1))), 1.0, 1e-9);
    }
}

TEST(RankContours, DescendingSizeZeroBasedSeq) {
    std::vector<ContourAbstraction> cas(3);
    cas[0].n_a = 3;
    cas[1].n_a = 10;
    cas[2].n_a = 7;
    const LevelContours out = rank_contours(cas, 2);
    ASSERT_EQ(out.size(), 2u);
    ASSERT_EQ(out[0].size(), 3u);
    EXPECT_TRUE(out[1].empty());
    EXPECT_EQ(out[0][0].n_a, 10);
    EXPECT_EQ(out[0][1].n_a, 7);
    EXPECT_EQ(out[0][2].n_a, 3);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(out[0][i].seq, i);
}

TEST(RankContours, FullTiesOrderedByCentroid) {
    std::vector<ContourAbstraction> cas(3);
    for (auto& c : cas) c.n_a = 5;
    cas[0].x_c = Vec2(2, 0);
    cas[1].x_c = Vec2(-1, 3);
    cas[2].x_c = Vec2(-1, -3);
    const auto out = rank_contours(cas);
    EXPECT_EQ(out[0][0].x_c, Vec2(-1, -3));
    EXPECT_EQ(out[0][1].x_c, Vec2(-1, 3));
    EXPECT_EQ(out[0][2].x_c, Vec2(2, 0));
}

TEST(RankContours, TiesPreferShapeBeforeCentroid) {
    std::vector<ContourAbstraction> cas(4);
    for (auto& c : cas) c.n_a = 5;
    cas[0].lam1 = 1.0;
    cas[0].x_c = Vec2(-9, 0);
    cas[1].lam1 = 2.0;
    cas[1].x_c = Vec2(9, 0);
    cas[2].lam1 = 2.0;
    cas[2].lam2 = 0.5;
    cas[2].x_c = Vec2(5, 0);
    cas[3].lam1 = 2.0;
    cas[3].lam2 = 0.5;
    cas[3].h_m = 1.0;
    cas[3].x_c = Vec2(7, 0);
    const auto out = rank_contours(cas);
    EXPECT_EQ(out[0][0].x_c, Vec2(7, 0));
    EXPECT_EQ(out[0][1].x_c, Vec2(5, 0));
    EXPECT_EQ(out[0][2].x_c, Vec2(9, 0));
    EXPECT_EQ(out[0][3].x_c, Vec2(-9, 0));
}

TEST(RankContours, EmptyInput) {
    EXPECT_TRUE(rank_contours({}).empty());
    const auto out = rank_contours({}, 3);
    ASSERT_EQ(out.size(), 3u);
    for (const auto& l : out) EXPECT_TRUE(l.empty());
}

TEST(MakeContours, BlocksAtTwoHeights) {
    BevConfig cfg;
    cfg.resolution = 1.0;
    cfg.half_extent_x = cfg.half_extent_y = 10.0;
    cfg.slice_heights = {0.0, 1.0, 2.0};
    PointCloud cloud;
    for (int i = -8; i <= -5; ++i)
        for (int j = -8; j <= -5; ++j) cloud.points.emplace_back(i, j, 2.5);  // 16 px, levels 1..3
    for (int i = 3; i <= 4; ++i)
        for (int j = 3; j <= 5; ++j) cloud.points.emplace_back(i, j, 0.5);  // 6 px, level 1 only
    const LevelContours lc = make_contours(rasterize(cloud, cfg), 3);
    ASSERT_EQ(lc.size(), 3u);
    ASSERT_EQ(lc[0].size(), 2u);
    EXPECT_EQ(lc[0][0].n_a, 16);
    EXPECT_EQ(lc[0][1].n_a, 6);
    ASSERT_EQ(lc[2].size(), 1u);
    EXPECT_NEAR(lc[2][0].x_c.x(), -6.5, 1e-12);
    EXPECT_EQ(lc[2][0].level, 3);
}

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "detection_oracle.hpp"
#include "test_support.hpp"
#include "vamos/detection.hpp"

using namespace vamos;
namespace vt = vamos::testing;

using vt::ball;
using vt::blobs;
using vt::detection_oracle;

TEST(MatchLesions, IdenticalPredictionIsTruePositive) {
    BinaryMask gt({20, 20, 20});
    ball(gt, {10, 10, 10}, 3);
    const auto t = match_lesions(gt, gt);
    EXPECT_EQ(t.tp(), 1u);
    EXPECT_EQ(t.fp(), 0u);
    EXPECT_EQ(t.fn(), 0u);
    const auto d = dice_true_positives(t);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_DOUBLE_EQ(d[0].dice, 1.0);
}

TEST(MatchLesions, BlobJustBeyondMaxRadiusIsFalsePositive) {
    // lesion: voxels x = 10..14 on one row, centroid x = 12, max radius 2
    BinaryMask gt({30, 10, 10}), pred({30, 10, 10});
    for (long x = 10; x <= 14; ++x) gt(x, 5, 5) = 1;
    pred(15, 5, 5) = 1;  // centre 3 voxels from the centroid
    auto t = match_lesions(pred, gt);
    ASSERT_EQ(t.lesions.size(), 1u);
    EXPECT_NEAR(t.lesions[0].max_radius_mm, 2.0 * 0.4, 1e-12);
    EXPECT_EQ(t.fp(), 1u);
    EXPECT_EQ(t.fn(), 1u);
    EXPECT_TRUE(dice_true_positives(t).empty());

    BinaryMask edge({30, 10, 10});
    edge(14, 5, 5) = 1;  // exactly at the max radius
    t = match_lesions(edge, gt);
    EXPECT_EQ(t.tp(), 1u);
    EXPECT_EQ(t.fp(), 0u);
}

TEST(MatchLesions, TwoBlobsInsideOneLesion) {
    BinaryMask gt({30, 30, 30}), pred({30, 30, 30});
    ball(gt, {15, 15, 15}, 5);
    pred(13, 15, 15) = 1;
    pred(17, 15, 15) = 1;
    const auto t = match_lesions(pred, gt);
    EXPECT_EQ(t.predictions.size(), 2u);
    EXPECT_EQ(t.tp(), 1u);
    EXPECT_EQ(t.fp(), 0u);
    EXPECT_EQ(t.lesions[0].matched.size(), 2u);
    const std::size_t n = count_nonzero(gt);
    EXPECT_DOUBLE_EQ(dice_true_positives(t)[0].dice, 2.0 * 2 / double(n + 2));
}

TEST(MatchLesions, AmbiguousComponentGoesToNearestThenLowerId) {
    BinaryMask gt({40, 20, 20}), pred({40, 20, 20});
    ball(gt, {12, 10, 10}, 4);
    ball(gt, {26, 10, 10}, 4);
    pred(18, 10, 10) = 1;  // 6 from the first, 8 from the second: neither radius reaches
    auto t = match_lesions(pred, gt);
    EXPECT_EQ(t.fp(), 1u);

    BinaryMask big({40, 20, 20});
    ball(big, {12, 10, 10}, 8);
    ball(big, {27, 10, 10}, 8);  // touching: one lesion; use labels instead
    LabelVolume labels({40, 20, 20});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Index3 p = labels.coord(i);
        if (norm(p.to_vec() - Vec3{12, 10, 10}) <= 8) labels[i] = 1;
        else if (norm(p.to_vec() - Vec3{28, 10, 10}) <= 8) labels[i] = 2;
    }
    BinaryMask mid({40, 20, 20});
    mid(20, 10, 10) = 1;  // equidistant from both centroids
    t = match_lesions(mid, labels);
    ASSERT_EQ(t.lesions.size(), 2u);
    EXPECT_NEAR(t.predictions[0].distance_mm, 8 * 0.4, 1e-9);
    EXPECT_EQ(t.predictions[0].lesion, 1);
    EXPECT_TRUE(t.lesions[0].detected);
    EXPECT_FALSE(t.lesions[1].detected);

    BinaryMask near2({40, 20, 20});
    near2(21, 10, 10) = 1;
    EXPECT_EQ(match_lesions(near2, labels).predictions[0].lesion, 2);
}

TEST(MatchLesions, AnisotropicSpacingUsesMillimetres) {
    const Geometry g{{0.4, 0.4, 1.0}, {}};
    BinaryMask gt({20, 20, 20}, g), pred({20, 20, 20}, g);
    for (long x = 6; x <= 14; ++x) gt(x, 10, 10) = 1;  // max radius 4 voxels = 1.6 mm
    pred(10, 10, 12) = 1;                               // 2 slices away = 2.0 mm
    EXPECT_EQ(match_lesions(pred, gt).tp(), 0u);
    BinaryMask p2({20, 20, 20}, g);
    p2(10, 13, 10) = 1;  // 3 voxels in-plane = 1.2 mm
    EXPECT_EQ(match_lesions(p2, gt).tp(), 1u);
}

TEST(MatchLesions, GridMismatch) {
    EXPECT_THROW(match_lesions(BinaryMask({8, 8, 8}), BinaryMask({8, 8, 9})), Error);
    EXPECT_THROW(match_lesions(BinaryMask({8, 8, 8}), BinaryMask({8, 8, 8}, {{1, 1, 1}, {}})), Error);
}

TEST(MatchLesions, RandomInstancesMatchBruteForce) {
    std::mt19937 rng(17);
    for (int k = 0; k < 50; ++k) {
        const Vec3 sp = k % 3 == 0 ? Vec3{0.4, 0.4, 0.8} : Vec3{0.4, 0.4, 0.4};
        const auto gt = blobs({32, 32, 32}, 1 + k % 4, 4.0, rng, sp);
        const auto pred = blobs({32, 32, 32}, k % 6, 3.0, rng, sp);
        const auto t = match_lesions(pred, gt);
        const auto o = detection_oracle(pred, gt);
        ASSERT_EQ(t.tp(), o.tp) << k;
        ASSERT_EQ(t.fn(), o.fn) << k;
        ASSERT_EQ(t.fp(), o.fp) << k;
        const auto d = dice_true_positives(t);
        ASSERT_EQ(d.size(), o.dice.size());
        for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d[i].dice, o.dice[i]) << k;
        for (const auto& x : d) EXPECT_TRUE(x.dice >= 0 && x.dice <= 1);
    }
}

TEST(MatchLesions, TranslationEquivariant) {
    std::mt19937 rng(3);
    const auto gt = blobs({24, 24, 24}, 3, 3.0, rng, {0.4, 0.4, 0.4});
    const auto pred = blobs({24, 24, 24}, 4, 3.0, rng, {0.4, 0.4, 0.4});
    auto shift = [](const BinaryMask& m) {
        BinaryMask out({32, 32, 32}, m.geometry());
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) out[m.coord(i) + Index3{5, 3, 7}] = 1;
        return out;
    };
    const auto a = report_json({match_lesions(pred, gt)})["summary"];
    const auto b = report_json({match_lesions(shift(pred), shift(gt))})["summary"];
    EXPECT_EQ(a, b);
}

TEST(MatchLesions, AddingComponentsIsMonotone) {
    std::mt19937 rng(9);
    const auto gt = blobs({32, 32, 32}, 3, 4.0, rng, {0.4, 0.4, 0.4});
    BinaryMask pred(gt.dims(), gt.geometry());
    std::size_t tp = 0, fp = 0;
    std::uniform_real_distribution<double> u(2, 29);
    for (int k = 0; k < 12; ++k) {
        ball(pred, {u(rng), u(rng), u(rng)}, 1.0);
        const auto t = match_lesions(pred, gt);
        // merges can only reduce the component count, so check each count against the previous
        EXPECT_GE(t.tp(), tp);
        tp = t.tp();
        fp = std::max(fp, t.fp());
    }
    EXPECT_GT(tp + fp, 0u);
}

TEST(DiceTruePositives, DilatedBallMatchesVoxelCounts) {
    BinaryMask gt({24, 24, 24}), pred({24, 24, 24});
    ball(gt, {12, 12, 12}, 4);
    // 26-neighbourhood dilation by one voxel
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!gt[i]) continue;
        const Index3 p = gt.coord(i);
        for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) pred[p + Index3{dx, dy, dz}] = 1;
    }
    const double a = double(count_nonzero(gt)), b = double(count_nonzero(pred));
    const auto d = dice_true_positives(match_lesions(pred, gt));
    ASSERT_EQ(d.size(), 1u);
    EXPECT_DOUBLE_EQ(d[0].dice, 2 * a / (a + b));
}

TEST(SensitivityFp, Aggregates) {
    BinaryMask gt({20, 20, 20});
    ball(gt, {10, 10, 10}, 3);
    const BinaryMask empty({20, 20, 20});
    BinaryMask fp({20, 20, 20});
    fp(1, 1, 1) = 1;
    auto s = sensitivity_fp({match_lesions(gt, gt)});
    ASSERT_TRUE(s.sensitivity);
    EXPECT_DOUBLE_EQ(*s.sensitivity, 1.0);
    EXPECT_DOUBLE_EQ(s.fp_per_case, 0.0);

    // negative volume with one false positive still counts in the denominator
    s = sensitivity_fp({match_lesions(gt, gt), match_lesions(fp, empty), match_lesions(empty, gt)});
    EXPECT_EQ(s.tp, 1u);
    EXPECT_EQ(s.fn, 1u);
    EXPECT_DOUBLE_EQ(*s.sensitivity, 0.5);
    EXPECT_DOUBLE_EQ(s.fp_per_case, 1.0 / 3);

    s = sensitivity_fp({match_lesions(fp, empty)});
    EXPECT_FALSE(s.sensitivity);
    EXPECT_TRUE(report_json({match_lesions(fp, empty)})["summary"]["sensitivity"].is_null());
    EXPECT_THROW(sensitivity_fp({}), Error);
}

TEST(SensitivityFp, NinetySixOfOneTwentySeven) {
    // 127 single-voxel lesions spread over volumes, 96 of them predicted exactly
    std::vector<MatchTable> tables;
    int placed = 0, hit = 0;
    while (placed < 127) {
        BinaryMask gt({16, 16, 16}), pred({16, 16, 16});
        for (long k = 0; k < 10 && placed < 127; ++k, ++placed) {
            gt(1 + (k % 5) * 3, 1 + (k / 5) * 7, 8) = 1;
            if (hit < 96) {
                pred(1 + (k % 5) * 3, 1 + (k / 5) * 7, 8) = 1;
                ++hit;
            }
        }
        tables.push_back(match_lesions(pred, gt));
    }
    const auto s = sensitivity_fp(tables);
    EXPECT_EQ(s.lesions, 127u);
    EXPECT_EQ(s.tp, 96u);
    EXPECT_NEAR(*s.sensitivity, 0.7559, 5e-5);
    EXPECT_EQ(s.fp, 0u);
}

TEST(Stratify, HandCountedSuite) {
    // six single-voxel lesions in one volume; detect lesions 1, 2, 4 and 6
    BinaryMask gt({40, 8, 8}), pred({40, 8, 8});
    for (int k = 0; k < 6; ++k) gt(2 + 6 * k, 4, 4) = 1;
    for (int k : {0, 1, 3, 5}) pred(2 + 6 * k, 4, 4) = 1;
    const auto t = match_lesions(pred, gt, "v1");
    std::istringstream csv(
        "lesion_id,volume_id,radius_mm,location_group\n"
        "1,v1,1.5,A\n2,v1,2.0,B\n3,v1,2.5,E-F-I-J\n4,v1,3.0,I\n5,v1,3.5,M\n6,v1,4.2,\n");
    const auto meta = read_lesion_metadata(csv);
    const auto st = stratify({t}, meta);
    auto find = [&](const std::string& name) {
        for (const auto& s : st)
            if (s.name == name) return s;
        return Stratum{};
    };
    EXPECT_EQ(find("<=2").lesions, 2u);
    EXPECT_EQ(find("<=2").detected, 2u);
    EXPECT_EQ(find("(2,3]").lesions, 2u);
    EXPECT_EQ(find("(2,3]").detected, 1u);
    EXPECT_DOUBLE_EQ(*find("(2,3]").sensitivity, 0.5);
    EXPECT_EQ(find(">3").lesions, 2u);
    EXPECT_DOUBLE_EQ(*find(">3").sensitivity, 0.5);
    EXPECT_EQ(find("A-B").lesions, 2u);
    EXPECT_EQ(find("E-F-I-J").lesions, 2u);
    EXPECT_EQ(find("E-F-I-J").detected, 1u);
    EXPECT_EQ(find("M-N-O").detected, 0u);
    EXPECT_DOUBLE_EQ(*find("M-N-O").sensitivity, 0.0);
    EXPECT_EQ(find("C-D").lesions, 0u);
    EXPECT_FALSE(find("C-D").sensitivity);

    std::ostringstream os;
    write_strata_csv(st, os);
    EXPECT_NE(os.str().find("location,C-D,0,0,NA\n"), std::string::npos);
    EXPECT_NE(os.str().find("size,<=2,2,2,1\n"), std::string::npos);
    EXPECT_EQ(report_json({t}, &st)["strata"].size(), 9u);
}

TEST(Stratify, SingleBinAndMissingRadius) {
    BinaryMask gt({10, 10, 10});
    gt(5, 5, 5) = 1;
    const auto t = match_lesions(gt, gt, "v");
    LesionMetaTable meta{{{"v", 1}, {"v", 1, 1.0, ""}}};
    const auto st = stratify({t}, meta);
    EXPECT_EQ(st[0].lesions, 1u);
    EXPECT_FALSE(st[1].sensitivity);
    EXPECT_FALSE(st[2].sensitivity);
    try {
        stratify({t}, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "missing_radius");
    }
    std::istringstream bad("volume_id,radius_mm\nv,1\n");
    EXPECT_THROW(read_lesion_metadata(bad), Error);
}

TEST(LocationGroup, LettersAndNames) {
    EXPECT_EQ(location_group("A"), "A-B");
    EXPECT_EQ(location_group("j"), "E-F-I-J");
    EXPECT_EQ(location_group("O"), "M-N-O");
    EXPECT_EQ(location_group("G-H"), "G-H");
    EXPECT_EQ(location_group("Z"), "");
    EXPECT_EQ(location_group(""), "");
}

TEST(EvaluateDirectories, ReadsMatchingMasks) {
    const auto pred = vt::temp_dir("eval_pred"), gt = vt::temp_dir("eval_gt");
    BinaryMask g({16, 16, 16}), p({16, 16, 16});
    ball(g, {8, 8, 8}, 3);
    p(1, 1, 1) = 1;
    write_mask(g, gt / "b.vvol");
    write_mask(g, pred / "b.vvol");
    write_mask(BinaryMask({16, 16, 16}), gt / "a.vvol");
    write_mask(p, pred / "a.vvol");
    const auto tables = evaluate_directories(pred, gt, 2);
    ASSERT_EQ(tables.size(), 2u);
    EXPECT_EQ(tables[0].volume_id, "a");
    const auto s = sensitivity_fp(tables);
    EXPECT_EQ(s.tp, 1u);
    EXPECT_DOUBLE_EQ(s.fp_per_case, 0.5);
    write_mask(g, gt / "c.vvol");
    EXPECT_THROW(evaluate_directories(pred, gt), Error);
}

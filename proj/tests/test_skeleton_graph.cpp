#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "vamos/components.hpp"
#include "vamos/graph.hpp"
#include "vamos/phantom.hpp"

using namespace vamos;
namespace vt = vamos::testing;

namespace {

constexpr double kPi = std::numbers::pi;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Distance from p to the polyline through `pts`.
double distance_to_polyline(Vec3 p, const std::vector<Vec3>& pts) {
    double best = 1e300;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const Vec3 a = pts[i - 1], ab = pts[i] - a;
        const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
        best = std::min(best, norm(p - (a + ab * t)));
    }
    return best;
}

double mid_radius_vox(const Branch& b, double spacing) {
    const std::size_t n = b.points.size();
    double s = 0;
    int c = 0;
    for (std::size_t i = n / 4; i < 3 * n / 4; ++i, ++c) s += b.radii_mm[i];
    return s / c / spacing;
}

// Quarter turn about z: (x, y, z) -> (n - 1 - y, x, z) on a cubic grid.
BinaryMask rotate_z(const BinaryMask& m) {
    const Dims d = m.dims();
    BinaryMask out(d, m.geometry(), 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) {
            const Index3 p = m.coord(i);
            out(d.x - 1 - p.y, p.x, p.z) = 1;
        }
    return out;
}

Branch line_branch(int a, int b, Index3 p0, Index3 d, int n, double r) {
    Branch br;
    br.ends = {a, b};
    for (int i = 0; i <= n; ++i) {
        br.points.push_back(p0 + Index3{d.x * i, d.y * i, d.z * i});
        br.radii_mm.push_back(r);
    }
    return br;
}

BinaryMask chain_mask(Dims d, const std::vector<Index3>& pts) {
    BinaryMask m(d, {}, 0);
    for (const Index3& p : pts) m[p] = 1;
    return m;
}

void expect_valid_graph(const VesselGraph& g) {
    for (const GraphNode& n : g.nodes) {
        EXPECT_EQ(n.kind == NodeKind::endpoint, n.degree == 1);
        EXPECT_EQ(n.kind == NodeKind::bifurcation, n.degree >= 3);
    }
    for (const Branch& b : g.branches) {
        ASSERT_GE(b.points.size(), 2u);
        EXPECT_LT(std::size_t(b.ends[0]), g.nodes.size());
        EXPECT_LT(std::size_t(b.ends[1]), g.nodes.size());
        EXPECT_EQ(b.points.front(), g.nodes[std::size_t(b.ends[0])].pos);
        EXPECT_EQ(b.points.back(), g.nodes[std::size_t(b.ends[1])].pos);
        for (std::size_t i = 1; i < b.points.size(); ++i) EXPECT_TRUE(is_neighbor_offset(b.points[i] - b.points[i - 1], 26));
        for (double r : b.radii_mm) EXPECT_GT(r, 0);
    }
}

}  // namespace

// ------------------------------------------------------------- skeletonize

TEST(Skeletonize, EmptyMask) {
    const BinaryMask m({10, 10, 10}, {}, 0);
    EXPECT_EQ(count_nonzero(skeletonize(m)), 0u);
}

TEST(Skeletonize, StraightTubeFollowsAxis) {
    const auto p = straight_tube_phantom({64, 64, 64}, 3, 40);
    const auto s = skeletonize(p.mask);
    EXPECT_EQ(connected_components(s, 26).count(), 1u);
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s[i]) continue;
        ++n;
        EXPECT_TRUE(p.mask[i]);
        EXPECT_LE(distance_to_polyline(s.coord(i).to_vec(), p.tubes[0].points), 1.0);
        // unit width: every non-terminal voxel has exactly two neighbours
        EXPECT_LE(foreground_degree(s, s.coord(i)), 2);
    }
    EXPECT_GT(n, 35u);
}

TEST(Skeletonize, BallCollapsesNearCentre) {
    const auto p = ball_phantom({40, 40, 40}, 9);
    const auto s = skeletonize(p.mask);
    EXPECT_GE(count_nonzero(s), 1u);
    EXPECT_LE(count_nonzero(s), 8u);
    EXPECT_EQ(connected_components(s, 26).count(), 1u);
    bool near_centre = false;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i]) {
            const Index3 q = s.coord(i) - Index3{20, 20, 20};
            near_centre = near_centre || std::max({std::labs(q.x), std::labs(q.y), std::labs(q.z)}) <= 1;
        }
    EXPECT_TRUE(near_centre);
}

TEST(Skeletonize, PreservesComponentsAndIsThin) {
    for (unsigned seed = 0; seed < 5; ++seed) {
        BinaryMask m({20, 20, 20}, {}, 0);
        std::mt19937 rng(seed);
        std::uniform_real_distribution<double> U(3, 17);
        for (int k = 0; k < 4; ++k) vt::paint_segment(m, {U(rng), U(rng), U(rng)}, {U(rng), U(rng), U(rng)}, 1.6);
        const auto s = skeletonize(m);
        EXPECT_EQ(connected_components(s, 26).count(), connected_components(m, 26).count()) << seed;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!s[i]) continue;
            EXPECT_TRUE(m[i]);
            if (foreground_degree(s, s.coord(i)) > 1) EXPECT_FALSE(is_simple_point(s, s.coord(i))) << seed;
        }
    }
}

TEST(Skeletonize, RingKeepsItsTunnel) {
    const auto p = ring_phantom();
    const auto g = extract_graph(p.mask);
    ASSERT_EQ(g.branches.size(), 1u);
    EXPECT_EQ(g.nodes.size(), 1u);
    EXPECT_EQ(g.branches[0].ends[0], g.branches[0].ends[1]);
}

TEST(Skeletonize, CommutesWithQuarterTurns) {
    YPhantomSpec y;
    y.dims = {48, 48, 48};
    y.node = {22, 25, 23};
    y.mother_len_vox = y.daughter_len_vox = 16;
    y.axis = {1, 0.2, 0.1};
    const auto m = y_phantom(y).mask;
    EXPECT_EQ(skeletonize(rotate_z(m)).data(), rotate_z(skeletonize(m)).data());
    const auto t = transform(m, CubeSymmetry{{2, 0, 1}, {true, false, true}});
    EXPECT_EQ(skeletonize(t).data(), transform(skeletonize(m), CubeSymmetry{{2, 0, 1}, {true, false, true}}).data());
}

TEST(CubeSymmetry, InvertUndoesApply) {
    const Dims d{5, 7, 3};
    EXPECT_EQ(cube_symmetries().size(), 48u);
    for (const CubeSymmetry& s : cube_symmetries())
        for (Index3 p : {Index3{0, 0, 0}, Index3{4, 6, 2}, Index3{1, 5, 0}}) {
            const Index3 q = s.apply(p, d);
            EXPECT_TRUE(s.apply(d).contains(q));
            EXPECT_EQ(s.invert(q, d), p);
        }
}

// ------------------------------------------------------------- build_graph

TEST(BuildGraph, StraightChain) {
    std::vector<Index3> pts;
    for (long x = 2; x < 12; ++x) pts.push_back({x, 5, 5});
    const auto s = chain_mask({16, 10, 10}, pts);
    const auto g = build_graph(s, VoxelVolume(s.dims(), {}, 1.0f));
    EXPECT_EQ(g.count(NodeKind::endpoint), 2u);
    EXPECT_EQ(g.count(NodeKind::bifurcation), 0u);
    ASSERT_EQ(g.branches.size(), 1u);
    EXPECT_EQ(g.branches[0].points.size(), 10u);
    expect_valid_graph(g);
}

TEST(BuildGraph, IsolatedVoxel) {
    const auto s = chain_mask({5, 5, 5}, {{2, 2, 2}});
    const auto g = build_graph(s, VoxelVolume(s.dims(), {}, 1.0f));
    ASSERT_EQ(g.nodes.size(), 1u);
    EXPECT_EQ(g.nodes[0].kind, NodeKind::isolated);
    EXPECT_TRUE(g.branches.empty());
}

TEST(BuildGraph, YPhantomCountsAndRadii) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = y_phantom();  // 128^3, radius 2 voxels
    const auto g = extract_graph(p.mask);
    EXPECT_LT(seconds_since(t0), 5.0);
    EXPECT_EQ(g.count(NodeKind::bifurcation), 1u);
    EXPECT_EQ(g.count(NodeKind::endpoint), 3u);
    EXPECT_EQ(g.branches.size(), 3u);
    for (const Branch& b : g.branches) EXPECT_NEAR(mid_radius_vox(b, 0.4), 2.0, 0.15 * 2.0);
    expect_valid_graph(g);
}

TEST(BuildGraph, StraightTubeAt128) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = straight_tube_phantom();
    const auto g = extract_graph(p.mask);
    EXPECT_LT(seconds_since(t0), 5.0);
    EXPECT_EQ(g.count(NodeKind::endpoint), 2u);
    ASSERT_EQ(g.branches.size(), 1u);
    EXPECT_NEAR(mid_radius_vox(g.branches[0], 0.4), 3.0, 0.15 * 3.0);
}

TEST(BuildGraph, RingInsertsOneNodeAtSmallestVoxel) {
    // octagon in the z = 5 plane, walked with unit 8-connected steps
    const std::vector<Index3> corners{{6, 3, 5}, {13, 3, 5}, {16, 6, 5}, {16, 13, 5}, {13, 16, 5}, {6, 16, 5}, {3, 13, 5}, {3, 6, 5}};
    std::vector<Index3> pts;
    for (std::size_t c = 0; c < corners.size(); ++c) {
        Index3 q = corners[c];
        const Index3 e = corners[(c + 1) % corners.size()];
        while (q != e) {
            pts.push_back(q);
            q = q + Index3{(e.x > q.x) - (e.x < q.x), (e.y > q.y) - (e.y < q.y), 0};
        }
    }
    const BinaryMask s = chain_mask({20, 20, 10}, pts);
    for (const Index3& q : pts) ASSERT_EQ(foreground_degree(s, q), 2);
    const auto g = build_graph(s, VoxelVolume(s.dims(), {}, 1.0f));
    ASSERT_EQ(g.nodes.size(), 1u);
    ASSERT_EQ(g.branches.size(), 1u);
    EXPECT_EQ(g.nodes[0].kind, NodeKind::passthrough);
    EXPECT_EQ(g.branches[0].ends[0], 0);
    EXPECT_EQ(g.branches[0].ends[1], 0);
    Index3 smallest{};
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i]) {
            smallest = s.coord(i);
            break;
        }
    EXPECT_EQ(g.nodes[0].pos, smallest);
    EXPECT_EQ(g.branches[0].points.size(), count_nonzero(s) + 1);
    expect_valid_graph(g);
}

TEST(BuildGraph, ShippedPhantomsReproduceDesignedCounts) {
    for (const Phantom& p : {straight_tube_phantom({64, 64, 64}), y_phantom(), helix_phantom(), ring_phantom()}) {
        const auto g = extract_graph(p.mask);
        EXPECT_EQ(g.count(NodeKind::bifurcation), p.bifurcations.size()) << p.name;
        EXPECT_EQ(g.count(NodeKind::endpoint), std::size_t(p.endpoints)) << p.name;
    }
}

TEST(BuildGraph, EverySkeletonVoxelCovered) {
    const auto p = y_phantom();
    const auto s = skeletonize(p.mask);
    const auto g = build_graph(s, distance_transform(p.mask));
    std::size_t total = g.nodes.size();
    for (const Branch& b : g.branches) total += b.points.size() - 1;
    EXPECT_GE(total, count_nonzero(s));
    BinaryMask seen(s.dims(), {}, 0);
    for (const Branch& b : g.branches)
        for (const Index3& q : b.points) seen[q] = 1;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i]) EXPECT_TRUE(seen[i]);
}

TEST(BuildGraph, RadiiSampledFromDistanceTransform) {
    const auto p = y_phantom();
    const auto dt = distance_transform(p.mask);
    const auto g = build_graph(skeletonize(p.mask), dt);
    for (const Branch& b : g.branches)
        for (std::size_t i = 0; i < b.points.size(); ++i) EXPECT_DOUBLE_EQ(b.radii_mm[i], std::max(double(dt[b.points[i]]), 0.2));
}

TEST(BuildGraph, RejectsThickSkeleton) {
    const auto s = chain_mask({6, 6, 6}, {{2, 2, 2}, {3, 2, 2}, {2, 3, 2}, {3, 3, 2}});
    try {
        build_graph(s, VoxelVolume(s.dims(), {}, 1.0f));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "malformed_skeleton");
    }
    EXPECT_THROW(build_graph(s, VoxelVolume({5, 5, 5})), Error);
}

// ------------------------------------------------------------- prune_spurs

TEST(PruneSpurs, RemovesHairAndRecoversY) {
    const auto p = y_phantom();
    const auto s = skeletonize(p.mask);
    const auto dt = distance_transform(p.mask);
    const auto base = prune_spurs(build_graph(s, dt), 2.0);

    // two-voxel hair leaving a diagonal daughter sideways, in plane
    const Branch* diag = nullptr;
    for (const Branch& b : base.branches) {
        const Index3 d = b.points[1] - b.points[0];
        if (d.x != 0 && d.y != 0 && d.z == 0) diag = &b;
    }
    ASSERT_NE(diag, nullptr);
    const std::size_t mid = diag->points.size() / 2;
    const Index3 root = diag->points[mid];
    const Index3 d = diag->points[mid + 1] - root;
    const Index3 perp{-d.y, d.x, 0};
    BinaryMask hairy = s;
    hairy[root + perp] = 1;
    hairy[root + perp + perp] = 1;
    const auto raw = build_graph(hairy, dt);
    EXPECT_EQ(raw.count(NodeKind::bifurcation), 2u);
    EXPECT_EQ(raw.branches.size(), 5u);
    const auto pruned = prune_spurs(raw, 2.0);
    EXPECT_EQ(graph_to_json(pruned), graph_to_json(base));
    EXPECT_EQ(pruned.count(NodeKind::bifurcation), 1u);
    EXPECT_EQ(pruned.count(NodeKind::endpoint), 3u);
}

TEST(PruneSpurs, IdempotentAndNoOpWithoutShortBranches) {
    const auto p = y_phantom();
    const auto g = build_graph(skeletonize(p.mask), distance_transform(p.mask));
    const auto once = prune_spurs(g, 2.0);
    EXPECT_EQ(graph_to_json(prune_spurs(once, 2.0)), graph_to_json(once));
    EXPECT_EQ(graph_to_json(prune_spurs(once, 0.5)), graph_to_json(once));
}

TEST(PruneSpurs, KeepsCyclesAndLongBranches) {
    const auto ring = ring_phantom();
    const auto g = prune_spurs(build_graph(skeletonize(ring.mask), distance_transform(ring.mask)), 100.0);
    EXPECT_EQ(g.branches.size(), 1u);
    const auto tube = straight_tube_phantom({64, 64, 64});
    const auto t = prune_spurs(build_graph(skeletonize(tube.mask), distance_transform(tube.mask)), 100.0);
    EXPECT_EQ(t.branches.size(), 1u);  // no junction to hang off
}

// ------------------------------------------------------- bifurcation_locale

TEST(BifurcationLocale, PlanarYAtPlusMinus45) {
    const auto p = y_phantom();
    const auto g = extract_graph(p.mask);
    int node = -1;
    for (const GraphNode& n : g.nodes)
        if (n.kind == NodeKind::bifurcation) node = n.id;
    ASSERT_GE(node, 0);
    const auto loc = bifurcation_locale(g, node);
    EXPECT_NEAR(loc.theta, kPi / 2, 5 * kPi / 180);
    EXPECT_NEAR(norm(loc.tangents[0]), 1.0, 1e-12);
    EXPECT_NEAR(norm(loc.tangents[1]), 1.0, 1e-12);
    EXPECT_LT(loc.mother_tangent.x, -0.9);  // mother comes in along +x
    EXPECT_GT(loc.radius_mm, 0);
    EXPECT_NEAR(loc.radius_mm, 0.8, 0.15 * 0.8);
    EXPECT_LE(norm(loc.node_world - g.geom.to_world(p.bifurcations[0])), 2 * 0.4 * std::sqrt(3.0));
}

TEST(BifurcationLocale, CollinearDaughters) {
    VesselGraph g;
    g.dims = {20, 20, 20};
    g.nodes = {{0, {10, 10, 10}, NodeKind::bifurcation, 3}, {1, {10, 2, 10}, NodeKind::endpoint, 1},
               {2, {2, 10, 10}, NodeKind::endpoint, 1}, {3, {18, 10, 10}, NodeKind::endpoint, 1}};
    g.branches = {line_branch(0, 1, {10, 10, 10}, {0, -1, 0}, 8, 1.0), line_branch(0, 2, {10, 10, 10}, {-1, 0, 0}, 8, 1.0),
                  line_branch(0, 3, {10, 10, 10}, {1, 0, 0}, 8, 1.0)};
    canonicalize(g);
    const auto loc = bifurcation_locale(g, 0, kDefaultTangentWindowMm, 0);
    EXPECT_NEAR(loc.theta, kPi, 1e-12);
    EXPECT_EQ(loc.daughters[0], 1);
    EXPECT_EQ(loc.daughters[1], 2);
}

TEST(BifurcationLocale, RadiusIsMeanOfDaughters) {
    VesselGraph g;
    g.dims = {20, 20, 20};
    g.nodes = {{0, {10, 10, 10}, NodeKind::bifurcation, 3}, {1, {2, 10, 10}, NodeKind::endpoint, 1},
               {2, {18, 18, 10}, NodeKind::endpoint, 1}, {3, {18, 2, 10}, NodeKind::endpoint, 1}};
    g.branches = {line_branch(0, 1, {10, 10, 10}, {-1, 0, 0}, 8, 2.0), line_branch(0, 2, {10, 10, 10}, {1, 1, 0}, 8, 1.0),
                  line_branch(0, 3, {10, 10, 10}, {1, -1, 0}, 8, 1.4)};
    canonicalize(g);
    const auto loc = bifurcation_locale(g, 0);
    EXPECT_EQ(loc.mother, 0);
    EXPECT_NEAR(loc.radius_mm, 1.2, 1e-12);
    EXPECT_NEAR(loc.theta, kPi / 2, 1e-12);
}

TEST(BifurcationLocale, Errors) {
    VesselGraph g;
    g.dims = {20, 20, 20};
    g.nodes = {{0, {10, 10, 10}, NodeKind::bifurcation, 4}};
    for (Index3 d : {Index3{1, 0, 0}, Index3{-1, 0, 0}, Index3{0, 1, 0}, Index3{0, -1, 0}}) {
        Branch b;
        b.ends = {0, int(g.nodes.size())};
        for (int i = 0; i <= 5; ++i) {
            b.points.push_back(Index3{10, 10, 10} + Index3{d.x * i, d.y * i, 0});
            b.radii_mm.push_back(1);
        }
        g.nodes.push_back({int(g.nodes.size()), b.points.back(), NodeKind::endpoint, 1});
        g.branches.push_back(b);
    }
    canonicalize(g);
    try {
        bifurcation_locale(g, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "unsupported_degree");
    }
    EXPECT_THROW(bifurcation_locale(g, 1), Error);
    EXPECT_THROW(bifurcation_locale(g, 99), Error);
}

TEST(BifurcationLocale, InvariantUnderQuarterTurns) {
    YPhantomSpec s;
    s.dims = {64, 64, 64};
    s.node = {31.5, 31.5, 32};  // rotation centre of the grid
    s.mother_len_vox = s.daughter_len_vox = 24;
    s.axis = {1, 0.3, 0};
    const auto p = y_phantom(s);
    auto theta_of = [](const BinaryMask& m) {
        const auto g = extract_graph(m);
        for (const GraphNode& n : g.nodes)
            if (n.kind == NodeKind::bifurcation) return bifurcation_locale(g, n.id).theta;
        return -1.0;
    };
    const double t0 = theta_of(p.mask);
    ASSERT_GT(t0, 0);
    BinaryMask m = p.mask;
    for (int k = 1; k < 4; ++k) {
        m = rotate_z(m);
        EXPECT_NEAR(theta_of(m), t0, 1e-6) << "quarter turns: " << k;
    }
}

// ---------------------------------------------------------- crop_around_node

TEST(CropAroundNode, CentresNodeAndClipsBranches) {
    const auto p = y_phantom();
    const auto g = extract_graph(p.mask);
    int node = -1;
    for (const GraphNode& n : g.nodes)
        if (n.kind == NodeKind::bifurcation) node = n.id;
    const auto [patch, sub, nid] = crop_around_node(p.gray, g, node, {64, 64, 64});
    ASSERT_GE(nid, 0);
    EXPECT_EQ(sub.nodes[std::size_t(nid)].pos, (Index3{32, 32, 32}));
    EXPECT_EQ(patch.dims(), (Dims{64, 64, 64}));
    // world position preserved by the origin shift
    const Vec3 w0 = g.world(g.nodes[std::size_t(node)].pos), w1 = sub.world(sub.nodes[std::size_t(nid)].pos);
    EXPECT_NEAR(norm(w0 - w1), 0.0, 1e-9);
    EXPECT_NEAR(norm(patch.world_of({32, 32, 32}) - w0), 0.0, 1e-9);
    EXPECT_EQ(patch(32, 32, 32), p.gray[g.nodes[std::size_t(node)].pos]);
    // the 40-voxel branches leave the 64^3 box: their clip points sit on a face
    int on_face = 0;
    for (const GraphNode& n : sub.nodes) {
        if (n.kind != NodeKind::endpoint) continue;
        const Index3 q = n.pos;
        if (q.x == 0 || q.y == 0 || q.z == 0 || q.x == 63 || q.y == 63 || q.z == 63) ++on_face;
    }
    EXPECT_EQ(on_face, 1);  // only the mother leaves the box
    const auto [small, sub48, nid48] = crop_around_node(p.gray, g, node, {48, 48, 48});
    int clipped = 0;
    for (const GraphNode& n : sub48.nodes) {
        const Index3 q = n.pos;
        if (n.kind == NodeKind::endpoint && (q.x == 0 || q.y == 0 || q.z == 0 || q.x == 47 || q.y == 47 || q.z == 47)) ++clipped;
    }
    EXPECT_EQ(sub48.nodes[std::size_t(nid48)].pos, (Index3{24, 24, 24}));
    EXPECT_EQ(clipped, 3);
    EXPECT_EQ(sub.count(NodeKind::bifurcation), 1u);
    expect_valid_graph(sub);
}

TEST(CropAroundNode, PadsOutsideTheVolume) {
    const auto p = straight_tube_phantom({64, 64, 64});
    const auto g = extract_graph(p.mask);
    const auto [patch, sub, nid] = crop_around_node(p.mask, g, 0, {64, 64, 64}, std::uint8_t{0});
    EXPECT_GE(nid, 0);
    EXPECT_LE(count_nonzero(patch), count_nonzero(p.mask));
}

// ------------------------------------------------------------------- JSON

TEST(GraphJson, RoundTrip) {
    const auto p = y_phantom();
    const auto g = extract_graph(p.mask);
    const auto j = graph_to_json(g);
    const auto back = graph_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(graph_to_json(back), j);
    EXPECT_EQ(back.nodes.size(), g.nodes.size());
    EXPECT_EQ(back.geom, g.geom);
    EXPECT_THROW(graph_from_json(nlohmann::json{{"nodes", 3}}), Error);
}

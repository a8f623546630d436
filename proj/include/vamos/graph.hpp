#ifndef VAMOS_GRAPH_HPP
#define VAMOS_GRAPH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/distance.hpp"
#include "vamos/skeleton.hpp"
#include "vamos/volume.hpp"

namespace vamos {

/// endpoint: degree 1; bifurcation: degree >= 3; passthrough: degree 2
/// (cycle breakers and merged junctions); isolated: degree 0 (point skeleton).
enum class NodeKind { endpoint, bifurcation, passthrough, isolated };

inline std::string to_string(NodeKind k) {
    switch (k) {
        case NodeKind::endpoint: return "endpoint";
        case NodeKind::bifurcation: return "bifurcation";
        case NodeKind::passthrough: return "passthrough";
        case NodeKind::isolated: return "isolated";
    }
    return "?";
}

inline NodeKind kind_for_degree(int degree) {
    if (degree == 0) return NodeKind::isolated;
    if (degree == 1) return NodeKind::endpoint;
    if (degree == 2) return NodeKind::passthrough;
    return NodeKind::bifurcation;
}

struct GraphNode {
    int id = 0;
    Index3 pos;
    NodeKind kind = NodeKind::isolated;
    int degree = 0;
};

/// Ordered centerline from node ends[0] to node ends[1]; points.front() and
/// points.back() are the node positions.
struct Branch {
    int id = 0;
    std::array<int, 2> ends{0, 0};
    std::vector<Index3> points;
    std::vector<double> radii_mm;
};

struct VesselGraph {
    Dims dims;
    Geometry geom;
    std::vector<GraphNode> nodes;  // nodes[i].id == i
    std::vector<Branch> branches;  // branches[i].id == i

    std::size_t count(NodeKind k) const {
        return std::size_t(std::count_if(nodes.begin(), nodes.end(), [k](const GraphNode& n) { return n.kind == k; }));
    }
    const GraphNode& node(int id) const {
        if (id < 0 || std::size_t(id) >= nodes.size()) throw Error("unknown_node", "no node with id " + std::to_string(id));
        return nodes[std::size_t(id)];
    }
    std::vector<int> incident(int node_id) const {
        std::vector<int> out;
        for (const Branch& b : branches) {
            if (b.ends[0] == node_id) out.push_back(b.id);
            if (b.ends[1] == node_id) out.push_back(b.id);
        }
        return out;
    }
    Vec3 world(Index3 p) const { return geom.to_world(p.to_vec()); }
};

/// Geodesic length of a branch in mm.
inline double branch_length_mm(const Branch& b, const Geometry& g) {
    double len = 0;
    for (std::size_t i = 1; i < b.points.size(); ++i)
        len += norm(hadamard((b.points[i] - b.points[i - 1]).to_vec(), g.spacing));
    return len;
}

/// Recomputes degree/kind from branch ends and renumbers nodes and branches
/// densely, dropping nodes no branch references unless they are isolated.
inline std::map<int, int> canonicalize(VesselGraph& g, bool drop_orphans = true) {
    std::map<int, int> degree;
    for (const Branch& b : g.branches) {
        ++degree[b.ends[0]];
        ++degree[b.ends[1]];
    }
    std::map<int, int> remap;
    std::vector<GraphNode> nodes;
    for (const GraphNode& n : g.nodes) {
        const int d = degree.count(n.id) ? degree[n.id] : 0;
        if (d == 0 && drop_orphans && n.kind != NodeKind::isolated) continue;
        GraphNode m = n;
        m.degree = d;
        m.kind = kind_for_degree(d);
        m.id = int(nodes.size());
        remap[n.id] = m.id;
        nodes.push_back(m);
    }
    for (std::size_t i = 0; i < g.branches.size(); ++i) {
        Branch& b = g.branches[i];
        b.id = int(i);
        b.ends = {remap.at(b.ends[0]), remap.at(b.ends[1])};
    }
    g.nodes = std::move(nodes);
    return remap;
}

namespace detail {

inline bool has_square(const BinaryMask& s, Index3 p) {
    // any axis-aligned 2x2 square with p as its lowest corner
    static constexpr std::array<std::array<Index3, 3>, 3> squares{{
        {{{1, 0, 0}, {0, 1, 0}, {1, 1, 0}}},
        {{{1, 0, 0}, {0, 0, 1}, {1, 0, 1}}},
        {{{0, 1, 0}, {0, 0, 1}, {0, 1, 1}}},
    }};
    for (const auto& sq : squares) {
        bool full = true;
        for (const Index3& d : sq) full = full && s.at_or(p + d, 0) != 0;
        if (full) return true;
    }
    return false;
}

}  // namespace detail

/// Builds the branch/node graph of a unit-width skeleton. Adjacent voxels
/// with a neighbour count other than two are merged into one node.
/// `radii_mm` is the distance transform of the original vessel mask.
inline VesselGraph build_graph(const BinaryMask& skel, const VoxelVolume& radii_mm) {
    if (skel.dims() != radii_mm.dims()) throw Error("dims_mismatch", "build_graph: radii grid differs from skeleton");
    VesselGraph g;
    g.dims = skel.dims();
    g.geom = skel.geometry();
    const double min_radius = 0.5 * std::min({g.geom.spacing.x, g.geom.spacing.y, g.geom.spacing.z});

    std::vector<std::size_t> vox;
    for (std::size_t i = 0; i < skel.size(); ++i)
        if (skel[i]) vox.push_back(i);
    std::map<std::size_t, int> deg;
    for (std::size_t i : vox) {
        const Index3 p = skel.coord(i);
        if (detail::has_square(skel, p))
            throw Error("malformed_skeleton", "skeleton is not unit-width near voxel (" + std::to_string(p.x) + "," +
                                                  std::to_string(p.y) + "," + std::to_string(p.z) + ")");
        deg[i] = foreground_degree(skel, p);
    }

    // cluster node voxels
    std::map<std::size_t, int> cluster_of;
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i : vox) {
        if (deg[i] == 2 || cluster_of.count(i)) continue;
        const int cid = int(clusters.size());
        clusters.emplace_back();
        std::vector<std::size_t> st{i};
        cluster_of[i] = cid;
        while (!st.empty()) {
            const std::size_t c = st.back();
            st.pop_back();
            clusters[std::size_t(cid)].push_back(c);
            for (const Index3& d : neighbors26()) {
                const Index3 q = skel.coord(c) + d;
                if (!skel.contains(q) || !skel[q]) continue;
                const std::size_t j = skel.index(q);
                if (deg[j] != 2 && !cluster_of.count(j)) {
                    cluster_of[j] = cid;
                    st.push_back(j);
                }
            }
        }
        std::sort(clusters[std::size_t(cid)].begin(), clusters[std::size_t(cid)].end());
    }
    std::vector<std::size_t> rep(clusters.size());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        Vec3 centroid;
        for (std::size_t i : clusters[c]) centroid += skel.coord(i).to_vec();
        centroid = centroid / double(clusters[c].size());
        double best = 1e300;
        for (std::size_t i : clusters[c]) {
            const double dd = norm(skel.coord(i).to_vec() - centroid);
            if (dd < best - 1e-12) {
                best = dd;
                rep[c] = i;
            }
        }
        g.nodes.push_back({int(c), skel.coord(rep[c]), NodeKind::isolated, 0});
    }

    // path inside a cluster from its representative to voxel v (26-adjacent steps)
    auto cluster_path = [&](int cid, std::size_t v) {
        std::map<std::size_t, std::size_t> parent;
        std::queue<std::size_t> q;
        q.push(rep[std::size_t(cid)]);
        parent[rep[std::size_t(cid)]] = rep[std::size_t(cid)];
        while (!q.empty()) {
            const std::size_t c = q.front();
            q.pop();
            if (c == v) break;
            for (const Index3& d : neighbors26()) {
                const Index3 p = skel.coord(c) + d;
                if (!skel.contains(p)) continue;
                const std::size_t j = skel.index(p);
                auto it = cluster_of.find(j);
                if (it == cluster_of.end() || it->second != cid || parent.count(j)) continue;
                parent[j] = c;
                q.push(j);
            }
        }
        std::vector<std::size_t> path{v};
        while (path.back() != rep[std::size_t(cid)]) path.push_back(parent.at(path.back()));
        std::reverse(path.begin(), path.end());
        return path;  // rep ... v
    };

    auto add_branch = [&](std::vector<std::size_t> chain, int a, int b) {
        Branch br;
        br.id = int(g.branches.size());
        br.ends = {a, b};
        for (std::size_t i : chain) {
            br.points.push_back(skel.coord(i));
            br.radii_mm.push_back(std::max(double(radii_mm[i]), min_radius));
        }
        g.branches.push_back(std::move(br));
    };

    std::set<std::size_t> visited;
    std::set<std::pair<std::size_t, std::size_t>> direct;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (std::size_t v : clusters[c]) {
            for (const Index3& d : neighbors26()) {
                const Index3 p = skel.coord(v) + d;
                if (!skel.contains(p) || !skel[p]) continue;
                const std::size_t w = skel.index(p);
                if (auto it = cluster_of.find(w); it != cluster_of.end()) {
                    const int other = it->second;
                    if (other == int(c) || !direct.insert({std::min(v, w), std::max(v, w)}).second) continue;
                    auto chain = cluster_path(int(c), v);
                    auto tail = cluster_path(other, w);
                    chain.insert(chain.end(), tail.rbegin(), tail.rend());
                    add_branch(std::move(chain), int(c), other);
                    continue;
                }
                if (visited.count(w)) continue;
                std::vector<std::size_t> chain = cluster_path(int(c), v);
                std::size_t prev = v, cur = w;
                int end_cluster = -1;
                std::size_t end_voxel = 0;
                while (true) {
                    visited.insert(cur);
                    chain.push_back(cur);
                    std::size_t next = cur;
                    bool found = false;
                    for (const Index3& e : neighbors26()) {
                        const Index3 q = skel.coord(cur) + e;
                        if (!skel.contains(q) || !skel[q]) continue;
                        const std::size_t j = skel.index(q);
                        if (j == prev) continue;
                        next = j;
                        found = true;
                        break;
                    }
                    if (!found) throw Error("malformed_skeleton", "broken chain while tracing skeleton");
                    if (auto it = cluster_of.find(next); it != cluster_of.end()) {
                        end_cluster = it->second;
                        end_voxel = next;
                        break;
                    }
                    if (visited.count(next)) throw Error("malformed_skeleton", "chain revisits a voxel");
                    prev = cur;
                    cur = next;
                }
                auto tail = cluster_path(end_cluster, end_voxel);
                chain.insert(chain.end(), tail.rbegin(), tail.rend());
                add_branch(std::move(chain), int(c), end_cluster);
            }
        }
    }

    // cycles without any node: break at the smallest voxel
    for (std::size_t i : vox) {
        if (deg[i] != 2 || visited.count(i)) continue;
        const int nid = int(g.nodes.size());
        g.nodes.push_back({nid, skel.coord(i), NodeKind::passthrough, 0});
        std::vector<std::size_t> chain{i};
        visited.insert(i);
        auto next_of = [&](std::size_t c, std::size_t from) {
            for (const Index3& e : neighbors26()) {
                const Index3 q = skel.coord(c) + e;
                if (!skel.contains(q) || !skel[q]) continue;
                const std::size_t j = skel.index(q);
                if (j != from) return j;
            }
            throw Error("malformed_skeleton", "open chain without endpoints");
        };
        std::size_t prev = i, cur = next_of(i, i);
        while (true) {
            visited.insert(cur);
            chain.push_back(cur);
            const std::size_t next = next_of(cur, prev);
            if (next == i) {
                chain.push_back(i);
                break;
            }
            prev = cur;
            cur = next;
        }
        add_branch(std::move(chain), nid, nid);
    }
    canonicalize(g, false);
    return g;
}

/// Forward declared for extract_graph.
inline VesselGraph prune_spurs(VesselGraph g, double min_length_mm);

inline constexpr double kDefaultSpurLengthMm = 2.0;

/// skeletonize -> build_graph with distance-transform radii -> prune_spurs,
/// all carried out in the canonical frame of the mask and mapped back.
inline VesselGraph extract_graph(const BinaryMask& mask, double spur_mm = kDefaultSpurLengthMm) {
    VesselGraph out;
    out.dims = mask.dims();
    out.geom = mask.geometry();
    if (count_nonzero(mask) == 0) return out;
    const CanonicalFrame f = canonical_frame(mask);
    const BinaryMask local = transform(crop_at(mask, f.start, f.box, std::uint8_t{0}), f.sym);
    const VoxelVolume radii = transform(crop_at(distance_transform(mask), f.start, f.box, 0.0f), f.sym);
    VesselGraph g = build_graph(detail::thin(local), radii);
    if (spur_mm > 0) g = prune_spurs(std::move(g), spur_mm);
    auto back = [&](Index3 q) { return f.sym.invert(q, f.box) + f.start; };
    out.nodes = std::move(g.nodes);
    out.branches = std::move(g.branches);
    for (GraphNode& n : out.nodes) n.pos = back(n.pos);
    for (Branch& b : out.branches)
        for (Index3& q : b.points) q = back(q);
    return out;
}

/// Orients a branch's points (and radii) so that they start at `node_id`.
inline Branch oriented_from(const Branch& b, int node_id) {
    Branch out = b;
    if (b.ends[0] != node_id && b.ends[1] == node_id) {
        std::reverse(out.points.begin(), out.points.end());
        std::reverse(out.radii_mm.begin(), out.radii_mm.end());
        std::swap(out.ends[0], out.ends[1]);
    }
    return out;
}

/// Removes endpoint-terminated branches shorter than `min_length_mm` that
/// hang off a junction, then merges the degree-2 nodes this leaves behind.
/// Repeats until nothing changes, so it is idempotent.
inline VesselGraph prune_spurs(VesselGraph g, double min_length_mm) {
    bool changed = true;
    while (changed) {
        changed = false;
        canonicalize(g);
        // remove spurs
        std::vector<bool> drop(g.branches.size(), false);
        for (const Branch& b : g.branches) {
            const int d0 = g.nodes[std::size_t(b.ends[0])].degree, d1 = g.nodes[std::size_t(b.ends[1])].degree;
            const bool spur = (d0 == 1 && d1 >= 3) || (d1 == 1 && d0 >= 3);
            if (spur && branch_length_mm(b, g.geom) < min_length_mm) drop[std::size_t(b.id)] = true;
        }
        // never strip every branch off a junction in one round
        std::vector<Branch> kept;
        for (const Branch& b : g.branches)
            if (!drop[std::size_t(b.id)]) kept.push_back(b);
        if (kept.size() != g.branches.size()) {
            g.branches = std::move(kept);
            changed = true;
            canonicalize(g);
        }
        // merge passthrough nodes joining two distinct branches
        for (const GraphNode& n : g.nodes) {
            if (n.degree != 2) continue;
            const auto inc = g.incident(n.id);
            if (inc.size() != 2 || inc[0] == inc[1]) continue;
            Branch a = oriented_from(g.branches[std::size_t(inc[0])], n.id);
            Branch b = oriented_from(g.branches[std::size_t(inc[1])], n.id);
            std::reverse(a.points.begin(), a.points.end());
            std::reverse(a.radii_mm.begin(), a.radii_mm.end());
            Branch merged;
            merged.ends = {a.ends[1], b.ends[1]};
            merged.points = a.points;
            merged.radii_mm = a.radii_mm;
            merged.points.insert(merged.points.end(), b.points.begin() + 1, b.points.end());
            merged.radii_mm.insert(merged.radii_mm.end(), b.radii_mm.begin() + 1, b.radii_mm.end());
            std::vector<Branch> next;
            for (const Branch& x : g.branches)
                if (x.id != inc[0] && x.id != inc[1]) next.push_back(x);
            next.push_back(std::move(merged));
            g.branches = std::move(next);
            changed = true;
            break;  // node ids are stale now; restart
        }
    }
    canonicalize(g);
    return g;
}

/// Local geometry of a degree-3 junction.
struct BifurcationLocale {
    int node = -1;
    int mother = -1;
    std::array<int, 2> daughters{-1, -1};
    std::array<Vec3, 2> tangents;  // unit, world frame, pointing away from the node
    Vec3 mother_tangent;
    double theta = 0;     // angle between the daughter tangents, radians
    double radius_mm = 0; // mean daughter radius over the tangent window
    Vec3 node_world;
};

inline constexpr double kDefaultTangentWindowMm = 2.0;

namespace detail {

struct BranchWindow {
    Vec3 tangent;
    double mean_radius = 0;
};

inline BranchWindow branch_window(const VesselGraph& g, const Branch& oriented, double window_mm) {
    if (oriented.points.size() < 2) throw Error("short_branch", "branch shorter than one voxel");
    const Vec3 origin = g.world(oriented.points[0]);
    Vec3 acc;
    double rsum = 0;
    int n = 0;
    double len = 0;
    for (std::size_t i = 1; i < oriented.points.size(); ++i) {
        len += norm(g.world(oriented.points[i]) - g.world(oriented.points[i - 1]));
        if (len > window_mm && n > 0) break;
        acc += g.world(oriented.points[i]);
        rsum += oriented.radii_mm[i];
        ++n;
    }
    return {normalized(acc / double(n) - origin), rsum / n};
}

}  // namespace detail

/// Daughter tangents, inter-daughter angle and local radius at a degree-3
/// node. When `mother` is not given, the daughters are the pair of branches
/// with the smallest angle between their tangents.
inline BifurcationLocale bifurcation_locale(const VesselGraph& g, int node_id,
                                            double tangent_window_mm = kDefaultTangentWindowMm,
                                            std::optional<int> mother = std::nullopt) {
    const GraphNode& n = g.node(node_id);
    const auto inc = g.incident(node_id);
    if (inc.size() != 3 || n.degree != 3)
        throw Error("unsupported_degree", "bifurcation_locale needs a degree-3 node, node " + std::to_string(node_id) +
                                              " has degree " + std::to_string(inc.size()));
    if (inc[0] == inc[1] || inc[1] == inc[2] || inc[0] == inc[2])
        throw Error("unsupported_degree", "bifurcation_locale: self-loop at node");
    std::array<detail::BranchWindow, 3> w;
    for (int i = 0; i < 3; ++i)
        w[std::size_t(i)] = detail::branch_window(g, oriented_from(g.branches[std::size_t(inc[std::size_t(i)])], node_id),
                                                  tangent_window_mm);
    int m = -1;
    if (mother) {
        for (int i = 0; i < 3; ++i)
            if (inc[std::size_t(i)] == *mother) m = i;
        if (m < 0) throw Error("unknown_branch", "mother branch is not incident to the node");
    } else {
        double best = -2;
        for (int i = 0; i < 3; ++i) {
            const int a = (i + 1) % 3, b = (i + 2) % 3;
            const double c = dot(w[std::size_t(a)].tangent, w[std::size_t(b)].tangent);
            if (c > best + 1e-12) {
                best = c;
                m = i;
            }
        }
    }
    std::array<int, 2> dd{(m + 1) % 3, (m + 2) % 3};
    if (inc[std::size_t(dd[0])] > inc[std::size_t(dd[1])]) std::swap(dd[0], dd[1]);
    BifurcationLocale loc;
    loc.node = node_id;
    loc.mother = inc[std::size_t(m)];
    loc.daughters = {inc[std::size_t(dd[0])], inc[std::size_t(dd[1])]};
    loc.tangents = {w[std::size_t(dd[0])].tangent, w[std::size_t(dd[1])].tangent};
    loc.mother_tangent = w[std::size_t(m)].tangent;
    loc.theta = std::acos(std::clamp(dot(loc.tangents[0], loc.tangents[1]), -1.0, 1.0));
    if (!(loc.theta > 0)) throw Error("degenerate_locale", "daughter tangents coincide");
    loc.radius_mm = 0.5 * (w[std::size_t(dd[0])].mean_radius + w[std::size_t(dd[1])].mean_radius);
    loc.node_world = g.world(n.pos);
    return loc;
}

/// Restricts a graph to the box [start, start + size) and rebases voxel
/// coordinates into that box. Branches are split where they leave the box;
/// clip points become endpoint nodes.
inline VesselGraph restrict_graph(const VesselGraph& g, Index3 start, Dims size, std::map<int, int>* node_map = nullptr) {
    VesselGraph out;
    out.dims = size;
    out.geom = g.geom;
    out.geom.origin = g.geom.to_world(start.to_vec());
    std::map<int, int> kept;
    auto inside = [&](Index3 p) { return size.contains(p - start); };
    auto keep_node = [&](int id) {
        if (auto it = kept.find(id); it != kept.end()) return it->second;
        const int nid = int(out.nodes.size());
        out.nodes.push_back({nid, g.nodes[std::size_t(id)].pos - start, g.nodes[std::size_t(id)].kind, 0});
        kept[id] = nid;
        return nid;
    };
    auto new_endpoint = [&](Index3 p) {
        const int nid = int(out.nodes.size());
        out.nodes.push_back({nid, p - start, NodeKind::endpoint, 0});
        return nid;
    };
    for (const GraphNode& n : g.nodes)
        if (inside(n.pos)) keep_node(n.id);
    for (const Branch& b : g.branches) {
        std::size_t i = 0;
        const std::size_t np = b.points.size();
        while (i < np) {
            if (!inside(b.points[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j + 1 < np && inside(b.points[j + 1])) ++j;
            Branch nb;
            nb.id = int(out.branches.size());
            for (std::size_t k = i; k <= j; ++k) {
                nb.points.push_back(b.points[k] - start);
                nb.radii_mm.push_back(b.radii_mm[k]);
            }
            const int a = i == 0 ? keep_node(b.ends[0]) : new_endpoint(b.points[i]);
            const int e = j == np - 1 ? keep_node(b.ends[1]) : new_endpoint(b.points[j]);
            nb.ends = {a, e};
            if (nb.points.size() >= 2) out.branches.push_back(std::move(nb));
            i = j + 1;
        }
    }
    const auto remap = canonicalize(out, true);
    if (node_map) {
        node_map->clear();
        for (const auto& [orig, nid] : kept)
            if (auto it = remap.find(nid); it != remap.end()) (*node_map)[orig] = it->second;
    }
    return out;
}

/// Crops `vol` to `size` voxels centred on a node and restricts the graph to
/// the same box. Returns the new id of the node inside the restricted graph.
template <typename T>
std::tuple<Volume<T>, VesselGraph, int> crop_around_node(const Volume<T>& vol, const VesselGraph& g, int node_id,
                                                         Dims size, T pad = T{}) {
    const GraphNode& n = g.node(node_id);
    const Index3 start{n.pos.x - size.x / 2, n.pos.y - size.y / 2, n.pos.z - size.z / 2};
    Volume<T> patch = crop_at(vol, start, size, pad);
    std::map<int, int> nm;
    VesselGraph sub = restrict_graph(g, start, size, &nm);
    const int new_id = nm.count(node_id) ? nm[node_id] : -1;
    return {std::move(patch), std::move(sub), new_id};
}

// ---------------------------------------------------------------- JSON

inline nlohmann::json graph_to_json(const VesselGraph& g) {
    using nlohmann::json;
    json nodes = json::array(), branches = json::array();
    for (const GraphNode& n : g.nodes)
        nodes.push_back({{"id", n.id}, {"pos", {n.pos.x, n.pos.y, n.pos.z}}, {"kind", to_string(n.kind)}, {"degree", n.degree}});
    for (const Branch& b : g.branches) {
        json pts = json::array();
        for (const Index3& p : b.points) pts.push_back({p.x, p.y, p.z});
        branches.push_back({{"id", b.id}, {"ends", {b.ends[0], b.ends[1]}}, {"points", pts}, {"radii_mm", b.radii_mm}});
    }
    return json{{"dims", {g.dims.x, g.dims.y, g.dims.z}},
                {"spacing_mm", {g.geom.spacing.x, g.geom.spacing.y, g.geom.spacing.z}},
                {"origin_mm", {g.geom.origin.x, g.geom.origin.y, g.geom.origin.z}},
                {"nodes", nodes},
                {"branches", branches}};
}

inline VesselGraph graph_from_json(const nlohmann::json& j) {
    VesselGraph g;
    try {
        const auto& d = j.at("dims");
        g.dims = {d[0].get<long>(), d[1].get<long>(), d[2].get<long>()};
        const auto& s = j.at("spacing_mm");
        const auto& o = j.at("origin_mm");
        g.geom.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
        g.geom.origin = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
        for (const auto& n : j.at("nodes")) {
            GraphNode gn;
            gn.id = n.at("id").get<int>();
            const auto& p = n.at("pos");
            gn.pos = {p[0].get<long>(), p[1].get<long>(), p[2].get<long>()};
            gn.degree = n.at("degree").get<int>();
            gn.kind = kind_for_degree(gn.degree);
            g.nodes.push_back(gn);
        }
        for (const auto& b : j.at("branches")) {
            Branch br;
            br.id = b.at("id").get<int>();
            br.ends = {b.at("ends")[0].get<int>(), b.at("ends")[1].get<int>()};
            for (const auto& p : b.at("points")) br.points.push_back({p[0].get<long>(), p[1].get<long>(), p[2].get<long>()});
            br.radii_mm = b.at("radii_mm").get<std::vector<double>>();
            if (br.radii_mm.size() != br.points.size()) throw Error("invalid_graph", "radii/points length mismatch");
            g.branches.push_back(std::move(br));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_graph", std::string("graph JSON: ") + e.what());
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
        if (g.nodes[i].id != int(i)) throw Error("invalid_graph", "node ids must be dense and ordered");
    return g;
}

}  // namespace vamos

#endif  // VAMOS_GRAPH_HPP

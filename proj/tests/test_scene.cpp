#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>

#include "rgsan/rng.hpp"
#include "rgsan/scene.hpp"

using namespace rgsan;

namespace {

PointCloudScene random_scene(Rng& rng, std::size_t n_points, std::size_t fdim = 3) {
    PointCloudScene s;
    s.scene_id = "random";
    s.positions = random_uniform_matrix<double>(rng, n_points, 3, -4.0, 4.0);
    s.features = random_uniform_matrix<double>(rng, n_points, fdim, 0.0, 1.0);
    s.instance_ids.assign(n_points, 0);
    return s;
}

}  // namespace

TEST_CASE("voxel partition: single cell and separated cells") {
    PointCloudScene s;
    s.scene_id = "t";
    s.positions = Matrix<double>::from_rows({{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {0.3, 0.1, 0.2}, {0.15, 0.25, 0.05}});
    s.features = Matrix<double>(4, 1, 0.5);
    s.instance_ids = {0, 0, 0, 0};
    auto part = build_superpoint_partition(s, 1.0);
    CHECK(part.count == 1);
    CHECK(part.assignment == std::vector<int>{0, 0, 0, 0});

    s.positions = Matrix<double>::from_rows({{0, 0, 0}, {10, 10, 10}});
    s.features = Matrix<double>(2, 1, 0.0);
    s.instance_ids = {0, 0};
    part = build_superpoint_partition(s, 1.0);
    CHECK(part.count == 2);
    CHECK(part.assignment == std::vector<int>{0, 1});
}

TEST_CASE("voxel partition matches floor-division oracle on 1000 random points") {
    Rng rng(42);
    auto s = random_scene(rng, 1000);
    const double cell = 0.5;
    auto part = build_superpoint_partition(s, cell);
    part.validate(s.num_points());

    // Oracle: two points share an id iff their floor-divided cells agree.
    auto cell_of = [&](std::size_t p) {
        return std::array<long long, 3>{
            static_cast<long long>(std::floor(s.positions(p, 0) / cell)),
            static_cast<long long>(std::floor(s.positions(p, 1) / cell)),
            static_cast<long long>(std::floor(s.positions(p, 2) / cell))};
    };
    std::map<int, std::array<long long, 3>> id_cell;
    for (std::size_t p = 0; p < s.num_points(); ++p) {
        auto c = cell_of(p);
        auto [it, inserted] = id_cell.emplace(part.assignment[p], c);
        CHECK(it->second == c);
    }
    CHECK(static_cast<int>(id_cell.size()) == part.count);
}

TEST_CASE("empty scene is rejected") {
    PointCloudScene s;
    s.scene_id = "empty";
    CHECK_THROWS_WITH_AS(build_superpoint_partition(s, 1.0), "empty point cloud", std::invalid_argument);
}

TEST_CASE("feature pooling: mean of two, identity partition, random oracle") {
    SuperpointPartition one{{0, 0}, 1};
    auto pooled = superpoint_pool_features(Matrix<double>::from_rows({{1, 3}, {3, 5}}), one);
    CHECK(pooled(0, 0) == doctest::Approx(2.0));
    CHECK(pooled(0, 1) == doctest::Approx(4.0));

    Rng rng(7);
    auto feats = random_uniform_matrix<double>(rng, 6, 4, -1, 1);
    SuperpointPartition identity{{0, 1, 2, 3, 4, 5}, 6};
    auto same = superpoint_pool_features(feats, identity);
    CHECK(max_abs_diff(same, feats) == 0.0);

    // 50 x 8 features over 7 groups vs explicit loop.
    auto f2 = random_uniform_matrix<double>(rng, 50, 8, -2, 2);
    SuperpointPartition part;
    part.count = 7;
    part.assignment.resize(50);
    for (int i = 0; i < 50; ++i) part.assignment[i] = i % 7;
    auto got = superpoint_pool_features(f2, part);
    for (int g = 0; g < 7; ++g) {
        for (int c = 0; c < 8; ++c) {
            double sum = 0;
            int n = 0;
            for (int i = 0; i < 50; ++i)
                if (part.assignment[i] == g) {
                    sum += f2(i, c);
                    ++n;
                }
            CHECK(got(g, c) == doctest::Approx(sum / n).epsilon(1e-12));
        }
    }
}

TEST_CASE("pooling rejects mismatched lengths") {
    SuperpointPartition part{{0, 1}, 2};
    CHECK_THROWS_AS(superpoint_pool_features(Matrix<double>(3, 2, 1.0), part), std::invalid_argument);
}

TEST_CASE("centroids: midpoint, singletons, convexity, random oracle") {
    PointCloudScene s;
    s.scene_id = "c";
    s.positions = Matrix<double>::from_rows({{0, 0, 0}, {2, 0, 0}});
    s.features = Matrix<double>(2, 1, 0.0);
    s.instance_ids = {0, 0};
    SuperpointPartition part{{0, 0}, 1};
    auto cent = superpoint_centroids(s, part);
    CHECK(cent(0, 0) == doctest::Approx(1.0));
    CHECK(cent(0, 1) == doctest::Approx(0.0));

    Rng rng(3);
    auto rs = random_scene(rng, 40);
    SuperpointPartition singles;
    singles.count = 40;
    singles.assignment.resize(40);
    std::iota(singles.assignment.begin(), singles.assignment.end(), 0);
    auto cs = superpoint_centroids(rs, singles);
    CHECK(max_abs_diff(cs, rs.positions) == 0.0);

    auto grid = build_superpoint_partition(rs, 1.3);
    auto gc = superpoint_centroids(rs, grid);
    // Convex combination: centroid within member bounding box per axis.
    for (int sp = 0; sp < grid.count; ++sp) {
        for (int c = 0; c < 3; ++c) {
            double lo = 1e18, hi = -1e18, sum = 0;
            int n = 0;
            for (std::size_t p = 0; p < rs.num_points(); ++p)
                if (grid.assignment[p] == sp) {
                    lo = std::min(lo, rs.positions(p, c));
                    hi = std::max(hi, rs.positions(p, c));
                    sum += rs.positions(p, c);
                    ++n;
                }
            CHECK(gc(sp, c) >= lo - 1e-12);
            CHECK(gc(sp, c) <= hi + 1e-12);
            CHECK(gc(sp, c) == doctest::Approx(sum / n).epsilon(1e-12));
        }
    }
}

TEST_CASE("gt mask pooling: full, exact half is strict, random fraction oracle") {
    SuperpointPartition part{{0, 0, 0, 0}, 1};
    CHECK(pool_gt_mask({1, 1, 1, 1}, part) == std::vector<std::uint8_t>{1});
    CHECK(pool_gt_mask({1, 1, 0, 0}, part) == std::vector<std::uint8_t>{0});  // exactly half -> 0
    CHECK(pool_gt_mask({1, 1, 1, 0}, part) == std::vector<std::uint8_t>{1});

    Rng rng(11);
    const int n = 200;
    SuperpointPartition rp;
    rp.count = 9;
    rp.assignment.resize(n);
    for (int i = 0; i < n; ++i) rp.assignment[i] = rng.uniform_int(0, 8);
    // Guarantee density.
    for (int s = 0; s < 9; ++s) rp.assignment[s] = s;
    std::vector<std::uint8_t> mask(n);
    for (int i = 0; i < n; ++i) mask[i] = rng.uniform() < 0.5 ? 1 : 0;
    auto got = pool_gt_mask(mask, rp);
    for (int s = 0; s < 9; ++s) {
        int hits = 0, tot = 0;
        for (int i = 0; i < n; ++i)
            if (rp.assignment[i] == s) {
                ++tot;
                hits += mask[i];
            }
        CHECK(got[s] == (static_cast<double>(hits) / tot > 0.5 ? 1 : 0));
    }
}

TEST_CASE("gt mask pooling is invariant to consistent permutation") {
    Rng rng(13);
    const int n = 60;
    SuperpointPartition part;
    part.count = 5;
    part.assignment.resize(n);
    for (int i = 0; i < n; ++i) part.assignment[i] = i % 5;
    std::vector<std::uint8_t> mask(n);
    for (int i = 0; i < n; ++i) mask[i] = rng.uniform() < 0.4 ? 1 : 0;
    auto base = pool_gt_mask(mask, part);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    SuperpointPartition ppart = part;
    std::vector<std::uint8_t> pmask(n);
    for (int i = 0; i < n; ++i) {
        ppart.assignment[i] = part.assignment[perm[i]];
        pmask[i] = mask[perm[i]];
    }
    CHECK(pool_gt_mask(pmask, ppart) == base);
}

TEST_CASE("target centroid: single, midpoint, masked-mean oracle, degenerate") {
    PointCloudScene s;
    s.scene_id = "t";
    s.positions = Matrix<double>::from_rows({{0, 0, 0}, {0, 0, 0}, {2, 2, 2}, {2, 2, 2}});
    s.features = Matrix<double>(4, 1, 0.0);
    s.instance_ids = {0, 0, 1, 1};
    SuperpointPartition part{{0, 0, 1, 1}, 2};

    auto c1 = target_centroid_gt(s, part, {1, 1, 0, 0});
    CHECK(c1 == std::array<double, 3>{0, 0, 0});
    auto c2 = target_centroid_gt(s, part, {1, 1, 1, 1});
    CHECK(c2 == std::array<double, 3>{1, 1, 1});

    CHECK_THROWS_WITH_AS(target_centroid_gt(s, part, {0, 0, 0, 0}),
                         "degenerate target: pooled mask is empty", std::invalid_argument);

    Rng rng(17);
    auto rs = random_scene(rng, 120);
    auto grid = build_superpoint_partition(rs, 1.1);
    std::vector<std::uint8_t> mask(120);
    for (auto& m : mask) m = rng.uniform() < 0.5 ? 1 : 0;
    auto pooled = pool_gt_mask(mask, grid);
    bool any = false;
    for (auto b : pooled) any = any || b;
    if (any) {
        auto got = target_centroid_gt(rs, grid, mask);
        auto cents = superpoint_centroids(rs, grid);
        std::array<double, 3> acc{0, 0, 0};
        int n = 0;
        for (int sp = 0; sp < grid.count; ++sp)
            if (pooled[sp]) {
                ++n;
                for (int c = 0; c < 3; ++c) acc[c] += cents(sp, c);
            }
        for (int c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(acc[c] / n).epsilon(1e-12));
    }
}

TEST_CASE("scene JSON round trip is bit exact") {
    Rng rng(23);
    auto s = random_scene(rng, 50, 4);
    s.scene_id = "roundtrip-1";
    s.instance_ids[3] = -1;
    s.instance_ids[7] = 2;
    s.instance_classes = {"chair", "table", "lamp"};
    s.superpoint_assignment = std::vector<int>(50, 0);
    (*s.superpoint_assignment)[10] = 1;

    const std::string path = "test_scene_roundtrip.json";
    save_scene(s, path);
    auto r = load_scene(path);
    std::remove(path.c_str());

    CHECK(r.scene_id == s.scene_id);
    CHECK(max_abs_diff(r.positions, s.positions) == 0.0);
    CHECK(max_abs_diff(r.features, s.features) == 0.0);
    CHECK(r.instance_ids == s.instance_ids);
    CHECK(r.instance_classes == s.instance_classes);
    REQUIRE(r.superpoint_assignment.has_value());
    CHECK(*r.superpoint_assignment == *s.superpoint_assignment);
}

TEST_CASE("scene JSON schema errors carry context") {
    json j{{"scene_id", "x"}, {"positions", json::array()}, {"features", json::array()}, {"instance_ids", json::array()}};
    CHECK_THROWS_AS(scene_from_json(j, "bad.json"), SchemaError);
    json j2 = j;
    j2["positions"] = {{0.0, 1.0}};  // not [x,y,z]
    j2["features"] = {{0.0}};
    j2["instance_ids"] = {0};
    CHECK_THROWS_AS(scene_from_json(j2, "bad.json"), SchemaError);
}

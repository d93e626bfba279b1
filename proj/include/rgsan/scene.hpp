#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "rgsan/json_io.hpp"
#include "rgsan/matrix.hpp"

namespace rgsan {

/// Point cloud with per-point instance labels (-1 = background). Instance
/// classes are optional; evaluation stratification needs them, the core
/// geometry ops do not.
struct PointCloudScene {
    std::string scene_id;
    Matrix<double> positions;                  // N_p x 3, meters
    Matrix<double> features;                   // N_p x F
    std::vector<int> instance_ids;             // N_p
    std::vector<std::string> instance_classes; // indexed by instance id; may be empty
    std::optional<std::vector<int>> superpoint_assignment;

    std::size_t num_points() const { return positions.rows(); }

    void validate() const {
        if (positions.rows() == 0) throw std::invalid_argument("empty point cloud");
        if (positions.cols() != 3) throw std::invalid_argument("positions must be N x 3");
        if (!positions.all_finite()) throw std::invalid_argument("non-finite positions");
        if (features.rows() != positions.rows())
            throw std::invalid_argument("features row count mismatch");
        if (instance_ids.size() != positions.rows())
            throw std::invalid_argument("instance_ids length mismatch");
        for (int id : instance_ids)
            if (id < -1) throw std::invalid_argument("instance id below -1");
        if (superpoint_assignment && superpoint_assignment->size() != positions.rows())
            throw std::invalid_argument("superpoint_assignment length mismatch");
    }

    int num_instances() const {
        int mx = -1;
        for (int id : instance_ids) mx = std::max(mx, id);
        return mx + 1;
    }
};

struct SuperpointPartition {
    std::vector<int> assignment;  // per point, ids dense in [0, count)
    int count = 0;

    void validate(std::size_t n_points) const {
        if (assignment.size() != n_points)
            throw std::invalid_argument("partition length differs from point count");
        if (count <= 0) throw std::invalid_argument("partition has no superpoints");
        std::vector<char> seen(count, 0);
        for (int id : assignment) {
            if (id < 0 || id >= count) throw std::invalid_argument("superpoint id out of range");
            seen[id] = 1;
        }
        for (char s : seen)
            if (!s) throw std::invalid_argument("empty superpoint in partition");
    }
};

/// Pooled per-superpoint features and centroids.
template <typename Real>
struct SuperpointBank {
    Matrix<Real> features;   // N_s x C
    Matrix<Real> centroids;  // N_s x 3
};

/// Deterministic voxel-grid superpoints: floor(p / cell) per axis, ids dense
/// in order of first occurrence.
inline SuperpointPartition build_superpoint_partition(const PointCloudScene& scene, double cell_size) {
    scene.validate();
    if (!(cell_size > 0)) throw std::invalid_argument("cell_size must be positive");
    SuperpointPartition part;
    part.assignment.resize(scene.num_points());
    std::map<std::tuple<long long, long long, long long>, int> cells;
    for (std::size_t p = 0; p < scene.num_points(); ++p) {
        const auto key = std::make_tuple(
            static_cast<long long>(std::floor(scene.positions(p, 0) / cell_size)),
            static_cast<long long>(std::floor(scene.positions(p, 1) / cell_size)),
            static_cast<long long>(std::floor(scene.positions(p, 2) / cell_size)));
        auto [it, inserted] = cells.emplace(key, part.count);
        if (inserted) ++part.count;
        part.assignment[p] = it->second;
    }
    return part;
}

/// Row i of the result is the mean of the feature rows assigned to superpoint i.
template <typename Real>
Matrix<Real> superpoint_pool_features(const Matrix<Real>& point_features, const SuperpointPartition& part) {
    part.validate(point_features.rows());
    Matrix<Real> pooled(part.count, point_features.cols());
    std::vector<Real> counts(part.count, Real(0));
    for (std::size_t p = 0; p < point_features.rows(); ++p) {
        const int s = part.assignment[p];
        counts[s] += Real(1);
        for (std::size_t c = 0; c < point_features.cols(); ++c)
            pooled(s, c) += point_features(p, c);
    }
    for (int s = 0; s < part.count; ++s)
        for (std::size_t c = 0; c < pooled.cols(); ++c) pooled(s, c) /= counts[s];
    return pooled;
}

inline Matrix<double> superpoint_centroids(const PointCloudScene& scene, const SuperpointPartition& part) {
    return superpoint_pool_features(scene.positions, part);
}

/// Superpoint mask bit is 1 iff strictly more than half of the member points
/// are masked.
inline std::vector<std::uint8_t> pool_gt_mask(const std::vector<std::uint8_t>& point_mask,
                                              const SuperpointPartition& part) {
    part.validate(point_mask.size());
    std::vector<int> hits(part.count, 0), counts(part.count, 0);
    for (std::size_t p = 0; p < point_mask.size(); ++p) {
        ++counts[part.assignment[p]];
        hits[part.assignment[p]] += point_mask[p] ? 1 : 0;
    }
    std::vector<std::uint8_t> pooled(part.count);
    for (int s = 0; s < part.count; ++s)
        pooled[s] = (2 * hits[s] > counts[s]) ? 1 : 0;
    return pooled;
}

/// Mean centroid of the superpoints whose pooled mask is on.
inline std::array<double, 3> target_centroid_gt(const PointCloudScene& scene,
                                                const SuperpointPartition& part,
                                                const std::vector<std::uint8_t>& point_mask) {
    const auto pooled = pool_gt_mask(point_mask, part);
    const auto centroids = superpoint_centroids(scene, part);
    std::array<double, 3> acc{0, 0, 0};
    int n = 0;
    for (int s = 0; s < part.count; ++s) {
        if (!pooled[s]) continue;
        ++n;
        for (int c = 0; c < 3; ++c) acc[c] += centroids(s, c);
    }
    if (n == 0) throw std::invalid_argument("degenerate target: pooled mask is empty");
    for (int c = 0; c < 3; ++c) acc[c] /= n;
    return acc;
}

// ---- scene file format -----------------------------------------------------

inline json scene_to_json(const PointCloudScene& scene) {
    json j;
    j["scene_id"] = scene.scene_id;
    json pos = json::array();
    for (std::size_t p = 0; p < scene.num_points(); ++p)
        pos.push_back({scene.positions(p, 0), scene.positions(p, 1), scene.positions(p, 2)});
    j["positions"] = std::move(pos);
    json feat = json::array();
    for (std::size_t p = 0; p < scene.num_points(); ++p) {
        json row = json::array();
        for (std::size_t c = 0; c < scene.features.cols(); ++c) row.push_back(scene.features(p, c));
        feat.push_back(std::move(row));
    }
    j["features"] = std::move(feat);
    j["instance_ids"] = scene.instance_ids;
    if (!scene.instance_classes.empty()) j["instance_classes"] = scene.instance_classes;
    if (scene.superpoint_assignment) j["superpoint_assignment"] = *scene.superpoint_assignment;
    return j;
}

inline PointCloudScene scene_from_json(const json& j, const std::string& where = "scene") {
    PointCloudScene scene;
    scene.scene_id = require_field(j, "scene_id", where).get<std::string>();
    const auto& pos = require_field(j, "positions", where);
    if (!pos.is_array() || pos.empty()) throw SchemaError(where + ": empty point cloud");
    scene.positions = Matrix<double>(pos.size(), 3);
    for (std::size_t p = 0; p < pos.size(); ++p) {
        if (!pos[p].is_array() || pos[p].size() != 3)
            throw SchemaError(where + ": positions[" + std::to_string(p) + "] is not [x,y,z]");
        for (int c = 0; c < 3; ++c) scene.positions(p, c) = pos[p][c].get<double>();
    }
    const auto& feat = require_field(j, "features", where);
    if (feat.size() != pos.size()) throw SchemaError(where + ": features length mismatch");
    const std::size_t fdim = feat.empty() ? 0 : feat[0].size();
    scene.features = Matrix<double>(feat.size(), fdim);
    for (std::size_t p = 0; p < feat.size(); ++p) {
        if (feat[p].size() != fdim) throw SchemaError(where + ": ragged features");
        for (std::size_t c = 0; c < fdim; ++c) scene.features(p, c) = feat[p][c].get<double>();
    }
    scene.instance_ids = require_field(j, "instance_ids", where).get<std::vector<int>>();
    if (j.contains("instance_classes"))
        scene.instance_classes = j["instance_classes"].get<std::vector<std::string>>();
    if (j.contains("superpoint_assignment"))
        scene.superpoint_assignment = j["superpoint_assignment"].get<std::vector<int>>();
    try {
        scene.validate();
    } catch (const std::exception& e) {
        throw SchemaError(where + ": " + e.what());
    }
    return scene;
}

inline void save_scene(const PointCloudScene& scene, const std::string& path) {
    save_json_file(path, scene_to_json(scene));
}

inline PointCloudScene load_scene(const std::string& path) {
    return scene_from_json(load_json_file(path), path);
}

/// Partition from a scene: precomputed assignment when present, grid otherwise.
inline SuperpointPartition scene_partition(const PointCloudScene& scene, double cell_size) {
    if (scene.superpoint_assignment) {
        SuperpointPartition part;
        part.assignment = *scene.superpoint_assignment;
        int mx = -1;
        for (int id : part.assignment) mx = std::max(mx, id);
        part.count = mx + 1;
        part.validate(scene.num_points());
        return part;
    }
    return build_superpoint_partition(scene, cell_size);
}

}  // namespace rgsan

#include "vgpl/sim/spatial_hash.hpp"

#include <algorithm>
#include <cmath>

#include "vgpl/errors.hpp"

namespace vgpl::sim {

SpatialHashGrid::SpatialHashGrid(double cell_size) : cell_size_(cell_size) {
    if (cell_size <= 0.0) throw ContractViolation("SpatialHashGrid: cell size must be positive");
}

int64_t SpatialHashGrid::key_of(int cx, int cy, int cz) const {
    // pack 21-bit signed coords
    const int64_t mask = (1 << 21) - 1;
    return ((static_cast<int64_t>(cx) & mask) << 42) | ((static_cast<int64_t>(cy) & mask) << 21) |
           (static_cast<int64_t>(cz) & mask);
}

void SpatialHashGrid::build(const std::vector<Vec3>& positions) {
    cells_.clear();
    points_ = &positions;
    for (int i = 0; i < static_cast<int>(positions.size()); ++i) {
        const Vec3& p = positions[static_cast<size_t>(i)];
        const int cx = static_cast<int>(std::floor(p.x / cell_size_));
        const int cy = static_cast<int>(std::floor(p.y / cell_size_));
        const int cz = static_cast<int>(std::floor(p.z / cell_size_));
        cells_[key_of(cx, cy, cz)].push_back(i);
    }
}

std::vector<int> SpatialHashGrid::query(const Vec3& p, double radius, int exclude) const {
    if (radius > cell_size_ + 1e-12)
        throw ContractViolation("SpatialHashGrid: query radius exceeds cell size");
    std::vector<int> out;
    if (!points_) return out;
    const double r2 = radius * radius;
    const int cx = static_cast<int>(std::floor(p.x / cell_size_));
    const int cy = static_cast<int>(std::floor(p.y / cell_size_));
    const int cz = static_cast<int>(std::floor(p.z / cell_size_));
    for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dz = -1; dz <= 1; ++dz) {
                auto it = cells_.find(key_of(cx + dx, cy + dy, cz + dz));
                if (it == cells_.end()) continue;
                for (int j : it->second) {
                    if (j == exclude) continue;
                    if (((*points_)[static_cast<size_t>(j)] - p).norm2() <= r2) out.push_back(j);
                }
            }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<int, int>> neighbor_pairs(const std::vector<Vec3>& positions,
                                                double radius) {
    if (radius <= 0.0) throw ContractViolation("neighbor_pairs: radius must be positive");
    std::vector<std::pair<int, int>> out;
    SpatialHashGrid grid(radius);
    grid.build(positions);
    grid.for_each_pair(positions, radius, [&](int i, int j) {
        out.emplace_back(i, j);
        out.emplace_back(j, i);
    });
    // (sender, receiver) sorted by (receiver, sender)
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    return out;
}

std::vector<std::pair<int, int>> neighbor_pairs_bruteforce(const std::vector<Vec3>& positions,
                                                           double radius) {
    std::vector<std::pair<int, int>> out;
    const double r2 = radius * radius;
    const int n = static_cast<int>(positions.size());
    for (int r = 0; r < n; ++r)
        for (int s = 0; s < n; ++s)
            if (s != r &&
                (positions[static_cast<size_t>(s)] - positions[static_cast<size_t>(r)]).norm2() <=
                    r2)
                out.emplace_back(s, r);
    return out;
}

}  // namespace vgpl::sim

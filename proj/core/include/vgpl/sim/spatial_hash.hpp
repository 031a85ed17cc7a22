#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vgpl/sim/vec3.hpp"

namespace vgpl::sim {

/// Uniform grid over integer cell coordinates for fixed-radius neighbor
/// queries. Query radius must not exceed the cell size, which keeps the
/// candidate set to the 27 surrounding cells.
class SpatialHashGrid {
public:
    explicit SpatialHashGrid(double cell_size);

    void build(const std::vector<Vec3>& positions);

    /// Indices of particles within `radius` of `p` (inclusive), excluding
    /// `exclude`. Results are sorted ascending.
    std::vector<int> query(const Vec3& p, double radius, int exclude = -1) const;

    /// Calls fn(i, j) once per unordered pair with distance <= radius, i < j,
    /// in deterministic (i, j) order.
    template <typename Fn>
    void for_each_pair(const std::vector<Vec3>& positions, double radius, Fn&& fn) const {
        for (int i = 0; i < static_cast<int>(positions.size()); ++i) {
            for (int j : query(positions[static_cast<size_t>(i)], radius, i)) {
                if (j > i) fn(i, j);
            }
        }
    }

    double cell_size() const { return cell_size_; }

private:
    int64_t key_of(int cx, int cy, int cz) const;

    double cell_size_;
    std::unordered_map<int64_t, std::vector<int>> cells_;
    const std::vector<Vec3>* points_ = nullptr;
};

/// All directed (sender, receiver) pairs with distance <= radius and
/// sender != receiver, sorted by (receiver, sender). Both directions of every
/// close pair are present.
std::vector<std::pair<int, int>> neighbor_pairs(const std::vector<Vec3>& positions, double radius);

/// Reference O(N^2) enumeration with the same ordering contract; test oracle.
std::vector<std::pair<int, int>> neighbor_pairs_bruteforce(const std::vector<Vec3>& positions,
                                                           double radius);

}  // namespace vgpl::sim

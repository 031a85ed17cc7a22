#pragma once

#include <array>
#include <vector>

#include "vgpl/sim/vec3.hpp"

namespace vgpl::sim {

using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 mat3_apply(const Mat3& m, const Vec3& v);
Mat3 mat3_mul(const Mat3& a, const Mat3& b);
double mat3_det(const Mat3& m);

struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;
    Vec3 apply(const Vec3& p) const { return mat3_apply(rotation, p) + translation; }
};

/// Least-squares rigid alignment (Kabsch): the proper rotation R and
/// translation t minimizing sum_k ||R*rest_k + t - current_k||^2.
/// Requires K >= 3 points; throws DegenerateGeometryError when the rest shape
/// is collinear. Handles planar shapes.
RigidTransform shape_match(const std::vector<Vec3>& current, const std::vector<Vec3>& rest);

/// Eigen decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Eigenvalues descend; eigenvectors are the columns of V (right-handed up to
/// per-column sign).
void symmetric_eigen3(const Mat3& s, std::array<double, 3>& eigenvalues, Mat3& v);

}  // namespace vgpl::sim

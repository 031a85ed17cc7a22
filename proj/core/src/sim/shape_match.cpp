#include "vgpl/sim/shape_match.hpp"

#include <algorithm>
#include <cmath>

#include "vgpl/errors.hpp"

namespace vgpl::sim {

Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
}

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
            c[i][j] = s;
        }
    return c;
}

double mat3_det(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

void symmetric_eigen3(const Mat3& s_in, std::array<double, 3>& w, Mat3& v) {
    Mat3 a = s_in;
    v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
        if (off < 1e-15 * (std::abs(a[0][0]) + std::abs(a[1][1]) + std::abs(a[2][2]) + 1e-300))
            break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                // rotate rows/cols p and q
                Mat3 r = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
                r[p][p] = c;
                r[q][q] = c;
                r[p][q] = sn;
                r[q][p] = -sn;
                // a = r^T a r
                Mat3 rt = r;
                std::swap(rt[p][q], rt[q][p]);
                a = mat3_mul(mat3_mul(rt, a), r);
                a[p][q] = a[q][p] = 0.5 * (a[p][q] + a[q][p]);  // symmetrize
                v = mat3_mul(v, r);
            }
        }
    }
    // sort eigenvalues descending, permute eigenvector columns with them
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return a[i][i] > a[j][j]; });
    Mat3 vs{};
    for (int k = 0; k < 3; ++k) {
        w[static_cast<size_t>(k)] = a[order[static_cast<size_t>(k)]][order[static_cast<size_t>(k)]];
        for (int r = 0; r < 3; ++r) vs[r][k] = v[r][order[static_cast<size_t>(k)]];
    }
    v = vs;
}

RigidTransform shape_match(const std::vector<Vec3>& current, const std::vector<Vec3>& rest) {
    const size_t k = rest.size();
    if (k < 3 || current.size() != k)
        throw ContractViolation("shape_match: need K >= 3 matched points");

    Vec3 c_cur{}, c_rest{};
    for (size_t i = 0; i < k; ++i) {
        c_cur += current[i];
        c_rest += rest[i];
    }
    c_cur = c_cur / static_cast<double>(k);
    c_rest = c_rest / static_cast<double>(k);

    // rest covariance rank check: collinear rest shapes cannot anchor a rotation
    Mat3 rr{};
    double scale = 0.0;
    for (size_t i = 0; i < k; ++i) {
        const Vec3 p = rest[i] - c_rest;
        const double pv[3] = {p.x, p.y, p.z};
        scale += p.norm2();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rr[r][c] += pv[r] * pv[c];
    }
    std::array<double, 3> rw;
    Mat3 rvec;
    symmetric_eigen3(rr, rw, rvec);
    if (scale <= 0.0 || rw[1] <= 1e-12 * rw[0])
        throw DegenerateGeometryError("shape_match: rest shape is collinear or coincident");

    // cross covariance M = sum p q^T with p = rest offset, q = current offset
    Mat3 m{};
    for (size_t i = 0; i < k; ++i) {
        const Vec3 p = rest[i] - c_rest;
        const Vec3 q = current[i] - c_cur;
        const double pv[3] = {p.x, p.y, p.z};
        const double qv[3] = {q.x, q.y, q.z};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] += pv[r] * qv[c];
    }

    // SVD of M via the eigen decomposition of M^T M = V S^2 V^T
    Mat3 mtm{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int i = 0; i < 3; ++i) s += m[i][r] * m[i][c];
            mtm[r][c] = s;
        }
    std::array<double, 3> s2;
    Mat3 vmat;
    symmetric_eigen3(mtm, s2, vmat);
    const double smax = std::sqrt(std::max(s2[0], 0.0));
    std::array<Vec3, 3> vcols, ucols;
    for (int c = 0; c < 3; ++c) vcols[static_cast<size_t>(c)] = {vmat[0][c], vmat[1][c], vmat[2][c]};
    int valid = 0;
    for (int c = 0; c < 3; ++c) {
        const double sigma = std::sqrt(std::max(s2[static_cast<size_t>(c)], 0.0));
        if (sigma > 1e-12 * (smax + 1e-300)) {
            const Vec3 u = mat3_apply(m, vcols[static_cast<size_t>(c)]);  // = M v = U S e_c scaled
            ucols[static_cast<size_t>(c)] = u / sigma;
            valid = c + 1;
        }
    }
    if (valid < 2)
        throw DegenerateGeometryError("shape_match: alignment problem is rank deficient");
    if (valid == 2) {
        // planar: complete both bases with the cross product
        vcols[2] = vcols[0].cross(vcols[1]);
        ucols[2] = ucols[0].cross(ucols[1]);
    }

    // With M = U S V^T the rotation mapping rest offsets onto current offsets
    // is R = V D U^T, D = diag(1,1,d) correcting an improper flip.
    Mat3 vmat3{}, ut{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            const Vec3& vcol = vcols[static_cast<size_t>(c)];
            vmat3[r][c] = (r == 0 ? vcol.x : (r == 1 ? vcol.y : vcol.z));
            const Vec3& ucol = ucols[static_cast<size_t>(r)];
            ut[r][c] = (c == 0 ? ucol.x : (c == 1 ? ucol.y : ucol.z));
        }
    const double d = mat3_det(mat3_mul(vmat3, ut)) < 0.0 ? -1.0 : 1.0;
    for (int c = 0; c < 3; ++c) ut[2][c] *= d;  // third row of U^T = third column of U
    RigidTransform out;
    out.rotation = mat3_mul(vmat3, ut);
    out.translation = c_cur - mat3_apply(out.rotation, c_rest);
    return out;
}

}  // namespace vgpl::sim

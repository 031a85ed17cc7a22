#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "vgpl/errors.hpp"
#include "vgpl/rng.hpp"
#include "vgpl/sim/environments.hpp"
#include "vgpl/sim/shape_match.hpp"
#include "vgpl/sim/spatial_hash.hpp"

using namespace vgpl;
using namespace vgpl::sim;

namespace {

double max_rest_distance_error(const ParticleSystem& ps, int object) {
    const auto idx = ps.object_particles(object);
    const auto& rest = ps.rest_shapes[static_cast<size_t>(object)];
    double worst = 0.0;
    for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a + 1; b < idx.size(); ++b) {
            const double cur = (ps.positions[static_cast<size_t>(idx[a])] -
                                ps.positions[static_cast<size_t>(idx[b])])
                                   .norm();
            const double ref = (rest[a] - rest[b]).norm();
            worst = std::max(worst, std::abs(cur - ref));
        }
    return worst;
}

}  // namespace

TEST_CASE("neighbor_pairs: two particles 0.05 apart at radius 0.08 give 2 directed pairs") {
    std::vector<Vec3> pos = {{0, 0, 0}, {0.05, 0, 0}};
    auto pairs = neighbor_pairs(pos, 0.08);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::make_pair(1, 0));
    CHECK(pairs[1] == std::make_pair(0, 1));
}

TEST_CASE("neighbor_pairs: single particle and empty input") {
    CHECK(neighbor_pairs({{1, 2, 3}}, 0.5).empty());
    CHECK(neighbor_pairs({}, 0.5).empty());
}

TEST_CASE("neighbor_pairs equals brute force on 50 random configurations") {
    RngStream rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(199));
        std::vector<Vec3> pos(static_cast<size_t>(n));
        for (auto& p : pos)
            p = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
        const double radius = rng.uniform(0.02, 0.3);
        auto fast = neighbor_pairs(pos, radius);
        auto slow = neighbor_pairs_bruteforce(pos, radius);
        std::sort(slow.begin(), slow.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second < b.second : a.first < b.first;
        });
        REQUIRE(fast.size() == slow.size());
        CHECK(fast == slow);
    }
}

TEST_CASE("neighbor_pairs output is symmetric and ordered by receiver") {
    RngStream rng(304);
    std::vector<Vec3> pos(40);
    for (auto& p : pos) p = {rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0, 0.3)};
    auto pairs = neighbor_pairs(pos, 0.1);
    for (size_t i = 1; i < pairs.size(); ++i) {
        CHECK((pairs[i - 1].second < pairs[i].second ||
               (pairs[i - 1].second == pairs[i].second && pairs[i - 1].first < pairs[i].first)));
    }
    for (const auto& [s, r] : pairs) {
        CHECK(s != r);
        CHECK(std::binary_search(
            pairs.begin(), pairs.end(), std::make_pair(r, s),
            [](const auto& a, const auto& b) {
                return a.second != b.second ? a.second < b.second : a.first < b.first;
            }));
    }
}

TEST_CASE("shape_match: identity when current equals rest") {
    std::vector<Vec3> rest = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.3, 0.4, 0.5}};
    auto tf = shape_match(rest, rest);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(tf.rotation[r][c] == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-12));
    CHECK(tf.translation.norm() < 1e-12);
}

TEST_CASE("shape_match recovers a constructed rotation and translation to 1e-9") {
    const double a = 30.0 * M_PI / 180.0;
    const Mat3 rz = {{{std::cos(a), -std::sin(a), 0}, {std::sin(a), std::cos(a), 0}, {0, 0, 1}}};
    const Vec3 t{1, 2, 3};
    RngStream rng(17);
    std::vector<Vec3> rest;
    for (int i = 0; i < 12; ++i)
        rest.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    std::vector<Vec3> cur;
    for (const auto& p : rest) cur.push_back(mat3_apply(rz, p) + t);
    auto tf = shape_match(cur, rest);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(std::abs(tf.rotation[r][c] - rz[r][c]) < 1e-9);
    CHECK((tf.translation - t).norm() < 1e-9);
}

TEST_CASE("shape_match on noisy data returns a proper rotation") {
    RngStream rng(18);
    std::vector<Vec3> rest, cur;
    const double a = -1.1;
    const Mat3 ry = {{{std::cos(a), 0, std::sin(a)}, {0, 1, 0}, {-std::sin(a), 0, std::cos(a)}}};
    for (int i = 0; i < 30; ++i) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        rest.push_back(p);
        cur.push_back(mat3_apply(ry, p) + Vec3{0.2, -0.4, 0.9} +
                      Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.05);
    }
    auto tf = shape_match(cur, rest);
    // R^T R = I and det R = 1 within 1e-9
    Mat3 rt = tf.rotation;
    std::swap(rt[0][1], rt[1][0]);
    std::swap(rt[0][2], rt[2][0]);
    std::swap(rt[1][2], rt[2][1]);
    const Mat3 eye = mat3_mul(rt, tf.rotation);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(std::abs(eye[r][c] - (r == c ? 1.0 : 0.0)) < 1e-9);
    CHECK(std::abs(mat3_det(tf.rotation) - 1.0) < 1e-9);
}

TEST_CASE("shape_match handles planar shapes and rejects collinear rests") {
    std::vector<Vec3> planar = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
    auto tf = shape_match(planar, planar);
    CHECK(std::abs(mat3_det(tf.rotation) - 1.0) < 1e-9);

    std::vector<Vec3> line = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    CHECK_THROWS_AS(shape_match(line, line), DegenerateGeometryError);
    std::vector<Vec3> two = {{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(shape_match(two, two), ContractViolation);
}

TEST_CASE("rigidfall free fall matches the symplectic closed form to 1e-9") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::RigidFall);
    cfg.rf_cubes = 1;
    cfg.rf_drop_height = 5.0;  // stays clear of the ground for the whole check
    RngStream rng(5);
    ParticleSystem ps = make_rigidfall(cfg, rng);
    Vec3 c0{};
    for (const auto& p : ps.positions) c0 += p;
    c0 = c0 / ps.size();
    const double g = -9.4;
    const int k_steps = 40;
    for (int k = 0; k < k_steps; ++k) step_rigidfall(ps, cfg, g, cfg.dt);
    Vec3 c1{};
    for (const auto& p : ps.positions) c1 += p;
    c1 = c1 / ps.size();
    const double expected = g * cfg.dt * cfg.dt * (k_steps * (k_steps + 1)) / 2.0;
    CHECK(std::abs((c1.y - c0.y) - expected) < 1e-9);
    CHECK(std::abs(c1.x - c0.x) < 1e-12);
}

TEST_CASE("rigidfall: resting cube stays above the ground and rigid") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::RigidFall);
    cfg.rf_cubes = 1;
    cfg.rf_drop_height = 0.05;
    RngStream rng(6);
    ParticleSystem ps = make_rigidfall(cfg, rng);
    for (int k = 0; k < 200; ++k) {
        step_rigidfall(ps, cfg, -12.0, cfg.dt);
        double min_y = 1e300;
        for (const auto& p : ps.positions) min_y = std::min(min_y, p.y);
        CHECK(min_y >= -1e-6);
        CHECK(max_rest_distance_error(ps, 0) < 1e-6);
    }
}

TEST_CASE("rigidfall: two stacked cubes settle") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::RigidFall);
    cfg.rf_cubes = 2;
    cfg.rf_drop_height = 0.08;
    RngStream rng(7);
    ParticleSystem ps = make_rigidfall(cfg, rng);
    for (int k = 0; k < 200; ++k) step_rigidfall(ps, cfg, -10.0, cfg.dt);
    double vmax = 0.0;
    for (const auto& v : ps.velocities) vmax = std::max(vmax, v.norm());
    CHECK(vmax < 1e-3);
    // no interpenetration beyond 1e-4 between the cubes
    const double diameter = cfg.rf_spacing;
    auto pairs = neighbor_pairs(ps.positions, diameter);
    double worst = 0.0;
    for (const auto& [s, r] : pairs) {
        if (ps.grouping[static_cast<size_t>(s)] == ps.grouping[static_cast<size_t>(r)]) continue;
        const double d =
            (ps.positions[static_cast<size_t>(s)] - ps.positions[static_cast<size_t>(r)]).norm();
        worst = std::max(worst, diameter - d);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("massrope: actuator at rest pins the top particle exactly") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::MassRope);
    RngStream rng(8);
    ParticleSystem ps = make_massrope(cfg, rng);
    for (int k = 0; k < 50; ++k) {
        step_massrope(ps, cfg, 0.7, {}, cfg.dt);
        CHECK(ps.positions[0].x == ps.actuator_pos.x);
        CHECK(ps.positions[0].y == ps.actuator_pos.y);
        CHECK(ps.positions[0].z == ps.actuator_pos.z);
    }
    CHECK(ps.actuator_pos.y == 1.0);
}

TEST_CASE("massrope: mass cluster stays rigid over 200 steps") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::MassRope);
    RngStream rng(9);
    ParticleSystem ps = make_massrope(cfg, rng);
    RngStream act(10);
    for (int k = 0; k < 200; ++k) {
        Vec3 a{act.uniform(-3, 3), 0.0, act.uniform(-3, 3)};
        step_massrope(ps, cfg, 1.0, a, cfg.dt);
        CHECK(max_rest_distance_error(ps, 0) < 1e-6);
    }
}

TEST_CASE("massrope: steady-state segment stretch approximates weight/k") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::MassRope);
    const double stiffness = 1.2;
    const double k = massrope_spring_constant(cfg, stiffness);
    RngStream rng(11);
    ParticleSystem ps = make_massrope(cfg, rng);
    for (int i = 0; i < 1200; ++i) step_massrope(ps, cfg, stiffness, {}, cfg.dt);

    const int nr = cfg.mr_rope_particles;
    const double seg = cfg.mr_rope_length / (nr - 1);
    const double cluster_mass =
        cfg.mr_mass_particle_mass * cfg.mr_mass_side * cfg.mr_mass_side * cfg.mr_mass_side;
    for (int i = 0; i + 1 < nr; ++i) {
        const double len = (ps.positions[static_cast<size_t>(i)] -
                            ps.positions[static_cast<size_t>(i + 1)])
                               .norm();
        const double below =
            cluster_mass + cfg.mr_rope_particle_mass * (nr - 1 - i);  // particles under segment i
        const double expected = below * 9.8 / k;
        CHECK(std::abs((len - seg) - expected) < 0.05 * expected);
    }
}

TEST_CASE("fluidcube: density solve reduces the compression residual") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::FluidCube);
    RngStream rng(12);
    ParticleSystem ps = make_fluidcube(cfg, rng);
    FluidStepStats stats;
    step_fluidcube(ps, cfg, 50.0, 0.0, cfg.dt, &stats);
    CHECK(stats.density_residual_post < stats.density_residual_pre);
}

TEST_CASE("fluidcube: every particle stays inside the container") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::FluidCube);
    RngStream rng(13);
    ParticleSystem ps = make_fluidcube(cfg, rng);
    RngStream act(14);
    for (int k = 0; k < 150; ++k) {
        const double a = act.uniform(-2, 2);
        step_fluidcube(ps, cfg, 30.0, a, cfg.dt);
        for (const auto& p : ps.positions) {
            CHECK(p.x >= ps.container_x - cfg.fc_container_hx - 1e-6);
            CHECK(p.x <= ps.container_x + cfg.fc_container_hx + 1e-6);
            CHECK(p.y >= -1e-6);
            CHECK(p.y <= cfg.fc_container_height + 1e-6);
            CHECK(p.z >= -cfg.fc_container_hz - 1e-6);
            CHECK(p.z <= cfg.fc_container_hz + 1e-6);
        }
        CHECK(max_rest_distance_error(ps, 1) < 1e-6);
    }
}

TEST_CASE("fluidcube: higher viscosity dissipates more kinetic energy") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::FluidCube);
    auto run = [&](double viscosity) {
        RngStream rng(15);
        ParticleSystem ps = make_fluidcube(cfg, rng);
        RngStream act(16);
        double ke = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double a = act.uniform(-2, 2);
            step_fluidcube(ps, cfg, viscosity, a, cfg.dt);
            ke = 0.0;
            for (int i : ps.object_particles(0))
                ke += 0.5 * ps.masses[static_cast<size_t>(i)] *
                      ps.velocities[static_cast<size_t>(i)].norm2();
        }
        return ke;
    };
    CHECK(run(100.0) < run(1.0));
}

TEST_CASE("simulate is deterministic and labels the trajectory") {
    for (EnvKind kind : {EnvKind::RigidFall, EnvKind::FluidCube, EnvKind::MassRope}) {
        EnvConfig cfg = EnvConfig::desk_default(kind);
        cfg.steps = 30;
        const double param = 0.5 * (cfg.param_lo + cfg.param_hi);
        Trajectory a = simulate(cfg, param, 99);
        Trajectory b = simulate(cfg, param, 99);
        CHECK(a.positions == b.positions);
        CHECK(a.actuation == b.actuation);
        CHECK(a.grouping == b.grouping);
        CHECK(a.t_steps == 30);
        CHECK(a.n_objects == (kind == EnvKind::RigidFall ? 3 : 2));
        Trajectory c = simulate(cfg, param, 100);
        if (kind != EnvKind::RigidFall) CHECK(a.positions != c.positions);
    }
}

TEST_CASE("simulate rejects out-of-range parameters") {
    EnvConfig cfg = EnvConfig::desk_default(EnvKind::RigidFall);
    CHECK_THROWS_AS(simulate(cfg, -20.0, 1), ContractViolation);
    CHECK_THROWS_AS(simulate(cfg, 0.0, 1), ContractViolation);
}

TEST_CASE("desk and paper particle counts match the documented sizes") {
    CHECK(EnvConfig::desk_default(EnvKind::RigidFall).particle_count() == 81);
    CHECK(EnvConfig::paper_default(EnvKind::RigidFall).particle_count() == 192);
    CHECK(EnvConfig::desk_default(EnvKind::MassRope).particle_count() == 41);
    CHECK(EnvConfig::desk_default(EnvKind::FluidCube).particle_count() == 152);
}

TEST_CASE("energy decays every 10 steps once transients die out") {
    for (EnvKind kind : {EnvKind::RigidFall, EnvKind::FluidCube, EnvKind::MassRope}) {
        EnvConfig cfg = EnvConfig::desk_default(kind);
        RngStream rng(20);
        ParticleSystem ps;
        switch (kind) {
            case EnvKind::RigidFall: ps = make_rigidfall(cfg, rng); break;
            case EnvKind::FluidCube: ps = make_fluidcube(cfg, rng); break;
            case EnvKind::MassRope: ps = make_massrope(cfg, rng); break;
        }
        const double param = 0.5 * (cfg.param_lo + cfg.param_hi);
        std::vector<double> ke;
        for (int k = 1; k <= 250; ++k) {
            switch (kind) {
                case EnvKind::RigidFall: step_rigidfall(ps, cfg, param, cfg.dt); break;
                case EnvKind::FluidCube: step_fluidcube(ps, cfg, param, 0.0, cfg.dt); break;
                case EnvKind::MassRope: step_massrope(ps, cfg, param, {}, cfg.dt); break;
            }
            if (k >= 50 && k % 10 == 0) ke.push_back(ps.kinetic_energy());
        }
        for (size_t i = 1; i < ke.size(); ++i) {
            INFO(env_kind_name(kind) << " sample " << i << ": " << ke[i - 1] << " -> " << ke[i]);
            CHECK(ke[i] <= ke[i - 1] + 1e-12);
        }
    }
}

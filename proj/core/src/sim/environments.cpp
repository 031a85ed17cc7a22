#include "vgpl/sim/environments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vgpl/errors.hpp"
#include "vgpl/sim/shape_match.hpp"
#include "vgpl/sim/spatial_hash.hpp"

namespace vgpl::sim {

std::string env_kind_name(EnvKind k) {
    switch (k) {
        case EnvKind::RigidFall: return "rigidfall";
        case EnvKind::FluidCube: return "fluidcube";
        case EnvKind::MassRope: return "massrope";
    }
    throw InternalError("unknown env kind");
}

EnvKind env_kind_from_name(const std::string& name) {
    if (name == "rigidfall") return EnvKind::RigidFall;
    if (name == "fluidcube") return EnvKind::FluidCube;
    if (name == "massrope") return EnvKind::MassRope;
    throw ContractViolation("unknown environment: " + name);
}

int EnvConfig::particle_count() const {
    switch (kind) {
        case EnvKind::RigidFall: return rf_cubes * rf_cube_side * rf_cube_side * rf_cube_side;
        case EnvKind::FluidCube:
            return fc_fluid_side * fc_fluid_side * fc_fluid_side +
                   fc_block_side * fc_block_side * fc_block_side;
        case EnvKind::MassRope:
            return mr_rope_particles + mr_mass_side * mr_mass_side * mr_mass_side;
    }
    throw InternalError("unknown env kind");
}

int EnvConfig::object_count() const {
    return kind == EnvKind::RigidFall ? rf_cubes : 2;
}

std::string EnvConfig::canonical_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "env " << env_kind_name(kind) << " dt " << dt << " steps " << steps << " substeps "
       << substeps << " iters " << solver_iterations << " range " << param_lo << " " << param_hi;
    switch (kind) {
        case EnvKind::RigidFall:
            os << " rf " << rf_cubes << " " << rf_cube_side << " " << rf_spacing << " "
               << rf_drop_height << " " << rf_gap << " " << rf_jitter << " " << rf_friction;
            break;
        case EnvKind::FluidCube:
            os << " fc " << fc_fluid_side << " " << fc_block_side << " " << fc_spacing << " "
               << fc_kernel_radius << " " << fc_container_hx << " " << fc_container_hz << " "
               << fc_container_height << " " << fc_block_mass_ratio << " " << fc_damping << " "
               << fc_act_accel_max << " " << fc_act_vel_max;
            break;
        case EnvKind::MassRope:
            os << " mr " << mr_rope_particles << " " << mr_mass_side << " " << mr_mass_spacing
               << " " << mr_rope_length << " " << mr_rope_particle_mass << " "
               << mr_mass_particle_mass << " " << mr_damping << " " << mr_stiffness_lo << " "
               << mr_stiffness_hi << " " << mr_act_accel_max << " " << mr_act_vel_max;
            break;
    }
    return os.str();
}

EnvConfig EnvConfig::desk_default(EnvKind kind) {
    EnvConfig c;
    c.kind = kind;
    switch (kind) {
        case EnvKind::RigidFall:
            c.steps = 120;
            c.param_lo = -15.0;
            c.param_hi = -5.0;
            break;
        case EnvKind::FluidCube:
            c.steps = 150;
            c.param_lo = 1.0;
            c.param_hi = 100.0;
            break;
        case EnvKind::MassRope:
            c.steps = 160;
            c.substeps = 2;
            c.param_lo = 0.25;
            c.param_hi = 1.20;
            break;
    }
    return c;
}

EnvConfig EnvConfig::paper_default(EnvKind kind) {
    EnvConfig c = desk_default(kind);
    switch (kind) {
        case EnvKind::RigidFall:
            c.rf_cube_side = 4;       // 3 x 64 particles
            c.rf_spacing = 0.2 / 3.0; // keeps the cube edge at 0.2 m
            c.steps = 120;
            break;
        case EnvKind::FluidCube:
            c.fc_fluid_side = 7;  // approximates the 300-particle fluid body
            c.fc_block_side = 4;  // 64-particle block stands in for 48
            c.steps = 300;
            break;
        case EnvKind::MassRope:
            c.mr_mass_side = 4;  // approximates the 81-particle spherical mass
            c.steps = 200;
            break;
    }
    return c;
}

std::vector<int> ParticleSystem::object_particles(int object) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (grouping[static_cast<size_t>(i)] == object) out.push_back(i);
    return out;
}

double ParticleSystem::kinetic_energy() const {
    double e = 0.0;
    for (int i = 0; i < size(); ++i)
        e += 0.5 * masses[static_cast<size_t>(i)] * velocities[static_cast<size_t>(i)].norm2();
    return e;
}

namespace {

void store_rest_shape(ParticleSystem& ps, int object) {
    const auto idx = ps.object_particles(object);
    Vec3 c{};
    for (int i : idx) c += ps.positions[static_cast<size_t>(i)];
    c = c / static_cast<double>(idx.size());
    auto& rest = ps.rest_shapes[static_cast<size_t>(object)];
    rest.clear();
    for (int i : idx) rest.push_back(ps.positions[static_cast<size_t>(i)] - c);
}

// Projects the particles of `object` onto the stored rest shape via the
// least-squares rigid transform.
void project_rigid(ParticleSystem& ps, int object) {
    const auto idx = ps.object_particles(object);
    const auto& rest = ps.rest_shapes[static_cast<size_t>(object)];
    std::vector<Vec3> cur;
    cur.reserve(idx.size());
    for (int i : idx) cur.push_back(ps.positions[static_cast<size_t>(i)]);
    const RigidTransform tf = shape_match(cur, rest);
    for (size_t k = 0; k < idx.size(); ++k)
        ps.positions[static_cast<size_t>(idx[k])] = tf.apply(rest[k]);
}

}  // namespace

// ---- RigidFall ------------------------------------------------------------------

ParticleSystem make_rigidfall(const EnvConfig& cfg, RngStream& rng) {
    ParticleSystem ps;
    const int side = cfg.rf_cube_side;
    const double sp = cfg.rf_spacing;
    const double edge = sp * (side - 1);
    ps.rigidness.assign(static_cast<size_t>(cfg.rf_cubes), 1);
    ps.rest_shapes.resize(static_cast<size_t>(cfg.rf_cubes));
    for (int c = 0; c < cfg.rf_cubes; ++c) {
        const double jx = rng.uniform(-cfg.rf_jitter, cfg.rf_jitter);
        const double jz = rng.uniform(-cfg.rf_jitter, cfg.rf_jitter);
        const double base_y = cfg.rf_drop_height + c * (edge + cfg.rf_gap);
        for (int ix = 0; ix < side; ++ix)
            for (int iy = 0; iy < side; ++iy)
                for (int iz = 0; iz < side; ++iz) {
                    ps.positions.push_back({jx + ix * sp - edge / 2.0, base_y + iy * sp,
                                            jz + iz * sp - edge / 2.0});
                    ps.velocities.push_back({});
                    ps.masses.push_back(1.0);
                    ps.grouping.push_back(c);
                }
        store_rest_shape(ps, c);
    }
    return ps;
}

void step_rigidfall(ParticleSystem& state, const EnvConfig& cfg, double gravity, double dt) {
    const int n = state.size();
    const double diameter = cfg.rf_spacing;
    std::vector<Vec3> x_old = state.positions;
    std::vector<uint8_t> ground_contact(static_cast<size_t>(n), 0);

    for (int i = 0; i < n; ++i) {
        state.velocities[static_cast<size_t>(i)].y += gravity * dt;
        state.positions[static_cast<size_t>(i)] += state.velocities[static_cast<size_t>(i)] * dt;
    }

    SpatialHashGrid grid(diameter);
    for (int iter = 0; iter < cfg.solver_iterations; ++iter) {
        // ground plane
        for (int i = 0; i < n; ++i) {
            if (state.positions[static_cast<size_t>(i)].y < 0.0) {
                state.positions[static_cast<size_t>(i)].y = 0.0;
                ground_contact[static_cast<size_t>(i)] = 1;
            }
        }
        // inter-cube particle contacts, symmetric push (equal masses)
        grid.build(state.positions);
        grid.for_each_pair(state.positions, diameter, [&](int i, int j) {
            if (state.grouping[static_cast<size_t>(i)] == state.grouping[static_cast<size_t>(j)])
                return;
            Vec3 d = state.positions[static_cast<size_t>(j)] -
                     state.positions[static_cast<size_t>(i)];
            const double dist = d.norm();
            if (dist >= diameter || dist < 1e-12) return;
            const Vec3 push = d * ((diameter - dist) / dist * 0.5);
            state.positions[static_cast<size_t>(i)] -= push;
            state.positions[static_cast<size_t>(j)] += push;
        });
        // rigidity, then lift each cube rigidly out of the ground
        for (int c = 0; c < state.objects(); ++c) {
            project_rigid(state, c);
            double min_y = 1e300;
            const auto idx = state.object_particles(c);
            for (int i : idx) min_y = std::min(min_y, state.positions[static_cast<size_t>(i)].y);
            if (min_y < 0.0) {
                for (int i : idx) {
                    state.positions[static_cast<size_t>(i)].y -= min_y;
                    ground_contact[static_cast<size_t>(i)] = 1;
                }
            }
        }
    }

    for (int i = 0; i < n; ++i) {
        Vec3& v = state.velocities[static_cast<size_t>(i)];
        v = (state.positions[static_cast<size_t>(i)] - x_old[static_cast<size_t>(i)]) / dt;
        if (ground_contact[static_cast<size_t>(i)]) {  // restitution 0; tangential friction
            v.x *= 1.0 - cfg.rf_friction;
            v.z *= 1.0 - cfg.rf_friction;
        }
    }
}

// ---- MassRope -------------------------------------------------------------------

double massrope_spring_constant(const EnvConfig& cfg, double stiffness) {
    const double t = (stiffness - cfg.param_lo) / (cfg.param_hi - cfg.param_lo);
    return cfg.mr_stiffness_lo + t * (cfg.mr_stiffness_hi - cfg.mr_stiffness_lo);
}

ParticleSystem make_massrope(const EnvConfig& cfg, double stiffness, RngStream& rng) {
    (void)rng;  // layout is deterministic; variation comes from actuation
    ParticleSystem ps;
    ps.actuator_pos = {0.0, 1.0, 0.0};
    ps.actuator_vel = {};
    const int nr = cfg.mr_rope_particles;
    const double seg = cfg.mr_rope_length / (nr - 1);
    const double k = massrope_spring_constant(cfg, stiffness);
    const int ms = cfg.mr_mass_side;
    const double cluster_mass = cfg.mr_mass_particle_mass * ms * ms * ms;
    const double g = 9.8;
    // object 0: rigid mass cluster, object 1: rope. Rope particles first,
    // top particle (index 0) is kinematic and rides the actuator. Segments
    // start stretched by (weight below)/k so the chain begins in equilibrium.
    double y = 1.0;
    for (int i = 0; i < nr; ++i) {
        ps.positions.push_back({0.0, y, 0.0});
        ps.velocities.push_back({});
        ps.masses.push_back(cfg.mr_rope_particle_mass);
        ps.grouping.push_back(1);
        const double below = cluster_mass + cfg.mr_rope_particle_mass * (nr - 1 - i);
        y -= seg + below * g / k;
    }
    const double msp = cfg.mr_mass_spacing;
    const double half = msp * (ms - 1) / 2.0;
    // after the loop, y is exactly one stretched coupling segment below the
    // last rope particle: the equilibrium spot for the attachment particle,
    // which is the center of the cluster's top layer
    const double top_y = y;
    for (int ix = 0; ix < ms; ++ix)
        for (int iy = 0; iy < ms; ++iy)
            for (int iz = 0; iz < ms; ++iz) {
                ps.positions.push_back(
                    {ix * msp - half, top_y - (ms - 1 - iy) * msp, iz * msp - half});
                ps.velocities.push_back({});
                ps.masses.push_back(cfg.mr_mass_particle_mass);
                ps.grouping.push_back(0);
            }
    ps.rigidness = {1, 0};
    ps.rest_shapes.resize(2);
    store_rest_shape(ps, 0);
    return ps;
}

namespace {

// Attachment particle: center of the cluster's top layer.
int massrope_attachment(const EnvConfig& cfg) {
    const int ms = cfg.mr_mass_side;
    const int mid = (ms - 1) / 2;
    // local index (ix, iy = ms-1, iz) with iy major ordering used in the builder
    return cfg.mr_rope_particles + (mid * ms + (ms - 1)) * ms + mid;
}

}  // namespace

void step_massrope(ParticleSystem& state, const EnvConfig& cfg, double stiffness,
                   const Vec3& actuator_accel, double dt) {
    if (std::abs(actuator_accel.y) > 0.0)
        throw ContractViolation("step_massrope: actuator acceleration must stay horizontal");
    const double k = massrope_spring_constant(cfg, stiffness);
    const int nr = cfg.mr_rope_particles;
    const double seg = cfg.mr_rope_length / (nr - 1);
    const int attach = massrope_attachment(cfg);
    const double g = -9.8;
    const int sub = std::max(1, cfg.substeps);
    const double h = dt / sub;

    for (int s = 0; s < sub; ++s) {
        // actuator integrates the same commanded acceleration across substeps
        state.actuator_vel += actuator_accel * h;
        state.actuator_vel.x = std::clamp(state.actuator_vel.x, -cfg.mr_act_vel_max,
                                          cfg.mr_act_vel_max);
        state.actuator_vel.z = std::clamp(state.actuator_vel.z, -cfg.mr_act_vel_max,
                                          cfg.mr_act_vel_max);
        state.actuator_pos += state.actuator_vel * h;
        state.actuator_pos.y = 1.0;

        std::vector<Vec3> force(static_cast<size_t>(state.size()));
        auto spring = [&](int a, int b, double rest) {
            Vec3 d = state.positions[static_cast<size_t>(b)] -
                     state.positions[static_cast<size_t>(a)];
            const double len = d.norm();
            if (len < 1e-12) return;
            const Vec3 f = d * (k * (len - rest) / len);
            force[static_cast<size_t>(a)] += f;
            force[static_cast<size_t>(b)] -= f;
        };
        for (int i = 0; i + 1 < nr; ++i) spring(i, i + 1, seg);
        spring(nr - 1, attach, seg);

        std::vector<Vec3> x_old = state.positions;
        const double damp = std::max(0.0, 1.0 - cfg.mr_damping * h);
        for (int i = 0; i < state.size(); ++i) {
            if (i == 0) continue;  // kinematic top particle
            Vec3& v = state.velocities[static_cast<size_t>(i)];
            v += (force[static_cast<size_t>(i)] / state.masses[static_cast<size_t>(i)] +
                  Vec3{0.0, g, 0.0}) *
                 h;
            v *= damp;
            state.positions[static_cast<size_t>(i)] += v * h;
        }
        state.positions[0] = state.actuator_pos;
        state.velocities[0] = state.actuator_vel;

        project_rigid(state, 0);
        for (int i : state.object_particles(0))
            state.velocities[static_cast<size_t>(i)] =
                (state.positions[static_cast<size_t>(i)] - x_old[static_cast<size_t>(i)]) / h;
    }
}

// ---- FluidCube ------------------------------------------------------------------

double fluid_xsph_coefficient(double viscosity) {
    return 0.01 + 0.19 * (viscosity - 1.0) / 99.0;
}

ParticleSystem make_fluidcube(const EnvConfig& cfg, RngStream& rng) {
    (void)rng;
    ParticleSystem ps;
    const double sp = cfg.fc_spacing;
    const int fs = cfg.fc_fluid_side;
    const double fhalf = sp * (fs - 1) / 2.0;
    // object 0: fluid, object 1: floating rigid block
    for (int ix = 0; ix < fs; ++ix)
        for (int iy = 0; iy < fs; ++iy)
            for (int iz = 0; iz < fs; ++iz) {
                ps.positions.push_back(
                    {ix * sp - fhalf, sp / 2.0 + iy * sp, iz * sp - fhalf});
                ps.velocities.push_back({});
                ps.masses.push_back(1.0);
                ps.grouping.push_back(0);
            }
    const int bs = cfg.fc_block_side;
    const double bhalf = sp * (bs - 1) / 2.0;
    const double block_base = sp / 2.0 + fs * sp + sp / 2.0;
    for (int ix = 0; ix < bs; ++ix)
        for (int iy = 0; iy < bs; ++iy)
            for (int iz = 0; iz < bs; ++iz) {
                ps.positions.push_back({ix * sp - bhalf, block_base + iy * sp, iz * sp - bhalf});
                ps.velocities.push_back({});
                ps.masses.push_back(cfg.fc_block_mass_ratio);
                ps.grouping.push_back(1);
            }
    ps.rigidness = {0, 1};
    ps.rest_shapes.resize(2);
    store_rest_shape(ps, 1);
    ps.container_x = 0.0;
    ps.container_vx = 0.0;
    return ps;
}

namespace {

double poly6(double r2, double h) {
    const double h2 = h * h;
    if (r2 >= h2) return 0.0;
    const double c = 315.0 / (64.0 * M_PI * std::pow(h, 9));
    const double t = h2 - r2;
    return c * t * t * t;
}

Vec3 spiky_grad(const Vec3& d, double h) {
    const double r = d.norm();
    if (r >= h || r < 1e-9) return {};
    const double c = -45.0 / (M_PI * std::pow(h, 6));
    const double t = h - r;
    return d * (c * t * t / r);
}

double lattice_rest_density(double spacing, double h) {
    double rho = 0.0;
    const int reach = static_cast<int>(std::ceil(h / spacing)) + 1;
    for (int ix = -reach; ix <= reach; ++ix)
        for (int iy = -reach; iy <= reach; ++iy)
            for (int iz = -reach; iz <= reach; ++iz) {
                const Vec3 d{ix * spacing, iy * spacing, iz * spacing};
                rho += poly6(d.norm2(), h);
            }
    return rho;
}

}  // namespace

void step_fluidcube(ParticleSystem& state, const EnvConfig& cfg, double viscosity,
                    double container_accel_x, double dt, FluidStepStats* stats) {
    const int n = state.size();
    const double h = cfg.fc_kernel_radius;
    const double sp = cfg.fc_spacing;
    const double radius = sp / 2.0;
    const double rho0 = lattice_rest_density(sp, h);
    const double g = -9.8;

    // container motion
    state.container_vx += container_accel_x * dt;
    state.container_vx = std::clamp(state.container_vx, -cfg.fc_act_vel_max, cfg.fc_act_vel_max);
    state.container_x += state.container_vx * dt;

    std::vector<int> fluid = state.object_particles(0);
    std::vector<int> block = state.object_particles(1);

    // predict
    std::vector<Vec3> x_old = state.positions;
    const double damp = std::max(0.0, 1.0 - cfg.fc_damping * dt);
    for (int i = 0; i < n; ++i) {
        Vec3& v = state.velocities[static_cast<size_t>(i)];
        v.y += g * dt;
        v *= damp;
        state.positions[static_cast<size_t>(i)] += v * dt;
    }

    // fluid-only neighbor lists on predicted positions
    std::vector<Vec3> fluid_pos(fluid.size());
    for (size_t a = 0; a < fluid.size(); ++a)
        fluid_pos[a] = state.positions[static_cast<size_t>(fluid[a])];
    SpatialHashGrid grid(h);
    grid.build(fluid_pos);
    std::vector<std::vector<int>> nbr(fluid.size());
    for (size_t a = 0; a < fluid.size(); ++a)
        nbr[a] = grid.query(fluid_pos[a], h, static_cast<int>(a));

    auto compression_residual = [&]() {
        double acc = 0.0;
        for (size_t a = 0; a < fluid.size(); ++a) {
            double rho = poly6(0.0, h);
            for (int b : nbr[a]) rho += poly6((fluid_pos[static_cast<size_t>(b)] - fluid_pos[a]).norm2(), h);
            acc += std::max(rho / rho0 - 1.0, 0.0);
        }
        return acc / static_cast<double>(fluid.size());
    };
    if (stats) stats->density_residual_pre = compression_residual();

    // density constraint, Jacobi iterations
    const double eps_cfm = 100.0;
    std::vector<double> lambda(fluid.size());
    std::vector<Vec3> dp(fluid.size());
    for (int iter = 0; iter < static_cast<int>(cfg.fc_pressure_iters); ++iter) {
        for (size_t a = 0; a < fluid.size(); ++a) {
            double rho = poly6(0.0, h);
            Vec3 grad_self{};
            double grad_sum2 = 0.0;
            for (int b : nbr[a]) {
                const Vec3 d = fluid_pos[a] - fluid_pos[static_cast<size_t>(b)];
                rho += poly6(d.norm2(), h);
                const Vec3 gr = spiky_grad(d, h) / rho0;
                grad_self += gr;
                grad_sum2 += gr.norm2();
            }
            const double c = std::max(rho / rho0 - 1.0, 0.0);
            lambda[a] = -c / (grad_self.norm2() + grad_sum2 + eps_cfm);
        }
        for (size_t a = 0; a < fluid.size(); ++a) {
            Vec3 delta{};
            for (int b : nbr[a]) {
                const Vec3 d = fluid_pos[a] - fluid_pos[static_cast<size_t>(b)];
                delta += spiky_grad(d, h) * (lambda[a] + lambda[static_cast<size_t>(b)]);
            }
            dp[a] = delta / rho0;
        }
        for (size_t a = 0; a < fluid.size(); ++a) fluid_pos[a] += dp[a];
    }
    if (stats) stats->density_residual_post = compression_residual();
    for (size_t a = 0; a < fluid.size(); ++a)
        state.positions[static_cast<size_t>(fluid[a])] = fluid_pos[a];

    // block-fluid contacts: inverse-mass weighted pair projection
    SpatialHashGrid cgrid(sp);
    for (int pass = 0; pass < 2; ++pass) {
        cgrid.build(state.positions);
        cgrid.for_each_pair(state.positions, sp, [&](int i, int j) {
            if (state.grouping[static_cast<size_t>(i)] == state.grouping[static_cast<size_t>(j)])
                return;
            Vec3 d = state.positions[static_cast<size_t>(j)] -
                     state.positions[static_cast<size_t>(i)];
            const double dist = d.norm();
            if (dist >= sp || dist < 1e-12) return;
            const double wi = 1.0 / state.masses[static_cast<size_t>(i)];
            const double wj = 1.0 / state.masses[static_cast<size_t>(j)];
            const Vec3 corr = d * ((sp - dist) / (dist * (wi + wj)));
            state.positions[static_cast<size_t>(i)] -= corr * wi;
            state.positions[static_cast<size_t>(j)] += corr * wj;
        });
    }

    // container walls clamp the fluid per particle
    const double x_lo = state.container_x - cfg.fc_container_hx + radius;
    const double x_hi = state.container_x + cfg.fc_container_hx - radius;
    const double z_lo = -cfg.fc_container_hz + radius;
    const double z_hi = cfg.fc_container_hz - radius;
    const double y_lo = radius, y_hi = cfg.fc_container_height - radius;
    for (int i : fluid) {
        Vec3& p = state.positions[static_cast<size_t>(i)];
        p.x = std::clamp(p.x, x_lo, x_hi);
        p.y = std::clamp(p.y, y_lo, y_hi);
        p.z = std::clamp(p.z, z_lo, z_hi);
    }

    // the block stays rigid: project, then translate it inside the walls
    project_rigid(state, 1);
    Vec3 shift{};
    for (int i : block) {
        const Vec3& p = state.positions[static_cast<size_t>(i)];
        shift.x = std::max(shift.x, x_lo - p.x);
        shift.y = std::max(shift.y, y_lo - p.y);
        shift.z = std::max(shift.z, z_lo - p.z);
    }
    Vec3 shift_neg{};
    for (int i : block) {
        const Vec3& p = state.positions[static_cast<size_t>(i)];
        shift_neg.x = std::min(shift_neg.x, x_hi - p.x);
        shift_neg.y = std::min(shift_neg.y, y_hi - p.y);
        shift_neg.z = std::min(shift_neg.z, z_hi - p.z);
    }
    for (int i : block) state.positions[static_cast<size_t>(i)] += shift + shift_neg;

    // velocities from position change, then XSPH smoothing on the fluid
    for (int i = 0; i < n; ++i)
        state.velocities[static_cast<size_t>(i)] =
            (state.positions[static_cast<size_t>(i)] - x_old[static_cast<size_t>(i)]) / dt;

    const double c_xsph = fluid_xsph_coefficient(viscosity);
    for (size_t a = 0; a < fluid.size(); ++a)
        fluid_pos[a] = state.positions[static_cast<size_t>(fluid[a])];
    grid.build(fluid_pos);
    std::vector<Vec3> smoothed(fluid.size());
    for (size_t a = 0; a < fluid.size(); ++a) {
        const Vec3 va = state.velocities[static_cast<size_t>(fluid[a])];
        Vec3 acc{};
        double wsum = 0.0;
        for (int b : grid.query(fluid_pos[a], h, static_cast<int>(a))) {
            const double w = poly6((fluid_pos[static_cast<size_t>(b)] - fluid_pos[a]).norm2(), h);
            acc += (state.velocities[static_cast<size_t>(fluid[static_cast<size_t>(b)])] - va) * w;
            wsum += w;
        }
        smoothed[a] = wsum > 0.0 ? va + acc * (c_xsph / wsum) : va;
    }
    for (size_t a = 0; a < fluid.size(); ++a)
        state.velocities[static_cast<size_t>(fluid[a])] = smoothed[a];
}

// ---- simulate ---------------------------------------------------------------------

Trajectory simulate(const EnvConfig& cfg, double param, uint64_t seed) {
    if (param < cfg.param_lo || param > cfg.param_hi)
        throw ContractViolation("simulate: parameter outside the configured range");

    RngStream rng(seed ^ (0x9E3779B97F4A7C15ull * (cfg.seed + 1)));
    ParticleSystem ps;
    switch (cfg.kind) {
        case EnvKind::RigidFall: ps = make_rigidfall(cfg, rng); break;
        case EnvKind::FluidCube: ps = make_fluidcube(cfg, rng); break;
        case EnvKind::MassRope: ps = make_massrope(cfg, rng); break;
    }

    Trajectory traj;
    traj.kind = cfg.kind;
    traj.params = {static_cast<float>(param)};
    traj.t_steps = cfg.steps;
    traj.n_particles = ps.size();
    traj.n_objects = ps.objects();
    traj.grouping.assign(ps.grouping.begin(), ps.grouping.end());
    traj.rigidness = ps.rigidness;
    traj.positions.reserve(static_cast<size_t>(cfg.steps) * ps.size() * 3);
    traj.actuation.reserve(static_cast<size_t>(cfg.steps) * 3);

    auto record_frame = [&]() {
        for (const Vec3& p : ps.positions) {
            traj.positions.push_back(static_cast<float>(p.x));
            traj.positions.push_back(static_cast<float>(p.y));
            traj.positions.push_back(static_cast<float>(p.z));
        }
    };
    auto record_act = [&](const Vec3& a) {
        traj.actuation.push_back(static_cast<float>(a.x));
        traj.actuation.push_back(static_cast<float>(a.y));
        traj.actuation.push_back(static_cast<float>(a.z));
    };

    record_frame();
    for (int t = 0; t + 1 < cfg.steps; ++t) {
        Vec3 act{};
        switch (cfg.kind) {
            case EnvKind::RigidFall:
                step_rigidfall(ps, cfg, param, cfg.dt);
                break;
            case EnvKind::FluidCube:
                act.x = rng.uniform(-cfg.fc_act_accel_max, cfg.fc_act_accel_max);
                step_fluidcube(ps, cfg, param, act.x, cfg.dt);
                break;
            case EnvKind::MassRope:
                act.x = rng.uniform(-cfg.mr_act_accel_max, cfg.mr_act_accel_max);
                act.z = rng.uniform(-cfg.mr_act_accel_max, cfg.mr_act_accel_max);
                step_massrope(ps, cfg, param, act, cfg.dt);
                break;
        }
        record_act(act);
        record_frame();
    }
    record_act({});
    return traj;
}

}  // namespace vgpl::sim

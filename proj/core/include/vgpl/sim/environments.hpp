#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgpl/rng.hpp"
#include "vgpl/sim/vec3.hpp"

namespace vgpl::sim {

enum class EnvKind : uint32_t { RigidFall = 0, FluidCube = 1, MassRope = 2 };

std::string env_kind_name(EnvKind k);
EnvKind env_kind_from_name(const std::string& name);

/// Environment description: geometry, integration and the physical-parameter
/// range. Desk defaults run in seconds; the paper-scale particle counts are
/// available through the factory flag.
struct EnvConfig {
    EnvKind kind = EnvKind::RigidFall;
    double dt = 1.0 / 60.0;
    int steps = 120;
    int substeps = 1;
    int solver_iterations = 10;

    double param_lo = -15.0;  // gravity / viscosity / stiffness range
    double param_hi = -5.0;

    // RigidFall
    int rf_cubes = 3;
    int rf_cube_side = 3;      // particles per edge
    double rf_spacing = 0.1;   // m between adjacent particles
    double rf_drop_height = 0.25;
    double rf_gap = 0.05;
    double rf_jitter = 0.03;
    double rf_friction = 0.3;
    // uniform per-cube velocity damping while in contact; position projection
    // alone limit-cycles instead of settling
    double rf_contact_damping = 0.3;

    // MassRope
    int mr_rope_particles = 14;  // includes the kinematic top particle
    int mr_mass_side = 3;        // rigid cluster of side^3 particles
    double mr_mass_spacing = 0.04;
    double mr_rope_length = 0.4;
    double mr_rope_particle_mass = 0.08;
    double mr_mass_particle_mass = 0.02;
    double mr_damping = 0.5;          // 1/s velocity damping on free particles
    double mr_stiffness_lo = 50.0;    // N/m at parameter range low end
    double mr_stiffness_hi = 240.0;   // N/m at parameter range high end
    double mr_act_accel_max = 3.0;    // |accel| per horizontal axis
    double mr_act_vel_max = 1.0;

    // FluidCube
    int fc_fluid_side = 5;  // fluid block of side^3 particles
    int fc_block_side = 3;  // floating rigid block of side^3 particles
    double fc_spacing = 0.05;
    double fc_kernel_radius = 0.1;
    double fc_container_hx = 0.2;   // interior half extents
    double fc_container_hz = 0.15;
    double fc_container_height = 0.6;
    double fc_block_mass_ratio = 0.8;  // block particle mass / fluid particle mass
    double fc_pressure_iters = 3;
    double fc_damping = 0.1;        // 1/s uniform drag, keeps settling monotone
    double fc_act_accel_max = 2.0;  // container |accel| along x
    double fc_act_vel_max = 0.5;

    uint64_t seed = 0;

    int particle_count() const;
    int object_count() const;
    std::string canonical_text() const;  // hashed into checkpoints and manifests

    static EnvConfig desk_default(EnvKind kind);
    static EnvConfig paper_default(EnvKind kind);
};

/// Mutable particle state stepped by the environment integrators.
struct ParticleSystem {
    std::vector<Vec3> positions;
    std::vector<Vec3> velocities;
    std::vector<double> masses;
    std::vector<int> grouping;        // particle -> object id in [0, M)
    std::vector<uint8_t> rigidness;   // per object
    // rest offsets from centroid per rigid object (empty for non-rigid)
    std::vector<std::vector<Vec3>> rest_shapes;

    // external state
    Vec3 actuator_pos{}, actuator_vel{};   // MassRope
    double container_x = 0.0, container_vx = 0.0;  // FluidCube

    int size() const { return static_cast<int>(positions.size()); }
    int objects() const { return static_cast<int>(rigidness.size()); }
    std::vector<int> object_particles(int object) const;
    double kinetic_energy() const;
};

/// Ground-truth record of one simulation. Positions are quantized to float32
/// exactly once, at generation, so file round trips are bit-exact.
struct Trajectory {
    EnvKind kind = EnvKind::RigidFall;
    std::vector<float> params;      // physical parameters (length 1 here)
    std::vector<uint32_t> grouping; // N
    std::vector<uint8_t> rigidness; // M
    std::vector<float> positions;   // T*N*3 row-major
    std::vector<float> actuation;   // T*3
    int t_steps = 0;
    int n_particles = 0;
    int n_objects = 0;

    Vec3 position(int t, int i) const {
        const size_t base = (static_cast<size_t>(t) * n_particles + i) * 3;
        return {positions[base], positions[base + 1], positions[base + 2]};
    }
};

ParticleSystem make_rigidfall(const EnvConfig& cfg, RngStream& rng);
/// The rope starts pre-stretched at the static equilibrium of the given
/// stiffness so zero-actuation runs begin at rest.
ParticleSystem make_massrope(const EnvConfig& cfg, double stiffness, RngStream& rng);
ParticleSystem make_fluidcube(const EnvConfig& cfg, RngStream& rng);

void step_rigidfall(ParticleSystem& state, const EnvConfig& cfg, double gravity, double dt);
void step_massrope(ParticleSystem& state, const EnvConfig& cfg, double stiffness,
                   const Vec3& actuator_accel, double dt);

struct FluidStepStats {
    double density_residual_pre = 0.0;
    double density_residual_post = 0.0;
};
void step_fluidcube(ParticleSystem& state, const EnvConfig& cfg, double viscosity,
                    double container_accel_x, double dt, FluidStepStats* stats = nullptr);

/// Maps the public stiffness parameter onto the serial spring constant.
double massrope_spring_constant(const EnvConfig& cfg, double stiffness);
/// Maps viscosity in [1,100] onto the XSPH smoothing coefficient.
double fluid_xsph_coefficient(double viscosity);

/// Runs the configured environment for cfg.steps frames (frame 0 is the
/// initial state) under per-step random actuation. Pure function of
/// (cfg, params, seed).
Trajectory simulate(const EnvConfig& cfg, double param, uint64_t seed);

}  // namespace vgpl::sim

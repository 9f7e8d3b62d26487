#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "eghn/rng.hpp"

namespace eghn {

struct SimConfig {
  double dt = 1e-3;
  double softening = 1e-2;       // epsilon in the softened Coulomb force
  double sigma_center = 1.0;     // complex-center spread
  double offset_scale = 0.3;     // particle offsets inside a complex
  double sigma_velocity = 0.5;
  double charge_magnitude = 1.0;  // 0 turns every particle neutral
  int max_projection_iterations = 500;
  double position_tolerance = 1e-10;   // relative stick-length violation
  double velocity_tolerance = 1e-12;   // |d . (v_i - v_j)| residual
};

enum class ComplexShape { Isolated, Stick, Chain, Triangle };
std::string shape_name(ComplexShape s);

struct ShapePick {
  ComplexShape shape;
  int size;
};

struct ComplexSpec {
  ComplexShape shape = ComplexShape::Isolated;
  std::vector<int> particles;
  std::vector<std::pair<int, int>> sticks;  // indices into the global particle list
};

struct Stick {
  int i = 0, j = 0;
  double rest_length = 0.0;
};

struct SimState {
  std::vector<std::array<double, 3>> pos, vel;
  std::vector<double> charge;
  int size() const { return static_cast<int>(pos.size()); }
};

struct MComplexSystem {
  SimState state;
  std::vector<ComplexSpec> complexes;
  std::vector<Stick> sticks;
  std::vector<int> membership;  // complex index per particle
};

// Full rollout record: positions/velocities per step (frame 0 is the initial
// state, frame `steps` the final one).
struct Trajectory {
  std::vector<std::vector<std::array<double, 3>>> positions, velocities;
  std::vector<double> charges;
  std::vector<int> membership;
  std::vector<Stick> sticks;
  std::vector<ComplexSpec> complexes;
  double dt = 1e-3;
  uint64_t seed = 0;
  int steps = 0;
};

// Complex sizes are drawn so their mean equals avg_size; sizes 1/2/3 map to
// the isolated/stick/{chain,triangle} menu, larger sizes become chains.
std::vector<ShapePick> sample_shape_combo(int num_complexes, double avg_size, Rng& rng);

MComplexSystem init_system_with_combo(const std::vector<ShapePick>& combo, const SimConfig& cfg, Rng& rng);
MComplexSystem init_system(int num_complexes, double avg_size, uint64_t seed, const SimConfig& cfg = {});

std::vector<std::array<double, 3>> coulomb_forces(const SimState& s, double softening);
double kinetic_energy(const SimState& s);
double potential_energy(const SimState& s, double softening);
std::array<double, 3> total_momentum(const SimState& s);
double max_stick_violation(const SimState& s, const std::vector<Stick>& sticks);  // relative

// SHAKE-style position projection; corrections are mirrored into velocities
// when dt > 0. Throws NumericError on non-convergence.
void project_positions(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg, double dt,
                       const std::vector<std::array<double, 3>>& reference_dirs);
// RATTLE-style velocity projection onto the constraint manifold.
void project_velocities(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg);

// One velocity-Verlet step with constraint projection.
void step(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg);

Trajectory rollout_system(MComplexSystem system, int steps, const SimConfig& cfg, uint64_t seed);
Trajectory rollout(int num_complexes, double avg_size, int steps, double dt, uint64_t seed,
                   SimConfig cfg = {});

struct DatasetCounts {
  int train = 500, val = 100, test = 100;
};

struct DatasetSpec {
  int num_complexes = 3;
  double avg_size = 3.0;
  int num_systems = 1;  // J distinct shape combinations
  int steps = 1500;
  double dt = 1e-3;
  DatasetCounts counts;
  uint64_t seed = 0;
  SimConfig sim;
};

// Generates train/val/test JSONL files plus manifest.json under out_dir.
void make_dataset(const DatasetSpec& spec, const std::string& out_dir);

}  // namespace eghn

#include "eghn/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "eghn/errors.hpp"
#include "eghn/io.hpp"

namespace eghn {

namespace {

std::array<double, 3> diff(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double norm(const std::array<double, 3>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

std::string shape_name(ComplexShape s) {
  switch (s) {
    case ComplexShape::Isolated: return "isolated";
    case ComplexShape::Stick: return "stick";
    case ComplexShape::Chain: return "chain";
    case ComplexShape::Triangle: return "triangle";
  }
  return "isolated";
}

std::vector<ShapePick> sample_shape_combo(int num_complexes, double avg_size, Rng& rng) {
  if (num_complexes < 1) throw ConfigError("sample_shape_combo: need at least one complex");
  if (avg_size < 1.0) throw ConfigError("sample_shape_combo: average size must be >= 1");
  std::vector<ShapePick> combo;
  const int lo = static_cast<int>(std::floor(avg_size));
  const double frac = avg_size - lo;
  for (int c = 0; c < num_complexes; ++c) {
    const int size = lo + (rng.uniform() < frac ? 1 : 0);
    ShapePick pick;
    pick.size = size;
    if (size == 1) {
      pick.shape = ComplexShape::Isolated;
    } else if (size == 2) {
      pick.shape = ComplexShape::Stick;
    } else if (size == 3) {
      pick.shape = rng.uniform() < 0.5 ? ComplexShape::Chain : ComplexShape::Triangle;
    } else {
      pick.shape = ComplexShape::Chain;
    }
    combo.push_back(pick);
  }
  return combo;
}

MComplexSystem init_system_with_combo(const std::vector<ShapePick>& combo, const SimConfig& cfg, Rng& rng) {
  MComplexSystem sys;
  for (size_t c = 0; c < combo.size(); ++c) {
    const auto& pick = combo[c];
    ComplexSpec spec;
    spec.shape = pick.shape;
    std::array<double, 3> center{};
    for (auto& x : center) x = rng.gaussian(0.0, cfg.sigma_center);

    // Offsets are resampled until the complex geometry is well conditioned:
    // no near-coincident particles, and no sliver triangles (a collinear
    // triangle makes the constraint system singular).
    std::vector<std::array<double, 3>> offsets(static_cast<size_t>(pick.size));
    for (int attempt = 0; attempt < 1000; ++attempt) {
      for (auto& o : offsets)
        for (auto& x : o) x = pick.size == 1 ? 0.0 : rng.gaussian(0.0, cfg.offset_scale);
      if (offsets.size() < 2) break;
      double min_d = 1e30;
      for (size_t a = 0; a < offsets.size(); ++a)
        for (size_t b = a + 1; b < offsets.size(); ++b) min_d = std::min(min_d, norm(diff(offsets[a], offsets[b])));
      if (min_d <= 0.15) continue;
      if (pick.shape == ComplexShape::Triangle) {
        const auto e1 = diff(offsets[1], offsets[0]);
        const auto e2 = diff(offsets[2], offsets[0]);
        const std::array<double, 3> cross = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                                             e1[0] * e2[1] - e1[1] * e2[0]};
        double longest = 0.0;
        for (size_t a = 0; a < offsets.size(); ++a)
          for (size_t b = a + 1; b < offsets.size(); ++b) longest = std::max(longest, norm(diff(offsets[a], offsets[b])));
        // Area relative to the longest side squared; slivers make the
        // constraint solve ill-conditioned.
        if (0.5 * norm(cross) <= 0.06 * longest * longest) continue;
      }
      break;
    }

    const int base = sys.state.size();
    for (int k = 0; k < pick.size; ++k) {
      spec.particles.push_back(base + k);
      sys.state.pos.push_back({center[0] + offsets[static_cast<size_t>(k)][0],
                               center[1] + offsets[static_cast<size_t>(k)][1],
                               center[2] + offsets[static_cast<size_t>(k)][2]});
      std::array<double, 3> v{};
      for (auto& x : v) x = rng.gaussian(0.0, cfg.sigma_velocity);
      sys.state.vel.push_back(v);
      sys.state.charge.push_back(cfg.charge_magnitude * (rng.uniform() < 0.5 ? -1.0 : 1.0));
      sys.membership.push_back(static_cast<int>(c));
    }
    auto add_stick = [&](int a, int b) {
      spec.sticks.emplace_back(base + a, base + b);
      const double len = norm(diff(sys.state.pos[static_cast<size_t>(base + a)],
                                   sys.state.pos[static_cast<size_t>(base + b)]));
      sys.sticks.push_back({base + a, base + b, len});
    };
    switch (pick.shape) {
      case ComplexShape::Isolated:
        break;
      case ComplexShape::Stick:
        add_stick(0, 1);
        break;
      case ComplexShape::Chain:
        for (int k = 0; k + 1 < pick.size; ++k) add_stick(k, k + 1);
        break;
      case ComplexShape::Triangle:
        add_stick(0, 1);
        add_stick(1, 2);
        add_stick(0, 2);
        break;
    }
    sys.complexes.push_back(std::move(spec));
  }
  // Initial velocities must be consistent with the constraints:
  // d/dt |x_i - x_j|^2 = 0 for every stick.
  project_velocities(sys.state, sys.sticks, cfg);
  return sys;
}

MComplexSystem init_system(int num_complexes, double avg_size, uint64_t seed, const SimConfig& cfg) {
  Rng rng(seed);
  auto combo = sample_shape_combo(num_complexes, avg_size, rng);
  return init_system_with_combo(combo, cfg, rng);
}

std::vector<std::array<double, 3>> coulomb_forces(const SimState& s, double softening) {
  const int n = s.size();
  std::vector<std::array<double, 3>> f(static_cast<size_t>(n), {0.0, 0.0, 0.0});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto d = diff(s.pos[static_cast<size_t>(i)], s.pos[static_cast<size_t>(j)]);
      const double r2 = dot(d, d) + softening;
      const double mag = s.charge[static_cast<size_t>(i)] * s.charge[static_cast<size_t>(j)] /
                         (r2 * std::sqrt(r2));
      for (int k = 0; k < 3; ++k) {
        f[static_cast<size_t>(i)][static_cast<size_t>(k)] += mag * d[static_cast<size_t>(k)];
        f[static_cast<size_t>(j)][static_cast<size_t>(k)] -= mag * d[static_cast<size_t>(k)];
      }
    }
  }
  return f;
}

double kinetic_energy(const SimState& s) {
  double e = 0.0;
  for (const auto& v : s.vel) e += 0.5 * dot(v, v);
  return e;
}

double potential_energy(const SimState& s, double softening) {
  double e = 0.0;
  const int n = s.size();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto d = diff(s.pos[static_cast<size_t>(i)], s.pos[static_cast<size_t>(j)]);
      e += s.charge[static_cast<size_t>(i)] * s.charge[static_cast<size_t>(j)] /
           std::sqrt(dot(d, d) + softening);
    }
  return e;
}

std::array<double, 3> total_momentum(const SimState& s) {
  std::array<double, 3> p{};
  for (const auto& v : s.vel)
    for (int k = 0; k < 3; ++k) p[static_cast<size_t>(k)] += v[static_cast<size_t>(k)];
  return p;
}

double max_stick_violation(const SimState& s, const std::vector<Stick>& sticks) {
  double m = 0.0;
  for (const auto& st : sticks) {
    const double len = norm(diff(s.pos[static_cast<size_t>(st.i)], s.pos[static_cast<size_t>(st.j)]));
    m = std::max(m, std::abs(len - st.rest_length) / st.rest_length);
  }
  return m;
}

void project_positions(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg, double dt,
                       const std::vector<std::array<double, 3>>& reference_dirs) {
  if (sticks.empty()) return;
  for (int iter = 0; iter < cfg.max_projection_iterations; ++iter) {
    double worst = 0.0;
    for (size_t c = 0; c < sticks.size(); ++c) {
      const auto& st = sticks[c];
      auto& xi = s.pos[static_cast<size_t>(st.i)];
      auto& xj = s.pos[static_cast<size_t>(st.j)];
      const auto d = diff(xi, xj);
      const double len2 = dot(d, d);
      const double target2 = st.rest_length * st.rest_length;
      const double violation = std::abs(std::sqrt(len2) / st.rest_length - 1.0);
      worst = std::max(worst, violation);
      if (violation <= cfg.position_tolerance) continue;
      // Correct along the pre-step direction (classic SHAKE); both particles
      // have unit mass, so corrections split evenly and preserve momentum.
      const auto& ref = reference_dirs[c];
      const double denom = 2.0 * 2.0 * dot(d, ref);  // 2 (w_i + w_j) d . d_ref
      if (std::abs(denom) < 1e-14) {
        throw NumericError("constraint projection: degenerate geometry (stick " + std::to_string(c) + ")");
      }
      const double lambda = (len2 - target2) / denom;
      for (int k = 0; k < 3; ++k) {
        const double corr = lambda * ref[static_cast<size_t>(k)];
        xi[static_cast<size_t>(k)] -= corr;
        xj[static_cast<size_t>(k)] += corr;
        if (dt > 0.0) {
          s.vel[static_cast<size_t>(st.i)][static_cast<size_t>(k)] -= corr / dt;
          s.vel[static_cast<size_t>(st.j)][static_cast<size_t>(k)] += corr / dt;
        }
      }
    }
    if (worst <= cfg.position_tolerance) return;
  }
  throw NumericError("constraint projection did not converge: max relative violation " +
                     std::to_string(max_stick_violation(s, sticks)) + " after " +
                     std::to_string(cfg.max_projection_iterations) + " iterations");
}

void project_velocities(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg) {
  if (sticks.empty()) return;
  // Sweeps are cheap; cold starts (random initial velocities) may need many.
  const int max_iters = 8 * cfg.max_projection_iterations;
  for (int iter = 0; iter < max_iters; ++iter) {
    double worst = 0.0;
    for (const auto& st : sticks) {
      const auto d = diff(s.pos[static_cast<size_t>(st.i)], s.pos[static_cast<size_t>(st.j)]);
      const auto dv = diff(s.vel[static_cast<size_t>(st.i)], s.vel[static_cast<size_t>(st.j)]);
      const double r = dot(d, dv);
      worst = std::max(worst, std::abs(r));
      const double kappa = r / (2.0 * dot(d, d));
      for (int k = 0; k < 3; ++k) {
        s.vel[static_cast<size_t>(st.i)][static_cast<size_t>(k)] -= kappa * d[static_cast<size_t>(k)];
        s.vel[static_cast<size_t>(st.j)][static_cast<size_t>(k)] += kappa * d[static_cast<size_t>(k)];
      }
    }
    if (worst <= cfg.velocity_tolerance) return;
  }
  throw NumericError("velocity projection did not converge");
}

void step(SimState& s, const std::vector<Stick>& sticks, const SimConfig& cfg) {
  const double dt = cfg.dt;
  const auto f0 = coulomb_forces(s, cfg.softening);
  const int n = s.size();
  std::vector<std::array<double, 3>> ref_dirs(sticks.size());
  for (size_t c = 0; c < sticks.size(); ++c) {
    ref_dirs[c] = diff(s.pos[static_cast<size_t>(sticks[c].i)], s.pos[static_cast<size_t>(sticks[c].j)]);
  }
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      s.vel[static_cast<size_t>(i)][static_cast<size_t>(k)] += 0.5 * dt * f0[static_cast<size_t>(i)][static_cast<size_t>(k)];
      s.pos[static_cast<size_t>(i)][static_cast<size_t>(k)] += dt * s.vel[static_cast<size_t>(i)][static_cast<size_t>(k)];
    }
  project_positions(s, sticks, cfg, dt, ref_dirs);
  const auto f1 = coulomb_forces(s, cfg.softening);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k)
      s.vel[static_cast<size_t>(i)][static_cast<size_t>(k)] += 0.5 * dt * f1[static_cast<size_t>(i)][static_cast<size_t>(k)];
  project_velocities(s, sticks, cfg);
}

Trajectory rollout_system(MComplexSystem system, int steps, const SimConfig& cfg, uint64_t seed) {
  if (steps < 0) throw ConfigError("rollout: steps must be >= 0");
  Trajectory tr;
  tr.charges = system.state.charge;
  tr.membership = system.membership;
  tr.sticks = system.sticks;
  tr.complexes = system.complexes;
  tr.dt = cfg.dt;
  tr.seed = seed;
  tr.steps = steps;
  tr.positions.reserve(static_cast<size_t>(steps) + 1);
  tr.velocities.reserve(static_cast<size_t>(steps) + 1);
  tr.positions.push_back(system.state.pos);
  tr.velocities.push_back(system.state.vel);
  for (int t = 0; t < steps; ++t) {
    step(system.state, system.sticks, cfg);
    tr.positions.push_back(system.state.pos);
    tr.velocities.push_back(system.state.vel);
  }
  return tr;
}

Trajectory rollout(int num_complexes, double avg_size, int steps, double dt, uint64_t seed, SimConfig cfg) {
  cfg.dt = dt;
  MComplexSystem system = init_system(num_complexes, avg_size, seed, cfg);
  return rollout_system(std::move(system), steps, cfg, seed);
}

namespace {

std::string combo_signature(const std::vector<ShapePick>& combo) {
  std::string sig;
  for (const auto& p : combo) {
    sig += shape_name(p.shape);
    sig += std::to_string(p.size);
    sig += '|';
  }
  return sig;
}

DatasetRecord record_from_trajectory(const Trajectory& tr, const std::string& id) {
  DatasetRecord rec;
  rec.system_id = id;
  rec.positions = tr.positions.front();
  rec.velocities = tr.velocities.front();
  rec.charges = tr.charges;
  for (const auto& st : tr.sticks) rec.sticks.emplace_back(st.i, st.j);
  rec.target_positions = tr.positions.back();
  rec.target_velocities = tr.velocities.back();
  rec.meta.membership = tr.membership;
  rec.meta.seed = tr.seed;
  rec.meta.steps = tr.steps;
  rec.meta.dt = tr.dt;
  return rec;
}

}  // namespace

void make_dataset(const DatasetSpec& spec, const std::string& out_dir) {
  if (spec.counts.train <= 0 || spec.counts.val <= 0 || spec.counts.test <= 0) {
    throw ConfigError("make_dataset: counts must be positive");
  }
  if (spec.num_systems < 1) throw ConfigError("make_dataset: need at least one system");

  // Draw J distinct ordered shape combinations.
  Rng combo_rng = Rng(spec.seed).split(0x636f6d626fULL);
  std::vector<std::vector<ShapePick>> combos;
  std::vector<std::string> signatures;
  int attempts = 0;
  while (static_cast<int>(combos.size()) < spec.num_systems) {
    if (++attempts > 1000 * spec.num_systems) {
      throw ConfigError("make_dataset: cannot realize " + std::to_string(spec.num_systems) +
                        " distinct shape combinations for (" + std::to_string(spec.num_complexes) + "," +
                        std::to_string(spec.avg_size) + ")");
    }
    auto combo = sample_shape_combo(spec.num_complexes, spec.avg_size, combo_rng);
    auto sig = combo_signature(combo);
    if (std::find(signatures.begin(), signatures.end(), sig) == signatures.end()) {
      combos.push_back(std::move(combo));
      signatures.push_back(std::move(sig));
    }
  }

  SimConfig sim = spec.sim;
  sim.dt = spec.dt;
  const std::array<std::pair<const char*, int>, 3> splits = {
      std::make_pair("train", spec.counts.train),
      std::make_pair("val", spec.counts.val),
      std::make_pair("test", spec.counts.test),
  };
  for (size_t split_idx = 0; split_idx < splits.size(); ++split_idx) {
    std::vector<DatasetRecord> records;
    records.reserve(static_cast<size_t>(splits[split_idx].second));
    for (int k = 0; k < splits[split_idx].second; ++k) {
      const uint64_t traj_seed = Rng::mix(spec.seed, (split_idx + 1) * 0x100000000ULL + static_cast<uint64_t>(k));
      Rng rng(traj_seed);
      const auto& combo = combos[static_cast<size_t>(k % spec.num_systems)];
      MComplexSystem system = init_system_with_combo(combo, sim, rng);
      Trajectory tr = rollout_system(std::move(system), spec.steps, sim, traj_seed);
      records.push_back(record_from_trajectory(tr, std::string(splits[split_idx].first) + "-" + std::to_string(k)));
    }
    write_jsonl_records(out_dir + "/" + splits[split_idx].first + ".jsonl", records);
  }

  DatasetManifest manifest;
  manifest.counts = spec.counts;
  manifest.num_complexes = spec.num_complexes;
  manifest.avg_size = spec.avg_size;
  manifest.num_systems = spec.num_systems;
  manifest.steps = spec.steps;
  manifest.dt = spec.dt;
  manifest.seed = spec.seed;
  manifest.shape_signatures = signatures;
  write_manifest(out_dir + "/manifest.json", manifest);
}

}  // namespace eghn

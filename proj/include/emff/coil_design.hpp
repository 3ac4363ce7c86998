#pragma once

#include <string>
#include <vector>

#include "emff/linalg.hpp"

// Sequential magnetorquer parameter selection and the constrained design
// optimization over coil diameter and supply voltage.

namespace emff {

struct WireMaterial {
  std::string name;
  double ohm_per_kg = 0.0;   // [Ohm/kg]
  double ohm_per_m = 0.0;    // [Ohm/m]
  double max_current = 0.0;  // design current limit [A]
  double peak_current = 0.0; // informational rating [A]
  double wire_diameter = 0.0;  // [m], insulated

  void validate() const;
};

// Editable defaults for copper / polyester-enamel / tin-plated classes.
std::vector<WireMaterial> default_wire_table();

struct DesignInputs {
  double coil_diameter = 0.15;  // D_coil [m]
  double coil_height = 0.03;    // H_coil [m]
  double voltage = 11.0;        // V_cir [V]
  double mass_cap = 0.36;       // coil mass budget [kg]
};

struct DesignResult {
  std::string wire_name;
  double resistance = 0.0;     // Omega_coil [Ohm]
  double turns = 0.0;          // N_t
  double mu_max = 0.0;         // [A*m^2]
  double wire_thickness = 0.0; // radial build-up t_coil [m]
  double coil_mass = 0.0;      // [kg]
  double coil_diameter = 0.0;  // [m]
  double voltage = 0.0;        // [V]
  bool feasible = true;
  std::string binding;  // which branch/constraints bind
};

// Appendix-style dependent parameters:
//   Omega = min(V / c_max, mass_cap * k_ohm_per_kg)
//   N_t   = Omega / k_ohm_per_m / (pi D)
//   mu    = pi (D/2)^2 N_t c_max
//   t     = layers * D_wire with layers = N_t / (H / D_wire)
DesignResult dependent_parameters(const WireMaterial& wire, const DesignInputs& in);

struct DesignConstraints {
  double accel_threshold = 2.0 * 9.8 * 0.000174532836589831;  // a_d = 2*9.8*sin(0.01 deg)
  double mass_cap = 0.36;            // per-coil [kg]
  double coil_height = 0.03;         // [m]
  double operating_distance_factor = 2.5;  // d0 = factor * D_coil
  bool half_ac_factor = true;        // include the 1/2 averaging factor in F(d0)
  double d_grid_min = 0.05, d_grid_max = 0.30, d_grid_step = 0.001;  // [m]
  // Discrete LiPo supply choices with their pack masses; coil + battery
  // must fit the shared budget.
  std::vector<double> voltages = {3.7, 7.4, 11.1, 14.8};       // [V]
  std::vector<double> battery_masses = {0.03, 0.06, 0.09, 0.12};  // [kg]
  double mass_budget = 0.42;         // coil + battery [kg]
  double mass_reference = 1.15;      // platform mass for the accel check [kg]
};

struct OptimizationOutcome {
  DesignResult best;
  bool feasible = false;
  std::vector<std::string> violation_margins;  // when infeasible
};

// Exhaustive grid search maximizing mu^2 / m_coil subject to the mass,
// far-field acceleration, and thickness constraints; deterministic
// tie-break by smaller diameter then smaller voltage.
OptimizationOutcome optimize_design(const std::vector<WireMaterial>& wires,
                                    const DesignConstraints& constraints);

// Far-field attraction at distance d0 for equal dipoles mu, with or without
// the AC averaging factor.
double axial_force_far(double mu, double d0, bool half_factor);

}  // namespace emff

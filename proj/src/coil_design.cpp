#include "emff/coil_design.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace emff {

void WireMaterial::validate() const {
  if (ohm_per_kg <= 0.0 || ohm_per_m <= 0.0 || max_current <= 0.0 || wire_diameter <= 0.0)
    throw std::invalid_argument("wire material: all properties must be positive");
}

std::vector<WireMaterial> default_wire_table() {
  // Cited standard values; the design current of the AWG20 class is a
  // continuous-duty derating of its 7 A peak rating.
  std::vector<WireMaterial> t;
  t.push_back(WireMaterial{"UL1007 AWG20 copper", 5.55, 0.0333, 6.0, 7.0, 1.8e-3});
  t.push_back(WireMaterial{"polyester-enamel AWG26 copper", 21.0, 0.134, 2.2, 2.5, 0.45e-3});
  t.push_back(WireMaterial{"tin-plated AWG24 copper", 13.0, 0.0842, 3.2, 3.5, 1.1e-3});
  return t;
}

DesignResult dependent_parameters(const WireMaterial& wire, const DesignInputs& in) {
  wire.validate();
  DesignResult r;
  r.wire_name = wire.name;
  r.coil_diameter = in.coil_diameter;
  r.voltage = in.voltage;
  const double r_current = in.voltage / wire.max_current;
  const double r_mass = in.mass_cap * wire.ohm_per_kg;
  r.resistance = std::min(r_current, r_mass);
  r.binding = r_current <= r_mass ? "current" : "mass";
  r.turns = r.resistance / wire.ohm_per_m / (kPi * in.coil_diameter);
  r.mu_max = kPi * (in.coil_diameter / 2.0) * (in.coil_diameter / 2.0) * r.turns *
             wire.max_current;
  const double turns_per_layer = in.coil_height / wire.wire_diameter;
  r.wire_thickness = r.turns / turns_per_layer * wire.wire_diameter;
  r.coil_mass = r.resistance / wire.ohm_per_kg;
  return r;
}

double axial_force_far(double mu, double d0, bool half_factor) {
  const double f = 3.0 * kMu0 / (2.0 * kPi) * mu * mu / (d0 * d0 * d0 * d0);
  return half_factor ? 0.5 * f : f;
}

OptimizationOutcome optimize_design(const std::vector<WireMaterial>& wires,
                                    const DesignConstraints& cs) {
  OptimizationOutcome out;
  double best_objective = -1.0;
  double worst_accel_margin = -std::numeric_limits<double>::infinity();
  double worst_mass_margin = -std::numeric_limits<double>::infinity();
  double worst_thickness_margin = -std::numeric_limits<double>::infinity();

  for (const auto& wire : wires) {
    for (size_t vi = 0; vi < cs.voltages.size(); ++vi) {
      const double v = cs.voltages[vi];
      const double battery = vi < cs.battery_masses.size() ? cs.battery_masses[vi] : 0.0;
      const double coil_cap = std::min(cs.mass_cap, cs.mass_budget - battery);
      if (coil_cap <= 0.0) continue;
      for (double d = cs.d_grid_min; d <= cs.d_grid_max + 1e-12; d += cs.d_grid_step) {
        DesignInputs in;
        in.coil_diameter = d;
        in.coil_height = cs.coil_height;
        in.voltage = v;
        in.mass_cap = coil_cap;
        DesignResult r = dependent_parameters(wire, in);

        const double d0 = cs.operating_distance_factor * d;
        const double accel =
            axial_force_far(r.mu_max, d0, cs.half_ac_factor) / cs.mass_reference;
        const double mass_margin = coil_cap - r.coil_mass;
        const double accel_margin = accel - cs.accel_threshold;
        const double thickness_margin = d / 6.0 - r.wire_thickness;
        worst_mass_margin = std::max(worst_mass_margin, mass_margin);
        worst_accel_margin = std::max(worst_accel_margin, accel_margin);
        worst_thickness_margin = std::max(worst_thickness_margin, thickness_margin);
        if (mass_margin < 0.0 || accel_margin < 0.0 || thickness_margin < 0.0) continue;

        const double objective = r.mu_max * r.mu_max / r.coil_mass;
        const bool better =
            objective > best_objective * (1.0 + 1e-12) ||
            (std::abs(objective - best_objective) <= 1e-12 * std::abs(best_objective) &&
             (d < out.best.coil_diameter ||
              (d == out.best.coil_diameter && v < out.best.voltage)));
        if (!out.feasible || better) {
          best_objective = objective;
          out.best = r;
          out.best.feasible = true;
          out.feasible = true;
        }
      }
    }
  }

  if (!out.feasible) {
    std::ostringstream os;
    os << "best acceleration margin " << worst_accel_margin << " [m/s^2]";
    out.violation_margins.push_back(os.str());
    os.str("");
    os << "best mass margin " << worst_mass_margin << " [kg]";
    out.violation_margins.push_back(os.str());
    os.str("");
    os << "best thickness margin " << worst_thickness_margin << " [m]";
    out.violation_margins.push_back(os.str());
  }
  return out;
}

}  // namespace emff

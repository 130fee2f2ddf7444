#pragma once

#include "dpgrid/loadmodel.hpp"
#include "dpgrid/network.hpp"

namespace dpgrid {

/// The in-repo desk-scale reference feeder: a radial bundle of ten laterals
/// (slack -> head -> junction -> mid -> leaf), 30 retained buses including the
/// slack plus 10 zero-injection junctions, three load classes and three pv
/// leaves with volt-var curves. 40 buses total, 29 in the power-flow system.
NetworkModel reference_feeder();

/// Ground-truth load classes of the reference feeder (log-normal, AR(1)
/// temporal correlation, T = 96 at 15-minute resolution).
std::vector<LoadClassModel> reference_true_classes();

/// Synthetic historical panel drawn from the ground-truth classes.
LoadPanel generate_reference_panel(int days, std::uint64_t seed);

/// Clear-sky irradiance shape over one day (96 steps, peak 1.0).
VecD reference_irradiance();

/// Documentation example: the 3-bus chain (load - zero-injection - load) with
/// unit line admittances and no slack; reduces to a 2x2 system.
NetworkModel three_bus_example();

/// Small strong feeder for validation experiments: slack plus two load buses
/// in a chain, no zero-injection buses.
NetworkModel validation_feeder();

/// T = 4 load model for the validation feeder (one class, both buses).
FeederLoadModel validation_load_model();

}  // namespace dpgrid

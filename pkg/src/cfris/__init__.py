"""Two-timescale RIS-aided cell-free massive MIMO uplink simulator."""

from .geometry import (AngleSet, ChannelRealization, ChannelStatistics,
                       InvalidArgumentError, PathLossModel, PhaseConfig,
                       SystemTopology, array_response, build_channel_statistics,
                       cascaded_los, path_loss, sample_realization,
                       uniform_placements)
from .estimation import (LmmseOperator, NumericalDegeneracyError, PilotAssignment,
                         assign_pilots, estimate_channel, lmmse_operator,
                         lmmse_scalars, nmse, simulate_pilot_phase)
from .closed_form import (HelperScalars, MomentSet, SeReport, combining_weights,
                          expected_w, expected_wkk, helper_scalars,
                          interference_matrix, moment_matrix, moment_set,
                          sinr_closed_form, sinr_optimal, spectral_efficiency,
                          sum_se)
from .monte_carlo import (McEstimate, MomentEstimates, centralized_instantaneous_se,
                          component_oracle, detection_sinr, empirical_moments,
                          uplink_detect)

__version__ = "0.1.0"

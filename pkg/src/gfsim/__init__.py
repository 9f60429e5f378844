"""Link-level Monte Carlo simulator for contention-based grant-free uplink.

Implements two orthogonal pilot schemes on a 5G-like resource grid:

* ``esop``: extremely sparse pilots, one resource element per pilot, which
  maximizes the number of orthogonal pilots per overhead and relies on a
  blind-equalizing SIC receiver for channel/TO/FO compensation.
* ``top``: traditional dense DMRS-style pilots with comb + orthogonal cover
  code structure and subband channel estimation.
"""

from gfsim.frame import GridConfig, GridCoord, build_grid_config, data_coords
from gfsim.pilots import (
    PilotAssignment,
    PilotPattern,
    PilotSet,
    build_pilot_set,
    collision_prob_analytic,
    collision_prob_mc,
    select_pilots,
)
from gfsim.channel import (
    ChannelModel,
    ChannelRealization,
    ReceivedSignal,
    draw_channel,
    impairment_phase,
    synthesize,
)
from gfsim.phy import (
    CodeConfig,
    build_code_config,
    crc_attach,
    crc_check,
    demap_llr,
    ldpc_decode,
    ldpc_encode,
    modulate,
)
from gfsim.receiver import ReceiverConfig, run_receiver
from gfsim.config import SimConfig, load_config
from gfsim.sim import run_sweep, run_trial

__all__ = [
    "GridConfig",
    "GridCoord",
    "build_grid_config",
    "data_coords",
    "PilotPattern",
    "PilotSet",
    "PilotAssignment",
    "build_pilot_set",
    "select_pilots",
    "collision_prob_analytic",
    "collision_prob_mc",
    "ChannelModel",
    "ChannelRealization",
    "ReceivedSignal",
    "draw_channel",
    "impairment_phase",
    "synthesize",
    "CodeConfig",
    "build_code_config",
    "crc_attach",
    "crc_check",
    "ldpc_encode",
    "ldpc_decode",
    "modulate",
    "demap_llr",
    "ReceiverConfig",
    "run_receiver",
    "SimConfig",
    "load_config",
    "run_trial",
    "run_sweep",
]

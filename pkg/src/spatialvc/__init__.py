"""Spatial voice conversion: separate a multi-speaker recording, convert the
target voice, and remix it back into the multi-channel scene."""

from .signal_core import WaveBuffer, StftParams, Spectrogram, stft, istft, convolve, read_wav, write_wav
from .room_sim import (RoomScene, RirSet, SourceProgram, default_scene, simulate_rirs,
                       render_observation, render_ideal, measure_rt60)
from .bss import (SteeringVector, IvaConfig, DemixState, far_field_steering, gc_iva,
                  projection_back, apply_demix)
from .vc_bridge import Identity, Gain, ExternalCommand, apply_vc
from .remixer import RemixStrategy, remix_inverse, remix_steering
from .evaluation import ScmSet, EvalReport, spatial_covariance, ldd, si_sdr, iqr_stats
from .pipeline import RunConfig, GridSpec, run_scene, run_grid

__version__ = "0.1.0"

"""Turbulent free-space QKD: channel models, time-tag simulation, SNR filtering and key rates."""

from .channel_models import (Degenerate, Empirical, LogNormal, TransmissionTrace, fit_lognormal,
                             pdtc_cdf, pdtc_density, sample_trace)
from .coincidence import (BlockStats, CoincidenceConfig, block_statistics, estimate_accidentals,
                          find_coincidences, qber)
from .config import ConfigError, load_config
from .decoy import DecoyParams, FluctuatingChannel, StaticChannel, gain_and_error, scan_sigma, secure_key_rate
from .events import (BackgroundConfig, DeviceEfficiencies, PartyEfficiency, SourceConfig,
                     TimeTagStream, simulate_link_experiment, simulate_local_experiment)
from .keyrate import (ConstantEfficiency, TableEfficiency, binary_entropy, secret_fraction,
                      secret_key_from_blocks, secret_key_from_counts)
from .pdtc_estimation import LinkPdtcEstimator, device_efficiency_from_local, estimate_link_pdtc
from .satellite import PassEntry, PassScenario, evaluate_pass
from .snrf import SnrfConfig, SnrFilter, SweepResult, apply_snrf, rolling_threshold, sweep

__version__ = "0.1.0"

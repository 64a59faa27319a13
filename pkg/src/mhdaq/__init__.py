"""Multi-host DAQ front-end simulator and FlashADC characterization tools."""
from .adc_analysis import (EnobReport, SineFit, calibrate_noise, characterize, enob,
                           sinad_db, sine_fit)
from .event_builder import BuilderConfig, Event, EventBuilder, EventKey, builder_stats
from .frontend import (Fragment, FrontEnd, LegacyFrontend, RingBuffer, TriggerPort,
                       TriggerPulse, ingest, legacy_accept, route)
from .scenario import RunReport, ScenarioConfig, run_scenario
from .signal_model import AdcSpec, SineSpec, Waveform, digitize, digitize_dc
from .storage import CoincidenceWindow, RunFile, read_run, replay_merge, write_run
from .timestamp_sync import (ClockModel, SyncState, apply_sync_pulse, local_to_global)
from .transport import SendQueue, decode_record, encode_fragment

__version__ = "0.1.0"

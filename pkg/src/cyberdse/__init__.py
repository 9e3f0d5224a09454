"""Dynamic state estimation of a synchronous generator under cyber attacks.

Cubature Kalman filter (CKF) and its Huber-robust variant (RCKF) tracking a
fourth-order machine from PMU-style measurements, with false-data injection
and packet-loss attack models and the accuracy indices used to compare them.
"""
from .dynamics import (ControlInput, ExciterParams, GeneratorParams, GeneratorState,
                       GovernorParams, SmibParams, TruthTrajectory, ingest_trace, rk4_step,
                       simulate_from_trace, simulate_truth, state_derivative, stator_solve,
                       steady_state_init, write_trace)
from .measurement import (MeasurementStream, NoiseModel, measure, noise_covariance,
                          read_stream, sample_stream, write_stream)
from .attacks import (DosConfig, FdiConfig, apply_dos, apply_fdi, build_fdi, jacobian_h,
                      stealth_check)
from .estimators import (FilterConfig, FilterTrajectory, calibrate_dj, cubature_points,
                         forecast, huber_weights, identify_attack, measurement_update,
                         rckf_update, run_filter, sqrt_factor)
from .evaluation import IndexReport, TimingReport, index_report, tau1, tau2, tau3, timing_profile
from .harness import (RunArtifact, ScenarioConfig, emit_plots_data, load_config, preset,
                      run_batch, run_pipeline)

__version__ = "0.1.0"

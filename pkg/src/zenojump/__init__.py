"""Quantum-jump detection and rate estimation for noisy telegraph signals.

Simulates two-state telegraph processes and stochastic-master-equation
qubit readout, extracts dwell times through a filtering and hysteretic
thresholding pipeline, fits transition rates with a censored
finite-detection-bandwidth likelihood, and compares the results with
analytic measurement-backaction and multi-level Purcell predictions.
"""

from .telegraph import (STATE_A, STATE_B, ParameterError, RtsParams, StatePath,
                        Trace, gen_noisy_trace, gen_state_path, read_trace,
                        synth_noise, write_trace)
from .filterbank import (GaussianFir, HistogramStats, SeparationError,
                         apply_fir, gaussian_fir, histogram_stats,
                         optimal_filter, order_schedule)
from .jumps import (DwellRecord, Thresholds, dwells_from_path, extract_dwells,
                    read_dwell_csv, state_sequence, thresholds_from_stats,
                    write_dwell_csv)
from .rates import (CalibrationTable, FitError, FitResult, RateModel,
                    calibrate_bias, correct_rates, dwell_pdf, dwell_survival,
                    fit_rates, initial_guess, log_likelihood,
                    run_pipeline_on_traces, sample_dwell_times)
from .zeno import (BackgroundRates, DriveParams, MeasurementStrength,
                   QubitCavityParams, bloch_steady, dispersive_derived,
                   epsilon_for_gamma_m, mhz, pointer_states,
                   reference_device_params, subtract_background,
                   zeno_rate_continuous, zeno_rate_discrete)
from .transmon_purcell import (ConvergenceError, DressedStateError,
                               PurcellResult, TransmonLevels, TransmonSpec,
                               diagonalize_transmon, fit_ej_ec,
                               purcell_rate_coherent, purcell_rate_fock,
                               two_level_system)
from .qsim import (HilbertConfig, Operators, SimParams, StepSizeError,
                   TrajectoryRecord, TruncationError, build_operators,
                   calibrate_qubit_drive, dressed_cavity_pulls,
                   dressed_qubit_frequency, exact_pointer_fields,
                   lindblad_rhs, optimal_lo_phase, population_to_states,
                   simulate_trajectory, sme_step, split_sme_step,
                   stark_calibration, stark_shift_per_photon,
                   static_propagator)
from .experiments import (ConfigError, ExperimentConfig, run_calibration,
                          run_t1_experiment, run_zeno_experiment)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

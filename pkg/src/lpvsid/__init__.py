"""Subspace identification of LPV state-space models in innovation form."""
from .core import (DataSet, LpvSsModel, SchedulingBasis, apply_similarity, closed_loop_coeffs,
                   eval_matrix, eval_mu, eval_psi, extend_psi, is_stable, load_model, mu_pairs,
                   n_mu, save_model)
from .dataeq import (HankelEstimate, PredictorCoefficients, StackedDataMatrices, WindowConfig,
                     build_extended_observability, build_extended_reachability,
                     build_past_regressor, build_toeplitz_correction, corrected_future,
                     oracle_evaluate, true_predictor_coeffs)
from .preest import (GaussNewtonConfig, RidgeConfig, fit_lpv_arx, fit_lpv_fir, fit_lpv_max,
                     gcv_score, markov_to_hankel)
from .realization import (ConstrainedSvdResult, StateSequence, cca_state, constrained_svd,
                          efficient_state, loglik_cca, select_order, unified_state)
from .simulation import (Benchmark, MonteCarloConfig, NoiseSpec, bfr, calibrate_snr,
                         colored_noise, generate_dataset, make_benchmark, monte_carlo,
                         one_step_predictor, simulate)
from .ssest import (METHODS, IdentifiedModel, IdentifyConfig, StageError,
                    estimate_output_matrices, estimate_state_matrices, identify, model_distance,
                    pre_estimate)

__version__ = "0.1.0"

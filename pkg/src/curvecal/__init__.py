"""Bayesian validation of computer models with irregular curve output.

The pipeline: register field curves to a model-run reference, compress all
curves with thresholded orthonormal wavelets, emulate each retained
coefficient with a Gaussian-process surrogate, run the modular hierarchical
MCMC, and recombine the draws into bias-corrected predictions, tolerance
bands and extrapolations.
"""

from .calibration import (FieldSummary, McmcConfig, PosteriorDraws, PriorSpec,
                          field_summaries, log_marginal_likelihood, run_mcmc,
                          sample_sigma2)
from .emulator import (FitOptions, GaspFit, GaspHyper, correlation, fit_gasp,
                       loo_residuals, predict, predict_augmented)
from .errors import (ConditioningError, ConfigError, CoverageError,
                     CurveParseError, CurvecalError, DegenerateWarpError,
                     FitError, StageError, WindowError)
from .iodesign import (Curve, DesignMatrix, IUMap, ParameterSpec, generate_lhd,
                       load_curves, load_design, load_iu_map, write_curve,
                       write_design)
from .prediction import (Band, CurveEnsemble, bias_ensemble,
                         extrapolate_delta_shift, extrapolate_new_nominals,
                         extrapolate_same_type, predict_new_field_run,
                         predict_reality, pure_model_prediction,
                         reconstruct_ensemble, tolerance_band)
from .registration import (AnchorSet, EventWindow, GridCurve, GridSpec,
                           build_reference_curve, locate_anchors,
                           register_curve, resample_dyadic)
from .synth import SynthDataset, SynthSpec, synth_testbed
from .wavelet import (CoeffSet, RetainedIndexSet, dwt, idwt, restrict,
                      threshold_union)

__version__ = "0.1.0"

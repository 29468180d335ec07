"""Covariate-aware period-patch forecasting.

A compact encoder-decoder backbone tokenizes each channel into cycle-length
patches and decodes all horizon tokens in one parallel pass. A lightweight
two-stage MLP plug-in fuses decoded past-covariate tokens and embedded
future-known covariates into a residual correction that shares the
backbone's output head.
"""

__version__ = "0.1.0"

from .backbone import BackboneConfig, PeriodPatchBackbone
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (ChannelSchema, NormStats, SeriesFrame, SplitSpec, WindowSample, WindowSet,
                   chrono_split, fit_apply_norm, forward_fill, load_frame, make_windows,
                   write_frame)
from .errors import (CheckpointError, ConfigError, ConvergenceError, CovcastError,
                     DataFileError, DegenerateDesignError, SchemaError, SplitError,
                     TimestampError, TokenCountError, TrainingDiverged)
from .evaluation import (BenchmarkConfig, BenchmarkDataset, EvalProtocol, ForecastReport,
                         PUBLISHED_REFERENCE, evaluate, mae, mse, run_benchmark)
from .fusion import (CovariateForecaster, FusionConfig, TokenFusion, flatten_token_variables,
                     tile_refined)
from .patching import (FutureCovEmbedder, PatchConfig, PatchGrid, embed_future_patches,
                       num_patches, patch)
from .screening import (GrangerResult, LassoImportance, MaskedPearson, ScreeningReport,
                        daytime_mask, granger_test, lasso_coordinate_descent,
                        lasso_lag_importance, lasso_objective, masked_pearson, screen_frame)
from .synthetic import SyntheticSpec, gen_synthetic
from .training import (ParamGroups, TrainConfig, TrainReport, fit, grad_check, mse_loss,
                       select_trainables)

__all__ = [name for name in dir() if not name.startswith("_")]

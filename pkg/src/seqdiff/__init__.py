"""Causal sequence diffusion with independent per-token noise levels."""

from .autodiff import Tensor, backward, finite_diff_grad, graph_of
from .data import (Ar1Process, CsvLayout, Dataset, Normalization, SeasonalData,
                   default_ar1, export_csv, ingest_csv, make_cross_dataset,
                   make_oscillator_dataset, make_seasonal_series)
from .decide import (MazeSpec, TokenLayout, env_step, generate_random_walk_dataset,
                     goal_energy, load_maze, mpc_execute, parse_maze, reward_energy)
from .diffusion import (NoisyToken, TokenSequence, apply_guidance, convert, ddim_step,
                        ddpm_step, eps_from, forward_diffuse, posterior_params)
from .errors import (CheckpointError, ConfigError, ContractError, DataError,
                     DivergenceError, GenerationError, MatrixError, SeqdiffError)
from .metrics import QuantileForecast, crps_point, crps_sum, persistence_crps_sum
from .network import Dims, GruModel, ModelParams, df_unit, frame_stack, frame_unstack, init_params
from .rng import RngStream, gaussian
from .sample import (GuidanceSpec, SampleResult, ScheduleMatrix, default_k_small,
                     make_matrix, mctg_gradient, receding_horizon_generate, rollout,
                     sample_sequence, stabilized_rollout)
from .schedule import (NoiseSchedule, SnrWeights, build_schedule, elbo_weights,
                       fused_sequence_snr, min_snr_weight, snr_weight_table)
from .train import (AdamState, Checkpoint, TrainConfig, adam_update, elbo_terms,
                    load_checkpoint, make_checkpoint, restore_state, save_checkpoint,
                    train_model, training_step)

__version__ = "0.1.0"

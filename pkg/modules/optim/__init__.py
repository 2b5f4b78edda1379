from .adam import AdamState, adam_step
from .dense import dense_objective, softmax_masks, warp_view
from .fitter import (
    BLOCKS, ENGINES, FitResult, decode_params, fit_scene, initial_params, jsonl_logger, moving_average, objective,
    save_fit, tape_objective, write_checkpoint,
)

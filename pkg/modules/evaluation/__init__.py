from .depth_maps import colorize_inverse_depth, write_inverse_depth
from .metrics import component_abs_rel, depth_metrics, mask_iou, moving_region

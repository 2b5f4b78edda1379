from .photometric import (
    LossTerms, downsample, mask_smoothness_loss, photometric_loss, pyramid_level, smoothness_loss, ssim_map,
    total_loss,
)

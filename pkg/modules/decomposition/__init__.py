from .masks import (
    blend_point, blend_transform, blended_linear_part, channel_colors, composite_image, logits_from_masks,
    normalize_masks, ordering_weights, read_mask_bundle, uniform_logits, write_mask_bundle, write_mask_composite,
)

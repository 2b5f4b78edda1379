from .sampler import PixelState, as_channels, bilinear_sample, induced_flow, synthesize_view

"""romf: reduced-order forecasting of 1D PDE snapshot sequences.

Compresses solution snapshots with autoencoders, forecasts the latent
dynamics autoregressively (LSTM / TCN / CNN), and quantifies epistemic
uncertainty with deep ensembles propagated through the decoder by an
unscented transform.
"""

__version__ = "0.1.0"

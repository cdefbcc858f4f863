"""Deep compressive autoencoder for extracellular spike waveforms.

Submodules: ``autodiff`` and ``nn`` (numpy training engine), ``model`` (the
autoencoder), ``entropy`` (index coding and rate accounting), ``baselines``
(PCA/DCT/DWT), ``data`` (synthetic recordings), ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"

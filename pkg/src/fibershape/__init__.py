"""Geometric constellation shaping for WDM fiber links.

Subpackage map:
  constellation  point sets, moments, JSON/CSV I/O
  autodiff       reverse-mode tape over float64 numpy arrays, Adam
  channel        ASE + NLIN per-symbol model, effective SNR, calibration
  metrics        mutual information and SNR estimators
  ssf            split-step Fourier WDM simulator (Manakov)
  trainer        autoencoder training loop
  cli            command-line entry points
"""

__version__ = "0.1.0"

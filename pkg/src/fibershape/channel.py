"""Analytic, differentiable channel models for a multi-span WDM link.

Noise budget per polarization (all variances in mW):

  sigma2_ase   lumped-EDFA amplified spontaneous emission, one term per span
  sigma2_nlin  nonlinear interference, cubic in launch power with an affine
               dependence on the constellation moments (mu4, mu6)
  sigma2_tx    optional transmitter AWGN applied at the normalized symbols

The NLIN surrogate is sigma2 = P^3 * (kappa0 + kappa1*(mu4-2) + kappa2*(mu6-6)),
which reduces to the modulation-independent GN form kappa0*P^3 at the
circular-Gaussian moments (2, 6).  The kappas are system constants obtained
by fitting split-step simulation results (calibrate_nlin); they are inputs,
never hard-coded.

Launch power P_tx is per channel and per polarization throughout.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError, ConfigError

PLANCK_J_S = 6.62607015e-34
LIGHT_SPEED_M_S = 299792458.0

#: lower clamp for NLIN variance, keeps log-likelihoods finite at P -> 0
DEFAULT_VARIANCE_FLOOR_MW = 1e-12


def dbm_to_mw(p_dbm):
    return 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def mw_to_dbm(p_mw):
    return 10.0 * np.log10(np.asarray(p_mw, dtype=float))


@dataclass(frozen=True)
class LinkConfig:
    """Physical description of one WDM link (per-span values)."""

    n_spans: int = 1
    span_length_km: float = 100.0
    attenuation_db_per_km: float = 0.2
    gamma_per_w_km: float = 1.3
    dispersion_ps_nm_km: float = 16.48
    noise_figure_db: float = 5.0
    symbol_rate_hz: float = 32e9
    n_channels: int = 5
    channel_spacing_hz: float = 50e9
    center_wavelength_nm: float = 1550.0
    tx_awgn_snr_db: float = None

    def __post_init__(self):
        if self.n_spans < 1:
            raise ConfigError(f"n_spans must be >= 1, got {self.n_spans}")
        for name in ("span_length_km", "symbol_rate_hz", "channel_spacing_hz",
                     "center_wavelength_nm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        # zero is a meaningful boundary for these (lossless span, ideal
        # amplifier, linear fiber), negative is not
        for name in ("attenuation_db_per_km", "gamma_per_w_km",
                     "dispersion_ps_nm_km", "noise_figure_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.n_channels < 1:
            raise ConfigError(f"n_channels must be >= 1, got {self.n_channels}")

    @property
    def span_gain_db(self) -> float:
        return self.attenuation_db_per_km * self.span_length_km


@dataclass(frozen=True)
class NlinCoefficients:
    """NLIN fit constants, units 1/mW^2.  kappa0 alone is the GN model."""

    kappa0: float
    kappa1: float = 0.0
    kappa2: float = 0.0
    fit_residual: float = 0.0

    def __post_init__(self):
        if self.kappa0 <= 0:
            raise ConfigError(f"kappa0 must be positive, got {self.kappa0}")


@dataclass(frozen=True)
class ChannelModel:
    """Everything needed to evaluate the per-symbol noisy mapping."""

    kind: str
    sigma2_ase_mw: float
    coeffs: NlinCoefficients
    launch_power_dbm: float
    tx_awgn_snr_db: float = None
    variance_floor_mw: float = DEFAULT_VARIANCE_FLOOR_MW

    def __post_init__(self):
        if self.kind not in ("gn", "nlin"):
            raise ConfigError(f"channel kind must be 'gn' or 'nlin', got '{self.kind}'")
        if self.sigma2_ase_mw <= 0:
            raise ConfigError(f"sigma2_ase_mw must be positive, got {self.sigma2_ase_mw}")

    @property
    def launch_power_mw(self) -> float:
        return float(dbm_to_mw(self.launch_power_dbm))

    def with_power(self, p_dbm) -> "ChannelModel":
        return replace(self, launch_power_dbm=float(p_dbm))


def ase_variance(link: LinkConfig) -> float:
    """Accumulated per-polarization ASE variance in mW.

    One lumped EDFA per span exactly compensates the span loss, adding
    noise of spectral density h*nu*(G*F - 1)/2 per polarization; referred
    to the matched-filtered symbol rate this gives

        sigma2 = n_spans * h * nu * B_sym * (G*F - 1) / 2.
    """
    nu = LIGHT_SPEED_M_S / (link.center_wavelength_nm * 1e-9)
    gain = 10.0 ** (link.span_gain_db / 10.0)
    nf = 10.0 ** (link.noise_figure_db / 10.0)
    sigma2_w = link.n_spans * PLANCK_J_S * nu * link.symbol_rate_hz * (gain * nf - 1.0) / 2.0
    return sigma2_w * 1e3


def nlin_variance(p_tx_mw, mu4, mu6, coeffs: NlinCoefficients,
                  floor_mw=DEFAULT_VARIANCE_FLOOR_MW) -> float:
    """NLIN variance P^3*(k0 + k1*(mu4-2) + k2*(mu6-6)) in mW, floored.

    A negative value before the floor means the fitted kappas are being
    used outside their validity region; that is reported instead of
    silently clamped.
    """
    p = float(p_tx_mw)
    if p <= 0:
        raise ConfigError(f"launch power must be positive, got {p} mW")
    raw = p**3 * (
        coeffs.kappa0 + coeffs.kappa1 * (mu4 - 2.0) + coeffs.kappa2 * (mu6 - 6.0)
    )
    if raw < 0:
        raise ConfigError(
            f"negative NLIN variance ({raw:.3e} mW) at P={p} mW, mu4={mu4}, mu6={mu6}; "
            "the kappa fit does not cover these moments"
        )
    return max(raw, floor_mw)


def nlin_variance_grad(p_tx_mw, mu4, mu6, coeffs: NlinCoefficients):
    """Analytic (d/dP, d/dmu4, d/dmu6) of the unfloored NLIN variance."""
    p = float(p_tx_mw)
    bracket = coeffs.kappa0 + coeffs.kappa1 * (mu4 - 2.0) + coeffs.kappa2 * (mu6 - 6.0)
    return 3.0 * p**2 * bracket, p**3 * coeffs.kappa1, p**3 * coeffs.kappa2


def gn_variance(p_tx_mw, coeffs: NlinCoefficients,
                floor_mw=DEFAULT_VARIANCE_FLOOR_MW) -> float:
    """Modulation-independent variance kappa0*P^3 (the GN reduction)."""
    return nlin_variance(p_tx_mw, 2.0, 6.0, coeffs, floor_mw=floor_mw)


def total_noise_variance(model: ChannelModel, mu4, mu6) -> float:
    """sigma2_ase + sigma2_nlin (+ sigma2_tx), all per polarization in mW."""
    p = model.launch_power_mw
    if model.kind == "gn":
        s2_nl = gn_variance(p, model.coeffs, floor_mw=model.variance_floor_mw)
    else:
        s2_nl = nlin_variance(p, mu4, mu6, model.coeffs, floor_mw=model.variance_floor_mw)
    s2 = model.sigma2_ase_mw + s2_nl
    if model.tx_awgn_snr_db is not None:
        s2 += p * 10.0 ** (-model.tx_awgn_snr_db / 10.0)
    return s2


def effective_snr(model: ChannelModel, mu4=2.0, mu6=6.0) -> float:
    """10*log10(P_tx / total noise variance) in dB.

    For kind='gn' the moment arguments are ignored (the variance term
    reduces to kappa0*P^3 for any constellation).
    """
    return float(mw_to_dbm(model.launch_power_mw / total_noise_variance(model, mu4, mu6)))


def optimal_power_gn_mw(sigma2_ase_mw, kappa0) -> float:
    """Stationary point of P/(a + k0*P^3): P* = (a / (2*k0))^(1/3)."""
    return (sigma2_ase_mw / (2.0 * kappa0)) ** (1.0 / 3.0)


def sample_channel(x_batch, model: ChannelModel, mu4, mu6, rng) -> np.ndarray:
    """Per-symbol noisy mapping y = x + sigma_total * eps.

    x_batch must already be scaled to launch power (unit-power points times
    sqrt(P_tx)).  eps is standard circular complex normal from the
    caller-owned rng; the noise enters multiplicatively in sigma so the
    same form stays differentiable when rebuilt on a tape.
    """
    x = np.asarray(x_batch)
    s2 = total_noise_variance(model, mu4, mu6)
    eps = (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)) / np.sqrt(2.0)
    return x + np.sqrt(s2) * eps


@dataclass(frozen=True)
class CalibrationPoint:
    """One split-step measurement used by calibrate_nlin."""

    p_tx_mw: float
    mu4: float
    mu6: float
    sigma2_nl_mw: float


def calibrate_nlin(points) -> NlinCoefficients:
    """Least-squares fit of (kappa0, kappa1, kappa2).

    Each point contributes one equation  sigma2_nl / P^3 =
    k0 + k1*(mu4-2) + k2*(mu6-6).  Needs at least 3 points covering at
    least 2 distinct moment pairs and 2 distinct powers; a rank-deficient
    design matrix (e.g. all points from moment-collinear constellations)
    is rejected rather than pseudo-inverted.

    fit_residual is the root-mean-square misfit in sigma2_nl/P^3 units
    (1/mW^2).
    """
    pts = list(points)
    if len(pts) < 3:
        raise CalibrationError(f"need >= 3 calibration points, got {len(pts)}")
    moments = {(round(q.mu4, 9), round(q.mu6, 9)) for q in pts}
    powers = {round(q.p_tx_mw, 12) for q in pts}
    if len(moments) < 2 or len(powers) < 2:
        raise CalibrationError(
            f"calibration set spans {len(moments)} moment pair(s) and {len(powers)} "
            "power(s); need >= 2 of each (add constellations with different mu4/mu6)"
        )
    a = np.array([[1.0, q.mu4 - 2.0, q.mu6 - 6.0] for q in pts])
    t = np.array([q.sigma2_nl_mw / q.p_tx_mw**3 for q in pts])
    if np.linalg.matrix_rank(a, tol=1e-9) < 3:
        raise CalibrationError(
            "rank-deficient calibration design matrix: the (mu4, mu6) pairs are "
            "collinear; add a constellation with independent moments"
        )
    kappa, _, _, _ = np.linalg.lstsq(a, t, rcond=None)
    residual = float(np.sqrt(np.mean((a @ kappa - t) ** 2)))
    if kappa[0] <= 0:
        raise CalibrationError(
            f"fit produced non-positive kappa0 = {kappa[0]:.3e}; calibration data "
            "is inconsistent with a cubic noise law"
        )
    return NlinCoefficients(
        kappa0=float(kappa[0]),
        kappa1=float(kappa[1]),
        kappa2=float(kappa[2]),
        fit_residual=residual,
    )


def save_coefficients(coeffs: NlinCoefficients, path) -> None:
    doc = {
        "kappa0": coeffs.kappa0,
        "kappa1": coeffs.kappa1,
        "kappa2": coeffs.kappa2,
        "fit_residual": coeffs.fit_residual,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_coefficients(path) -> NlinCoefficients:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    for key in ("kappa0", "kappa1", "kappa2"):
        if key not in doc:
            raise ConfigError(f"{path}: missing field '{key}'")
        if not isinstance(doc[key], (int, float)) or not math.isfinite(doc[key]):
            raise ConfigError(f"{path}: field '{key}' must be a finite number")
    return NlinCoefficients(
        kappa0=doc["kappa0"],
        kappa1=doc["kappa1"],
        kappa2=doc["kappa2"],
        fit_residual=float(doc.get("fit_residual", 0.0)),
    )

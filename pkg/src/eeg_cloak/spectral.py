"""Frequency-domain features: one-sided DFT and theta/alpha/beta band powers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteInput

N_FFT = 256


@dataclass(frozen=True)
class BandSpec:
    """Half-open frequency band [lo_hz, hi_hz)."""

    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not self.lo_hz < self.hi_hz:
            raise ValueError(f"band {self.name}: lo must be < hi")

    def bins(self, n: int = N_FFT, sample_rate: float = N_FFT) -> np.ndarray:
        freqs = np.arange(n // 2 + 1) * (sample_rate / n)
        return np.flatnonzero((freqs >= self.lo_hz) & (freqs < self.hi_hz))


THETA = BandSpec("theta", 4.0, 8.0)
ALPHA = BandSpec("alpha", 8.0, 13.0)
BETA = BandSpec("beta", 13.0, 30.0)
BANDS = (THETA, ALPHA, BETA)


def make_bands(edges) -> tuple[BandSpec, ...]:
    """Bands from a 4-element edge list [theta_lo, alpha_lo, beta_lo, beta_hi]."""
    e = [float(v) for v in edges]
    if len(e) != 4 or not all(a < b for a, b in zip(e, e[1:])):
        raise ValueError(f"band edges must be 4 strictly increasing values, got {edges}")
    return (BandSpec("theta", e[0], e[1]), BandSpec("alpha", e[1], e[2]), BandSpec("beta", e[2], e[3]))


def dft_spectrum(x) -> np.ndarray:
    """Non-redundant DFT bins of a real sequence (129 bins for 256 samples).

    At 256 samples and 256 Hz, bin k is k Hz.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("signal contains NaN or inf")
    return np.fft.rfft(x, axis=-1)


def one_sided_weights(n_bins: int, n: int) -> np.ndarray:
    # DC and (for even n) Nyquist appear once in the two-sided spectrum
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def two_sided_energy(spectrum, n: int = N_FFT) -> float:
    """Sum of |X[k]|^2 over all n two-sided bins, from the one-sided half."""
    spectrum = np.asarray(spectrum)
    return float(np.sum(one_sided_weights(spectrum.shape[-1], n) * np.abs(spectrum) ** 2))


def band_power(spectrum, band: BandSpec, n: int = N_FFT) -> float | np.ndarray:
    """Power in ``band``: doubled squared magnitudes over its integer-Hz bins.

    Scaled by 1/n^2 so the powers of all bins add up to the mean square of
    the signal (uV^2 for uV input). Accepts (..., n//2+1) spectra.
    """
    spectrum = np.asarray(spectrum)
    if not np.all(np.isfinite(spectrum)):
        raise NonFiniteInput("spectrum contains NaN or inf")
    idx = band.bins(n, sample_rate=n)
    w = one_sided_weights(spectrum.shape[-1], n)[idx]
    p = np.sum(w * np.abs(spectrum[..., idx]) ** 2, axis=-1) / n**2
    return float(p) if np.ndim(p) == 0 else p


@dataclass
class BandFeatures:
    """Per-electrode band powers (64 x 3) with the source trial's labels."""

    powers: np.ndarray
    subject_id: str = ""
    alcoholism: int = 0
    stimulus: int = 0
    trial_id: str = ""
    band_names: tuple[str, ...] = field(default=tuple(b.name for b in BANDS))

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=np.float64)
        if self.powers.ndim != 2 or self.powers.shape[1] != len(self.band_names):
            raise ValueError(f"powers must be (electrodes, {len(self.band_names)}), got {self.powers.shape}")
        if not np.all(np.isfinite(self.powers)) or np.any(self.powers < 0):
            raise ValueError("band powers must be finite and non-negative")


def channel_band_powers(samples, bands=BANDS) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    spec = dft_spectrum(samples)
    n = samples.shape[-1]
    return np.stack([band_power(spec, b, n) for b in bands], axis=-1)


def trial_band_features(trial, bands=BANDS, stimulus: int | None = None, trial_id: str = "") -> BandFeatures:
    """64 x 3 band powers for a Trial; ``stimulus`` is the resolved class index."""
    return BandFeatures(
        powers=channel_band_powers(trial.samples, bands),
        subject_id=trial.subject_id,
        alcoholism=trial.alcoholism,
        stimulus=-1 if stimulus is None else stimulus,
        trial_id=trial_id,
        band_names=tuple(b.name for b in bands),
    )


def dump_features_csv(features: list[BandFeatures], electrode_names, path) -> None:
    """Debug dump: one row per (trial, electrode)."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "subject_id", "electrode", *features[0].band_names] if features else ["trial_id"])
        for f in features:
            for name, row in zip(electrode_names, f.powers):
                w.writerow([f.trial_id, f.subject_id, name, *(repr(float(v)) for v in row)])

"""Identity disguise for EEG topographic images.

Pipeline: parse raw trials, compute theta/alpha/beta band powers, render
them as 3-channel topographic images, build grand-averaged dummy identities,
and train a cycle-consistent translator that maps real images toward the
dummy domain while keeping chosen attributes recognizable.
"""

__version__ = "0.1.0"

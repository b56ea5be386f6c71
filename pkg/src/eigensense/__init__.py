"""eigensense: Bayesian multi-sensor signal detection from sample eigenvalues.

Decides "informative signal present" versus "pure noise" for a block of
N-sensor, L-snapshot samples by evaluating closed-form Bayesian likelihood
ratios over the eigenvalues of Y Y^H, covering known or unknown source count
and known or gridded noise power, alongside the classical energy detector
and a Monte Carlo ROC harness.
"""

from .errors import (
    DegeneracyError,
    DomainError,
    EigensenseError,
    InputError,
    NumericError,
)
from .special import (
    CancellationReport,
    SignedLog,
    j_integral,
    j_via_bessel,
    kappa,
    lemma1_determinant,
    signed_log_sum,
)
from .spectra import EigenSpectrum, SampleMatrix, gram_eigenvalues
from .detectors import (
    BoundedCount,
    CountPosterior,
    DetectionStatistic,
    ExactCount,
    ExactNoise,
    NoiseGrid,
    PriorConfig,
    detection_log_ratio,
    energy_statistic,
    log_mimo_signal_likelihood,
    log_noise_likelihood,
    log_simo_signal_likelihood,
    source_count_posteriors,
)
from .montecarlo import (
    BayesDetector,
    EnergyDetector,
    RocCurve,
    RocOperatingPoint,
    Scenario,
    exact_n1_likelihood_oracle,
    mc_signal_likelihood_oracle,
    roc_metrics,
    run_roc,
    synthesize_observation,
)

__version__ = "0.1.0"

# io reads __version__ back from the package, so it imports after the binding.
from .io import (
    read_observation,
    write_eigen_spectrum,
    write_roc_csv,
    write_roc_sidecar,
    write_sample_matrix,
)

__all__ = [
    "__version__",
    "EigensenseError", "InputError", "DomainError", "NumericError", "DegeneracyError",
    "SignedLog", "CancellationReport", "signed_log_sum",
    "j_integral", "j_via_bessel", "kappa", "lemma1_determinant",
    "SampleMatrix", "EigenSpectrum", "gram_eigenvalues",
    "PriorConfig", "ExactCount", "BoundedCount", "ExactNoise", "NoiseGrid",
    "DetectionStatistic", "CountPosterior",
    "log_noise_likelihood", "log_simo_signal_likelihood", "log_mimo_signal_likelihood",
    "detection_log_ratio", "energy_statistic", "source_count_posteriors",
    "Scenario", "RocCurve", "RocOperatingPoint", "BayesDetector", "EnergyDetector",
    "synthesize_observation", "mc_signal_likelihood_oracle", "exact_n1_likelihood_oracle",
    "run_roc", "roc_metrics",
    "read_observation", "write_sample_matrix", "write_eigen_spectrum",
    "write_roc_csv", "write_roc_sidecar",
]

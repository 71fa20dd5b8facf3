"""Domain generalization by learning internally- and mutually-invariant features.

A teacher network is fit to Fourier phase representations of the inputs,
then a student is trained on raw inputs with four objective terms: task
cross-entropy, distillation toward the frozen teacher, cross-domain
correlation alignment, and an exploration term that pushes the two halves
of the embedding apart. Everything runs on a small reverse-mode autodiff
core over float64 numpy arrays.
"""

__version__ = "0.1.0"

from .autodiff import AdamW, NonFiniteError, Tensor, finite_difference_grad
from .fourier import Spectrum, amplitude, dft_naive, fft, fft_inverse, phase
from .losses import LossWeights, coral_loss, covariance, exploration_l2, mse_distill
from .model import StudentModel, TeacherModel
from .data import BenchConfig, DomainDataset, generate, leave_one_out

__all__ = [
    "AdamW",
    "NonFiniteError",
    "Tensor",
    "finite_difference_grad",
    "Spectrum",
    "amplitude",
    "dft_naive",
    "fft",
    "fft_inverse",
    "phase",
    "LossWeights",
    "coral_loss",
    "covariance",
    "exploration_l2",
    "mse_distill",
    "StudentModel",
    "TeacherModel",
    "BenchConfig",
    "DomainDataset",
    "generate",
    "leave_one_out",
]

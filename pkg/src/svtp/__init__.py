"""Sparse variational Student-t process regression with natural gradients."""

from svtp.stdist import DenseStudentT, DiagStudentT, TSampleBatch
from svtp.kernel import KernelParams
from svtp.model import SVTPState, ConditionalParams
from svtp.fisher import FisherBlocks, BetaLinkConstants

__all__ = [
    "DenseStudentT",
    "DiagStudentT",
    "TSampleBatch",
    "KernelParams",
    "SVTPState",
    "ConditionalParams",
    "FisherBlocks",
    "BetaLinkConstants",
]

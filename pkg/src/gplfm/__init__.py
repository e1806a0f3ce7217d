"""Multi-output Gaussian processes with first-order ODE latent force kernels."""

from .data import Channel, Sample, TimeSeriesSet
from .errors import LfmError
from .gp import LatentForce, assemble_gram, log_marginal_likelihood, predict
from .kernels import LMC, RBF, GaussConv, Independent, Periodic, Sum, eval_gauss_conv, kernel_from_dict
from .lfm import EFoldingTime, LfmFirstOrder, LfmParams, efolding, lfm_cross_kernel, lfm_kernel

__version__ = "0.1.0"

"""p-Laplacian regularized framelet graph networks (pL-UFG) in numpy/scipy."""

from .data import Dataset, load_dataset, synth_sbm
from .diffusion import p_laplacian_apply, verify_diffusion_identity
from .energy import (EnergyTrace, classify_dynamics, dirichlet_energy, generalized_energy_epf,
                     rayleigh_normalized_energy)
from .framelet import analyze, cheb_framelet_system, exact_framelet_system, haar_scaling_set, synthesize
from .graph import Graph, build_graph, graph_divergence, graph_gradient, homophily_index
from .model import PLUFG, LinearHead, ModelConfig, PLaplacianLayer, SpectralFrameletLayer, plufg_forward
from .plap import (Identity, LogDiffusion, PLapConfig, PowerP, SoftAbs, Tikhonov, iterate_step,
                   objective, solve_implicit)

__version__ = "0.1.0"

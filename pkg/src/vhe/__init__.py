"""Variational homophilic embedding of attributed networks.

Submodules: ``autodiff`` (tape-based reverse mode), ``latent`` (priors,
posteriors, KL terms), ``graph_data``, ``encoder``, ``decoder``, ``trainer``,
``inference``, ``evaluate``, ``checks`` (gradient suite) and ``cli``.
Nothing heavy is imported here so the command line can set thread limits
before numpy loads.
"""

__version__ = "0.1.0"

"""Task-guided pair embedding (TaPEm) for author identification.

Modules: ``hetgraph`` (typed academic network), ``walker`` (meta-path walks
and pair extraction), ``numerics`` (parameters, Adam, gradient checks),
``model`` and ``objective`` (network and training), ``evaluation``
(ranking metrics), ``synth`` (planted-topic generator) and ``cli``.
"""

__version__ = "0.1.0"

"""Nuclear-norm geometry for unsupervised domain adaptation.

Submodules: ``matrixcore`` (Jacobi SVD and subspace tools), ``objectives``
(equivalence and orthogonality losses), ``model``, ``data``, ``trainer``,
``diagnostics``, ``theoremlab`` and ``cli``.
"""

from goalgeom._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

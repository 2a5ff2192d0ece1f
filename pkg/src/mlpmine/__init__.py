"""mlpmine: from-scratch MLP training and data mining for Balanced EMNIST.

Dense linear algebra, backprop layers, Adam/SGD, PCA, training-set pruning
and an experiment CLI, all dependency-free.  Hot numeric kernels run on a
compiled Cython core when built, with a bit-identical pure-Python fallback
(see mlpmine.backend.BACKEND for which one is active).
"""

from .backend import BACKEND
from .dataio import N_CLASSES
from .linalg import DenseMatrix, RngState

IMAGE_DIM = 784

__version__ = "0.1.0"
__all__ = ["BACKEND", "DenseMatrix", "RngState", "N_CLASSES", "IMAGE_DIM"]

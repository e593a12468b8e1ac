"""rrk: reranking first-stage candidates from compressed document embeddings.

Documents are compressed offline into a fixed number of embedding vectors;
a decoder-style scorer reranks candidates from those embeddings alone, so
reranking cost does not grow with document length. Training distills a
cheap deterministic teacher into the scorer with an MSE loss.
"""

import os

# BLAS thread caps must land in the environment before numpy loads its
# backend; honor RRK_THREADS only if we are imported first.
_threads = os.environ.get("RRK_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

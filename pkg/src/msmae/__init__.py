"""Multi-scale masked-autoencoder pre-training for multi-band imagery.

The package is organized as a small numpy library:

- ``msmae.tensor``     dense tensors with reverse-mode autodiff
- ``msmae.data``       band metadata, synthetic imagery, scale pyramids
- ``msmae.model``      the masked autoencoder (embeddings, encoder, decoder)
- ``msmae.multiscale`` convolutional upsample head and the combined loss
- ``msmae.train``      optimizer, schedules, pre-train/finetune loops, metrics
- ``msmae.checkpoint`` named-tensor binary checkpoints
- ``msmae.cli``        pretrain / finetune / eval / reconstruct / ablate
"""

import os as _os

# Honor MSMAE_THREADS before numpy's BLAS spins up its pool.  Best effort:
# if numpy is already imported this only applies via threadpoolctl below.
_threads = _os.environ.get("MSMAE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .tensor import (  # noqa: E402
    ParamStore,
    ShapeError,
    Tensor,
    no_grad,
)

__version__ = "0.1.0"


def limit_threads(n: int | None = None) -> None:
    """Cap BLAS threadpools at ``n`` (or $MSMAE_THREADS) if threadpoolctl exists."""
    if n is None:
        raw = _os.environ.get("MSMAE_THREADS")
        if not raw:
            return
        n = int(raw)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        pass

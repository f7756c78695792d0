"""The primary :mod:`volseg` package includes everything you need to
build, train and evaluate a volumetric segmentation network:

 - the :class:`Tape <volseg.autograd.Tape>` recording differentiable operations
 - the :class:`SegmentationModel <volseg.model.SegmentationModel>` built by
   :func:`build_model <volseg.model.build_model>` from a
   :class:`ModelConfig <volseg.model.ModelConfig>`
 - the decoder modules in :mod:`volseg.decoder`
 - the training loop in :mod:`volseg.training`
"""

from .__version__ import __version__
from .autograd import Parameter, Tape, Tensor
from .model import ModelConfig, SegmentationModel, build_model

__all__ = [
    "__version__",
    "ModelConfig",
    "Parameter",
    "SegmentationModel",
    "Tape",
    "Tensor",
    "build_model",
]

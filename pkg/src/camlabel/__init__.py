"""Model-assisted defect labeling toolkit.

Click-level weak labels train per-defect classifiers whose attribution
maps, refined by anti-adversarial climbing and morphological
post-processing, become instance-segmentation proposals. A review service
collects annotator decisions and converts them back into weak labels,
closing the loop.
"""

from .attribution import AttributionMap, gradcam, normalize
from .classifier import (
    CheckpointBundle,
    ModelConfig,
    TrainConfig,
    UNetCropClassifier,
    build_model,
    predict,
    train,
)
from .climb import AdvCamExtractor, ClimbConfig, ClimbTrace, advcam, climb_step
from .masks import decode_rle, encode_rle, mask_to_polygon, polygon_to_mask
from .metrics import (
    SavingBandTally,
    TimeSavingReport,
    aggregate,
    mask_iou,
    relative_time_saving,
)
from .postproc import (
    BinaryMask,
    ComponentSet,
    MaskPostprocessor,
    PostprocConfig,
    binarize,
    closure,
    components,
    filter_area,
    postprocess,
)
from .proposer import InstanceProposal, TilingConfig, propose, tile
from .registry import DEFAULT_REGISTRY, ClassRegistry
from .service import EventStore, ReviewApp, create_app, derive_weak_labels
from .synthetic import SceneParams, SyntheticScene, generate_synthetic_scene
from .weakset import (
    CropDatasetSpec,
    CropSample,
    WeakLabel,
    ingest_labels,
    sample_crops,
    split_dataset,
)

__version__ = "0.1.0"

"""Hierarchical multi-scale biomedical image encoding, connector training,
instruction-data synthesis, and VQA evaluation."""

from .connector import (
    FreezeMask,
    MlpParams,
    TrainConfig,
    TrainResult,
    alignment_loss,
    finetune_config,
    init_mlp_params,
    load_checkpoint,
    lr_at,
    mlp_backward,
    mlp_forward,
    pretrain_config,
    save_checkpoint,
    train_stage,
)
from .encoder import (
    EncoderSpec,
    MultiScaleFeatures,
    encode_multiscale,
    encode_scale,
    encode_tile,
    load_precomputed_features,
    pool_to_base,
)
from .pyramid import (
    ScaleSet,
    TileGrid,
    build_pyramid,
    pad_to_square,
    prepare_square,
    resize_bilinear,
    split_tiles,
    stitch_tiles,
)
from .synth import (
    CaptionSample,
    Conversation,
    MixPlan,
    Prompt,
    ProviderConfig,
    Turn,
    assign_providers,
    build_prompt,
    call_provider,
    merge_instruct,
    parse_conversation,
    read_instruct_json,
    synthesize,
    to_instruct_json,
    to_instruct_records,
    write_instruct_json,
)
from .tensorio import (
    decode_mstf,
    encode_mstf,
    image_to_float,
    load_image_rgb8,
    load_mstf,
    save_mstf,
)
from .vqa import (
    EvalReport,
    Prediction,
    VqaItem,
    closed_accuracy,
    dataset_stats,
    evaluate,
    instruct_stats,
    load_vqa_dataset,
    normalize,
    open_recall,
)

__version__ = "0.1.0"

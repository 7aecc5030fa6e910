"""dynafuse: a desk-scale fused visual QA system.

A video-diffusion denoiser is repurposed as a generative visual encoder: one
Euler denoising step over a replicated/keyframed latent clip, with mid-block
hidden features extracted as motion-aware tokens. These fuse with a static
semantic patch encoder's tokens in a small autoregressive decoder trained
with answer-span cross-entropy on synthetic spatial-reasoning benchmarks.
"""

from .codec import LatentCodec
from .config import ExperimentConfig, load_config, parse_config
from .decoder import AnswerDecoder, PromptTokens, decode, text_loss
from .denoiser import DenoiserSpec, VideoDenoiser
from .generative import (ConditioningContext, FlatDynamicTokens, HiddenFeatures,
                         ImageLatent, LatentVideo, NoiseSchedule,
                         assemble_multi_image, encode_latent, euler_step,
                         extract_hidden, flatten_hidden, keyframe_indices,
                         replicate_latent, run_generative_encoder)
from .model import ModelConfig, WorldModelQA
from .projectors import MlpProjector, ProjectorSpec, TokenSequence, VaeConvProjector, fuse
from .semantic import (EncoderVariant, PatchGrid, SemanticEncoder, encode_semantic,
                       pretrain_self_supervised, pretrain_text_aligned,
                       select_semantic_input)
from .tasks import (EvalResult, TaskSample, gen_claim, gen_counting, gen_motion,
                    gen_relation, gen_view, score)
from .training import (FreezePolicy, TrainConfig, align_stage, clip_gradients,
                       evaluate, lr_at, pretrain_codec, pretrain_denoiser,
                       train_single_stage)

__version__ = "0.1.0"

__all__ = [
    "AnswerDecoder", "ConditioningContext", "DenoiserSpec", "EncoderVariant",
    "EvalResult", "ExperimentConfig", "FlatDynamicTokens", "FreezePolicy",
    "HiddenFeatures", "ImageLatent", "LatentCodec", "LatentVideo", "MlpProjector",
    "ModelConfig", "NoiseSchedule", "PatchGrid", "PromptTokens", "ProjectorSpec",
    "SemanticEncoder", "TaskSample", "TokenSequence", "TrainConfig",
    "VaeConvProjector", "VideoDenoiser", "WorldModelQA", "align_stage",
    "assemble_multi_image", "clip_gradients", "decode", "encode_latent",
    "encode_semantic", "euler_step", "evaluate", "extract_hidden", "flatten_hidden",
    "fuse", "gen_claim", "gen_counting", "gen_motion", "gen_relation", "gen_view",
    "keyframe_indices", "load_config", "lr_at", "parse_config", "pretrain_codec",
    "pretrain_denoiser", "pretrain_self_supervised", "pretrain_text_aligned",
    "replicate_latent", "run_generative_encoder", "score", "select_semantic_input",
    "text_loss", "train_single_stage",
]

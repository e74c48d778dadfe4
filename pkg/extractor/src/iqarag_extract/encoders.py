"""Vision encoder registry, weight loading, and batched image embedding.

Five backbones are supported.  Two come from torchvision and already
produce a single pooled vector; three are token-sequence transformers
where the caller chooses CLS or mean pooling.

Weight sources, selected by the ``weights`` argument:

    "random"      seeded random initialization (fully offline)
    "pretrained"  the published checkpoint for the backbone
    <path>        a state_dict saved with torch.save

Preprocessing is the same geometry everywhere: decode to RGB, resize
the shorter side to 224 with bicubic interpolation, center-crop to
224x224, scale to [0,1], then normalize with per-encoder channel
statistics.
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import ExtractError, ValidationError, WeightsError

CROP_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)

POOLINGS = ("cls", "mean")


@dataclass(frozen=True)
class EncoderInfo:
    """Static description of one registry entry."""

    name: str
    dim: int
    pooled_output: bool  # backbone already returns one vector per image
    hub_name: str | None  # pretrained checkpoint identifier, None = torchvision default
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    description: str


REGISTRY: dict[str, EncoderInfo] = {
    "resnet": EncoderInfo(
        name="resnet",
        dim=2048,
        pooled_output=True,
        hub_name=None,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        description="ResNet-50 global-average-pooled features",
    ),
    "swin-b": EncoderInfo(
        name="swin-b",
        dim=1024,
        pooled_output=True,
        hub_name=None,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        description="Swin-B pooled stage-4 features",
    ),
    "dinov2": EncoderInfo(
        name="dinov2",
        dim=768,
        pooled_output=False,
        hub_name="facebook/dinov2-base",
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        description="DINOv2 ViT-B/14 token features",
    ),
    "clip": EncoderInfo(
        name="clip",
        dim=768,
        pooled_output=False,
        hub_name="openai/clip-vit-base-patch32",
        mean=CLIP_MEAN,
        std=CLIP_STD,
        description="CLIP ViT-B/32 vision-tower token features",
    ),
    "lmm-vit": EncoderInfo(
        name="lmm-vit",
        dim=768,
        pooled_output=False,
        hub_name="google/vit-base-patch16-224",
        mean=(0.5, 0.5, 0.5),
        std=(0.5, 0.5, 0.5),
        description="plain ViT-B/16 vision tower, as used inside multimodal models",
    ),
}


def encoder_names() -> tuple[str, ...]:
    return tuple(REGISTRY)


class Encoder:
    """A loaded backbone plus its preprocessing and pooling rules.

    ``embed_bytes`` is thread-safe: the forward pass runs under a lock,
    so one instance can back a multi-threaded service.
    """

    def __init__(
        self,
        info: EncoderInfo,
        model: torch.nn.Module,
        pooling: str,
        weights_label: str,
    ) -> None:
        self.info = info
        self.pooling = pooling
        self.weights_label = weights_label
        self._model = model.eval()
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.info.name

    @property
    def dim(self) -> int:
        return self.info.dim

    def preprocess(self, data: bytes) -> torch.Tensor:
        """Decode image bytes to a normalized (3, 224, 224) tensor."""
        try:
            with Image.open(io.BytesIO(data)) as img:
                rgb = img.convert("RGB")
        except Exception as exc:  # PIL raises a grab bag of types on bad bytes
            raise ValidationError(f"cannot decode image: {exc}") from exc

        w, h = rgb.size
        scale = CROP_SIZE / min(w, h)
        new_w = max(CROP_SIZE, round(w * scale))
        new_h = max(CROP_SIZE, round(h * scale))
        rgb = rgb.resize((new_w, new_h), Image.BICUBIC)
        left = (new_w - CROP_SIZE) // 2
        top = (new_h - CROP_SIZE) // 2
        rgb = rgb.crop((left, top, left + CROP_SIZE, top + CROP_SIZE))

        arr = np.asarray(rgb, dtype=np.float32) / 255.0
        arr = arr.transpose(2, 0, 1)
        mean = np.asarray(self.info.mean, dtype=np.float32).reshape(3, 1, 1)
        std = np.asarray(self.info.std, dtype=np.float32).reshape(3, 1, 1)
        return torch.from_numpy((arr - mean) / std)

    def embed_tensors(self, tensors: Sequence[torch.Tensor]) -> np.ndarray:
        """Forward a batch of preprocessed tensors, returning float32 rows."""
        if not tensors:
            return np.zeros((0, self.dim), dtype=np.float32)
        batch = torch.stack(list(tensors))
        with self._lock, torch.inference_mode():
            if self.info.pooled_output:
                pooled = self._model(batch)
            else:
                hidden = self._model(pixel_values=batch).last_hidden_state
                if self.pooling == "cls":
                    pooled = hidden[:, 0]
                else:
                    pooled = hidden[:, 1:].mean(dim=1)
        rows = pooled.to(torch.float32).cpu().numpy()
        if rows.shape != (len(tensors), self.dim):
            raise ExtractError(
                f"encoder '{self.name}' produced shape {rows.shape}, "
                f"expected ({len(tensors)}, {self.dim})"
            )
        return rows

    def embed_bytes(self, images: Sequence[bytes]) -> np.ndarray:
        return self.embed_tensors([self.preprocess(data) for data in images])


def load_encoder(
    name: str,
    weights: str = "pretrained",
    seed: int = 0,
    pooling: str = "cls",
) -> Encoder:
    """Build a registry encoder with the requested weights and pooling."""
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise ValidationError(f"unknown encoder '{name}' (known: {known})")
    if pooling not in POOLINGS:
        raise ValidationError(f"pooling must be one of {POOLINGS}, got '{pooling}'")
    info = REGISTRY[name]
    if info.pooled_output and pooling != "cls":
        raise ValidationError(
            f"encoder '{name}' produces a single pooled vector; "
            "token pooling does not apply"
        )

    if weights == "pretrained":
        try:
            model = _BUILDERS[name](pretrained=True)
        except Exception as exc:
            raise WeightsError(
                f"cannot fetch pretrained weights for '{name}': {exc} "
                "(use --weights random or pass a local state_dict path)"
            ) from exc
        label = "pretrained"
    elif weights == "random":
        torch.manual_seed(seed)
        model = _BUILDERS[name](pretrained=False)
        label = f"random(seed={seed})"
    else:
        torch.manual_seed(seed)
        model = _BUILDERS[name](pretrained=False)
        try:
            state = torch.load(weights, map_location="cpu")
            model.load_state_dict(state, strict=True)
        except Exception as exc:  # unpickling raises too many types to enumerate
            raise WeightsError(f"cannot load weights from '{weights}': {exc}") from exc
        label = weights
    return Encoder(info, model, pooling, label)


def _build_resnet(pretrained: bool) -> torch.nn.Module:
    from torchvision import models

    weights = models.ResNet50_Weights.DEFAULT if pretrained else None
    model = models.resnet50(weights=weights)
    model.fc = torch.nn.Identity()
    return model


def _build_swin(pretrained: bool) -> torch.nn.Module:
    from torchvision import models

    weights = models.Swin_B_Weights.DEFAULT if pretrained else None
    model = models.swin_b(weights=weights)
    model.head = torch.nn.Identity()
    return model


def _build_dinov2(pretrained: bool) -> torch.nn.Module:
    from transformers import Dinov2Config, Dinov2Model

    if pretrained:
        return Dinov2Model.from_pretrained(REGISTRY["dinov2"].hub_name)
    return Dinov2Model(Dinov2Config())


def _build_clip(pretrained: bool) -> torch.nn.Module:
    from transformers import CLIPVisionConfig, CLIPVisionModel

    if pretrained:
        return CLIPVisionModel.from_pretrained(REGISTRY["clip"].hub_name)
    return CLIPVisionModel(CLIPVisionConfig())


def _build_vit(pretrained: bool) -> torch.nn.Module:
    from transformers import ViTConfig, ViTModel

    if pretrained:
        return ViTModel.from_pretrained(REGISTRY["lmm-vit"].hub_name, add_pooling_layer=False)
    return ViTModel(ViTConfig(), add_pooling_layer=False)


_BUILDERS: dict[str, Callable[..., torch.nn.Module]] = {
    "resnet": _build_resnet,
    "swin-b": _build_swin,
    "dinov2": _build_dinov2,
    "clip": _build_clip,
    "lmm-vit": _build_vit,
}

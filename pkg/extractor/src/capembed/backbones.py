"""Model loading and forward passes for both branches.

The language backbone runs one non-autoregressive forward pass and pools
the final layer's hidden states with the attention mask: the mean over
real tokens and the state at the last real token. The alignment backbone
produces unit-normalized image and text embeddings.

"tiny" backbones are seeded random-weight miniature architectures
(2-layer Llama, 2-layer CLIP) with a byte-level tokenizer; they exercise
the same masking/pooling/template code paths as pretrained checkpoints
without any download.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import bytetok
from .config import ExtractorConfig, ExtractorError

logger = logging.getLogger(__name__)

FALLBACK_TEMPLATE = "<|system|>\n{system}\n<|user|>\n{user}\n<|assistant|>\n{prefix}"

_TINY_LLM_HIDDEN = 32
_TINY_CLIP_DIM = 16
_TINY_IMAGE_SIZE = 32
_TINY_CONTEXT = 2048


@dataclass(frozen=True)
class PooledStates:
    mean: np.ndarray  # float32 (hidden,)
    last: np.ndarray  # float32 (hidden,)
    seq_len: int


def _tiny_llama(seed: int):
    from transformers import LlamaConfig, LlamaModel

    torch.manual_seed(seed)
    config = LlamaConfig(
        vocab_size=bytetok.VOCAB_SIZE,
        hidden_size=_TINY_LLM_HIDDEN,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=_TINY_CONTEXT,
        pad_token_id=bytetok.PAD_ID,
    )
    return LlamaModel(config).eval()


def _tiny_clip(seed: int):
    from transformers import CLIPConfig, CLIPModel, CLIPTextConfig, CLIPVisionConfig

    torch.manual_seed(seed)
    text = CLIPTextConfig(
        vocab_size=bytetok.VOCAB_SIZE,
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        max_position_embeddings=_TINY_CONTEXT,
        eos_token_id=bytetok.EOS_ID,
        pad_token_id=bytetok.PAD_ID,
        bos_token_id=255,
    )
    vision = CLIPVisionConfig(
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=2,
        num_attention_heads=4,
        image_size=_TINY_IMAGE_SIZE,
        patch_size=8,
        num_channels=3,
    )
    config = CLIPConfig(
        text_config=text.to_dict(), vision_config=vision.to_dict(), projection_dim=_TINY_CLIP_DIM
    )
    return CLIPModel(config).eval()


class LanguageBackbone:
    """Chat-template rendering plus masked hidden-state pooling."""

    def __init__(self, config: ExtractorConfig):
        self.config = config
        self.tiny = config.llm_model == "tiny"
        if self.tiny:
            self.model = _tiny_llama(config.seed).to(config.device)
            self.tokenizer = None
            self.hidden_size = _TINY_LLM_HIDDEN
            self.max_length = config.max_length or _TINY_CONTEXT
        else:
            from transformers import AutoModel, AutoTokenizer

            self.tokenizer = AutoTokenizer.from_pretrained(config.llm_model)
            self.model = (
                AutoModel.from_pretrained(config.llm_model).eval().to(config.device)
            )
            self.hidden_size = self.model.config.hidden_size
            self.max_length = config.max_length or getattr(
                self.model.config, "max_position_embeddings", 4096
            )
            if self.tokenizer.pad_token_id is None:
                self.tokenizer.pad_token = self.tokenizer.eos_token

    def render(self, system: str, user: str, assistant_prefix: str) -> str:
        """Apply the model's chat template; fall back to a plain layout."""
        if (
            not self.tiny
            and self.config.apply_chat_template
            and getattr(self.tokenizer, "chat_template", None)
        ):
            messages = [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ]
            text = self.tokenizer.apply_chat_template(
                messages, tokenize=False, add_generation_prompt=True
            )
            return text + assistant_prefix
        return FALLBACK_TEMPLATE.format(system=system, user=user, prefix=assistant_prefix)

    def _encode(self, text: str) -> list[int]:
        if self.tiny:
            return bytetok.encode(text)
        return self.tokenizer(text, add_special_tokens=True)["input_ids"]

    def token_count(self, text: str) -> int:
        return len(self._encode(text))

    def pool_batch(self, texts: list[str]) -> list[PooledStates]:
        """One forward pass per batch; float32 mask-aware pooling."""
        out: list[PooledStates] = []
        for start in range(0, len(texts), self.config.batch_size):
            chunk = texts[start : start + self.config.batch_size]
            encoded = [self._encode(t) for t in chunk]
            if self.tiny:
                ids, mask = bytetok.pad_batch(encoded)
            else:
                batch = self.tokenizer(
                    chunk, padding=True, return_tensors="pt", add_special_tokens=True
                )
                ids, mask = batch["input_ids"], batch["attention_mask"]
            ids = ids.to(self.config.device)
            mask = mask.to(self.config.device)
            with torch.no_grad():
                hidden = self.model(
                    input_ids=ids, attention_mask=mask
                ).last_hidden_state
            hidden = hidden.float()  # pooling happens in float32
            fmask = mask.unsqueeze(-1).float()
            lengths = mask.sum(dim=1)
            mean = (hidden * fmask).sum(dim=1) / lengths.unsqueeze(-1).float()
            last_idx = (lengths - 1).clamp(min=0)
            rows = torch.arange(hidden.shape[0], device=hidden.device)
            last = hidden[rows, last_idx]
            for i in range(len(chunk)):
                out.append(
                    PooledStates(
                        mean=mean[i].cpu().numpy().astype(np.float32),
                        last=last[i].cpu().numpy().astype(np.float32),
                        seq_len=int(lengths[i].item()),
                    )
                )
        return out


class AlignmentBackbone:
    """Unit-normalized image and long-text embeddings."""

    def __init__(self, config: ExtractorConfig):
        self.config = config
        self.tiny = config.clip_model == "tiny"
        if self.tiny:
            self.model = _tiny_clip(config.seed).to(config.device)
            self.processor = None
            self.tokenizer = None
            self.dim = _TINY_CLIP_DIM
            self.image_size = _TINY_IMAGE_SIZE
            # Room for the end-of-text id within the position table.
            self.max_text_tokens = config.max_text_tokens or (_TINY_CONTEXT - 1)
        else:
            from transformers import AutoProcessor, CLIPModel

            self.model = (
                CLIPModel.from_pretrained(config.clip_model).eval().to(config.device)
            )
            self.processor = AutoProcessor.from_pretrained(config.clip_model)
            self.tokenizer = self.processor.tokenizer
            self.dim = self.model.config.projection_dim
            self.image_size = self.model.config.vision_config.image_size
            self.max_text_tokens = (
                config.max_text_tokens
                or self.model.config.text_config.max_position_embeddings
            )

    def _normalize(self, feats: torch.Tensor) -> np.ndarray:
        feats = feats.float()
        feats = feats / feats.norm(dim=-1, keepdim=True)
        return feats.cpu().numpy().astype(np.float32)

    def embed_texts(self, texts: list[str]) -> tuple[np.ndarray, int]:
        """Returns (float32 (n, dim) unit vectors, truncated caption count)."""
        truncated = 0
        vectors = []
        for start in range(0, len(texts), self.config.batch_size):
            chunk = texts[start : start + self.config.batch_size]
            if self.tiny:
                encoded = []
                for t in chunk:
                    ids = bytetok.encode(t)
                    if len(ids) > self.max_text_tokens - 1:
                        truncated += 1
                        logger.warning(
                            "caption of %d tokens truncated to %d",
                            len(ids),
                            self.max_text_tokens - 1,
                        )
                        ids = ids[: self.max_text_tokens - 1]
                    encoded.append(ids + [bytetok.EOS_ID])
                ids, mask = bytetok.pad_batch(encoded)
                with torch.no_grad():
                    pooled = self.model.text_model(
                        input_ids=ids.to(self.config.device),
                        attention_mask=mask.to(self.config.device),
                    ).pooler_output
                    feats = self.model.text_projection(pooled)
            else:
                for t in chunk:
                    if len(self.tokenizer(t)["input_ids"]) > self.max_text_tokens:
                        truncated += 1
                        logger.warning("caption exceeds %d tokens; truncating", self.max_text_tokens)
                batch = self.tokenizer(
                    chunk,
                    padding=True,
                    truncation=True,
                    max_length=self.max_text_tokens,
                    return_tensors="pt",
                )
                with torch.no_grad():
                    pooled = self.model.text_model(
                        input_ids=batch["input_ids"].to(self.config.device),
                        attention_mask=batch["attention_mask"].to(self.config.device),
                    ).pooler_output
                    feats = self.model.text_projection(pooled)
            vectors.append(self._normalize(feats))
        return np.concatenate(vectors), truncated

    def _pixels(self, images: list[Image.Image]) -> torch.Tensor:
        if self.tiny:
            arrays = []
            for img in images:
                resized = img.convert("RGB").resize((self.image_size, self.image_size))
                arr = np.asarray(resized, dtype=np.float32) / 255.0
                arr = (arr - 0.5) / 0.5
                arrays.append(arr.transpose(2, 0, 1))
            return torch.from_numpy(np.stack(arrays))
        processed = self.processor(images=images, return_tensors="pt")
        return processed["pixel_values"]

    def embed_images(self, images: list[Image.Image]) -> np.ndarray:
        vectors = []
        for start in range(0, len(images), self.config.batch_size):
            chunk = images[start : start + self.config.batch_size]
            pixels = self._pixels(chunk).to(self.config.device)
            with torch.no_grad():
                pooled = self.model.vision_model(pixel_values=pixels).pooler_output
                feats = self.model.visual_projection(pooled)
            vectors.append(self._normalize(feats))
        return np.concatenate(vectors)


def open_image(path: str) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as e:
        raise ExtractorError(f"unreadable image {path}: {e}") from None

"""Optional pretrained CLIP backend (requires the ``pretrained`` extra).

Exposes the same encoder interface as the mock pair: image features and
class text features live on the shared unit sphere, and the text side can
encode raw token-embedding sequences so learned prompt tokens work on a
real model. Everything here is exercised only when transformers (and
weights) are available; the mock backend is the default, fully offline
path.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .errors import BackendUnavailableError, SequenceTooLongError, UnknownSampleError
from .validation import unit_normalize


def _import_transformers():
    try:
        import transformers  # noqa: F401
        from transformers import CLIPModel, CLIPProcessor, CLIPTokenizerFast
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise BackendUnavailableError(
            "the pretrained backend needs the 'pretrained' extra "
            "(pip install promptda[pretrained])"
        ) from exc
    return CLIPModel, CLIPProcessor, CLIPTokenizerFast


class PretrainedImageEncoder:
    """Frozen CLIP vision tower mapping images or image files to features."""

    def __init__(self, model, processor) -> None:
        self._model = model
        self._processor = processor
        self.embed_dim = model.config.projection_dim
        self._registry: dict[str, torch.Tensor] = {}

    def register_samples(self, sample_ids, features) -> None:
        feats = torch.as_tensor(np.asarray(features, dtype=np.float32))
        for sid, row in zip(sample_ids, feats):
            self._registry[str(sid)] = row.clone()

    @torch.no_grad()
    def encode(self, batch):
        if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], str):
            missing = [s for s in batch if s not in self._registry]
            if missing:
                return self._encode_files(batch)
            return torch.stack([self._registry[s] for s in batch])
        array = torch.as_tensor(np.asarray(batch, dtype=np.float32))
        if array.ndim == 2 and array.shape[1] == self.embed_dim:
            return array  # already projected features (augmented views)
        raise UnknownSampleError(
            "pretrained image encoder expects file paths, registered ids, or "
            f"[N, {self.embed_dim}] feature arrays"
        )

    @torch.no_grad()
    def _encode_files(self, paths):
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover - depends on extras
            raise BackendUnavailableError(
                "decoding image files needs Pillow (pretrained extra)"
            ) from exc
        missing = [p for p in paths if not Path(p).is_file()]
        if missing:
            raise UnknownSampleError(f"image files not found: {missing[:5]}")
        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt")
        feats = self._model.get_image_features(pixel_values=inputs["pixel_values"])
        return unit_normalize(feats, "image features")

    def state_tensors(self) -> dict[str, torch.Tensor]:
        return {
            f"vision.{k}": v
            for k, v in self._model.vision_model.state_dict().items()
        }


class PretrainedTextEncoder:
    """Frozen CLIP text tower with a raw token-embedding entry point."""

    def __init__(self, model, tokenizer) -> None:
        self._model = model
        self._tokenizer = tokenizer
        self.embed_dim = model.config.projection_dim
        self.token_dim = model.config.text_config.hidden_size
        self.max_sequence_length = model.config.text_config.max_position_embeddings
        embeddings = model.text_model.embeddings.token_embedding
        ids = tokenizer("a photo of a", add_special_tokens=False)["input_ids"]
        with torch.no_grad():
            self.prefix_tokens = embeddings(torch.tensor(ids)).detach()
            self._sos = embeddings(
                torch.tensor([tokenizer.bos_token_id])
            ).detach()
            self._eos = embeddings(
                torch.tensor([tokenizer.eos_token_id])
            ).detach()
        self._class_names: list[str] = []

    def set_class_names(self, names: list[str]) -> None:
        self._class_names = list(names)

    @torch.no_grad()
    def class_anchor_token(self, index: int) -> torch.Tensor:
        """Mean token embedding of the class name (anchor for prompts)."""
        if not 0 <= index < len(self._class_names):
            raise UnknownSampleError(
                f"class index {index} out of range; call set_class_names first"
            )
        ids = self._tokenizer(
            self._class_names[index], add_special_tokens=False
        )["input_ids"]
        embeddings = self._model.text_model.embeddings.token_embedding
        return embeddings(torch.tensor(ids)).mean(dim=0).detach()

    @torch.no_grad()
    def encode_text(self, prompts: list[str]) -> torch.Tensor:
        """Standard tokenized path (zero-shot baselines)."""
        inputs = self._tokenizer(prompts, padding=True, return_tensors="pt")
        feats = self._model.get_text_features(**inputs)
        return unit_normalize(feats, "text features")

    def encode_token_batch(self, sequences: torch.Tensor) -> torch.Tensor:
        """Encode raw token-embedding sequences ``[S, L, D_token]``.

        Wraps each sequence in start/end token embeddings, runs the causal
        text transformer on embeddings directly, pools at the end position,
        and projects onto the shared space. Gradients flow to the input
        sequences; model weights stay frozen.
        """
        s, length, _ = sequences.shape
        if length + 2 > self.max_sequence_length:
            raise SequenceTooLongError(
                f"sequence length {length} + 2 special tokens exceeds "
                f"{self.max_sequence_length}"
            )
        text_model = self._model.text_model
        sos = self._sos.expand(s, 1, -1)
        eos = self._eos.expand(s, 1, -1)
        embeds = torch.cat([sos, sequences, eos], dim=1)
        hidden = text_model.embeddings(inputs_embeds=embeds)
        full_len = hidden.shape[1]
        causal = torch.full(
            (full_len, full_len), torch.finfo(hidden.dtype).min, dtype=hidden.dtype
        ).triu(1)[None, None].expand(s, 1, -1, -1)
        try:
            encoded = text_model.encoder(
                inputs_embeds=hidden, causal_attention_mask=causal
            )
        except TypeError as exc:  # pragma: no cover - transformers API drift
            raise BackendUnavailableError(
                "this transformers version does not expose the CLIP text "
                f"encoder entry point needed for prompt tensors: {exc}"
            ) from exc
        last_hidden = encoded[0] if isinstance(encoded, tuple) else encoded.last_hidden_state
        pooled = text_model.final_layer_norm(last_hidden)[:, -1, :]
        projected = self._model.text_projection(pooled)
        return unit_normalize(projected, "text features")

    def encode_tokens(self, sequence: torch.Tensor) -> torch.Tensor:
        return self.encode_token_batch(sequence.unsqueeze(0))[0]

    def state_tensors(self) -> dict[str, torch.Tensor]:
        return {
            f"text.{k}": v for k, v in self._model.text_model.state_dict().items()
        }


class PretrainedEncoderPair:
    """Frozen CLIP model presented through the dual-encoder interface."""

    def __init__(self, model, processor, tokenizer) -> None:
        model.eval()
        for param in model.parameters():
            param.requires_grad_(False)
        self.model = model
        self.image = PretrainedImageEncoder(model, processor)
        self.text = PretrainedTextEncoder(model, tokenizer)
        self.embed_dim = model.config.projection_dim

    def state_checksum(self) -> str:
        from .integrity import state_fingerprint

        return state_fingerprint(
            {**self.image.state_tensors(), **self.text.state_tensors()}
        )


def load_pretrained_pair(
    model_name: str, weights_path: str | None = None
) -> PretrainedEncoderPair:
    """Load a CLIP checkpoint by hub name or local path."""
    CLIPModel, CLIPProcessor, CLIPTokenizerFast = _import_transformers()
    source = weights_path or model_name
    try:
        model = CLIPModel.from_pretrained(source)
        tokenizer = CLIPTokenizerFast.from_pretrained(source)
        try:
            processor = CLIPProcessor.from_pretrained(source)
        except Exception:  # image preprocessing config absent; text-only use
            processor = None
    except OSError as exc:
        raise BackendUnavailableError(
            f"could not load pretrained weights from {source!r}: {exc}"
        ) from exc
    return PretrainedEncoderPair(model, processor, tokenizer)

"""Frozen-encoder feature extraction.

Runs a pretrained transformer encoder in evaluation mode over raw texts
and pools each of the last N hidden layers by averaging over token
positions. The result is one (n_layers, dim) float32 block per text,
written in input order to a FEATSET file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .featset import write_featset

log = logging.getLogger("extractor")


class ExtractorError(Exception):
    pass


class EncoderLoadError(ExtractorError):
    pass


class InputError(ExtractorError):
    pass


@dataclass(frozen=True)
class ExtractionJob:
    """One extraction request: TSV in, FEATSET out."""

    input: str
    encoder_name: str
    layers: int
    output: str
    batch_size: int = 16
    # the default pooling averages every position, special tokens included;
    # set this to pool over content tokens only
    exclude_special_tokens: bool = False
    # fixed label -> class-index mapping; inferred (sorted) when omitted
    classes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.layers < 1:
            raise InputError("layers must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass
class ExtractionResult:
    n_written: int
    n_layers: int
    dim: int
    skipped_ids: list[int] = field(default_factory=list)
    classes: tuple[str, ...] = ()


def read_tsv(path) -> list[tuple[str, str | None]]:
    """Parse UTF-8 TSV rows of (text, optional label), one example per line."""
    p = Path(path)
    if not p.exists():
        raise InputError(f"input file not found: {path}")
    rows = []
    for line in p.read_text(encoding="utf-8").splitlines():
        parts = line.split("\t")
        text = parts[0]
        label = parts[1].strip() if len(parts) > 1 and parts[1].strip() else None
        rows.append((text, label))
    if not rows:
        raise InputError(f"input file is empty: {path}")
    return rows


def _load_encoder(name: str):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModel.from_pretrained(name, output_hidden_states=True)
    except Exception as e:
        raise EncoderLoadError(f"cannot load encoder {name!r}: {e}") from e
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return tokenizer, model, torch


def _resolve_labels(rows, classes):
    present = [lab for _, lab in rows if lab is not None]
    if not present:
        return None, ()
    if classes is None:
        classes = tuple(sorted(set(present)))
    mapping = {name: i for i, name in enumerate(classes)}
    unknown = sorted(set(present) - set(mapping))
    if unknown:
        raise InputError(f"labels outside the declared class list: {unknown}")
    labels = np.array([-1 if lab is None else mapping[lab]
                       for _, lab in rows], dtype=np.int32)
    return labels, classes


def _pool_batch(hidden_states, mask, layers):
    """Token-average each of the last `layers` hidden states.

    hidden_states: tuple of (batch, seq, dim) tensors; mask: (batch, seq)
    with 1 at positions included in the average.
    """
    denom = mask.sum(dim=1, keepdim=True).clamp(min=1).float()
    pooled = []
    for h in hidden_states[-layers:]:
        summed = (h * mask.unsqueeze(-1).float()).sum(dim=1)
        pooled.append((summed / denom).unsqueeze(1))
    import torch

    return torch.cat(pooled, dim=1)  # (batch, layers, dim)


def extract(job: ExtractionJob) -> ExtractionResult:
    """Run the job and write its FEATSET file; returns what was written."""
    rows = read_tsv(job.input)
    tokenizer, model, torch = _load_encoder(job.encoder_name)
    depth = int(model.config.num_hidden_layers)
    if job.layers > depth:
        raise InputError(f"layers={job.layers} exceeds encoder depth {depth}")

    keep, skipped = [], []
    for i, (text, label) in enumerate(rows):
        if text.strip():
            keep.append((text, label))
        else:
            log.warning("skipping empty text at record %d", i)
            skipped.append(i)
    if not keep:
        raise InputError("no non-empty texts to extract")

    labels, classes = _resolve_labels(keep, job.classes)

    blocks = []
    with torch.no_grad():
        for start in range(0, len(keep), job.batch_size):
            texts = [t for t, _ in keep[start:start + job.batch_size]]
            enc = tokenizer(texts, return_tensors="pt", padding=True,
                            truncation=True,
                            return_special_tokens_mask=True)
            special = enc.pop("special_tokens_mask")
            out = model(**enc)
            mask = enc["attention_mask"]
            if job.exclude_special_tokens:
                content = mask * (1 - special)
                # fall back to all real tokens if nothing is left
                empty = content.sum(dim=1) == 0
                mask = torch.where(empty.unsqueeze(1), mask, content)
            blocks.append(_pool_batch(out.hidden_states, mask, job.layers)
                          .to(torch.float32).cpu().numpy())

    features = np.concatenate(blocks, axis=0)
    n_classes = max(len(classes), 2)
    write_featset(features, labels, n_classes, job.output)
    return ExtractionResult(n_written=len(keep), n_layers=job.layers,
                            dim=features.shape[2], skipped_ids=skipped,
                            classes=classes)

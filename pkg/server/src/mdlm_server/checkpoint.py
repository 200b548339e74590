"""Checkpoint backend: serve masked-position conditionals from a
transformers masked-LM checkpoint.

Convention: the model input is context tokens followed by the canvas cells,
with every masked (null) cell replaced by the mask token id; reported
positions are canvas-relative.  The full-vocabulary softmax at each masked
input position provides the distribution, so entropies are over the whole
vocabulary regardless of top-k truncation.

Checkpoints differ in how they treat positions that are not masked inputs,
and some (decoder-adapted models) shift logits by one; this adapter makes no
attempt to normalize such quirks silently.  If a checkpoint needs a shift,
wrap it or file its convention next to the checkpoint.
"""

from __future__ import annotations

import numpy as np


class CheckpointModel:
    def __init__(self, checkpoint: str, length: int, mask_token_id: int = None, device: str = "cpu"):
        import torch
        from transformers import AutoConfig, AutoModelForMaskedLM, AutoTokenizer

        self._torch = torch
        self.model = AutoModelForMaskedLM.from_pretrained(checkpoint).to(device).eval()
        self.device = device
        self._length = int(length)
        if mask_token_id is None:
            tokenizer = AutoTokenizer.from_pretrained(checkpoint)
            mask_token_id = tokenizer.mask_token_id
        if mask_token_id is None:
            raise ValueError("checkpoint has no mask token; pass --mask-token-id")
        self.mask_token_id = int(mask_token_id)
        config = AutoConfig.from_pretrained(checkpoint)
        self._vocab_size = int(config.vocab_size)

    @property
    def length(self) -> int:
        return self._length

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def distributions(self, cells, context=()) -> dict:
        if len(cells) != self._length:
            raise ValueError(f"expected {self._length} cells, got {len(cells)}")
        masked = [i for i, c in enumerate(cells) if c is None]
        if not masked:
            return {}
        torch = self._torch
        offset = len(context)
        tokens = list(context) + [
            self.mask_token_id if c is None else int(c) for c in cells
        ]
        input_ids = torch.tensor([tokens], dtype=torch.long, device=self.device)
        with torch.no_grad():
            logits = self.model(input_ids=input_ids).logits[0]
        out = {}
        for position in masked:
            row = logits[offset + position].float()
            probs = torch.softmax(row, dim=-1).cpu().numpy().astype(np.float64)
            out[position] = probs / probs.sum()
        return out

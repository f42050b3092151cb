"""Tiny deterministic causal LM used in tests and the desk-scale profile.

Architecture (documented contract): word-level tokenizer over a fixed
vocabulary (id 0 = <end>, id 1 = <pad>, ids 2+ = words joined by single
spaces), token + learned absolute position embeddings, two pre-LN causal
self-attention blocks, final layer norm, linear output head. Weights are
drawn from a fixed-seed generator and frozen at construction; forward
passes stay differentiable with respect to input embeddings so gradients
reach spliced soft tokens.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import PositionOverflow, TokenizationFailure

# Fixed stub vocabulary: prompt-template words first, then a small bank of
# caption words for fixtures. 126 words + 2 reserved ids fill vocab 128.
STUB_WORDS = (
    "Video:", "This", "The", "Status", "video", "describes", "the",
    "subject.", "subject", "status", "before.", "before", "after.",
    "after", "change", "is",
    "a", "an", "it", "they", "person", "man", "woman", "child", "dog",
    "cat", "bird", "fish", "horse", "ball", "car", "truck", "bike",
    "door", "window", "room", "kitchen", "street", "field", "water",
    "hand", "table", "chair", "box", "bag", "book", "phone", "cup",
    "food", "plate", "camera", "light", "tree", "grass", "snow", "rock",
    "sits", "stands", "runs", "walks", "jumps", "falls", "eats", "naps",
    "waits", "flies", "swims", "opens", "closes", "holds", "moves",
    "turns", "lifts", "drops", "enters", "leaves", "starts", "stops",
    "throws", "catches", "pushes", "pulls", "climbs", "slides", "spins",
    "rests", "plays", "works", "talks", "looks", "points", "smiles",
    "red", "blue", "green", "white", "black", "brown", "small", "large",
    "young", "old", "new", "wet", "dry", "open", "closed", "empty",
    "full", "fast", "slow", "quickly", "slowly", "on", "off", "in",
    "out", "up", "down", "near", "over", "under", "and", "then", "now",
    "still",
)


class LMInterface:
    """Contract every language-model plugin fulfils.

    Attributes: ``vocab_size``, ``hidden_dim``, ``end_token_id``,
    ``pad_token_id``. Parameters are frozen; ``forward_embeddings`` must be
    deterministic in eval mode and differentiable w.r.t. its input.
    """

    vocab_size: int
    hidden_dim: int
    end_token_id: int
    pad_token_id: int

    def tokenize(self, text: str) -> list[int]:
        raise NotImplementedError

    def detokenize(self, token_ids: list[int]) -> str:
        raise NotImplementedError

    def embed(self, token_ids: list[int]) -> torch.Tensor:
        """ids -> [n, hidden_dim] embedding block."""
        raise NotImplementedError

    def forward_embeddings(self, embeddings: torch.Tensor) -> torch.Tensor:
        """[S, hidden_dim] -> next-token logits [S, vocab_size]."""
        raise NotImplementedError


class _CausalBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm_attn = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))
        # qkv gain keeps attention sharp and position-dependent; near-uniform
        # attention would give soft prompts the same averaged influence at
        # every position, leaving them unable to steer generation.
        nn.init.normal_(self.qkv.weight, std=0.2)
        nn.init.zeros_(self.qkv.bias)
        nn.init.normal_(self.attn_out.weight, std=0.15)
        nn.init.zeros_(self.attn_out.bias)
        for mod in self.ffn:
            if isinstance(mod, nn.Linear):
                nn.init.normal_(mod.weight, std=0.15)
                nn.init.zeros_(mod.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        seq = x.shape[0]
        h = self.norm_attn(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        k = k.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        v = v.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / self.head_dim**0.5
        mask = torch.triu(torch.ones(seq, seq, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        mixed = (torch.softmax(scores, dim=-1) @ v).transpose(0, 1).reshape(seq, -1)
        x = x + self.attn_out(mixed)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class TinyLM(nn.Module, LMInterface):
    """Frozen 2-layer causal transformer over a fixed word vocabulary."""

    def __init__(self, hidden_dim: int = 64, vocab_size: int = 128,
                 num_layers: int = 2, num_heads: int = 4,
                 max_seq_len: int = 512, seed: int = 1234):
        super().__init__()
        if vocab_size < 3:
            raise ValueError("vocab_size must leave room for words beyond <end>/<pad>")
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.max_seq_len = max_seq_len
        self.end_token_id = 0
        self.pad_token_id = 1
        self._words = STUB_WORDS[: vocab_size - 2]
        self._word_to_id = {w: i + 2 for i, w in enumerate(self._words)}
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.tok_emb = nn.Parameter(torch.randn(vocab_size, hidden_dim))
            self.pos_emb = nn.Parameter(torch.randn(max_seq_len, hidden_dim))
            self.blocks = nn.ModuleList(
                _CausalBlock(hidden_dim, num_heads) for _ in range(num_layers)
            )
            self.final_norm = nn.LayerNorm(hidden_dim)
            self.head = nn.Linear(hidden_dim, vocab_size)
            # The final norm pins hidden magnitude, so head gain bounds the
            # reachable logit spread; default init caps it too low for
            # confident predictions to exist at all.
            nn.init.normal_(self.head.weight, std=0.25)
            nn.init.zeros_(self.head.bias)
        self.requires_grad_(False)
        self.eval()

    def tokenize(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            wid = self._word_to_id.get(word)
            if wid is None:
                raise TokenizationFailure(
                    f"word {word!r} is not in the stub vocabulary"
                )
            ids.append(wid)
        return ids

    def detokenize(self, token_ids: list[int]) -> str:
        words = []
        for i in token_ids:
            if i in (self.end_token_id, self.pad_token_id):
                continue
            if not 2 <= i < 2 + len(self._words):
                raise TokenizationFailure(f"token id {i} has no word in the stub vocabulary")
            words.append(self._words[i - 2])
        return " ".join(words)

    def embed(self, token_ids: list[int]) -> torch.Tensor:
        idx = torch.as_tensor(token_ids, dtype=torch.long)
        return self.tok_emb[idx]

    def forward_embeddings(self, embeddings: torch.Tensor) -> torch.Tensor:
        seq = embeddings.shape[0]
        if seq > self.max_seq_len:
            raise PositionOverflow(
                f"sequence length {seq} exceeds LM context {self.max_seq_len}"
            )
        x = embeddings + self.pos_emb[:seq].to(embeddings.dtype)
        for block in self.blocks:
            x = block(x)
        return self.head(self.final_norm(x))
